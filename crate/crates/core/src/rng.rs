//! Seeding conventions.
//!
//! Every stochastic routine takes an explicit generator. All generators in
//! the crate are ChaCha20 streams: a base seed selects the key and a 64-bit
//! stream id selects an independent keystream, so work units (channel draws,
//! frames) can be seeded by index and produce the same numbers regardless of
//! scheduling.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// The generator used throughout the crate.
pub type SimRng = ChaCha20Rng;

/// Generator for the base seed `seed`, stream 0.
pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Independent stream `stream` under base seed `seed`.
pub fn stream(seed: u64, stream: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream keyed by a pair of indices, e.g. (snr index, frame).
pub fn stream2(seed: u64, major: u32, minor: u32) -> SimRng {
    stream(seed, (u64::from(major) << 32) | u64::from(minor))
}

/// One draw from CN(0, variance): real and imaginary parts i.i.d. N(0, variance/2).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

pub fn complex_gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> Vec<Complex64> {
    (0..len).map(|_| complex_gaussian(rng, variance)).collect()
}
