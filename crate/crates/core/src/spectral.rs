//! Unitary DFT algebra, multipath channel generation and imperfect-CSI splitting.
//!
//! The forward transform is `F[p][q] = exp(-j 2 pi p q / Q) / sqrt(Q)`. A
//! channel with zero-padded taps `h` acts on a cyclic-prefixed OFDM symbol as
//! the circulant matrix `C` whose first column is `h`, and
//! `F C F^H = diag(lambda)` with `lambda = sqrt(Q) F h`.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::complex_gaussian;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place unitary forward DFT.
pub fn dft_in_place(x: &mut [Complex64]) {
    if x.is_empty() {
        return;
    }
    plan(x.len(), false).process(x);
    let s = 1.0 / (x.len() as f64).sqrt();
    x.iter_mut().for_each(|v| *v *= s);
}

/// In-place unitary inverse DFT (the adjoint of [`dft_in_place`]).
pub fn idft_in_place(x: &mut [Complex64]) {
    if x.is_empty() {
        return;
    }
    plan(x.len(), true).process(x);
    let s = 1.0 / (x.len() as f64).sqrt();
    x.iter_mut().for_each(|v| *v *= s);
}

/// `F x` with unitary normalization.
pub fn unitary_dft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = x.to_vec();
    dft_in_place(&mut out);
    Ok(out)
}

/// `F^H x`.
pub fn unitary_idft(x: &[Complex64]) -> Result<Vec<Complex64>> {
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut out = x.to_vec();
    idft_in_place(&mut out);
    Ok(out)
}

/// Frequency response `lambda = sqrt(Q) F h` of zero-padded taps.
pub fn taps_to_spectrum(h: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut out = unitary_dft(h)?;
    let s = (h.len() as f64).sqrt();
    out.iter_mut().for_each(|v| *v *= s);
    Ok(out)
}

/// Circulant matrix with first column `h`: `C[p][q] = h[(p - q) mod Q]`.
pub fn circulant_from_taps(h: &[Complex64]) -> DMatrix<Complex64> {
    let q = h.len();
    DMatrix::from_fn(q, q, |r, c| h[(r + q - c) % q])
}

/// Circulant matrix from its first column (same as [`circulant_from_taps`]).
pub fn circulant(first_column: &[Complex64]) -> DMatrix<Complex64> {
    circulant_from_taps(first_column)
}

/// Dense unitary DFT matrix.
pub fn dft_matrix(q: usize) -> DMatrix<Complex64> {
    let s = 1.0 / (q as f64).sqrt();
    DMatrix::from_fn(q, q, |p, k| {
        let angle = -2.0 * std::f64::consts::PI * ((p * k) % q) as f64 / q as f64;
        Complex64::from_polar(s, angle)
    })
}

/// System dimensions and operating point. The noise variance is fixed to one,
/// so `symbol_energy` is the SNR in linear scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_antennas: usize,
    pub n_highres: usize,
    pub n_subcarriers: usize,
    /// Channel taps per user; its length is the number of users.
    pub taps: Vec<usize>,
    pub symbol_energy: f64,
    pub mse_h: f64,
    pub coherence_len: usize,
    pub pilot_spacing: usize,
}

impl SystemConfig {
    /// `n` antennas, `k` high-resolution pairs, `q` subcarriers, `t` taps for
    /// each of `u` users, SNR 0 dB and perfect CSI.
    pub fn new(n: usize, k: usize, q: usize, t: usize, u: usize) -> Self {
        Self {
            n_antennas: n,
            n_highres: k,
            n_subcarriers: q,
            taps: vec![t; u],
            symbol_energy: 1.0,
            mse_h: 0.0,
            coherence_len: 53,
            pilot_spacing: 14,
        }
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.symbol_energy = db_to_linear(snr_db);
        self
    }

    pub fn with_symbol_energy(mut self, es: f64) -> Self {
        self.symbol_energy = es;
        self
    }

    pub fn with_mse(mut self, mse_h: f64) -> Self {
        self.mse_h = mse_h;
        self
    }

    pub fn n_users(&self) -> usize {
        self.taps.len()
    }

    pub fn max_taps(&self) -> usize {
        self.taps.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_antennas == 0 || self.n_subcarriers == 0 || self.taps.is_empty() {
            return Err(Error::config("N, Q and U must be positive"));
        }
        if self.n_highres > self.n_antennas {
            return Err(Error::config(format!(
                "K = {} exceeds N = {}",
                self.n_highres, self.n_antennas
            )));
        }
        if let Some(&t) = self.taps.iter().find(|&&t| t == 0 || t > self.n_subcarriers) {
            return Err(Error::config(format!("tap count {t} must lie in [1, Q]")));
        }
        if !(self.symbol_energy >= 0.0 && self.symbol_energy.is_finite()) {
            return Err(Error::config("symbol energy must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.mse_h) {
            return Err(Error::InvalidMse(self.mse_h));
        }
        if self.coherence_len == 0 || self.pilot_spacing == 0 {
            return Err(Error::config("coherence length and pilot spacing must be positive"));
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Channel taps and frequency responses for every (user, antenna) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    q: usize,
    taps: Vec<Vec<Vec<Complex64>>>,
    spectrum: Vec<Vec<Vec<Complex64>>>,
}

impl ChannelSet {
    /// Build from `taps[user][antenna]`, each zero-padded to `q` entries.
    pub fn from_taps(q: usize, taps: Vec<Vec<Vec<Complex64>>>) -> Result<Self> {
        if q == 0 || taps.is_empty() || taps[0].is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = taps[0].len();
        let mut spectrum = Vec::with_capacity(taps.len());
        for user in &taps {
            if user.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: user.len() });
            }
            let mut per_user = Vec::with_capacity(n);
            for h in user {
                if h.len() != q {
                    return Err(Error::LengthMismatch { expected: q, found: h.len() });
                }
                per_user.push(taps_to_spectrum(h)?);
            }
            spectrum.push(per_user);
        }
        Ok(Self { q, taps, spectrum })
    }

    /// Single-user channel from per-antenna taps (shorter vectors are zero-padded).
    pub fn single_user(q: usize, taps: Vec<Vec<Complex64>>) -> Result<Self> {
        let padded = taps
            .into_iter()
            .map(|mut h| {
                if h.len() > q {
                    return Err(Error::LengthMismatch { expected: q, found: h.len() });
                }
                h.resize(q, Complex64::new(0.0, 0.0));
                Ok(h)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_taps(q, vec![padded])
    }

    /// Frequency-flat single-user channel with one coefficient per antenna.
    pub fn flat(q: usize, coefficients: &[Complex64]) -> Result<Self> {
        Self::single_user(q, coefficients.iter().map(|&h| vec![h]).collect())
    }

    pub fn n_users(&self) -> usize {
        self.taps.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.taps[0].len()
    }

    pub fn n_subcarriers(&self) -> usize {
        self.q
    }

    pub fn taps(&self, user: usize, antenna: usize) -> &[Complex64] {
        &self.taps[user][antenna]
    }

    pub fn spectrum(&self, user: usize, antenna: usize) -> &[Complex64] {
        &self.spectrum[user][antenna]
    }

    /// `||h||^2` of the (user, antenna) branch.
    pub fn tap_energy(&self, user: usize, antenna: usize) -> f64 {
        self.taps[user][antenna].iter().map(|v| v.norm_sqr()).sum()
    }

    /// `||lambda||^2 / Q`, equal to [`Self::tap_energy`] by Parseval.
    pub fn spectral_energy(&self, user: usize, antenna: usize) -> f64 {
        self.spectrum[user][antenna].iter().map(|v| v.norm_sqr()).sum::<f64>() / self.q as f64
    }

    /// `sum_v ||h_n^v||^2`, the aggregate gain of antenna `n` over all users.
    pub fn antenna_energy(&self, antenna: usize) -> f64 {
        (0..self.n_users()).map(|u| self.tap_energy(u, antenna)).sum()
    }

    /// True when every channel has a single tap.
    pub fn is_flat(&self) -> bool {
        self.taps.iter().flatten().all(|h| h[1..].iter().all(|v| *v == Complex64::new(0.0, 0.0)))
    }

    /// Keep only the listed antennas, in order.
    pub fn select_antennas(&self, antennas: &[usize]) -> ChannelSet {
        let pick = |v: &Vec<Vec<Complex64>>| antennas.iter().map(|&n| v[n].clone()).collect::<Vec<_>>();
        ChannelSet {
            q: self.q,
            taps: self.taps.iter().map(pick).collect(),
            spectrum: self.spectrum.iter().map(pick).collect(),
        }
    }

    /// Every tap and frequency response multiplied by `s`.
    pub fn scaled(&self, s: f64) -> ChannelSet {
        let scale = |a: &Vec<Vec<Vec<Complex64>>>| -> Vec<Vec<Vec<Complex64>>> {
            a.iter().map(|u| u.iter().map(|h| h.iter().map(|v| v * s).collect()).collect()).collect()
        };
        ChannelSet { q: self.q, taps: scale(&self.taps), spectrum: scale(&self.spectrum) }
    }

    /// Elementwise sum of two channel sets with identical shape.
    pub fn add(&self, other: &ChannelSet) -> ChannelSet {
        let sum = |a: &Vec<Vec<Vec<Complex64>>>, b: &Vec<Vec<Vec<Complex64>>>| {
            a.iter()
                .zip(b)
                .map(|(ua, ub)| {
                    ua.iter().zip(ub).map(|(ha, hb)| ha.iter().zip(hb).map(|(x, y)| x + y).collect()).collect()
                })
                .collect()
        };
        ChannelSet { q: self.q, taps: sum(&self.taps, &other.taps), spectrum: sum(&self.spectrum, &other.spectrum) }
    }
}

/// I.i.d. Rayleigh taps `h ~ CN(0, 1/T^u)` for every (user, antenna).
pub fn draw_channel<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> ChannelSet {
    let q = config.n_subcarriers;
    let taps = config
        .taps
        .iter()
        .map(|&t| {
            (0..config.n_antennas)
                .map(|_| {
                    let mut h: Vec<Complex64> = (0..t).map(|_| complex_gaussian(rng, 1.0 / t as f64)).collect();
                    h.resize(q, Complex64::new(0.0, 0.0));
                    h
                })
                .collect()
        })
        .collect();
    ChannelSet::from_taps(q, taps).expect("shape is consistent by construction")
}

/// MMSE split of a channel into an estimate and an independent error.
#[derive(Debug, Clone)]
pub struct CsiSplit {
    pub estimate: ChannelSet,
    pub error: ChannelSet,
}

/// Split `h = h_hat + h_err` with `h_hat ~ CN(0, (1 - mse)/T)` and
/// `h_err ~ CN(0, mse/T)` independent. Draws the error from its conditional
/// law given `h`: `h_err | h ~ CN(mse h, mse (1 - mse) / T)`.
pub fn split_csi<R: Rng + ?Sized>(channel: &ChannelSet, mse_h: f64, tap_counts: &[usize], rng: &mut R) -> Result<CsiSplit> {
    if !(0.0..=1.0).contains(&mse_h) {
        return Err(Error::InvalidMse(mse_h));
    }
    if tap_counts.len() != channel.n_users() {
        return Err(Error::LengthMismatch { expected: channel.n_users(), found: tap_counts.len() });
    }
    let q = channel.n_subcarriers();
    let zero = Complex64::new(0.0, 0.0);
    let mut est = Vec::with_capacity(channel.n_users());
    let mut err = Vec::with_capacity(channel.n_users());
    for (u, &t) in tap_counts.iter().enumerate() {
        let spread = mse_h * (1.0 - mse_h) / t as f64;
        let mut est_u = Vec::with_capacity(channel.n_antennas());
        let mut err_u = Vec::with_capacity(channel.n_antennas());
        for n in 0..channel.n_antennas() {
            let h = channel.taps(u, n);
            let mut e = vec![zero; q];
            for (k, slot) in e.iter_mut().enumerate().take(t) {
                *slot = if mse_h == 0.0 {
                    zero
                } else if mse_h == 1.0 {
                    h[k]
                } else {
                    h[k] * mse_h + complex_gaussian(rng, spread)
                };
            }
            let hat: Vec<Complex64> = h.iter().zip(&e).map(|(a, b)| a - b).collect();
            est_u.push(hat);
            err_u.push(e);
        }
        est.push(est_u);
        err.push(err_u);
    }
    Ok(CsiSplit { estimate: ChannelSet::from_taps(q, est)?, error: ChannelSet::from_taps(q, err)? })
}

/// Draw a fresh error realization `h_err ~ CN(0, mse/T)` and add it to `estimate`.
pub fn perturb<R: Rng + ?Sized>(estimate: &ChannelSet, mse_h: f64, tap_counts: &[usize], rng: &mut R) -> ChannelSet {
    let q = estimate.n_subcarriers();
    let taps = tap_counts
        .iter()
        .enumerate()
        .map(|(u, &t)| {
            (0..estimate.n_antennas())
                .map(|n| {
                    let mut h = estimate.taps(u, n).to_vec();
                    for v in h.iter_mut().take(t) {
                        *v += complex_gaussian(rng, mse_h / t as f64);
                    }
                    h
                })
                .collect()
        })
        .collect();
    ChannelSet::from_taps(q, taps).expect("shape is consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let q = x.len();
        (0..q)
            .map(|p| {
                x.iter()
                    .enumerate()
                    .map(|(k, v)| v * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (p * k) as f64 / q as f64))
                    .sum::<Complex64>()
                    / (q as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn impulse_and_constant() {
        let d = unitary_dft(&[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]).unwrap();
        assert!(d.iter().all(|v| (v - c(0.5, 0.)).norm() < 1e-15));
        let d = unitary_dft(&[c(1., 0.); 4]).unwrap();
        assert!((d[0] - c(2., 0.)).norm() < 1e-15);
        assert!(d[1..].iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(unitary_dft(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn fft_matches_naive_and_roundtrips() {
        let mut rng = seeded(1);
        let x = crate::rng::complex_gaussian_vec(&mut rng, 12, 1.0);
        let fast = unitary_dft(&x).unwrap();
        let slow = naive_dft(&x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12);
        }
        let back = unitary_idft(&fast).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn spectrum_of_single_tap_and_delay() {
        let l = taps_to_spectrum(&[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]).unwrap();
        assert!(l.iter().all(|v| (v - c(1., 0.)).norm() < 1e-15));
        let l = taps_to_spectrum(&[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]).unwrap();
        for (q, v) in l.iter().enumerate() {
            let expect = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * q as f64 / 4.0);
            assert!((v - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn small_circulants() {
        let id = circulant_from_taps(&[c(1., 0.), c(0., 0.)]);
        assert_eq!(id, DMatrix::identity(2, 2));
        let (a, b) = (c(1., 2.), c(-0.5, 3.));
        let m = circulant_from_taps(&[a, b]);
        assert_eq!(m[(0, 0)], a);
        assert_eq!(m[(0, 1)], b);
        assert_eq!(m[(1, 0)], b);
        assert_eq!(m[(1, 1)], a);
    }

    #[test]
    fn csi_split_edges() {
        let cfg = SystemConfig::new(3, 1, 8, 2, 1);
        let mut rng = seeded(5);
        let h = draw_channel(&cfg, &mut rng);
        let s = split_csi(&h, 0.0, &cfg.taps, &mut rng).unwrap();
        assert_eq!(s.estimate, h);
        let s = split_csi(&h, 1.0, &cfg.taps, &mut rng).unwrap();
        assert!((0..3).all(|n| s.estimate.tap_energy(0, n) == 0.0));
        assert!(matches!(split_csi(&h, 1.5, &cfg.taps, &mut rng), Err(Error::InvalidMse(_))));
        assert!(matches!(split_csi(&h, -0.1, &cfg.taps, &mut rng), Err(Error::InvalidMse(_))));
    }

    #[test]
    fn draw_is_deterministic() {
        let cfg = SystemConfig::new(4, 1, 8, 3, 2);
        let a = draw_channel(&cfg, &mut seeded(9));
        let b = draw_channel(&cfg, &mut seeded(9));
        assert_eq!(a, b);
        for u in 0..2 {
            for n in 0..4 {
                assert!(a.taps(u, n)[3..].iter().all(|v| v.norm() == 0.0));
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::new(4, 5, 8, 2, 1).validate().is_err());
        assert!(SystemConfig::new(4, 1, 8, 9, 1).validate().is_err());
        assert!(SystemConfig::new(4, 1, 8, 2, 1).with_mse(2.0).validate().is_err());
        assert!(SystemConfig::new(4, 1, 8, 2, 1).validate().is_ok());
    }
}
