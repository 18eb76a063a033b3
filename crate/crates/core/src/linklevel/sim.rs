//! Coded OFDM uplink over the mixed-ADC front end.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::code::{conv_encode, viterbi_decode, TAIL_BITS};
use super::qam::{map_bits, qam16_demap};
use crate::equalizer::{a_for_weights, solve_equalizer};
use crate::error::{Error, Result};
use crate::quantizer::{quantize_sample, AdcSpec};
use crate::rng::{complex_gaussian, stream2};
use crate::secondstats::{antenna_variance, build_d, build_g, DMethod};
use crate::spectral::{db_to_linear, draw_channel, unitary_dft, unitary_idft, ChannelSet, SystemConfig};
use crate::switching::{AdcPopulation, SwitchPolicy};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const BITS_PER_SYMBOL: usize = 4;
/// Stream major index reserved for channel draws, so a frame sees the same
/// channel at every SNR point.
const CHANNEL_STREAM: u32 = u32::MAX;

/// Bits carried by one frame of `symbols` OFDM symbols on `q` subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub subcarriers: usize,
    pub symbols: usize,
}

impl FrameLayout {
    pub fn new(subcarriers: usize, symbols: usize) -> Result<Self> {
        let layout = Self { subcarriers, symbols };
        if subcarriers == 0 || symbols == 0 || layout.coded_bits() < 2 * (TAIL_BITS + 1) {
            return Err(Error::config(format!(
                "{symbols} OFDM symbols of {subcarriers} subcarriers cannot hold a terminated codeword"
            )));
        }
        Ok(layout)
    }

    pub fn coded_bits(&self) -> usize {
        BITS_PER_SYMBOL * self.subcarriers * self.symbols
    }

    pub fn info_bits(&self) -> usize {
        self.coded_bits() / 2 - TAIL_BITS
    }
}

/// Cyclic prefix length `max_u T^u - 1`.
pub fn cp_length(config: &SystemConfig) -> usize {
    config.max_taps().saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerOptions {
    pub snr_db: Vec<f64>,
    pub frames: usize,
    pub ofdm_symbols: usize,
    pub policy: SwitchPolicy,
    pub population: AdcPopulation,
    /// Design the equalizer as if multi-bit ADCs were high resolution.
    pub multibit_as_highres: bool,
    /// Drop receiver noise (the equalizer still assumes unit noise).
    pub noiseless: bool,
    pub seed: u64,
}

impl BerOptions {
    pub fn new(snr_db: Vec<f64>, frames: usize, k: usize, seed: u64) -> Self {
        Self {
            snr_db,
            frames,
            ofdm_symbols: 2,
            policy: SwitchPolicy::NormBased,
            population: AdcPopulation::mixed(k),
            multibit_as_highres: true,
            noiseless: false,
            seed,
        }
    }
}

/// BER of one user at one SNR point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub ebn0_db: f64,
    pub user: usize,
    pub frames: usize,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    /// Wilson 95% half-width.
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub points: Vec<BerPoint>,
}

impl BerReport {
    /// BER pooled over users at `snr_db`.
    pub fn pooled(&self, snr_db: f64) -> Option<f64> {
        let pts: Vec<&BerPoint> = self.points.iter().filter(|p| p.snr_db == snr_db).collect();
        if pts.is_empty() {
            return None;
        }
        let e: u64 = pts.iter().map(|p| p.bit_errors).sum();
        let n: u64 = pts.iter().map(|p| p.bits).sum();
        Some(e as f64 / n as f64)
    }
}

/// Wilson score interval half-width at 95% for `errors` out of `n`.
pub fn wilson_half_width(errors: u64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    let z = 1.959_963_984_540_054;
    let (nf, p) = (n as f64, errors as f64 / n as f64);
    z / (1.0 + z * z / nf) * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt()
}

/// `E_b/N_0 = SNR - 3 dB` for rate-1/2 coded 16-QAM.
pub fn ebn0_db(snr_db: f64) -> f64 {
    snr_db - 3.0
}

/// Transmit `blocks` (one frequency-domain OFDM symbol each) through
/// `taps` with a cyclic prefix of `cp` samples: linear convolution of the
/// serial stream, then prefix removal. Returns the retained time samples.
pub fn ofdm_channel(blocks: &[Vec<Complex64>], taps: &[Complex64], cp: usize) -> Result<Vec<Vec<Complex64>>> {
    let q = blocks.first().map_or(0, Vec::len);
    let mut stream = Vec::with_capacity(blocks.len() * (q + cp));
    for b in blocks {
        let s = unitary_idft(b)?;
        stream.extend_from_slice(&s[q - cp..]);
        stream.extend_from_slice(&s);
    }
    let last = taps.iter().rposition(|h| *h != ZERO).map_or(0, |i| i + 1);
    if last > cp + 1 {
        return Err(Error::config(format!("{last} taps exceed a cyclic prefix of {cp}")));
    }
    let mut out = vec![ZERO; stream.len()];
    for (t, o) in out.iter_mut().enumerate() {
        for (l, h) in taps[..last].iter().enumerate() {
            if l <= t {
                *o += h * stream[t - l];
            }
        }
    }
    Ok(out.chunks(q + cp).map(|c| c[cp..].to_vec()).collect())
}

struct FrameResult {
    errors: Vec<u64>,
}

struct Receiver {
    specs: Vec<AdcSpec>,
    dim_std: Vec<f64>,
    weights: Vec<Vec<Complex64>>,
    a_opt: Vec<Complex64>,
}

fn design_receiver(channels: &ChannelSet, specs: Vec<AdcSpec>, es: f64, as_highres: bool) -> Result<Receiver> {
    let design: Vec<AdcSpec> = specs
        .iter()
        .map(|s| if as_highres && matches!(s, AdcSpec::MultiBit(_)) { AdcSpec::HighRes } else { s.clone() })
        .collect();
    let q = channels.n_subcarriers();
    let d = build_d(channels, &design, es, DMethod::Circulant)?;
    let mut weights = Vec::new();
    let mut a_opt = Vec::new();
    for u in 0..channels.n_users() {
        let g = build_g(channels, &design, es, u)?;
        let w = solve_equalizer(&d, &g)?;
        a_opt.push(a_for_weights(&g, &w, q, es));
        weights.push(w);
    }
    let dim_std = (0..channels.n_antennas()).map(|n| (antenna_variance(channels, es, n) / 2.0).sqrt()).collect();
    Ok(Receiver { specs, dim_std, weights, a_opt })
}

fn run_frame(config: &SystemConfig, options: &BerOptions, layout: FrameLayout, snr_index: usize, frame: usize) -> Result<FrameResult> {
    let es = db_to_linear(options.snr_db[snr_index]);
    let (n, q, users) = (config.n_antennas, config.n_subcarriers, config.n_users());
    let cp = cp_length(config);

    let mut crng = stream2(options.seed, CHANNEL_STREAM, frame as u32);
    let channels = draw_channel(config, &mut crng);
    let order = options.policy.order(&channels, &mut crng);
    let specs = options.population.assign(&order)?;
    let rx = design_receiver(&channels, specs, es, options.multibit_as_highres)?;

    let mut rng = stream2(options.seed, snr_index as u32, frame as u32);
    let info: Vec<Vec<u8>> =
        (0..users).map(|_| (0..layout.info_bits()).map(|_| rand::Rng::random_range(&mut rng, 0..2u8)).collect()).collect();
    // per user: OFDM symbols, each Q subcarriers filled in order
    let tx: Vec<Vec<Vec<Complex64>>> = info
        .iter()
        .map(|b| map_bits(&conv_encode(b), es).chunks(q).map(<[Complex64]>::to_vec).collect())
        .collect();

    let mut demapped: Vec<Vec<u8>> = vec![Vec::with_capacity(layout.coded_bits()); users];
    let mut received = vec![vec![vec![ZERO; q]; n]; layout.symbols];
    for a in 0..n {
        for (u, blocks) in tx.iter().enumerate() {
            let rx_u = ofdm_channel(blocks, &channels.taps(u, a)[..config.taps[u]], cp)?;
            for (s, block) in rx_u.into_iter().enumerate() {
                received[s][a].iter_mut().zip(block).for_each(|(acc, v)| *acc += v);
            }
        }
    }
    for block in received.iter_mut() {
        for (a, y) in block.iter_mut().enumerate() {
            for v in y.iter_mut() {
                let z = complex_gaussian(&mut rng, 1.0);
                if !options.noiseless {
                    *v += z;
                }
                *v = quantize_sample(*v, &rx.specs[a], rx.dim_std[a]);
            }
            *y = unitary_dft(y)?;
        }
        for (u, out) in demapped.iter_mut().enumerate() {
            let w = &rx.weights[u];
            for k in 0..q {
                let xh: Complex64 = (0..n).map(|a| w[a * q + k] * block[a][k]).sum();
                out.extend(qam16_demap(xh / rx.a_opt[u], es));
            }
        }
    }
    let errors = demapped
        .iter()
        .zip(&info)
        .map(|(coded, bits)| {
            let decoded = viterbi_decode(coded)?;
            Ok(decoded.iter().zip(bits).filter(|(x, y)| x != y).count() as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameResult { errors })
}

/// Coded BER per user at every SNR point. Frame `f` at SNR index `i` draws
/// its data and noise from stream `(i, f)` and its channel from a stream
/// keyed by `f` alone.
pub fn simulate_ber(config: &SystemConfig, options: &BerOptions) -> Result<BerReport> {
    config.validate()?;
    if options.frames == 0 || options.snr_db.is_empty() {
        return Err(Error::config("BER simulation needs at least one frame and one SNR point"));
    }
    let layout = FrameLayout::new(config.n_subcarriers, options.ofdm_symbols)?;
    let users = config.n_users();
    let mut points = Vec::new();
    for (i, &snr) in options.snr_db.iter().enumerate() {
        let frames = (0..options.frames)
            .into_par_iter()
            .map(|f| run_frame(config, options, layout, i, f).map_err(|e| Error::Draw { index: f, source: Box::new(e) }))
            .collect::<Result<Vec<_>>>()?;
        for u in 0..users {
            let errors: u64 = frames.iter().map(|r| r.errors[u]).sum();
            let bits = (options.frames * layout.info_bits()) as u64;
            points.push(BerPoint {
                snr_db: snr,
                ebn0_db: ebn0_db(snr),
                user: u,
                frames: options.frames,
                bits,
                bit_errors: errors,
                ber: errors as f64 / bits as f64,
                ci95: wilson_half_width(errors, bits),
            });
        }
    }
    Ok(BerReport { points })
}
