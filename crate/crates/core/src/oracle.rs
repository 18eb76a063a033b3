//! Monte Carlo estimates of the closed-form moments.
//!
//! The receive chain here is simulated in the time domain: symbols are
//! mapped through an inverse DFT, convolved circularly with the channel taps,
//! corrupted by noise, quantized and transformed back. Nothing here uses the
//! circulant or spectral shortcuts of [`crate::secondstats`], so agreement is
//! an independent check. Standard errors come from batch means over
//! [`DEFAULT_BATCHES`] seeded streams evaluated in parallel.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equalizer::{delta_for_weights, optimal_equalizer};
use crate::error::{Error, Result};
use crate::numerics::{mean_and_se, CompensatedSum, DEFAULT_BATCHES};
use crate::quantizer::{csign, lloyd_max_design, quantize_vector, AdcSpec, AdcSwitchVector};
use crate::rng::{complex_gaussian, stream, SimRng};
use crate::secondstats::{antenna_variance, build_d, build_g, DMethod};
use crate::spectral::{draw_channel, unitary_dft, unitary_idft, ChannelSet, SystemConfig};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: Complex64,
    /// Root of the summed per-part variances of the estimate.
    pub std_error: f64,
    pub n_samples: usize,
    /// The estimator is undefined (e.g. a ratio of zeros) and `value` is a
    /// placeholder.
    pub degenerate: bool,
}

impl MomentEstimate {
    /// Distance to `reference` in standard errors.
    pub fn z_score(&self, reference: Complex64) -> f64 {
        let d = (self.value - reference).norm();
        if self.std_error == 0.0 {
            // zero-variance estimator: only rounding may separate the two
            return if d <= 1e-12 * reference.norm().max(1.0) { 0.0 } else { f64::INFINITY };
        }
        d / self.std_error
    }

    pub fn agrees_with(&self, reference: Complex64, n_se: f64) -> bool {
        self.z_score(reference) <= n_se
    }

    /// Standard error relative to `|value|`.
    pub fn relative_se(&self) -> f64 {
        self.std_error / self.value.norm()
    }
}

/// Per-batch means of `k` complex statistics produced by `sample`, which
/// adds one realization's statistics into its output slice.
fn batch_means<F>(k: usize, samples: usize, seed: u64, sample: F) -> Vec<Vec<Complex64>>
where
    F: Fn(&mut SimRng, &mut [Complex64]) + Sync,
{
    let per = samples.div_ceil(DEFAULT_BATCHES);
    (0..DEFAULT_BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, b as u64);
            let count = per.min(samples.saturating_sub(b * per));
            let mut re = vec![CompensatedSum::new(); k];
            let mut im = vec![CompensatedSum::new(); k];
            let mut buf = vec![ZERO; k];
            for _ in 0..count {
                buf.fill(ZERO);
                sample(&mut rng, &mut buf);
                for ((r, i), v) in re.iter_mut().zip(im.iter_mut()).zip(&buf) {
                    r.add(v.re);
                    i.add(v.im);
                }
            }
            let c = count.max(1) as f64;
            re.iter().zip(&im).map(|(r, i)| Complex64::new(r.value() / c, i.value() / c)).collect()
        })
        .filter(|v: &Vec<Complex64>| !v.is_empty())
        .collect()
}

fn summarize(batches: &[Vec<Complex64>], stat: usize, n_samples: usize) -> MomentEstimate {
    let re: Vec<f64> = batches.iter().map(|b| b[stat].re).collect();
    let im: Vec<f64> = batches.iter().map(|b| b[stat].im).collect();
    let (mr, sr) = mean_and_se(&re);
    let (mi, si) = mean_and_se(&im);
    MomentEstimate { value: Complex64::new(mr, mi), std_error: sr.hypot(si), n_samples, degenerate: false }
}

/// One pass of the time-domain chain: frequency-domain symbols per user and
/// the DFT of each antenna's quantized samples.
pub struct ChainDraw {
    pub x: Vec<Vec<Complex64>>,
    pub r_freq: Vec<Vec<Complex64>>,
}

pub fn simulate_chain<R: Rng + ?Sized>(
    channels: &ChannelSet,
    specs: &[AdcSpec],
    es: f64,
    dim_std: &[f64],
    rng: &mut R,
) -> Result<ChainDraw> {
    let (n, q, users) = (channels.n_antennas(), channels.n_subcarriers(), channels.n_users());
    let x: Vec<Vec<Complex64>> = (0..users).map(|_| (0..q).map(|_| complex_gaussian(rng, es)).collect()).collect();
    let s: Vec<Vec<Complex64>> = x.iter().map(|xu| unitary_idft(xu)).collect::<Result<_>>()?;
    let mut r_freq = Vec::with_capacity(n);
    for a in 0..n {
        let mut y: Vec<Complex64> = (0..q).map(|_| complex_gaussian(rng, 1.0)).collect();
        for (u, su) in s.iter().enumerate() {
            for (l, h) in channels.taps(u, a).iter().enumerate() {
                if *h == ZERO {
                    continue;
                }
                for (t, yt) in y.iter_mut().enumerate() {
                    *yt += h * su[(t + q - l) % q];
                }
            }
        }
        let r = quantize_vector(&y, &specs[a], dim_std[a])?;
        r_freq.push(unitary_dft(&r)?);
    }
    Ok(ChainDraw { x, r_freq })
}

fn gain_control(channels: &ChannelSet, es: f64) -> Vec<f64> {
    (0..channels.n_antennas()).map(|a| (antenna_variance(channels, es, a) / 2.0).sqrt()).collect()
}

fn check_specs(channels: &ChannelSet, specs: &[AdcSpec]) -> Result<()> {
    if specs.len() != channels.n_antennas() {
        return Err(Error::LengthMismatch { expected: channels.n_antennas(), found: specs.len() });
    }
    Ok(())
}

/// Empirical `Delta(w) = |E[xhat^H x]|^2 / (Q E_s E[xhat^H xhat])` for user
/// `user`, with `xhat_q = sum_n w_nq rhat_nq`. The standard error follows
/// from the delta method applied to the batch means of both moments.
pub fn mc_delta(
    channels: &ChannelSet,
    specs: &[AdcSpec],
    w: &[Complex64],
    es: f64,
    user: usize,
    samples: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    check_specs(channels, specs)?;
    let (n, q) = (channels.n_antennas(), channels.n_subcarriers());
    if w.len() != n * q {
        return Err(Error::LengthMismatch { expected: n * q, found: w.len() });
    }
    let std = gain_control(channels, es);
    let batches = batch_means(2, samples, seed, |rng, out| {
        let draw = simulate_chain(channels, specs, es, &std, rng).expect("inputs validated");
        for k in 0..q {
            let xh: Complex64 = (0..n).map(|a| w[a * q + k] * draw.r_freq[a][k]).sum();
            out[0] += xh.conj() * draw.x[user][k];
            out[1] += Complex64::new(xh.norm_sqr(), 0.0);
        }
    });
    let c = q as f64 * es;
    let a = summarize(&batches, 0, samples).value;
    let b = summarize(&batches, 1, samples).value.re;
    if b == 0.0 {
        return Ok(MomentEstimate { value: ZERO, std_error: 0.0, n_samples: samples, degenerate: true });
    }
    let value = a.norm_sqr() / (c * b);
    let lin: Vec<f64> = batches
        .iter()
        .map(|m| 2.0 * (a.conj() * (m[0] - a)).re / (c * b) - a.norm_sqr() * (m[1].re - b) / (c * b * b))
        .collect();
    let nb = lin.len() as f64;
    let se = (lin.iter().map(|l| l * l).sum::<f64>() / (nb * (nb - 1.0))).sqrt();
    Ok(MomentEstimate { value: Complex64::new(value, 0.0), std_error: se, n_samples: samples, degenerate: false })
}

/// Empirical `g_nq = E[conj(rhat_nq) x_q^u]` for every antenna and subcarrier.
pub fn mc_g(channels: &ChannelSet, specs: &[AdcSpec], es: f64, user: usize, samples: usize, seed: u64) -> Result<Vec<MomentEstimate>> {
    check_specs(channels, specs)?;
    let (n, q) = (channels.n_antennas(), channels.n_subcarriers());
    let std = gain_control(channels, es);
    let batches = batch_means(n * q, samples, seed, |rng, out| {
        let draw = simulate_chain(channels, specs, es, &std, rng).expect("inputs validated");
        for a in 0..n {
            for k in 0..q {
                out[a * q + k] += draw.r_freq[a][k].conj() * draw.x[user][k];
            }
        }
    });
    Ok((0..n * q).map(|i| summarize(&batches, i, samples)).collect())
}

/// Empirical block diagonals `E[conj(rhat_aq) rhat_bq]`, indexed
/// `[(a * N + b) * Q + q]`.
pub fn mc_d(channels: &ChannelSet, specs: &[AdcSpec], es: f64, samples: usize, seed: u64) -> Result<Vec<MomentEstimate>> {
    check_specs(channels, specs)?;
    let (n, q) = (channels.n_antennas(), channels.n_subcarriers());
    let std = gain_control(channels, es);
    let batches = batch_means(n * n * q, samples, seed, |rng, out| {
        let draw = simulate_chain(channels, specs, es, &std, rng).expect("inputs validated");
        for a in 0..n {
            for b in 0..n {
                for k in 0..q {
                    out[(a * n + b) * q + k] += draw.r_freq[a][k].conj() * draw.r_freq[b][k];
                }
            }
        }
    });
    Ok((0..n * n * q).map(|i| summarize(&batches, i, samples)).collect())
}

/// Closed forms `E[sgn^H(u1) u2] = sqrt(2/pi) conj(s12) / s1` and
/// `E[sgn(u1) sgn^H(u2)] = (2/pi)(asin(theta_R) + j asin(theta_I))`.
pub fn sign_moments_closed_form(var1: f64, var2: f64, cov12: Complex64) -> Result<(Complex64, Complex64)> {
    check_covariance(var1, var2, cov12)?;
    let c = 2.0 / std::f64::consts::PI;
    let first = cov12.conj() * (c.sqrt() / var1.sqrt());
    let theta = cov12 / (var1 * var2).sqrt();
    let second = Complex64::new(theta.re.clamp(-1.0, 1.0).asin(), theta.im.clamp(-1.0, 1.0).asin()) * c;
    Ok((first, second))
}

fn check_covariance(var1: f64, var2: f64, cov12: Complex64) -> Result<()> {
    if !(var1 > 0.0) || !(var2 > 0.0) || cov12.norm_sqr() > var1 * var2 * (1.0 + 1e-12) {
        return Err(Error::config(format!("invalid covariance ({var1}, {var2}, {cov12})")));
    }
    Ok(())
}

/// Empirical `(E[sgn^H(u1) u2], E[sgn(u1) sgn^H(u2)])` for jointly Gaussian
/// `u1, u2` with `E|u1|^2 = var1`, `E|u2|^2 = var2`, `E[u1 u2^*] = cov12`.
pub fn mc_sign_moments(var1: f64, var2: f64, cov12: Complex64, samples: usize, seed: u64) -> Result<(MomentEstimate, MomentEstimate)> {
    check_covariance(var1, var2, cov12)?;
    let s1 = var1.sqrt();
    let mix = cov12.conj() / s1;
    let resid = (var2 - cov12.norm_sqr() / var1).max(0.0);
    let batches = batch_means(2, samples, seed, |rng, out| {
        let a = complex_gaussian(rng, 1.0);
        let b = complex_gaussian(rng, resid);
        let u1 = a * s1;
        let u2 = mix * a + b;
        out[0] += csign(u1).conj() * u2;
        out[1] += csign(u1) * csign(u2).conj();
    });
    Ok((summarize(&batches, 0, samples), summarize(&batches, 1, samples)))
}

/// One line of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRow {
    pub check: String,
    pub closed_form: Complex64,
    pub estimate: Complex64,
    pub std_error: f64,
    pub z: f64,
    pub pass: bool,
}

impl VerifyRow {
    fn new(check: impl Into<String>, closed_form: Complex64, est: &MomentEstimate, n_se: f64) -> Self {
        Self {
            check: check.into(),
            closed_form,
            estimate: est.value,
            std_error: est.std_error,
            z: est.z_score(closed_form),
            pass: est.agrees_with(closed_form, n_se),
        }
    }
}

/// Closed form against Monte Carlo for the sign moments, `g`, `D` and `Delta` on a
/// fixed set of small systems. Each row passes when the two agree within
/// `n_se` standard errors.
pub fn verification_suite(samples: usize, seed: u64, n_se: f64) -> Result<Vec<VerifyRow>> {
    let c = |re: f64| Complex64::new(re, 0.0);
    let mut rows = Vec::new();

    let moment_cases = [(1.0, 1.0, c(1.0)), (1.0, 1.0, c(0.5)), (2.0, 0.5, Complex64::new(0.3, -0.6))];
    for (i, &(v1, v2, s12)) in moment_cases.iter().enumerate() {
        let (f1, f2) = sign_moments_closed_form(v1, v2, s12)?;
        let (e1, e2) = mc_sign_moments(v1, v2, s12, samples, stream_seed(seed, i))?;
        rows.push(VerifyRow::new(format!("sign-linear moment, case {i}"), f1, &e1, n_se));
        rows.push(VerifyRow::new(format!("sign-sign moment, case {i}"), f2, &e2, n_se));
    }

    let flat = ChannelSet::flat(1, &[c(1.0)])?;
    let g = mc_g(&flat, &[AdcSpec::OneBit], 1.0, 0, samples, stream_seed(seed, 10))?;
    rows.push(VerifyRow::new("g, one-bit unit channel", c(1.0 / std::f64::consts::PI.sqrt()), &g[0], n_se));

    let systems: [(&str, SystemConfig, Vec<AdcSpec>); 4] = [
        ("all high-res, N=1 Q=2 T=1", SystemConfig::new(1, 1, 2, 1, 1), vec![AdcSpec::HighRes]),
        ("all one-bit, N=2 Q=4 T=2", SystemConfig::new(2, 0, 4, 2, 1), AdcSwitchVector::all(2, false).specs()),
        ("mixed, N=3 Q=4 T=2", SystemConfig::new(3, 1, 4, 2, 1), AdcSwitchVector::from_bits(&[1, 0, 0]).specs()),
        (
            "high-res/2-bit/one-bit, N=3 Q=4 T=3, two users",
            SystemConfig::new(3, 1, 4, 3, 2),
            vec![AdcSpec::HighRes, lloyd_max_design(2, 1.0)?, AdcSpec::OneBit],
        ),
    ];
    for (i, (name, cfg, specs)) in systems.iter().enumerate() {
        let es = cfg.symbol_energy;
        let ch = draw_channel(cfg, &mut stream(seed, 100 + i as u64));
        let q = cfg.n_subcarriers;
        let d = build_d(&ch, specs, es, DMethod::Circulant)?;
        let g = build_g(&ch, specs, es, 0)?;
        let (w, report) = optimal_equalizer(&d, &g, es)?;
        let est = mc_delta(&ch, specs, &w, es, 0, samples, stream_seed(seed, 20 + i))?;
        rows.push(VerifyRow::new(format!("Delta at optimum, {name}"), c(report.delta), &est, n_se));

        let ones = vec![c(1.0); w.len()];
        let est = mc_delta(&ch, specs, &ones, es, 0, samples, stream_seed(seed, 30 + i))?;
        rows.push(VerifyRow::new(format!("Delta at w=1, {name}"), c(delta_for_weights(&d, &g, &ones, es)), &est, n_se));

        let mg = mc_g(&ch, specs, es, 0, samples, stream_seed(seed, 40 + i))?;
        let md = mc_d(&ch, specs, es, samples, stream_seed(seed, 50 + i))?;
        let n = cfg.n_antennas;
        for a in 0..n {
            rows.push(VerifyRow::new(format!("g[{a}, 0], {name}"), g[a * q], &mg[a * q], n_se));
            for b in a..n {
                let k = q - 1;
                rows.push(VerifyRow::new(format!("D[{a}, {b}; {k}], {name}"), d.diag(a, b)[k], &md[(a * n + b) * q + k], n_se));
            }
        }
    }
    Ok(rows)
}

fn stream_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}
