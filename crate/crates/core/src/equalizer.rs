//! Optimal linear frequency-domain equalizer, the performance indicator and
//! GMI, the block-permutation solve, and closed forms for special cases.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{AdcSpec, AdcSwitchVector};
use crate::secondstats::{arcsine_law, build_d, build_g, BlockMatrix, DMethod};
use crate::spectral::{circulant, idft_in_place, ChannelSet};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const DELTA_CEILING: f64 = 1.0 - 1e-15;
const DELTA_TOLERANCE: f64 = 1e-9;

/// Which formula produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmiMethod {
    General,
    AllHighRes,
    Flat,
    BoundLower,
    BoundUpper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmiReport {
    pub delta: f64,
    pub gmi_nats: f64,
    pub a_opt: Complex64,
    pub method: GmiMethod,
    /// Set when `delta` had to be pulled into `[0, 1 - 1e-15]`.
    pub clipped: bool,
}

impl GmiReport {
    /// Report for a raw indicator value. Values above one by more than
    /// rounding error violate Cauchy-Schwarz and are rejected.
    pub fn from_delta(raw: f64, a_opt: Complex64, method: GmiMethod) -> Result<Self> {
        if !(-DELTA_TOLERANCE..=1.0 + DELTA_TOLERANCE).contains(&raw) {
            return Err(Error::DeltaOutOfRange { value: raw });
        }
        let delta = raw.clamp(0.0, DELTA_CEILING);
        Ok(Self { delta, gmi_nats: gmi_from_delta(delta), a_opt, method, clipped: delta != raw })
    }

    pub fn gmi_bits(&self) -> f64 {
        self.gmi_nats / std::f64::consts::LN_2
    }
}

/// `log(1 + delta / (1 - delta)) = -log(1 - delta)`, in nats.
pub fn gmi_from_delta(delta: f64) -> f64 {
    -(-delta).ln_1p()
}

pub fn nats_to_bits(x: f64) -> f64 {
    x / std::f64::consts::LN_2
}

/// Index map taking antenna-major position `n * Q + q` to subcarrier-major
/// position `q * N + n`. Under it `P^t D P` is block diagonal with `Q`
/// blocks of size `N x N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    forward: Vec<usize>,
}

impl Permutation {
    /// `forward[i]` is the new position of original index `i`.
    pub fn as_slice(&self) -> &[usize] {
        &self.forward
    }

    pub fn one_indexed(&self) -> Vec<usize> {
        self.forward.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// `P^t v`: move each entry to its new position.
    pub fn apply<T: Copy + Default>(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); v.len()];
        for (i, &j) in self.forward.iter().enumerate() {
            out[j] = v[i];
        }
        out
    }

    /// `P v`: inverse of [`Self::apply`].
    pub fn restore<T: Copy + Default>(&self, v: &[T]) -> Vec<T> {
        self.forward.iter().map(|&j| v[j]).collect()
    }

    /// `P^t M P` for a dense matrix.
    pub fn similarity(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for (i, &pi) in self.forward.iter().enumerate() {
            for (j, &pj) in self.forward.iter().enumerate() {
                out[(pi, pj)] = m[(i, j)];
            }
        }
        out
    }
}

/// Find the permutation by sorting a marked training row: column `j` of
/// `G = [G_1, ..., G_N]` carries the mark of its destination, and pairwise
/// column swaps move every column home.
pub fn find_permutation(n: usize, q: usize) -> Permutation {
    let size = n * q;
    let mut marks: Vec<usize> = (0..size).map(|j| (j % q) * n + j / q).collect();
    // origin[i]: original column currently sitting at position i
    let mut origin: Vec<usize> = (0..size).collect();
    for i in 0..size {
        while marks[i] != i {
            let t = marks[i];
            marks.swap(i, t);
            origin.swap(i, t);
        }
    }
    let mut forward = vec![0; size];
    for (pos, &orig) in origin.iter().enumerate() {
        forward[orig] = pos;
    }
    Permutation { forward }
}

/// `w = D^{-1} g` by `Q` independent `N x N` Hermitian solves on the
/// permuted system.
pub fn solve_equalizer(d: &BlockMatrix, g: &[Complex64]) -> Result<Vec<Complex64>> {
    let (n, q) = (d.n_antennas(), d.n_subcarriers());
    if g.len() != n * q {
        return Err(Error::LengthMismatch { expected: n * q, found: g.len() });
    }
    let perm = find_permutation(n, q);
    let gp = perm.apply(g);
    let mut wp = vec![ZERO; n * q];
    for k in 0..q {
        let block = d.subcarrier_block(k);
        let rhs = DVector::from_column_slice(&gp[k * n..(k + 1) * n]);
        let chol = block.cholesky().ok_or(Error::SingularBlock { subcarrier: k })?;
        let x = chol.solve(&rhs);
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::SingularBlock { subcarrier: k });
        }
        wp[k * n..(k + 1) * n].copy_from_slice(x.as_slice());
    }
    Ok(perm.restore(&wp))
}

/// Reference solve on the full `NQ x NQ` matrix by LU.
pub fn solve_dense(d: &DMatrix<Complex64>, g: &[Complex64]) -> Result<Vec<Complex64>> {
    let rhs = DVector::from_column_slice(g);
    let x = d.clone().lu().solve(&rhs).ok_or(Error::SingularBlock { subcarrier: 0 })?;
    Ok(x.as_slice().to_vec())
}

/// `Delta(w) = |w^H g|^2 / (Q E_s w^H D w)`.
pub fn delta_for_weights(d: &BlockMatrix, g: &[Complex64], w: &[Complex64], es: f64) -> f64 {
    let q = d.n_subcarriers() as f64;
    let num = dot(w, g).norm_sqr();
    let den = q * es * d.quad_form(w).re;
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `a(w) = E[x^H x_hat] / (Q E_s) = g^H w / (Q E_s)`.
pub fn a_for_weights(g: &[Complex64], w: &[Complex64], q: usize, es: f64) -> Complex64 {
    dot(g, w) / (q as f64 * es)
}

/// `sum conj(a_i) b_i`.
fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Optimal equalizer and its report: `w = D^{-1} g`, `Delta = g^H w / (Q E_s)`.
pub fn optimal_equalizer(d: &BlockMatrix, g: &[Complex64], es: f64) -> Result<(Vec<Complex64>, GmiReport)> {
    let q = d.n_subcarriers();
    if g.iter().all(|v| *v == ZERO) {
        return Ok((vec![ZERO; g.len()], GmiReport::from_delta(0.0, ZERO, GmiMethod::General)?));
    }
    let w = solve_equalizer(d, g)?;
    let a = a_for_weights(g, &w, q, es);
    Ok((w, GmiReport::from_delta(a.re, a, GmiMethod::General)?))
}

/// `Delta = g^H D^{-1} g / (Q E_s)` and the GMI.
pub fn delta_gmi(d: &BlockMatrix, g: &[Complex64], es: f64) -> Result<GmiReport> {
    optimal_equalizer(d, g, es).map(|(_, r)| r)
}

/// Full pipeline for user `user`: closed-form `D` (circulant path), `g`, solve.
pub fn evaluate(channels: &ChannelSet, specs: &[AdcSpec], es: f64, user: usize) -> Result<GmiReport> {
    let d = build_d(channels, specs, es, DMethod::Circulant)?;
    let g = build_g(channels, specs, es, user)?;
    delta_gmi(&d, &g, es)
}

fn per_subcarrier_snr(channels: &ChannelSet, es: f64) -> Vec<f64> {
    let q = channels.n_subcarriers();
    (0..q)
        .map(|k| es * (0..channels.n_antennas()).map(|n| channels.spectrum(0, n)[k].norm_sqr()).sum::<f64>())
        .collect()
}

/// All-high-resolution single-user GMI in closed form, and the capacity of
/// per-subcarrier MRC (both in nats).
pub fn gmi_all_highres(channels: &ChannelSet, es: f64) -> Result<(GmiReport, f64)> {
    let snr = per_subcarrier_snr(channels, es);
    let q = snr.len() as f64;
    let mean_inv = snr.iter().map(|s| 1.0 / (1.0 + s)).sum::<f64>() / q;
    let capacity = snr.iter().map(|s| s.ln_1p()).sum::<f64>() / q;
    let delta = 1.0 - mean_inv;
    let report = GmiReport::from_delta(delta, Complex64::new(delta, 0.0), GmiMethod::AllHighRes)?;
    Ok((report, capacity))
}

/// `nu` and `E` of the frequency-flat reduction, for coefficients `h`.
pub fn flat_fading_system(h: &[Complex64], delta: &AdcSwitchVector, es: f64) -> (DVector<Complex64>, DMatrix<Complex64>) {
    let n = h.len();
    let d = delta.as_slice();
    let c = 2.0 / std::f64::consts::PI;
    let beta: Vec<f64> = h.iter().map(|v| (c / (v.norm_sqr() * es + 1.0)).sqrt()).collect();
    let nu = DVector::from_fn(n, |a, _| h[a].conj() * es * if d[a] { 1.0 } else { beta[a] });
    let e = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            return Complex64::new(1.0 + if d[a] { h[a].norm_sqr() * es } else { 0.0 }, 0.0);
        }
        let x = h[a].conj() * h[b] * es;
        match (d[a], d[b]) {
            (true, true) => x,
            (true, false) => x * beta[b],
            (false, true) => x * beta[a],
            (false, false) => {
                let s = ((h[a].norm_sqr() * es + 1.0) * (h[b].norm_sqr() * es + 1.0)).sqrt();
                let t = x / s;
                Complex64::new(c * t.re.clamp(-1.0, 1.0).asin(), c * t.im.clamp(-1.0, 1.0).asin())
            }
        }
    });
    (nu, e)
}

/// GMI of a frequency-flat channel via the `N x N` system `nu^H E^{-1} nu / E_s`.
pub fn gmi_flat_fading(h: &[Complex64], delta: &AdcSwitchVector, es: f64) -> Result<GmiReport> {
    if h.len() != delta.len() {
        return Err(Error::LengthMismatch { expected: h.len(), found: delta.len() });
    }
    let (nu, e) = flat_fading_system(h, delta, es);
    let x = e.cholesky().ok_or(Error::SingularBlock { subcarrier: 0 })?.solve(&nu);
    let v = nu.dotc(&x) / es;
    GmiReport::from_delta(v.re, v, GmiMethod::Flat)
}

/// Frequency-flat coefficients of a single-user channel, rejecting
/// multipath.
pub fn flat_coefficients(channels: &ChannelSet) -> Result<Vec<Complex64>> {
    (0..channels.n_antennas())
        .map(|n| {
            let h = channels.taps(0, n);
            if h[1..].iter().any(|v| *v != ZERO) {
                Err(Error::NonFlatChannel { antenna: n })
            } else {
                Ok(h[0])
            }
        })
        .collect()
}

/// Low-SNR slope `dGMI/dE_s` at zero: `(1/Q) sum_n (delta_n + (1 - delta_n) 2/pi) ||lambda_n||^2`.
pub fn low_snr_slope(channels: &ChannelSet, delta: &AdcSwitchVector) -> f64 {
    let q = channels.n_subcarriers() as f64;
    let c = 2.0 / std::f64::consts::PI;
    delta
        .as_slice()
        .iter()
        .enumerate()
        .map(|(n, &d)| {
            let e: f64 = channels.spectrum(0, n).iter().map(|v| v.norm_sqr()).sum();
            (if d { 1.0 } else { c }) * e / q
        })
        .sum()
}

/// Low-SNR slope of the capacity, `(1/Q) sum_n ||lambda_n||^2`.
pub fn capacity_low_snr_slope(channels: &ChannelSet) -> f64 {
    low_snr_slope(channels, &AdcSwitchVector::all(channels.n_antennas(), true))
}

/// High-SNR limit of `Delta` with one-bit ADCs on every antenna:
/// `(2/pi) lbar^t Dbar^{-1} conj(lbar)`, with `Dbar` built from the limiting
/// correlation matrices `Q F^H (Lambda_n/||lambda_n||)(Lambda_m/||lambda_m||)^H F`.
pub fn high_snr_limit(channels: &ChannelSet) -> Result<f64> {
    let (n, q) = (channels.n_antennas(), channels.n_subcarriers());
    let norms: Vec<f64> =
        (0..n).map(|a| channels.spectrum(0, a).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).collect();
    let mut dbar = BlockMatrix::zeros(n, q);
    for a in 0..n {
        for b in 0..n {
            let (la, lb) = (channels.spectrum(0, a), channels.spectrum(0, b));
            // eigenvalues of the limiting circulant, then its first column
            let mut col: Vec<Complex64> =
                (0..q).map(|k| la[k] * lb[k].conj() * (q as f64 / (norms[a] * norms[b]))).collect();
            idft_in_place(&mut col);
            let s = 1.0 / (q as f64).sqrt();
            col.iter_mut().for_each(|v| *v *= s);
            let theta = circulant(&col);
            let r_ab = arcsine_law(&theta)?;
            // block (row b, col a) holds diag(F R_ab F^H)
            let f = crate::spectral::dft_matrix(q);
            let t = &f * r_ab * f.adjoint();
            for k in 0..q {
                dbar.diag_mut(b, a)[k] = t[(k, k)];
            }
        }
    }
    let lbar: Vec<Complex64> =
        (0..n).flat_map(|a| channels.spectrum(0, a).iter().map(|v| v.conj() / norms[a]).collect::<Vec<_>>()).collect();
    let x = solve_equalizer(&dbar, &lbar)?;
    Ok(2.0 / std::f64::consts::PI * dot(&lbar, &x).re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_gaussian_vec, seeded};
    use crate::secondstats::build_g_single_user;
    use crate::spectral::{draw_channel, SystemConfig};
    use approx::assert_relative_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn channel(n: usize, q: usize, t: usize, seed: u64) -> ChannelSet {
        draw_channel(&SystemConfig::new(n, 0, q, t, 1), &mut seeded(seed))
    }

    fn report(ch: &ChannelSet, delta: &AdcSwitchVector, es: f64) -> GmiReport {
        evaluate(ch, &delta.specs(), es, 0).unwrap()
    }

    #[test]
    fn permutation_examples() {
        assert_eq!(find_permutation(2, 2).one_indexed(), vec![1, 3, 2, 4]);
        assert_eq!(find_permutation(1, 5).as_slice(), &[0, 1, 2, 3, 4]);
        let p = find_permutation(3, 4);
        for n in 0..3 {
            for q in 0..4 {
                assert_eq!(p.as_slice()[n * 4 + q], q * 3 + n);
            }
        }
    }

    #[test]
    fn permuted_d_is_block_diagonal() {
        let ch = channel(3, 2, 2, 1);
        let specs = AdcSwitchVector::from_bits(&[1, 0, 0]).specs();
        let d = build_d(&ch, &specs, 2.0, DMethod::Circulant).unwrap();
        let pd = find_permutation(3, 2).similarity(&d.to_dense());
        let mut off = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if i / 3 != j / 3 {
                    off += pd[(i, j)].norm();
                }
            }
        }
        assert_eq!(off, 0.0);
    }

    #[test]
    fn identity_solve() {
        let g: Vec<Complex64> = complex_gaussian_vec(&mut seeded(2), 6, 1.0);
        assert_eq!(solve_equalizer(&BlockMatrix::identity(2, 3), &g).unwrap(), g);
    }

    #[test]
    fn permuted_solve_matches_dense() {
        let ch = channel(4, 8, 3, 3);
        let specs = AdcSwitchVector::from_bits(&[1, 0, 1, 0]).specs();
        let d = build_d(&ch, &specs, 3.0, DMethod::Circulant).unwrap();
        let g = build_g(&ch, &specs, 3.0, 0).unwrap();
        let fast = solve_equalizer(&d, &g).unwrap();
        let dense = solve_dense(&d.to_dense(), &g).unwrap();
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).norm() < 1e-10);
        }
        let res: f64 = d.mul_vec(&fast).iter().zip(&g).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let gn: f64 = g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(res / gn < 1e-10);
    }

    #[test]
    fn all_highres_weights_are_per_subcarrier_mrc() {
        let ch = channel(3, 4, 2, 4);
        let es = 2.0;
        let specs = vec![AdcSpec::HighRes; 3];
        let d = build_d(&ch, &specs, es, DMethod::Circulant).unwrap();
        let g = build_g(&ch, &specs, es, 0).unwrap();
        let w = solve_equalizer(&d, &g).unwrap();
        for k in 0..4 {
            let s: f64 = (0..3).map(|n| ch.spectrum(0, n)[k].norm_sqr()).sum();
            for n in 0..3 {
                let expect = ch.spectrum(0, n)[k].conj() * es / (1.0 + es * s);
                assert!((w[n * 4 + k] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_block_reports_subcarrier() {
        let mut d = BlockMatrix::identity(2, 3);
        d.diag_mut(0, 0)[2] = c(0.0);
        d.diag_mut(1, 1)[2] = c(0.0);
        let err = solve_equalizer(&d, &[c(1.0); 6]).unwrap_err();
        assert!(matches!(err, Error::SingularBlock { subcarrier: 2 }));
    }

    #[test]
    fn delta_examples() {
        let r = delta_gmi(&BlockMatrix::identity(1, 2), &[c(0.0), c(0.0)], 1.0).unwrap();
        assert_eq!((r.delta, r.gmi_nats), (0.0, 0.0));
        let ch = ChannelSet::flat(1, &[c(1.0)]).unwrap();
        let r = report(&ch, &AdcSwitchVector::from_bits(&[1]), 1.0);
        assert_relative_eq!(r.delta, 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.gmi_nats, 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(r.a_opt.re, r.delta, epsilon = 1e-15);
        let r = report(&ch, &AdcSwitchVector::from_bits(&[0]), 1e8);
        assert_relative_eq!(r.delta, 2.0 / std::f64::consts::PI, epsilon = 1e-6);
        assert!(matches!(GmiReport::from_delta(1.1, c(0.0), GmiMethod::General), Err(Error::DeltaOutOfRange { .. })));
        let r = GmiReport::from_delta(1.0 + 1e-12, c(0.0), GmiMethod::General).unwrap();
        assert!(r.clipped && r.delta < 1.0);
    }

    #[test]
    fn all_highres_matches_general_path() {
        let ch = channel(2, 4, 2, 5);
        let (cf, cap) = gmi_all_highres(&ch, 1.7).unwrap();
        let gen = report(&ch, &AdcSwitchVector::all(2, true), 1.7);
        assert_relative_eq!(cf.gmi_nats, gen.gmi_nats, max_relative = 1e-10);
        assert!(cf.gmi_nats <= cap);
        let q1 = channel(3, 1, 1, 6);
        let (g1, c1) = gmi_all_highres(&q1, 2.0).unwrap();
        assert_relative_eq!(g1.gmi_nats, c1, max_relative = 1e-14);
        let flat = channel(3, 8, 1, 7);
        let (g2, c2) = gmi_all_highres(&flat, 2.0).unwrap();
        assert_relative_eq!(g2.gmi_nats, c2, max_relative = 1e-12);
    }

    #[test]
    fn flat_fading_examples() {
        let r = gmi_flat_fading(&[c(1.0)], &AdcSwitchVector::from_bits(&[1]), 1.0).unwrap();
        assert_relative_eq!(r.delta, 0.5, epsilon = 1e-15);
        let r = gmi_flat_fading(&[c(1.0)], &AdcSwitchVector::from_bits(&[0]), 1.0).unwrap();
        assert_relative_eq!(r.delta, 1.0 / std::f64::consts::PI, epsilon = 1e-15);
        let flat = ChannelSet::flat(4, &complex_gaussian_vec(&mut seeded(8), 2, 1.0)).unwrap();
        let delta = AdcSwitchVector::from_bits(&[1, 0]);
        let h = flat_coefficients(&flat).unwrap();
        let a = gmi_flat_fading(&h, &delta, 2.0).unwrap();
        let b = report(&flat, &delta, 2.0);
        assert_relative_eq!(a.delta, b.delta, max_relative = 1e-9);
        assert!(matches!(flat_coefficients(&channel(2, 4, 2, 9)), Err(Error::NonFlatChannel { .. })));
    }

    #[test]
    fn low_snr_examples() {
        let ch = ChannelSet::flat(4, &[c(1.0), c(1.0)]).unwrap();
        assert_relative_eq!(low_snr_slope(&ch, &AdcSwitchVector::all(2, true)), 2.0, epsilon = 1e-12);
        let one = ChannelSet::flat(4, &[c(1.0)]).unwrap();
        assert_relative_eq!(low_snr_slope(&one, &AdcSwitchVector::all(1, false)), 2.0 / std::f64::consts::PI, epsilon = 1e-12);
        let ch = channel(3, 4, 2, 10);
        let delta = AdcSwitchVector::from_bits(&[0, 1, 0]);
        let es = 1e-5;
        let fd = report(&ch, &delta, es).gmi_nats / es;
        assert_relative_eq!(fd, low_snr_slope(&ch, &delta), max_relative = 5e-3);
    }

    #[test]
    fn high_snr_examples() {
        let one = ChannelSet::flat(4, &[c(0.7)]).unwrap();
        assert_relative_eq!(high_snr_limit(&one).unwrap(), 2.0 / std::f64::consts::PI, epsilon = 1e-12);
        let ch = channel(2, 4, 2, 11);
        let lim = high_snr_limit(&ch).unwrap();
        let r = report(&ch, &AdcSwitchVector::all(2, false), 1e6);
        assert_relative_eq!(r.delta, lim, max_relative = 1e-2);
        assert!(lim > 0.0 && lim < 1.0);
    }

    #[test]
    fn optimal_beats_random_weights() {
        let ch = channel(3, 4, 2, 12);
        let specs = AdcSwitchVector::from_bits(&[0, 1, 0]).specs();
        let d = build_d(&ch, &specs, 1.0, DMethod::Circulant).unwrap();
        let g = build_g(&ch, &specs, 1.0, 0).unwrap();
        let (w, r) = optimal_equalizer(&d, &g, 1.0).unwrap();
        assert_relative_eq!(delta_for_weights(&d, &g, &w, 1.0), r.delta, max_relative = 1e-12);
        let mut rng = seeded(13);
        for _ in 0..100 {
            let v = complex_gaussian_vec(&mut rng, 12, 1.0);
            assert!(delta_for_weights(&d, &g, &v, 1.0) <= r.delta + 1e-12);
        }
    }

    #[test]
    fn single_user_paths_agree() {
        let ch = channel(3, 4, 2, 14);
        let delta = AdcSwitchVector::from_bits(&[1, 0, 0]);
        let g1 = build_g_single_user(&ch, &delta, 2.0);
        let g2 = build_g(&ch, &delta.specs(), 2.0, 0).unwrap();
        let d = build_d(&ch, &delta.specs(), 2.0, DMethod::DiagonalExtraction).unwrap();
        let a = delta_gmi(&d, &g1, 2.0).unwrap();
        let b = evaluate(&ch, &delta.specs(), 2.0, 0).unwrap();
        assert_relative_eq!(a.delta, b.delta, max_relative = 1e-12);
        assert!(g1.iter().zip(&g2).all(|(x, y)| (x - y).norm() < 1e-12));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn scale_invariance(seed in 0u64..1000, re in -5.0f64..5.0, im in -5.0f64..5.0) {
            proptest::prop_assume!(re.abs() + im.abs() > 1e-3);
            let ch = channel(2, 4, 2, seed);
            let specs = AdcSwitchVector::from_bits(&[1, 0]).specs();
            let d = build_d(&ch, &specs, 1.0, DMethod::Circulant).unwrap();
            let g = build_g(&ch, &specs, 1.0, 0).unwrap();
            let mut rng = seeded(seed + 1);
            let w = complex_gaussian_vec(&mut rng, 8, 1.0);
            let s = Complex64::new(re, im);
            let ws: Vec<Complex64> = w.iter().map(|v| v * s).collect();
            let (a, b) = (delta_for_weights(&d, &g, &w, 1.0), delta_for_weights(&d, &g, &ws, 1.0));
            proptest::prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
        }

        #[test]
        fn delta_in_unit_interval(seed in 0u64..1000, snr_db in -20.0f64..40.0, mask in 0u8..16) {
            let ch = channel(4, 4, 3, seed);
            let bits: Vec<u8> = (0..4).map(|i| (mask >> i) & 1).collect();
            let r = report(&ch, &AdcSwitchVector::from_bits(&bits), 10f64.powf(snr_db / 10.0));
            proptest::prop_assert!(r.delta >= 0.0 && r.delta < 1.0);
        }

        #[test]
        fn jensen_gap(seed in 0u64..1000, snr_db in -10.0f64..30.0) {
            let ch = channel(3, 8, 4, seed);
            let (g, cap) = gmi_all_highres(&ch, 10f64.powf(snr_db / 10.0)).unwrap();
            proptest::prop_assert!(g.gmi_nats <= cap + 1e-12);
        }

        #[test]
        fn all_highres_monotone_in_snr(seed in 0u64..1000, snr_db in -10.0f64..30.0) {
            let ch = channel(2, 4, 2, seed);
            let es = 10f64.powf(snr_db / 10.0);
            let (a, _) = gmi_all_highres(&ch, es).unwrap();
            let (b, _) = gmi_all_highres(&ch, es * 1.1).unwrap();
            proptest::prop_assert!(b.gmi_nats >= a.gmi_nats);
        }
    }
}
