//! Second-order statistics of the quantized receive signal: pre-quantization
//! covariances, correlation coefficients, quantized correlations, the
//! cross-correlation vector `g` and the block matrix `D`.
//!
//! Conventions. `r_n` is the quantized time-domain output of antenna `n` and
//! `R_ab = E[r_a r_b^H]`. Vectors over all antennas are indexed `n * Q + q`.
//! `D` is Hermitian with diagonal blocks, and block `(n, m)` holds
//! `E[conj((F r_n)_q) (F r_m)_q]`, so that `E[||x_hat||^2] = w^H D w` and
//! `E[x_hat^H x_u] = w^H g_u`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre, BatchMeans, DEFAULT_BATCHES};
use crate::quantizer::{bussgang_gain, quantize_sample, AdcSpec, AdcSwitchVector};
use crate::rng::{complex_gaussian, stream};
use crate::spectral::{circulant_from_taps, dft_in_place, dft_matrix, idft_in_place, ChannelSet};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const CLAMP_TOLERANCE: f64 = 1e-9;

/// Hermitian `NQ x NQ` matrix whose `N x N` grid of blocks are each diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    n: usize,
    q: usize,
    data: Vec<Complex64>,
}

impl BlockMatrix {
    pub fn zeros(n: usize, q: usize) -> Self {
        Self { n, q, data: vec![ZERO; n * n * q] }
    }

    pub fn identity(n: usize, q: usize) -> Self {
        let mut d = Self::zeros(n, q);
        for a in 0..n {
            d.diag_mut(a, a).iter_mut().for_each(|v| *v = Complex64::new(1.0, 0.0));
        }
        d
    }

    /// Build from a dense matrix, keeping only the block diagonals.
    pub fn from_dense(dense: &DMatrix<Complex64>, n: usize, q: usize) -> Self {
        let mut d = Self::zeros(n, q);
        for a in 0..n {
            for b in 0..n {
                for k in 0..q {
                    d.diag_mut(a, b)[k] = dense[(a * q + k, b * q + k)];
                }
            }
        }
        d
    }

    pub fn n_antennas(&self) -> usize {
        self.n
    }

    pub fn n_subcarriers(&self) -> usize {
        self.q
    }

    /// Diagonal of block `(row, col)`.
    pub fn diag(&self, row: usize, col: usize) -> &[Complex64] {
        let s = (row * self.n + col) * self.q;
        &self.data[s..s + self.q]
    }

    pub fn diag_mut(&mut self, row: usize, col: usize) -> &mut [Complex64] {
        let s = (row * self.n + col) * self.q;
        &mut self.data[s..s + self.q]
    }

    /// The `N x N` matrix of subcarrier `k`'s entries across antennas.
    pub fn subcarrier_block(&self, k: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n, self.n, |a, b| self.diag(a, b)[k])
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n * self.q, self.n * self.q);
        for a in 0..self.n {
            for b in 0..self.n {
                for (k, v) in self.diag(a, b).iter().enumerate() {
                    m[(a * self.q + k, b * self.q + k)] = *v;
                }
            }
        }
        m
    }

    pub fn mul_vec(&self, w: &[Complex64]) -> Vec<Complex64> {
        let (n, q) = (self.n, self.q);
        let mut out = vec![ZERO; n * q];
        for a in 0..n {
            for b in 0..n {
                let d = self.diag(a, b);
                for k in 0..q {
                    out[a * q + k] += d[k] * w[b * q + k];
                }
            }
        }
        out
    }

    /// `w^H D w`.
    pub fn quad_form(&self, w: &[Complex64]) -> Complex64 {
        w.iter().zip(self.mul_vec(w)).map(|(a, b)| a.conj() * b).sum()
    }

    /// Largest `|D_ab[k] - conj(D_ba[k])|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.n {
            for b in 0..self.n {
                for (x, y) in self.diag(a, b).iter().zip(self.diag(b, a)) {
                    worst = worst.max((x - y.conj()).norm());
                }
            }
        }
        worst
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &BlockMatrix, s: f64) {
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b * s);
    }

    /// Largest entrywise distance to `other`.
    pub fn max_abs_diff(&self, other: &BlockMatrix) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Fail with the offending subcarrier if any `N x N` block is not
    /// Hermitian positive definite.
    pub fn check_positive_definite(&self) -> Result<()> {
        for k in 0..self.q {
            let b = self.subcarrier_block(k);
            let sym = (&b + b.adjoint()) * Complex64::new(0.5, 0.0);
            if sym.cholesky().is_none() {
                return Err(Error::SingularBlock { subcarrier: k });
            }
        }
        Ok(())
    }
}

/// Total variance `(Y_nn)_qq = 1 + E_s sum_v ||lambda_n^v||^2 / Q` of antenna `n`.
pub fn antenna_variance(channels: &ChannelSet, es: f64, n: usize) -> f64 {
    1.0 + es * (0..channels.n_users()).map(|u| channels.spectral_energy(u, n)).sum::<f64>()
}

/// Dense `Y_nm = [n == m] I + E_s sum_v C_n^v (C_m^v)^H` from explicit circulants.
pub fn prequant_cov(channels: &ChannelSet, es: f64, n: usize, m: usize) -> DMatrix<Complex64> {
    let q = channels.n_subcarriers();
    let mut y = if n == m { DMatrix::identity(q, q) } else { DMatrix::zeros(q, q) };
    for u in 0..channels.n_users() {
        let cn = circulant_from_taps(channels.taps(u, n));
        let cm = circulant_from_taps(channels.taps(u, m));
        y += (cn * cm.adjoint()) * Complex64::new(es, 0.0);
    }
    y
}

/// First column of the circulant `Y_nm`, from the spectra alone.
pub fn prequant_cov_generator(channels: &ChannelSet, es: f64, n: usize, m: usize) -> Vec<Complex64> {
    let q = channels.n_subcarriers();
    let mut mu = vec![ZERO; q];
    for u in 0..channels.n_users() {
        let (a, b) = (channels.spectrum(u, n), channels.spectrum(u, m));
        for k in 0..q {
            mu[k] += a[k] * b[k].conj();
        }
    }
    idft_in_place(&mut mu);
    let s = es / (q as f64).sqrt();
    mu.iter_mut().for_each(|v| *v *= s);
    if n == m {
        mu[0] += 1.0;
    }
    mu
}

/// `Theta_pq = (Y_nm)_pq / sqrt((Y_nn)_pp (Y_mm)_qq)`.
pub fn corr_coeff(y_nm: &DMatrix<Complex64>, y_nn: &DMatrix<Complex64>, y_mm: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let q = y_nm.nrows();
    for (p, y) in [y_nn, y_mm].iter().enumerate() {
        for k in 0..q {
            let v = y[(k, k)].re;
            if !(v > 0.0) {
                return Err(Error::NonPositiveVariance { index: p * q + k, value: v });
            }
        }
    }
    Ok(DMatrix::from_fn(q, y_nm.ncols(), |p, k| {
        let (a, b) = (y_nn[(p, p)].re, y_mm[(k, k)].re);
        y_nm[(p, k)] / (a * b).sqrt()
    }))
}

/// Clamp a correlation coefficient into [-1, 1], rejecting anything beyond
/// rounding error.
pub fn clamp_correlation(x: f64) -> Result<f64> {
    if x.abs() > 1.0 + CLAMP_TOLERANCE || x.is_nan() {
        return Err(Error::CorrelationOutOfRange { value: x });
    }
    Ok(x.clamp(-1.0, 1.0))
}

/// Arcsine law `(2/pi) [asin(Re) + j asin(Im)]`, elementwise.
pub fn arcsine_law(theta: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let c = 2.0 / std::f64::consts::PI;
    let mut out = DMatrix::zeros(theta.nrows(), theta.ncols());
    for (o, t) in out.iter_mut().zip(theta.iter()) {
        *o = Complex64::new(c * clamp_correlation(t.re)?.asin(), c * clamp_correlation(t.im)?.asin());
    }
    Ok(out)
}

/// `R_nm` by the four high-resolution / one-bit cases, for `delta` values of
/// antennas `n` and `m`.
pub fn quantized_cov(
    delta_n: bool,
    delta_m: bool,
    y_nm: &DMatrix<Complex64>,
    y_nn: &DMatrix<Complex64>,
    y_mm: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let c = 2.0 / std::f64::consts::PI;
    match (delta_n, delta_m) {
        (true, true) => Ok(y_nm.clone()),
        (false, false) => arcsine_law(&corr_coeff(y_nm, y_nn, y_mm)?),
        (true, false) => Ok(DMatrix::from_fn(y_nm.nrows(), y_nm.ncols(), |p, k| {
            y_nm[(p, k)] * (c / y_mm[(k, k)].re).sqrt()
        })),
        (false, true) => Ok(DMatrix::from_fn(y_nm.nrows(), y_nm.ncols(), |p, k| {
            y_nm[(p, k)] * (c / y_nn[(p, p)].re).sqrt()
        })),
    }
}

/// Unit-variance real-dimension map of a front end.
#[derive(Debug, Clone)]
enum UnitMap {
    Linear,
    Sign,
    Staircase { thresholds: Vec<f64>, jumps: Vec<f64>, gain: f64, power: f64 },
}

impl UnitMap {
    fn of(spec: &AdcSpec) -> Self {
        match spec {
            AdcSpec::HighRes => UnitMap::Linear,
            AdcSpec::OneBit => UnitMap::Sign,
            AdcSpec::MultiBit(q) => {
                let l = q.unit_levels();
                UnitMap::Staircase {
                    thresholds: q.unit_thresholds(),
                    jumps: l.windows(2).map(|w| w[1] - w[0]).collect(),
                    gain: q.unit_gain(),
                    power: q.unit_power(),
                }
            }
        }
    }

    /// `E[q(x) x]` for unit normal `x`.
    fn gain(&self) -> f64 {
        match self {
            UnitMap::Linear => 1.0,
            UnitMap::Sign => 1.0 / std::f64::consts::PI.sqrt(),
            UnitMap::Staircase { gain, .. } => *gain,
        }
    }

    fn power(&self) -> f64 {
        match self {
            UnitMap::Linear => 1.0,
            UnitMap::Sign => 0.5,
            UnitMap::Staircase { power, .. } => *power,
        }
    }

    fn steps(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            UnitMap::Sign => (vec![0.0], vec![std::f64::consts::SQRT_2]),
            UnitMap::Staircase { thresholds, jumps, .. } => (thresholds.clone(), jumps.clone()),
            UnitMap::Linear => unreachable!("linear map has no steps"),
        }
    }
}

/// Output scale of a front end for per-dimension input std `dim_std`.
fn output_scale(spec: &AdcSpec, dim_std: f64) -> f64 {
    match spec {
        AdcSpec::OneBit => 1.0,
        _ => dim_std,
    }
}

/// `psi(rho) = E[q_a(x) q_b(y)]` for unit normals with correlation `rho`.
#[derive(Debug, Clone)]
struct PairKernel {
    a: UnitMap,
    b: UnitMap,
    steps: Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)>,
}

const PRICE_PANELS: [f64; 5] = [0.0, 0.5, 0.75, 0.875, 1.0];
const PRICE_NODES: usize = 16;

impl PairKernel {
    fn new(a: &AdcSpec, b: &AdcSpec) -> Self {
        let (a, b) = (UnitMap::of(a), UnitMap::of(b));
        let steps = match (&a, &b) {
            (UnitMap::Linear, _) | (_, UnitMap::Linear) | (UnitMap::Sign, UnitMap::Sign) => None,
            _ => {
                let (ta, ja) = a.steps();
                let (tb, jb) = b.steps();
                Some((ta, ja, tb, jb))
            }
        };
        Self { a, b, steps }
    }

    fn psi(&self, rho: f64) -> f64 {
        match (&self.a, &self.b) {
            (UnitMap::Linear, UnitMap::Linear) => rho,
            (UnitMap::Linear, m) | (m, UnitMap::Linear) => rho * m.gain(),
            (UnitMap::Sign, UnitMap::Sign) => rho.asin() / std::f64::consts::PI,
            _ => {
                if rho == 0.0 {
                    return 0.0;
                }
                if rho.abs() == 1.0 && std::mem::discriminant(&self.a) == std::mem::discriminant(&self.b) {
                    if let Some(p) = self.same_map_power() {
                        return rho.signum() * p;
                    }
                }
                rho.signum() * self.price_integral(rho.abs())
            }
        }
    }

    fn same_map_power(&self) -> Option<f64> {
        let (ta, ja, tb, jb) = self.steps.as_ref()?;
        (ta == tb && ja == jb).then(|| self.a.power())
    }

    /// Price's theorem: `d psi / d rho = sum_ij ja_i jb_j phi2(ta_i, tb_j; rho)`,
    /// integrated in `theta = asin(rho)` with panels graded toward the end.
    fn price_integral(&self, rho: f64) -> f64 {
        let (ta, ja, tb, jb) = self.steps.as_ref().expect("staircase pair");
        let end = rho.asin();
        let (x, w) = gauss_nodes();
        let mut total = 0.0;
        for p in PRICE_PANELS.windows(2) {
            let (lo, hi) = (p[0] * end, p[1] * end);
            let half = 0.5 * (hi - lo);
            for (xi, wi) in x.iter().zip(w.iter()) {
                let th = lo + half * (xi + 1.0);
                let (s, c) = th.sin_cos();
                let c2 = 2.0 * c * c;
                let mut f = 0.0;
                for (t, a) in ta.iter().zip(ja) {
                    for (u, b) in tb.iter().zip(jb) {
                        let e = (t - u) * (t - u) / c2 + t * u / (1.0 + s);
                        f += a * b * (-e).exp();
                    }
                }
                total += wi * half * f;
            }
        }
        total / (2.0 * std::f64::consts::PI)
    }
}

fn gauss_nodes() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(PRICE_NODES))
}

/// `E[q_a(x) q_b(y)]` for unit normals of correlation `rho`, for arbitrary
/// front ends `a` and `b` (unit maps: identity, `sgn/sqrt(2)`, or the
/// unit-variance staircase).
pub fn unit_cross_moment(a: &AdcSpec, b: &AdcSpec, rho: f64) -> Result<f64> {
    Ok(PairKernel::new(a, b).psi(clamp_correlation(rho)?))
}

/// Map an entry of `Y_ab` to the corresponding entry of `R_ab`.
struct EntryMap {
    kernel: PairKernel,
    scale: f64,
    norm: f64,
}

impl EntryMap {
    fn new(spec_a: &AdcSpec, spec_b: &AdcSpec, var_a: f64, var_b: f64) -> Self {
        let (sa, sb) = ((var_a / 2.0).sqrt(), (var_b / 2.0).sqrt());
        Self {
            kernel: PairKernel::new(spec_a, spec_b),
            scale: 2.0 * output_scale(spec_a, sa) * output_scale(spec_b, sb),
            norm: 1.0 / (var_a * var_b).sqrt(),
        }
    }

    /// Output power `E|r|^2`, i.e. the map at unit correlation.
    fn self_power(&self) -> Complex64 {
        Complex64::new(self.kernel.psi(1.0) * self.scale, 0.0)
    }

    fn apply(&self, y: Complex64) -> Result<Complex64> {
        let t = y * self.norm;
        let re = self.kernel.psi(clamp_correlation(t.re)?);
        let im = self.kernel.psi(clamp_correlation(t.im)?);
        Ok(Complex64::new(re, im) * self.scale)
    }
}

/// `R_ab` for arbitrary front ends, applied elementwise to a dense `Y_ab`.
pub fn quantized_cov_general(
    spec_a: &AdcSpec,
    spec_b: &AdcSpec,
    y_ab: &DMatrix<Complex64>,
    var_a: f64,
    var_b: f64,
) -> Result<DMatrix<Complex64>> {
    let map = EntryMap::new(spec_a, spec_b, var_a, var_b);
    let mut out = DMatrix::zeros(y_ab.nrows(), y_ab.ncols());
    for (o, y) in out.iter_mut().zip(y_ab.iter()) {
        *o = map.apply(*y)?;
    }
    Ok(out)
}

/// `F M F^H` for a square matrix, via column and row transforms.
pub fn unitary_similarity(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let q = m.nrows();
    let mut fm = m.clone();
    for mut col in fm.column_iter_mut() {
        let mut v: Vec<Complex64> = col.iter().copied().collect();
        dft_in_place(&mut v);
        col.iter_mut().zip(v).for_each(|(c, x)| *c = x);
    }
    // (F M) F^H = (F (F M)^H)^H
    let mut t = fm.adjoint();
    for mut col in t.column_iter_mut() {
        let mut v: Vec<Complex64> = col.iter().copied().collect();
        dft_in_place(&mut v);
        col.iter_mut().zip(v).for_each(|(c, x)| *c = x);
    }
    debug_assert_eq!(t.nrows(), q);
    t.adjoint()
}

/// Diagonal of `F M F^H` in `O(Q^2 log Q)` without forming the product.
pub fn diag_unitary_similarity(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    let q = m.nrows();
    let f = dft_matrix(q);
    let mut fm = m.clone();
    for mut col in fm.column_iter_mut() {
        let mut v: Vec<Complex64> = col.iter().copied().collect();
        dft_in_place(&mut v);
        col.iter_mut().zip(v).for_each(|(c, x)| *c = x);
    }
    (0..q).map(|k| (0..q).map(|b| fm[(k, b)] * f[(k, b)].conj()).sum()).collect()
}

/// How `D` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DMethod {
    /// Closed-form `R` is circulant; transform its first column only.
    Circulant,
    /// Dense `Y` and `R`, then the diagonal of `F R F^H`.
    DiagonalExtraction,
    /// Empirical `E[conj(F r_n) (F r_m)]` from common draws.
    MonteCarlo { samples: usize, seed: u64 },
}

/// The vectors `g^u` and matrix `D` that define the equalizer.
#[derive(Debug, Clone)]
pub struct QuantizedStats {
    pub g: Vec<Vec<Complex64>>,
    pub d: BlockMatrix,
    pub fast_path: bool,
}

impl QuantizedStats {
    pub fn compute(channels: &ChannelSet, specs: &[AdcSpec], es: f64, method: DMethod) -> Result<Self> {
        let d = build_d(channels, specs, es, method)?;
        let g = (0..channels.n_users()).map(|u| build_g(channels, specs, es, u)).collect::<Result<Vec<_>>>()?;
        Ok(Self { g, d, fast_path: method == DMethod::Circulant })
    }
}

/// `g^u`: segment `n` is `alpha_n E_s conj(lambda_n^u)` with `alpha_n` the
/// Bussgang gain of antenna `n` at its input variance.
pub fn build_g(channels: &ChannelSet, specs: &[AdcSpec], es: f64, user: usize) -> Result<Vec<Complex64>> {
    check_specs(channels, specs)?;
    let q = channels.n_subcarriers();
    let mut g = Vec::with_capacity(specs.len() * q);
    for (n, spec) in specs.iter().enumerate() {
        let alpha = bussgang_gain(spec, antenna_variance(channels, es, n))?;
        g.extend(channels.spectrum(user, n).iter().map(|l| l.conj() * (alpha * es)));
    }
    Ok(g)
}

/// Single-user `g` written directly in terms of the switch vector.
pub fn build_g_single_user(channels: &ChannelSet, delta: &AdcSwitchVector, es: f64) -> Vec<Complex64> {
    let q = channels.n_subcarriers() as f64;
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let mut g = Vec::new();
    for (n, &d) in delta.as_slice().iter().enumerate() {
        let lam = channels.spectrum(0, n);
        let energy: f64 = lam.iter().map(|v| v.norm_sqr()).sum::<f64>() / q;
        let f = if d { es } else { c * es / (1.0 + es * energy).sqrt() };
        g.extend(lam.iter().map(|l| l.conj() * f));
    }
    g
}

fn check_specs(channels: &ChannelSet, specs: &[AdcSpec]) -> Result<()> {
    if specs.len() != channels.n_antennas() {
        return Err(Error::LengthMismatch { expected: channels.n_antennas(), found: specs.len() });
    }
    Ok(())
}

/// Assemble `D` by the requested method and verify it is positive definite.
pub fn build_d(channels: &ChannelSet, specs: &[AdcSpec], es: f64, method: DMethod) -> Result<BlockMatrix> {
    check_specs(channels, specs)?;
    let d = match method {
        DMethod::Circulant => build_d_circulant(channels, specs, es)?,
        DMethod::DiagonalExtraction => build_d_dense(channels, specs, es)?,
        DMethod::MonteCarlo { samples, seed } => build_d_monte_carlo(channels, specs, es, samples, seed)?,
    };
    d.check_positive_definite()?;
    Ok(d)
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect()
}

fn assemble(n: usize, q: usize, diags: Vec<((usize, usize), Vec<Complex64>)>) -> BlockMatrix {
    // d_ab = diag(F R_ab F^H) fills block (b, a); block (a, b) is its conjugate.
    let mut d = BlockMatrix::zeros(n, q);
    for ((a, b), v) in diags {
        d.diag_mut(b, a).copy_from_slice(&v);
        if a != b {
            d.diag_mut(a, b).iter_mut().zip(&v).for_each(|(x, y)| *x = y.conj());
        } else {
            d.diag_mut(a, a).iter_mut().for_each(|x| x.im = 0.0);
        }
    }
    d
}

fn build_d_circulant(channels: &ChannelSet, specs: &[AdcSpec], es: f64) -> Result<BlockMatrix> {
    let (n, q) = (channels.n_antennas(), channels.n_subcarriers());
    let var: Vec<f64> = (0..n).map(|a| antenna_variance(channels, es, a)).collect();
    let diags = pairs(n)
        .into_par_iter()
        .map(|(a, b)| {
            let mut c = quantized_cov_generator(channels, specs, &var, es, a, b)?;
            dft_in_place(&mut c);
            let s = (q as f64).sqrt();
            c.iter_mut().for_each(|v| *v *= s);
            Ok(((a, b), c))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(n, q, diags))
}

/// First column of the circulant `R_ab`.
pub fn quantized_cov_generator(
    channels: &ChannelSet,
    specs: &[AdcSpec],
    var: &[f64],
    es: f64,
    a: usize,
    b: usize,
) -> Result<Vec<Complex64>> {
    let y = prequant_cov_generator(channels, es, a, b);
    let map = EntryMap::new(&specs[a], &specs[b], var[a], var[b]);
    let mut r = y.iter().map(|v| map.apply(*v)).collect::<Result<Vec<_>>>()?;
    if a == b {
        // the zero lag is the output power; pin it rather than rounding through arcsin near 1
        r[0] = map.self_power();
    }
    Ok(r)
}

fn build_d_dense(channels: &ChannelSet, specs: &[AdcSpec], es: f64) -> Result<BlockMatrix> {
    let (n, q) = (channels.n_antennas(), channels.n_subcarriers());
    let var: Vec<f64> = (0..n).map(|a| antenna_variance(channels, es, a)).collect();
    let diags = pairs(n)
        .into_par_iter()
        .map(|(a, b)| {
            let r = dense_quantized_cov(channels, specs, &var, es, a, b)?;
            Ok(((a, b), diag_unitary_similarity(&r)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(n, q, diags))
}

/// Dense `R_ab`. High-resolution and one-bit pairs follow the four-case
/// formulas; any pair involving a multi-bit ADC uses the general map.
pub fn dense_quantized_cov(
    channels: &ChannelSet,
    specs: &[AdcSpec],
    var: &[f64],
    es: f64,
    a: usize,
    b: usize,
) -> Result<DMatrix<Complex64>> {
    let y_ab = prequant_cov(channels, es, a, b);
    let mut r = match (&specs[a], &specs[b]) {
        (AdcSpec::MultiBit(_), _) | (_, AdcSpec::MultiBit(_)) => {
            quantized_cov_general(&specs[a], &specs[b], &y_ab, var[a], var[b])?
        }
        (sa, sb) => {
            let y_aa = prequant_cov(channels, es, a, a);
            let y_bb = prequant_cov(channels, es, b, b);
            quantized_cov(sa.is_highres(), sb.is_highres(), &y_ab, &y_aa, &y_bb)?
        }
    };
    if a == b {
        let p = EntryMap::new(&specs[a], &specs[a], var[a], var[a]).self_power();
        r.set_diagonal(&nalgebra::DVector::from_element(r.nrows(), p));
    }
    Ok(r)
}

/// Maximum off-diagonal magnitude of `F R_ab F^H` over all antenna pairs.
/// Zero (to rounding) certifies that keeping only the diagonals loses nothing.
pub fn certify_circulance(channels: &ChannelSet, specs: &[AdcSpec], es: f64) -> Result<f64> {
    check_specs(channels, specs)?;
    let n = channels.n_antennas();
    let var: Vec<f64> = (0..n).map(|a| antenna_variance(channels, es, a)).collect();
    let worst = pairs(n)
        .into_par_iter()
        .map(|(a, b)| {
            let r = dense_quantized_cov(channels, specs, &var, es, a, b)?;
            let t = unitary_similarity(&r);
            let mut w: f64 = 0.0;
            for i in 0..t.nrows() {
                for j in 0..t.ncols() {
                    if i != j {
                        w = w.max(t[(i, j)].norm());
                    }
                }
            }
            Ok(w)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

/// One realization of the frequency-domain symbols and quantized outputs.
#[derive(Debug, Clone)]
pub struct ReceivedDraw {
    /// `x[u]`: frequency-domain symbols of user `u`.
    pub x: Vec<Vec<Complex64>>,
    /// `r[n]`: quantized time-domain samples of antenna `n`.
    pub r: Vec<Vec<Complex64>>,
}

/// Draw `x_u ~ CN(0, E_s I)`, form `y_n = sum_u F^H (lambda_n^u . x_u) + z_n`
/// and quantize each antenna with gain control at its exact variance.
pub fn draw_received<R: Rng + ?Sized>(channels: &ChannelSet, specs: &[AdcSpec], es: f64, rng: &mut R) -> ReceivedDraw {
    let (n, q, users) = (channels.n_antennas(), channels.n_subcarriers(), channels.n_users());
    let x: Vec<Vec<Complex64>> = (0..users).map(|_| (0..q).map(|_| complex_gaussian(rng, es)).collect()).collect();
    let r = (0..n)
        .map(|a| {
            let mut y = vec![ZERO; q];
            for (u, xu) in x.iter().enumerate() {
                for (k, l) in channels.spectrum(u, a).iter().enumerate() {
                    y[k] += l * xu[k];
                }
            }
            idft_in_place(&mut y);
            let dim_std = (antenna_variance(channels, es, a) / 2.0).sqrt();
            y.iter().map(|v| quantize_sample(v + complex_gaussian(rng, 1.0), &specs[a], dim_std)).collect()
        })
        .collect();
    ReceivedDraw { x, r }
}

/// Monte Carlo estimate of a complex matrix with per-entry standard errors.
#[derive(Debug, Clone)]
pub struct MatrixEstimate {
    pub value: DMatrix<Complex64>,
    pub std_error: DMatrix<f64>,
    pub n_samples: usize,
}

/// Empirical `R_ab = E[r_a r_b^H]` over common draws, with batch-means
/// standard errors.
pub fn mc_quantized_cov<R: Rng + ?Sized>(
    a: usize,
    b: usize,
    specs: &[AdcSpec],
    channels: &ChannelSet,
    es: f64,
    samples: usize,
    rng: &mut R,
) -> Result<MatrixEstimate> {
    check_specs(channels, specs)?;
    let q = channels.n_subcarriers();
    let mut re: Vec<BatchMeans> = (0..q * q).map(|_| BatchMeans::new(samples, DEFAULT_BATCHES)).collect();
    let mut im = re.clone();
    for s in 0..samples {
        let d = draw_received(channels, specs, es, rng);
        for i in 0..q {
            for j in 0..q {
                let v = d.r[a][i] * d.r[b][j].conj();
                re[i * q + j].push(s, v.re);
                im[i * q + j].push(s, v.im);
            }
        }
    }
    let mut value = DMatrix::zeros(q, q);
    let mut se = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in 0..q {
            let (mr, sr) = re[i * q + j].estimate();
            let (mi, si) = im[i * q + j].estimate();
            value[(i, j)] = Complex64::new(mr, mi);
            se[(i, j)] = sr.hypot(si);
        }
    }
    Ok(MatrixEstimate { value, std_error: se, n_samples: samples })
}

fn build_d_monte_carlo(channels: &ChannelSet, specs: &[AdcSpec], es: f64, samples: usize, seed: u64) -> Result<BlockMatrix> {
    if samples == 0 {
        return Err(Error::config("Monte Carlo D needs at least one sample"));
    }
    let (n, q) = (channels.n_antennas(), channels.n_subcarriers());
    let per = samples.div_ceil(DEFAULT_BATCHES);
    let parts: Vec<BlockMatrix> = (0..DEFAULT_BATCHES)
        .into_par_iter()
        .map(|batch| {
            let mut rng = stream(seed, batch as u64);
            let mut acc = BlockMatrix::zeros(n, q);
            let count = per.min(samples.saturating_sub(batch * per));
            for _ in 0..count {
                let mut draw = draw_received(channels, specs, es, &mut rng);
                draw.r.iter_mut().for_each(|r| dft_in_place(r));
                for a in 0..n {
                    for b in 0..n {
                        let (ra, rb) = (&draw.r[a], &draw.r[b]);
                        acc.diag_mut(a, b).iter_mut().enumerate().for_each(|(k, v)| *v += ra[k].conj() * rb[k]);
                    }
                }
            }
            acc
        })
        .collect();
    let mut d = BlockMatrix::zeros(n, q);
    for p in &parts {
        d.add_scaled(p, 1.0 / samples as f64);
    }
    Ok(d)
}
