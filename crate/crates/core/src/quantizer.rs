//! ADC models: one-bit sign, b-bit Lloyd-Max, and the high-resolution passthrough.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{normal_mass, normal_pdf};

/// Complex sign `(sgn(Re z) + j sgn(Im z)) / sqrt(2)`, with `sgn(0) = +1`.
pub fn csign(z: Complex64) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = if z.re < 0.0 { -s } else { s };
    let im = if z.im < 0.0 { -s } else { s };
    Complex64::new(re, im)
}

/// A symmetric scalar quantizer designed for a zero-mean Gaussian of
/// standard deviation `design_std`. It is always applied with ideal gain
/// control: an input of per-dimension standard deviation `s` is mapped as
/// `s * q_unit(a / s)`, where `q_unit` is the design rescaled to unit std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarQuantizer {
    pub bits: u32,
    pub thresholds: Vec<f64>,
    pub levels: Vec<f64>,
    pub design_std: f64,
}

impl ScalarQuantizer {
    pub fn new(bits: u32, thresholds: Vec<f64>, levels: Vec<f64>, design_std: f64) -> Result<Self> {
        let l = 1usize << bits;
        if levels.len() != l {
            return Err(Error::LengthMismatch { expected: l, found: levels.len() });
        }
        if thresholds.len() != l - 1 {
            return Err(Error::LengthMismatch { expected: l - 1, found: thresholds.len() });
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&thresholds) || !increasing(&levels) {
            return Err(Error::config("quantizer thresholds and levels must be strictly increasing"));
        }
        if !(design_std > 0.0) {
            return Err(Error::NonPositiveVariance { index: 0, value: design_std });
        }
        Ok(Self { bits, thresholds, levels, design_std })
    }

    /// Map one real sample using the stored thresholds and levels as-is.
    pub fn apply(&self, x: f64) -> f64 {
        let i = self.thresholds.partition_point(|&t| t <= x);
        self.levels[i]
    }

    /// Thresholds rescaled to a unit-variance input.
    pub fn unit_thresholds(&self) -> Vec<f64> {
        self.thresholds.iter().map(|t| t / self.design_std).collect()
    }

    /// Levels rescaled to a unit-variance input.
    pub fn unit_levels(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l / self.design_std).collect()
    }

    /// `s * q_unit(x / s)`: the quantizer under ideal gain control for
    /// per-dimension input standard deviation `s`.
    pub fn apply_scaled(&self, x: f64, s: f64) -> f64 {
        s * self.apply(x * self.design_std / s) / self.design_std
    }

    /// `E[q_unit(x) x]` for `x ~ N(0, 1)`: the Bussgang gain under ideal
    /// gain control.
    pub fn unit_gain(&self) -> f64 {
        let t = self.unit_thresholds();
        let l = self.unit_levels();
        t.iter().zip(l.windows(2)).map(|(&t, w)| (w[1] - w[0]) * normal_pdf(t)).sum()
    }

    /// `E[q_unit(x)^2]` for `x ~ N(0, 1)`.
    pub fn unit_power(&self) -> f64 {
        let l = self.unit_levels();
        self.unit_bins().map(|(i, a, b)| l[i] * l[i] * normal_mass(a, b)).sum()
    }

    /// Mean squared error `E[(x - q(x))^2]` for `x ~ N(0, design_std^2)`.
    pub fn mse(&self) -> f64 {
        let s = self.design_std;
        let l = self.unit_levels();
        let unit: f64 = self
            .unit_bins()
            .map(|(i, a, b)| {
                let p = normal_mass(a, b);
                let first = normal_pdf(a) - normal_pdf(b);
                let second = p + pdf_times(a) - pdf_times(b);
                second - 2.0 * l[i] * first + l[i] * l[i] * p
            })
            .sum();
        unit * s * s
    }

    fn unit_bins(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let t = self.unit_thresholds();
        (0..self.levels.len()).map(move |i| {
            let a = if i == 0 { f64::NEG_INFINITY } else { t[i - 1] };
            let b = if i == t.len() { f64::INFINITY } else { t[i] };
            (i, a, b)
        })
    }
}

fn pdf_times(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        x * normal_pdf(x)
    }
}

/// Per-antenna front end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AdcSpec {
    HighRes,
    OneBit,
    MultiBit(ScalarQuantizer),
}

impl AdcSpec {
    pub fn is_highres(&self) -> bool {
        matches!(self, AdcSpec::HighRes)
    }

    /// Resolution used for ordering populations; high resolution sorts first.
    pub fn bits(&self) -> u32 {
        match self {
            AdcSpec::HighRes => u32::MAX,
            AdcSpec::OneBit => 1,
            AdcSpec::MultiBit(q) => q.bits,
        }
    }
}

/// Quantize `y` with `spec`. `dim_std` is the per-dimension input standard
/// deviation used for gain control of a multi-bit quantizer and is ignored
/// otherwise.
pub fn quantize_vector(y: &[Complex64], spec: &AdcSpec, dim_std: f64) -> Result<Vec<Complex64>> {
    if let Some(index) = y.iter().position(|v| v.re.is_nan() || v.im.is_nan()) {
        return Err(Error::NanInput { index });
    }
    Ok(match spec {
        AdcSpec::HighRes => y.to_vec(),
        AdcSpec::OneBit => y.iter().map(|&v| csign(v)).collect(),
        AdcSpec::MultiBit(q) => {
            if !(dim_std > 0.0) {
                return Err(Error::NonPositiveVariance { index: 0, value: dim_std });
            }
            y.iter()
                .map(|v| Complex64::new(q.apply_scaled(v.re, dim_std), q.apply_scaled(v.im, dim_std)))
                .collect()
        }
    })
}

/// Quantize a single sample; the hot path of the simulators.
#[inline]
pub fn quantize_sample(v: Complex64, spec: &AdcSpec, dim_std: f64) -> Complex64 {
    match spec {
        AdcSpec::HighRes => v,
        AdcSpec::OneBit => csign(v),
        AdcSpec::MultiBit(q) => Complex64::new(q.apply_scaled(v.re, dim_std), q.apply_scaled(v.im, dim_std)),
    }
}

const LLOYD_MAX_ITERATIONS: usize = 10_000;
const LLOYD_TOLERANCE: f64 = 1e-10;

/// Lloyd-Max quantizer for `N(0, input_std^2)` with `2^bits` levels.
pub fn lloyd_max(bits: u32, input_std: f64) -> Result<ScalarQuantizer> {
    if !(1..=8).contains(&bits) {
        return Err(Error::config(format!("Lloyd-Max design supports 1..=8 bits, got {bits}")));
    }
    if !(input_std > 0.0) {
        return Err(Error::NonPositiveVariance { index: 0, value: input_std });
    }
    let n = 1usize << bits;
    // Start from the companding approximation: levels at quantiles of N(0, 3).
    let mut levels: Vec<f64> =
        (0..n).map(|i| 3f64.sqrt() * normal_quantile((i as f64 + 0.5) / n as f64)).collect();
    let mut thresholds = vec![0.0; n - 1];
    let mut converged = false;
    // Lloyd fixed point l = G(l), accelerated by Newton steps on l - G(l).
    // The Jacobian of G is tridiagonal; a plain Lloyd step is the fallback.
    for _ in 0..LLOYD_MAX_ITERATIONS {
        let (g, jac) = lloyd_map(&levels);
        let scale = levels[n - 1].abs();
        let residual: Vec<f64> = g.iter().zip(&levels).map(|(g, l)| g - l).collect();
        let change = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if change <= LLOYD_TOLERANCE * scale {
            levels = g;
            converged = true;
            break;
        }
        let step = newton_step(&jac, &residual);
        let candidate: Vec<f64> = levels.iter().zip(&step).map(|(l, d)| l + d).collect();
        let accept = candidate.windows(2).all(|w| w[0] < w[1]) && {
            let (gc, _) = lloyd_map(&candidate);
            gc.iter().zip(&candidate).fold(0.0f64, |m, (g, l)| m.max((g - l).abs())) < change
        };
        levels = if accept { candidate } else { g };
    }
    if !converged {
        return Err(Error::NoConvergence { bits, iterations: LLOYD_MAX_ITERATIONS });
    }
    for (t, w) in thresholds.iter_mut().zip(levels.windows(2)) {
        *t = 0.5 * (w[0] + w[1]);
    }
    symmetrize(&mut levels);
    symmetrize(&mut thresholds);
    ScalarQuantizer::new(
        bits,
        thresholds.iter().map(|t| t * input_std).collect(),
        levels.iter().map(|l| l * input_std).collect(),
        input_std,
    )
}

/// Lloyd-Max design wrapped as a front-end spec.
pub fn lloyd_max_design(bits: u32, input_std: f64) -> Result<AdcSpec> {
    lloyd_max(bits, input_std).map(AdcSpec::MultiBit)
}

/// One Lloyd update `G(l)` and its tridiagonal Jacobian as
/// (sub, diag, super) diagonals.
fn lloyd_map(levels: &[f64]) -> (Vec<f64>, [Vec<f64>; 3]) {
    let n = levels.len();
    let mut g = vec![0.0; n];
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for i in 0..n {
        let a = if i == 0 { f64::NEG_INFINITY } else { 0.5 * (levels[i - 1] + levels[i]) };
        let b = if i == n - 1 { f64::INFINITY } else { 0.5 * (levels[i] + levels[i + 1]) };
        let p = normal_mass(a, b);
        let c = (normal_pdf(a) - normal_pdf(b)) / p;
        g[i] = c;
        let da = if a.is_finite() { normal_pdf(a) * (c - a) / p } else { 0.0 };
        let db = if b.is_finite() { normal_pdf(b) * (b - c) / p } else { 0.0 };
        sub[i] = 0.5 * da;
        sup[i] = 0.5 * db;
        diag[i] = 0.5 * (da + db);
    }
    (g, [sub, diag, sup])
}

/// Solve `(I - J) d = r` for tridiagonal `J` (Thomas algorithm).
fn newton_step(jac: &[Vec<f64>; 3], r: &[f64]) -> Vec<f64> {
    let n = r.len();
    let a: Vec<f64> = jac[0].iter().map(|v| -v).collect();
    let b: Vec<f64> = jac[1].iter().map(|v| 1.0 - v).collect();
    let c: Vec<f64> = jac[2].iter().map(|v| -v).collect();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = r[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (r[i] - a[i] * dp[i - 1]) / m;
    }
    let mut d = vec![0.0; n];
    d[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        d[i] = dp[i] - cp[i] * d[i + 1];
    }
    d
}

fn symmetrize(v: &mut [f64]) {
    let n = v.len();
    for i in 0..n / 2 {
        let m = 0.5 * (v[n - 1 - i] - v[i]);
        v[i] = -m;
        v[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        v[n / 2] = 0.0;
    }
}

fn normal_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if crate::numerics::normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Linear gain `E[q(u)^* u] / E[|u|^2]` of a front end driven by a
/// circularly symmetric complex Gaussian of total variance
/// `complex_variance`. For the one-bit ADC this is `sqrt(2/pi) / sigma`;
/// for a multi-bit ADC under ideal gain control it is the unit-variance
/// real-dimension gain and does not depend on the variance.
pub fn bussgang_gain(spec: &AdcSpec, complex_variance: f64) -> Result<f64> {
    if !(complex_variance > 0.0) {
        return Err(Error::NonPositiveVariance { index: 0, value: complex_variance });
    }
    Ok(match spec {
        AdcSpec::HighRes => 1.0,
        AdcSpec::OneBit => (2.0 / std::f64::consts::PI).sqrt() / complex_variance.sqrt(),
        AdcSpec::MultiBit(q) => q.unit_gain(),
    })
}

/// Binary ADC switch vector: `true` marks a high-resolution pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AdcSwitchVector(Vec<bool>);

impl AdcSwitchVector {
    pub fn new(delta: Vec<bool>) -> Self {
        Self(delta)
    }

    /// Check that exactly `k` entries are set.
    pub fn with_count(delta: Vec<bool>, k: usize) -> Result<Self> {
        let s = delta.iter().filter(|&&d| d).count();
        if s != k {
            return Err(Error::config(format!("switch vector has {s} high-resolution entries, expected {k}")));
        }
        Ok(Self(delta))
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn all(n: usize, highres: bool) -> Self {
        Self(vec![highres; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&d| d).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    /// Front ends implied by the vector: high resolution or one bit.
    pub fn specs(&self) -> Vec<AdcSpec> {
        self.0.iter().map(|&d| if d { AdcSpec::HighRes } else { AdcSpec::OneBit }).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn csign_examples() {
        assert_eq!(csign(Complex64::new(1.0, 2.0)), Complex64::new(S, S));
        assert_eq!(csign(Complex64::new(-3.0, 0.5)), Complex64::new(-S, S));
        assert_eq!(csign(Complex64::new(0.0, 0.0)), Complex64::new(S, S));
    }

    #[test]
    fn quantize_examples() {
        let y = [Complex64::new(1.0, 1.0)];
        assert_eq!(quantize_vector(&y, &AdcSpec::HighRes, 1.0).unwrap(), y);
        let y = [Complex64::new(-0.1, -5.0)];
        assert_eq!(quantize_vector(&y, &AdcSpec::OneBit, 1.0).unwrap(), [Complex64::new(-S, -S)]);
        let one = lloyd_max_design(1, 1.0).unwrap();
        let r = quantize_vector(&[Complex64::new(0.3, 0.3)], &one, 1.0).unwrap();
        assert_relative_eq!(r[0].re, (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-9);
        assert!(matches!(
            quantize_vector(&[Complex64::new(f64::NAN, 0.0)], &AdcSpec::OneBit, 1.0),
            Err(Error::NanInput { index: 0 })
        ));
    }

    #[test]
    fn lloyd_max_one_bit_and_scaling() {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        let q = lloyd_max(1, 1.0).unwrap();
        assert_relative_eq!(q.levels[1], c, epsilon = 1e-9);
        assert_relative_eq!(q.levels[0], -c, epsilon = 1e-9);
        assert_eq!(q.thresholds, vec![0.0]);
        let q2 = lloyd_max(1, 2.0).unwrap();
        assert_relative_eq!(q2.levels[1], 2.0 * c, epsilon = 1e-9);
    }

    #[test]
    fn lloyd_max_known_two_bit_design() {
        // Classical 4-level Gaussian optimum.
        let q = lloyd_max(2, 1.0).unwrap();
        assert_relative_eq!(q.thresholds[2], 0.9816, epsilon = 1e-4);
        assert_relative_eq!(q.levels[3], 1.5104, epsilon = 1e-4);
        assert_relative_eq!(q.levels[2], 0.4528, epsilon = 1e-4);
        assert_relative_eq!(q.mse(), 0.1175, epsilon = 1e-4);
    }

    #[test]
    fn lloyd_max_mse_decreases_and_all_widths_converge() {
        let mut prev = f64::INFINITY;
        for b in 1..=8 {
            let q = lloyd_max(b, 1.0).unwrap();
            let m = q.mse();
            assert!(m < prev, "b={b}: {m} !< {prev}");
            prev = m;
        }
        assert!(lloyd_max(0, 1.0).is_err());
        assert!(lloyd_max(9, 1.0).is_err());
    }

    #[test]
    fn mse_matches_centroid_identity() {
        // For a centroid quantizer, E[(x - q)^2] = 1 - E[q^2].
        for b in 1..=5 {
            let q = lloyd_max(b, 1.0).unwrap();
            assert_relative_eq!(q.mse(), 1.0 - q.unit_power(), epsilon = 1e-9);
            assert_relative_eq!(q.unit_gain(), q.unit_power(), epsilon = 1e-9);
        }
    }

    #[test]
    fn bussgang_examples() {
        let c = (2.0 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(bussgang_gain(&AdcSpec::OneBit, 1.0).unwrap(), c, epsilon = 1e-15);
        assert_eq!(bussgang_gain(&AdcSpec::HighRes, 7.0).unwrap(), 1.0);
        assert!(bussgang_gain(&AdcSpec::OneBit, 0.0).is_err());
    }

    #[test]
    fn bussgang_two_bit_matches_monte_carlo() {
        let spec = lloyd_max_design(2, 1.0).unwrap();
        let AdcSpec::MultiBit(q) = &spec else { unreachable!() };
        let closed = bussgang_gain(&spec, 2.0).unwrap();
        let mut rng = crate::rng::seeded(3);
        let n = 1_000_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = rng.sample(rand_distr::StandardNormal);
                q.apply(x) * x
            })
            .collect();
        let (m, se) = crate::numerics::mean_and_se(&vals);
        assert!((m - closed).abs() < 3.0 * se, "{m} vs {closed} (se {se})");
        assert!(closed > (2.0 / std::f64::consts::PI) && closed < 1.0);
    }

    #[test]
    fn switch_vector_count() {
        assert!(AdcSwitchVector::with_count(vec![true, false, true], 2).is_ok());
        assert!(AdcSwitchVector::with_count(vec![true, false, true], 1).is_err());
        assert_eq!(AdcSwitchVector::from_bits(&[1, 0]).specs(), vec![AdcSpec::HighRes, AdcSpec::OneBit]);
    }

    proptest::proptest! {
        #[test]
        fn csign_has_unit_modulus(re in -1e6f64..1e6, im in -1e6f64..1e6) {
            proptest::prop_assert!((csign(Complex64::new(re, im)).norm() - 1.0).abs() < 1e-15);
        }

        #[test]
        fn highres_is_identity(re in -1e6f64..1e6, im in -1e6f64..1e6) {
            let y = [Complex64::new(re, im)];
            proptest::prop_assert_eq!(quantize_vector(&y, &AdcSpec::HighRes, 1.0).unwrap(), y.to_vec());
        }

        #[test]
        fn symmetric_gain_in_unit_interval(b in 1u32..=6, s in 0.1f64..10.0) {
            let g = bussgang_gain(&lloyd_max_design(b, s).unwrap(), 1.0).unwrap();
            proptest::prop_assert!(g > 0.0 && g <= 1.0);
        }
    }
}
