//! Small numerical helpers shared across modules.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Neumaier-compensated accumulator. Summing the same sequence in the same
/// order always gives the same bits; compensation keeps long reductions
/// accurate to about one ulp of the result.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// P(a < X < b) for standard normal X, accurate in both tails.
pub fn normal_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (libm::erfc(a * FRAC_1_SQRT_2) - libm::erfc(b * FRAC_1_SQRT_2))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * FRAC_1_SQRT_2) - libm::erfc(-a * FRAC_1_SQRT_2))
    } else {
        1.0 - normal_cdf(a) - (1.0 - normal_cdf(b))
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Batch-means accumulator for Monte Carlo estimates: samples are assigned to
/// `batches` contiguous groups and the spread of the group means gives the
/// standard error.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    per_batch: usize,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

pub const DEFAULT_BATCHES: usize = 16;

impl BatchMeans {
    pub fn new(total_samples: usize, batches: usize) -> Self {
        let per_batch = total_samples.div_ceil(batches).max(1);
        Self { per_batch, sums: vec![0.0; batches], counts: vec![0; batches] }
    }

    pub fn push(&mut self, sample_index: usize, value: f64) {
        let b = (sample_index / self.per_batch).min(self.sums.len() - 1);
        self.sums[b] += value;
        self.counts[b] += 1;
    }

    pub fn batch_means(&self) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s / c as f64)
            .collect()
    }

    /// (mean, standard error of the mean).
    pub fn estimate(&self) -> (f64, f64) {
        mean_and_se(&self.batch_means())
    }
}
