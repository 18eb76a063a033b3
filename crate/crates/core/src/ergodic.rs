//! Ergodic evaluation over block-fading channel draws: training overhead,
//! statistics conditioned on a channel estimate, and GMI bounds.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equalizer::{delta_gmi, gmi_from_delta, nats_to_bits};
use crate::error::{Error, Result};
use crate::numerics::mean_and_se;
use crate::quantizer::AdcSpec;
use crate::rng::stream2;
use crate::secondstats::{build_d, build_g, BlockMatrix, DMethod};
use crate::spectral::{draw_channel, perturb, split_csi, ChannelSet, SystemConfig};
use crate::switching::{antenna_norms, rank_by_norm, AdcPopulation, SwitchPolicy};

pub const DEFAULT_CSI_DRAWS: usize = 64;

/// Symbols spent on training: `ceil(N/K) * ceil(U/N_s)`.
pub fn training_length(n: usize, k: usize, users: usize, pilot_spacing: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::NoHighResolution);
    }
    if pilot_spacing == 0 {
        return Err(Error::config("pilot spacing must be positive"));
    }
    Ok(n.div_ceil(k) * users.div_ceil(pilot_spacing))
}

/// Fraction of the coherence interval left for data.
pub fn training_overhead(n: usize, k: usize, users: usize, pilot_spacing: usize, coherence_len: usize) -> Result<f64> {
    let t = training_length(n, k, users, pilot_spacing)?;
    if t >= coherence_len {
        let rho = (coherence_len as f64 - t as f64) / coherence_len as f64;
        return Err(Error::NonPositiveRho { rho });
    }
    Ok((coherence_len - t) as f64 / coherence_len as f64)
}

/// `E[g_u | h_hat]` for every user and `E[D | h_hat]`.
#[derive(Debug, Clone)]
pub struct ConditionalStats {
    pub g: Vec<Vec<Complex64>>,
    pub d: BlockMatrix,
    pub samples: usize,
}

impl ConditionalStats {
    pub fn delta(&self, user: usize, es: f64) -> Result<f64> {
        Ok(delta_gmi(&self.d, &self.g[user], es)?.delta)
    }
}

/// Average `g` and `D` over `draws` realizations `h = h_hat + h_err`,
/// `h_err ~ CN(0, mse/T)`. With `mse = 0` a single exact evaluation is used.
pub fn conditional_stats<R: Rng + ?Sized>(
    estimate: &ChannelSet,
    mse_h: f64,
    tap_counts: &[usize],
    specs: &[AdcSpec],
    es: f64,
    draws: usize,
    rng: &mut R,
) -> Result<ConditionalStats> {
    if !(0.0..1.0).contains(&mse_h) {
        return Err(Error::InvalidMse(mse_h));
    }
    if draws == 0 {
        return Err(Error::config("at least one estimation-error draw is required"));
    }
    let users = estimate.n_users();
    let stats = |h: &ChannelSet| -> Result<(Vec<Vec<Complex64>>, BlockMatrix)> {
        let g = (0..users).map(|u| build_g(h, specs, es, u)).collect::<Result<Vec<_>>>()?;
        Ok((g, build_d(h, specs, es, DMethod::Circulant)?))
    };
    if mse_h == 0.0 {
        let (g, d) = stats(estimate)?;
        return Ok(ConditionalStats { g, d, samples: 1 });
    }
    let (mut g, mut d) = (None::<Vec<Vec<Complex64>>>, None::<BlockMatrix>);
    let w = 1.0 / draws as f64;
    for _ in 0..draws {
        let h = perturb(estimate, mse_h, tap_counts, rng);
        let (gi, di) = stats(&h)?;
        match (&mut g, &mut d) {
            (Some(g), Some(d)) => {
                for (acc, x) in g.iter_mut().flatten().zip(gi.iter().flatten()) {
                    *acc += x * w;
                }
                d.add_scaled(&di, w);
            }
            _ => {
                g = Some(gi.into_iter().map(|v| v.into_iter().map(|x| x * w).collect()).collect());
                let mut acc = BlockMatrix::zeros(di.n_antennas(), di.n_subcarriers());
                acc.add_scaled(&di, w);
                d = Some(acc);
            }
        }
    }
    Ok(ConditionalStats { g: g.unwrap_or_default(), d: d.expect("draws >= 1"), samples: draws })
}

/// Approximate conditional statistics: the estimation error is treated as
/// extra white noise of variance `E_s U mse` on every antenna, i.e. each
/// `||lambda_n||^2` is replaced by its conditional mean. Because `Delta` is
/// invariant to per-antenna scaling, this is the exact statistics of
/// `h_hat / sqrt(1 + E_s U mse)` at unit noise.
pub fn plug_in_stats(estimate: &ChannelSet, mse_h: f64, specs: &[AdcSpec], es: f64) -> Result<ConditionalStats> {
    let v = 1.0 + es * estimate.n_users() as f64 * mse_h;
    let h = estimate.scaled(1.0 / v.sqrt());
    let g = (0..h.n_users()).map(|u| build_g(&h, specs, es, u)).collect::<Result<Vec<_>>>()?;
    Ok(ConditionalStats { g, d: build_d(&h, specs, es, DMethod::Circulant)?, samples: 1 })
}

/// Lower bound `rho * -log(1 - E[Delta])` and upper bound
/// `rho * E[-log(1 - Delta)]`, in nats, with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub lower: f64,
    pub upper: f64,
    pub lower_se: f64,
    pub upper_se: f64,
    pub rho: f64,
    pub n_draws: usize,
    pub deltas: Vec<f64>,
}

impl ErgodicReport {
    pub fn from_deltas(deltas: Vec<f64>, rho: f64) -> Self {
        let n = deltas.len();
        let (mut mean, se) = mean_and_se(&deltas);
        if deltas.iter().all(|&d| d == deltas[0]) {
            mean = deltas[0];
        }
        let rates: Vec<f64> = deltas.iter().map(|&d| gmi_from_delta(d)).collect();
        let (mut rate, mut rate_se) = mean_and_se(&rates);
        if deltas.iter().all(|&d| d == deltas[0]) {
            (rate, rate_se) = (rates[0], 0.0);
        }
        Self {
            lower: rho * gmi_from_delta(mean),
            upper: rho * rate,
            lower_se: rho * se / (1.0 - mean),
            upper_se: rho * rate_se,
            rho,
            n_draws: n,
            deltas,
        }
    }

    pub fn lower_bits(&self) -> f64 {
        nats_to_bits(self.lower)
    }

    pub fn upper_bits(&self) -> f64 {
        nats_to_bits(self.upper)
    }

    pub fn mean_delta(&self) -> f64 {
        mean_and_se(&self.deltas).0
    }

    /// `(upper - lower) / upper`.
    pub fn relative_gap(&self) -> f64 {
        (self.upper - self.lower) / self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatsMode {
    /// Average over this many estimation-error draws.
    MonteCarlo { draws: usize },
    /// [`plug_in_stats`]; approximate.
    PlugIn,
}

impl Default for StatsMode {
    fn default() -> Self {
        StatsMode::MonteCarlo { draws: DEFAULT_CSI_DRAWS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicOptions {
    pub policy: SwitchPolicy,
    pub population: AdcPopulation,
    /// Known channel and no training: `rho = 1`, `mse = 0`.
    pub perfect_csi: bool,
    pub stats: StatsMode,
    /// Also evaluate the all-high-resolution capacity and antenna selection.
    pub baselines: bool,
}

impl ErgodicOptions {
    pub fn new(config: &SystemConfig) -> Self {
        Self {
            policy: SwitchPolicy::NormBased,
            population: AdcPopulation::mixed(config.n_highres),
            perfect_csi: false,
            stats: StatsMode::default(),
            baselines: false,
        }
    }

    pub fn perfect_csi(mut self) -> Self {
        self.perfect_csi = true;
        self
    }

    pub fn with_baselines(mut self) -> Self {
        self.baselines = true;
        self
    }
}

/// Mean of a per-draw rate scaled by the training factor, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub rho: f64,
}

impl RateEstimate {
    fn new(values: &[f64], rho: f64) -> Self {
        let (m, se) = mean_and_se(values);
        Self { mean: rho * m, std_error: rho * se, rho }
    }

    pub fn bits(&self) -> f64 {
        nats_to_bits(self.mean)
    }
}

/// Per-user results of one ergodic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSweep {
    pub mixed: Vec<ErgodicReport>,
    /// All antennas high resolution, perfect CSI, interference-free MRC.
    pub capacity: Option<Vec<RateEstimate>>,
    /// High resolution on the `K` strongest antennas, the rest discarded.
    /// Absent when `K = 0`.
    pub antenna_selection: Option<Vec<ErgodicReport>>,
}

struct DrawOutcome {
    mixed: Vec<f64>,
    capacity: Vec<f64>,
    selection: Vec<f64>,
}

/// `(1/Q) sum_q log(1 + E_s sum_n |lambda_nq^u|^2)`, the single-user
/// capacity of user `u` with all converters at high resolution.
pub fn mrc_capacity(channels: &ChannelSet, es: f64, user: usize) -> f64 {
    let q = channels.n_subcarriers();
    let total: f64 = (0..q)
        .map(|k| (es * (0..channels.n_antennas()).map(|n| channels.spectrum(user, n)[k].norm_sqr()).sum::<f64>()).ln_1p())
        .sum();
    total / q as f64
}

/// The channel realization used for draw `index` of a run seeded with `seed`.
pub fn draw_instance(config: &SystemConfig, seed: u64, index: usize) -> ChannelSet {
    draw_channel(config, &mut stream2(seed, index as u32, 0))
}

fn stats_for<R: Rng + ?Sized>(
    estimate: &ChannelSet,
    mse: f64,
    config: &SystemConfig,
    specs: &[AdcSpec],
    mode: StatsMode,
    rng: &mut R,
) -> Result<ConditionalStats> {
    match mode {
        StatsMode::MonteCarlo { draws } => {
            conditional_stats(estimate, mse, &config.taps, specs, config.symbol_energy, draws, rng)
        }
        StatsMode::PlugIn => plug_in_stats(estimate, mse, specs, config.symbol_energy),
    }
}

fn run_draw(config: &SystemConfig, options: &ErgodicOptions, seed: u64, index: usize) -> Result<DrawOutcome> {
    let es = config.symbol_energy;
    let users = config.n_users();
    let mut rng = stream2(seed, index as u32, 0);
    let h = draw_channel(config, &mut rng);
    let mse = if options.perfect_csi { 0.0 } else { config.mse_h };
    let estimate = if mse == 0.0 { h.clone() } else { split_csi(&h, mse, &config.taps, &mut rng)?.estimate };
    let order = options.policy.order(&estimate, &mut rng);
    let specs = options.population.assign(&order)?;
    let stats = stats_for(&estimate, mse, config, &specs, options.stats, &mut stream2(seed, index as u32, 1))?;
    let mixed = (0..users).map(|u| stats.delta(u, es)).collect::<Result<Vec<_>>>()?;

    let (mut capacity, mut selection) = (Vec::new(), Vec::new());
    if options.baselines {
        capacity = (0..users).map(|u| mrc_capacity(&h, es, u)).collect();
        let k = options.population.highres;
        if k > 0 {
            let best: Vec<usize> = rank_by_norm(&antenna_norms(&estimate)).into_iter().take(k).collect();
            let sub = estimate.select_antennas(&best);
            let hr = vec![AdcSpec::HighRes; k];
            let s = stats_for(&sub, mse, config, &hr, options.stats, &mut stream2(seed, index as u32, 2))?;
            selection = (0..users).map(|u| s.delta(u, es)).collect::<Result<Vec<_>>>()?;
        }
    }
    Ok(DrawOutcome { mixed, capacity, selection })
}

/// Draw `n_draws` channels, apply the switch policy to each estimate,
/// evaluate the mismatched optimal equalizer under conditional statistics
/// and form both bounds for every user. Draw `i` uses seed streams keyed by
/// `(seed, i)`, so results do not depend on the thread count.
pub fn ergodic_sweep(config: &SystemConfig, options: &ErgodicOptions, n_draws: usize, seed: u64) -> Result<ErgodicSweep> {
    config.validate()?;
    if n_draws < 2 {
        return Err(Error::config("ergodic bounds need at least two channel draws"));
    }
    let (n, users) = (config.n_antennas, config.n_users());
    let k = options.population.highres;
    let (ns, tc) = (config.pilot_spacing, config.coherence_len);
    let rho = if options.perfect_csi { 1.0 } else { training_overhead(n, k, users, ns, tc)? };
    let outcomes = (0..n_draws)
        .into_par_iter()
        .map(|i| run_draw(config, options, seed, i).map_err(|e| Error::Draw { index: i, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;

    let column = |f: &dyn Fn(&DrawOutcome) -> f64| -> Vec<f64> { outcomes.iter().map(f).collect() };
    let mixed = (0..users).map(|u| ErgodicReport::from_deltas(column(&|o| o.mixed[u]), rho)).collect();
    let (capacity, antenna_selection) = if options.baselines {
        let rho_ca = if options.perfect_csi { 1.0 } else { training_overhead(n, n, users, ns, tc)? };
        let cap = (0..users).map(|u| RateEstimate::new(&column(&|o| o.capacity[u]), rho_ca)).collect();
        let sel = if k > 0 {
            let rho_as = if options.perfect_csi { 1.0 } else { training_overhead(k, k, users, ns, tc)? };
            Some((0..users).map(|u| ErgodicReport::from_deltas(column(&|o| o.selection[u]), rho_as)).collect())
        } else {
            None
        };
        (Some(cap), sel)
    } else {
        (None, None)
    };
    Ok(ErgodicSweep { mixed, capacity, antenna_selection })
}

/// Bounds for user 0.
pub fn ergodic_bounds(config: &SystemConfig, options: &ErgodicOptions, n_draws: usize, seed: u64) -> Result<ErgodicReport> {
    let mut sweep = ergodic_sweep(config, options, n_draws, seed)?;
    Ok(sweep.mixed.swap_remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equalizer::evaluate;
    use crate::rng::seeded;
    use crate::secondstats::build_g;

    #[test]
    fn training_examples() {
        assert_eq!(training_length(64, 16, 10, 14).unwrap(), 4);
        assert_eq!(training_overhead(64, 16, 10, 14, 53).unwrap(), 49.0 / 53.0);
        assert_eq!(training_overhead(64, 64, 1, 14, 53).unwrap(), 52.0 / 53.0);
        assert_eq!(training_overhead(8, 8, 1, 14, 20).unwrap(), 19.0 / 20.0);
        assert!(matches!(training_overhead(8, 0, 1, 14, 53), Err(Error::NoHighResolution)));
        assert!(matches!(training_overhead(64, 1, 1, 14, 53), Err(Error::NonPositiveRho { .. })));
    }

    fn estimate(seed: u64) -> (SystemConfig, ChannelSet) {
        let cfg = SystemConfig::new(3, 1, 4, 2, 1).with_mse(0.1);
        let h = draw_channel(&cfg, &mut seeded(seed));
        (cfg, h)
    }

    #[test]
    fn perfect_csi_stats_are_deterministic() {
        let (cfg, h) = estimate(1);
        let specs = crate::quantizer::AdcSwitchVector::from_bits(&[1, 0, 0]).specs();
        let s = conditional_stats(&h, 0.0, &cfg.taps, &specs, 1.0, 64, &mut seeded(0)).unwrap();
        assert_eq!(s.samples, 1);
        assert_eq!(s.g[0], build_g(&h, &specs, 1.0, 0).unwrap());
        assert_eq!(s.d, build_d(&h, &specs, 1.0, DMethod::Circulant).unwrap());
    }

    #[test]
    fn averaged_d_stays_hermitian_pd() {
        let (cfg, h) = estimate(2);
        let specs = crate::quantizer::AdcSwitchVector::from_bits(&[0, 1, 0]).specs();
        let s = conditional_stats(&h, 0.1, &cfg.taps, &specs, 1.0, 64, &mut seeded(3)).unwrap();
        assert!(s.d.hermitian_defect() < 1e-12);
        s.d.check_positive_definite().unwrap();
    }

    #[test]
    fn pure_error_gives_vanishing_highres_g() {
        let cfg = SystemConfig::new(2, 2, 4, 2, 1);
        let zero = ChannelSet::single_user(4, vec![vec![Complex64::new(0.0, 0.0)]; 2]).unwrap();
        let specs = vec![AdcSpec::HighRes; 2];
        let draws = 4096;
        let s = conditional_stats(&zero, 0.999, &cfg.taps, &specs, 1.0, draws, &mut seeded(4)).unwrap();
        // each entry is a mean of CN(0, ~1) terms
        let bound = 5.0 / (draws as f64).sqrt();
        assert!(s.g[0].iter().all(|v| v.norm() < bound));
    }

    #[test]
    fn plug_in_tracks_monte_carlo_at_small_error() {
        let (cfg, h) = estimate(5);
        let specs = crate::quantizer::AdcSwitchVector::from_bits(&[1, 0, 0]).specs();
        let mc = conditional_stats(&h, 0.01, &cfg.taps, &specs, 1.0, 256, &mut seeded(6)).unwrap();
        let pi = plug_in_stats(&h, 0.01, &specs, 1.0).unwrap();
        let (a, b) = (mc.delta(0, 1.0).unwrap(), pi.delta(0, 1.0).unwrap());
        assert!((a - b).abs() / a < 0.02, "{a} {b}");
    }

    #[test]
    fn repeated_channel_closes_the_gap() {
        let r = ErgodicReport::from_deltas(vec![0.37; 7], 0.9);
        assert_eq!(r.lower, r.upper);
        assert_eq!(r.upper_se, 0.0);
    }

    #[test]
    fn scalar_perfect_csi_ordering() {
        let cfg = SystemConfig::new(1, 1, 1, 1, 1);
        let r = ergodic_bounds(&cfg, &ErgodicOptions::new(&cfg).perfect_csi(), 50, 7).unwrap();
        assert_eq!(r.rho, 1.0);
        assert!(r.lower <= r.upper);
        assert!(r.lower > 0.0);
    }

    #[test]
    fn desk_scale_bounds_are_tight() {
        let cfg = SystemConfig::new(8, 2, 8, 3, 1);
        let r = ergodic_bounds(&cfg, &ErgodicOptions::new(&cfg), 100, 8).unwrap();
        assert!(r.lower <= r.upper);
        assert!(r.relative_gap() < 0.05, "{}", r.relative_gap());
        assert_eq!(r.rho, 49.0 / 53.0);
    }

    #[test]
    fn perfect_csi_upper_is_mean_static_gmi() {
        let cfg = SystemConfig::new(3, 1, 4, 2, 1).with_snr_db(5.0);
        let opts = ErgodicOptions::new(&cfg).perfect_csi();
        let r = ergodic_bounds(&cfg, &opts, 6, 9).unwrap();
        let direct: Vec<f64> = (0..6)
            .map(|i| {
                let h = draw_instance(&cfg, 9, i);
                let order = opts.policy.order(&h, &mut seeded(0));
                let specs = opts.population.assign(&order).unwrap();
                evaluate(&h, &specs, cfg.symbol_energy, 0).unwrap().gmi_nats
            })
            .collect();
        let mean = direct.iter().sum::<f64>() / 6.0;
        assert!((r.upper - mean).abs() < 1e-12 * mean);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let cfg = SystemConfig::new(4, 1, 4, 2, 2).with_mse(0.05);
        let mut opts = ErgodicOptions::new(&cfg).with_baselines();
        opts.stats = StatsMode::MonteCarlo { draws: 4 };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ergodic_sweep(&cfg, &opts, 12, 10).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn rejects_single_draw_and_reports_draw_index() {
        let cfg = SystemConfig::new(2, 1, 2, 1, 1);
        assert!(ergodic_bounds(&cfg, &ErgodicOptions::new(&cfg), 1, 0).is_err());
        let mut opts = ErgodicOptions::new(&cfg);
        opts.population = AdcPopulation::mixed(0);
        assert!(matches!(ergodic_bounds(&cfg, &opts, 4, 0), Err(Error::NoHighResolution)));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn lower_never_exceeds_upper(ds in proptest::collection::vec(0.0f64..0.999, 2..40), rho in 0.1f64..=1.0) {
            let r = ErgodicReport::from_deltas(ds, rho);
            proptest::prop_assert!(r.lower <= r.upper * (1.0 + 1e-12));
            proptest::prop_assert!(r.lower >= 0.0);
        }
    }
}
