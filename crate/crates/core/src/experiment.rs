//! Experiment specifications, the scenario runners behind the CLI, and the
//! CSV plus metadata artifacts they write.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::equalizer::{evaluate, nats_to_bits, solve_dense, solve_equalizer, GmiReport};
use crate::ergodic::{ergodic_sweep, ErgodicOptions, StatsMode, DEFAULT_CSI_DRAWS};
use crate::error::{Error, Result};
use crate::linklevel::{simulate_ber, BerOptions};
use crate::oracle::{verification_suite, VerifyRow};
use crate::quantizer::AdcSpec;
use crate::rng::stream;
use crate::secondstats::{build_d, build_g, DMethod};
use crate::spectral::{draw_channel, ChannelSet, SystemConfig};
use crate::switching::{antenna_norms, rank_by_norm, AdcPopulation, SwitchPolicy};

/// Version of the CSV column sets and the sidecar layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "gmi-vs-K")]
    GmiVsK,
    #[serde(rename = "gmi-vs-snr")]
    GmiVsSnr,
    #[serde(rename = "ergodic-bounds")]
    ErgodicBounds,
    #[serde(rename = "ber")]
    Ber,
    #[serde(rename = "verify")]
    Verify,
}

impl Scenario {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            Scenario::GmiVsK => &["snr_db", "K", "gmi_lower_bits", "gmi_upper_bits", "capacity_bits", "as_baseline_bits"],
            Scenario::GmiVsSnr => &["snr_db", "K", "taps", "gmi_lower_bits", "gmi_upper_bits", "upper_se_bits", "capacity_bits"],
            Scenario::ErgodicBounds => &["snr_db", "K", "draw", "user", "delta", "gmi_bits"],
            Scenario::Ber => &["snr_db", "ebn0_db", "user", "frames", "bit_errors", "ber", "ci95"],
            Scenario::Verify => &["check", "closed_re", "closed_im", "estimate_re", "estimate_im", "std_error", "z", "pass"],
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        toml::Value::String(s.to_string()).try_into().map_err(|_| Error::config(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsiMode {
    /// Channel known at the receiver, no training overhead.
    #[default]
    Perfect,
    /// MMSE estimate with error variance `mse_h` and training overhead.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    #[serde(default = "one")]
    pub taps: usize,
    #[serde(default = "one")]
    pub users: usize,
    #[serde(default)]
    pub mse_h: f64,
    #[serde(default = "default_coherence")]
    pub coherence_len: usize,
    #[serde(default = "default_spacing")]
    pub pilot_spacing: usize,
}

fn one() -> usize {
    1
}

fn default_coherence() -> usize {
    53
}

fn default_spacing() -> usize {
    14
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_snr")]
    pub snr_db: Vec<f64>,
    /// High-resolution ADC counts.
    #[serde(default)]
    pub k: Vec<usize>,
    /// Tap counts swept by `gmi-vs-snr`; defaults to `system.taps`.
    #[serde(default)]
    pub taps: Vec<usize>,
}

fn default_snr() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdcSection {
    /// `[bits, count]` pairs of Lloyd-Max converters, on top of the
    /// high-resolution count from the K grid.
    #[serde(default)]
    pub multibit: Vec<(u32, usize)>,
    /// Design the BER equalizer as if multi-bit converters were ideal.
    #[serde(default = "yes")]
    pub multibit_as_highres: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_policy")]
    pub policy: SwitchPolicy,
    #[serde(default)]
    pub csi: CsiMode,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_csi_draws")]
    pub csi_draws: usize,
    /// Replace the estimation-error average by its plug-in approximation.
    #[serde(default)]
    pub plug_in: bool,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_ofdm_symbols")]
    pub ofdm_symbols: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_n_se")]
    pub n_se: f64,
}

fn default_policy() -> SwitchPolicy {
    SwitchPolicy::NormBased
}

fn default_draws() -> usize {
    100
}

fn default_csi_draws() -> usize {
    DEFAULT_CSI_DRAWS
}

fn default_frames() -> usize {
    200
}

fn default_ofdm_symbols() -> usize {
    2
}

fn default_samples() -> usize {
    100_000
}

fn default_n_se() -> f64 {
    3.0
}

impl Default for RunSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

/// Everything needed to reproduce one CSV artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub system: SystemSection,
    #[serde(default = "default_grid")]
    pub grid: GridSection,
    #[serde(default)]
    pub adc: AdcSection,
    #[serde(default)]
    pub run: RunSection,
}

fn default_grid() -> GridSection {
    GridSection { snr_db: default_snr(), k: Vec::new(), taps: Vec::new() }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn k_grid(&self) -> Vec<usize> {
        if self.grid.k.is_empty() {
            vec![self.system.n_antennas]
        } else {
            self.grid.k.clone()
        }
    }

    pub fn taps_grid(&self) -> Vec<usize> {
        if self.grid.taps.is_empty() {
            vec![self.system.taps]
        } else {
            self.grid.taps.clone()
        }
    }

    /// System configuration at one grid point.
    pub fn config(&self, snr_db: f64, k: usize, taps: usize) -> SystemConfig {
        let s = &self.system;
        let mut c = SystemConfig::new(s.n_antennas, k, s.n_subcarriers, taps, s.users).with_snr_db(snr_db);
        c.mse_h = match self.run.csi {
            CsiMode::Perfect => 0.0,
            CsiMode::Estimated => s.mse_h,
        };
        c.coherence_len = s.coherence_len;
        c.pilot_spacing = s.pilot_spacing;
        c
    }

    pub fn population(&self, k: usize) -> AdcPopulation {
        AdcPopulation { highres: k, multibit: self.adc.multibit.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.snr_db.is_empty() || self.grid.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("snr grid must be nonempty and finite"));
        }
        for &k in &self.k_grid() {
            for &t in &self.taps_grid() {
                for &snr in &self.grid.snr_db {
                    self.config(snr, k, t).validate()?;
                }
            }
            self.population(k).ranked_specs(self.system.n_antennas)?;
            if self.run.csi == CsiMode::Estimated && k == 0 {
                return Err(Error::config("estimated CSI needs K >= 1: training uses the high-resolution ADCs"));
            }
        }
        if let SwitchPolicy::Fixed(d) = &self.run.policy {
            if d.len() != self.system.n_antennas {
                return Err(Error::LengthMismatch { expected: self.system.n_antennas, found: d.len() });
            }
        }
        if self.run.draws < 2 && matches!(self.scenario, Scenario::GmiVsK | Scenario::GmiVsSnr | Scenario::ErgodicBounds) {
            return Err(Error::config("at least two channel draws are required"));
        }
        if self.scenario == Scenario::Ber && self.grid.k.len() > 1 {
            return Err(Error::config("the ber scenario takes a single K"));
        }
        Ok(())
    }

    fn ergodic_options(&self, config: &SystemConfig, k: usize, baselines: bool) -> ErgodicOptions {
        let mut o = ErgodicOptions::new(config);
        o.policy = self.run.policy.clone();
        o.population = self.population(k);
        o.perfect_csi = self.run.csi == CsiMode::Perfect;
        o.stats = if self.run.plug_in { StatsMode::PlugIn } else { StatsMode::MonteCarlo { draws: self.run.csi_draws } };
        o.baselines = baselines;
        o
    }
}

/// A rectangular result with a fixed column set.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(scenario: Scenario) -> Self {
        Self { columns: scenario.columns().iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn bits(nats: f64) -> String {
    f(nats_to_bits(nats))
}

/// High resolution on the `k` strongest antennas, the others discarded.
pub fn antenna_selection_baseline(channels: &ChannelSet, k: usize, es: f64, user: usize) -> Result<GmiReport> {
    if k == 0 || k > channels.n_antennas() {
        return Err(Error::config(format!("antenna selection needs 1 <= K <= N (K = {k})")));
    }
    let best: Vec<usize> = rank_by_norm(&antenna_norms(channels)).into_iter().take(k).collect();
    evaluate(&channels.select_antennas(&best), &vec![AdcSpec::HighRes; k], es, user)
}

/// Run one scenario.
pub fn run_table(spec: &ExperimentSpec) -> Result<Table> {
    spec.validate()?;
    let mut t = Table::new(spec.scenario);
    match spec.scenario {
        Scenario::GmiVsK => {
            for &snr in &spec.grid.snr_db {
                for &k in &spec.k_grid() {
                    let cfg = spec.config(snr, k, spec.system.taps);
                    let sweep = ergodic_sweep(&cfg, &spec.ergodic_options(&cfg, k, true), spec.run.draws, spec.seed)?;
                    let m = &sweep.mixed[0];
                    let cap = sweep.capacity.as_ref().map(|c| c[0].bits()).unwrap_or(f64::NAN);
                    let sel = sweep.antenna_selection.as_ref().map_or(String::new(), |a| bits(a[0].upper));
                    t.push(vec![f(snr), k.to_string(), bits(m.lower), bits(m.upper), f(cap), sel]);
                }
            }
        }
        Scenario::GmiVsSnr => {
            for &k in &spec.k_grid() {
                for &taps in &spec.taps_grid() {
                    for &snr in &spec.grid.snr_db {
                        let cfg = spec.config(snr, k, taps);
                        let sweep = ergodic_sweep(&cfg, &spec.ergodic_options(&cfg, k, true), spec.run.draws, spec.seed)?;
                        let m = &sweep.mixed[0];
                        let cap = sweep.capacity.as_ref().map(|c| c[0].bits()).unwrap_or(f64::NAN);
                        t.push(vec![
                            f(snr),
                            k.to_string(),
                            taps.to_string(),
                            bits(m.lower),
                            bits(m.upper),
                            bits(m.upper_se),
                            f(cap),
                        ]);
                    }
                }
            }
        }
        Scenario::ErgodicBounds => {
            for &snr in &spec.grid.snr_db {
                for &k in &spec.k_grid() {
                    let cfg = spec.config(snr, k, spec.system.taps);
                    let sweep = ergodic_sweep(&cfg, &spec.ergodic_options(&cfg, k, false), spec.run.draws, spec.seed)?;
                    for (u, rep) in sweep.mixed.iter().enumerate() {
                        for (i, &d) in rep.deltas.iter().enumerate() {
                            let g = crate::equalizer::gmi_from_delta(d);
                            t.push(vec![f(snr), k.to_string(), i.to_string(), u.to_string(), f(d), bits(g)]);
                        }
                    }
                }
            }
        }
        Scenario::Ber => {
            let k = spec.k_grid()[0];
            let cfg = spec.config(spec.grid.snr_db[0], k, spec.system.taps);
            let mut o = BerOptions::new(spec.grid.snr_db.clone(), spec.run.frames, k, spec.seed);
            o.ofdm_symbols = spec.run.ofdm_symbols;
            o.policy = spec.run.policy.clone();
            o.population = spec.population(k);
            o.multibit_as_highres = spec.adc.multibit_as_highres;
            for p in simulate_ber(&cfg, &o)?.points {
                t.push(vec![
                    f(p.snr_db),
                    f(p.ebn0_db),
                    p.user.to_string(),
                    p.frames.to_string(),
                    p.bit_errors.to_string(),
                    f(p.ber),
                    f(p.ci95),
                ]);
            }
        }
        Scenario::Verify => {
            for r in verification_suite(spec.run.samples, spec.seed, spec.run.n_se)? {
                t.push(verify_record(&r));
            }
        }
    }
    Ok(t)
}

fn verify_record(r: &VerifyRow) -> Vec<String> {
    vec![
        r.check.clone(),
        f(r.closed_form.re),
        f(r.closed_form.im),
        f(r.estimate.re),
        f(r.estimate.im),
        f(r.std_error),
        f(r.z),
        r.pass.to_string(),
    ]
}

/// Sidecar written next to every CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub schema_version: u32,
    pub crate_version: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub columns: Vec<String>,
    pub rows: usize,
    pub spec: ExperimentSpec,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Run `spec` and write `<output>` and `<output>.meta.json`.
pub fn run(spec: &ExperimentSpec) -> Result<Table> {
    let out = spec.output.clone().ok_or_else(|| Error::config("no output path given"))?;
    let table = run_table(spec)?;
    write_artifacts(spec, &table, &out)?;
    Ok(table)
}

pub fn write_artifacts(spec: &ExperimentSpec, table: &Table, out: &Path) -> Result<()> {
    std::fs::write(out, table.to_csv()?)?;
    let meta = Metadata {
        schema_version: SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: spec.scenario,
        seed: spec.seed,
        columns: table.columns.clone(),
        rows: table.rows.len(),
        spec: spec.clone(),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(sidecar_path(out), text)?;
    Ok(())
}

/// Timing of the block-permuted solve against dense LU on `D w = g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub permuted_secs: f64,
    pub dense_secs: f64,
    pub speedup: f64,
    pub max_abs_diff: f64,
}

/// Time both solvers on a random mixed system with `n / 4` high-resolution
/// antennas. Each timing is the best of `reps` runs.
pub fn bench_solvers(n: usize, q: usize, taps: usize, reps: usize, seed: u64) -> Result<BenchReport> {
    let cfg = SystemConfig::new(n, n / 4, q, taps, 1);
    cfg.validate()?;
    let ch = draw_channel(&cfg, &mut stream(seed, 0));
    let specs: Vec<AdcSpec> = (0..n).map(|a| if a < n / 4 { AdcSpec::HighRes } else { AdcSpec::OneBit }).collect();
    let d = build_d(&ch, &specs, cfg.symbol_energy, DMethod::Circulant)?;
    let g = build_g(&ch, &specs, cfg.symbol_energy, 0)?;
    let dense: DMatrix<_> = d.to_dense();
    let reps = reps.max(1);
    let time = |f: &dyn Fn() -> Result<Vec<_>>| -> Result<(f64, Vec<_>)> {
        let mut best = f64::INFINITY;
        let mut out = Vec::new();
        for _ in 0..reps {
            let t = Instant::now();
            out = f()?;
            best = best.min(t.elapsed().as_secs_f64());
        }
        Ok((best, out))
    };
    let (tp, wp) = time(&|| solve_equalizer(&d, &g))?;
    let (td, wd) = time(&|| solve_dense(&dense, &g))?;
    let diff = wp.iter().zip(&wd).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok(BenchReport {
        n_antennas: n,
        n_subcarriers: q,
        permuted_secs: tp,
        dense_secs: td,
        speedup: td / tp,
        max_abs_diff: diff,
    })
}
