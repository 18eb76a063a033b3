use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixadc::error::Error;
use mixadc::experiment::{bench_solvers, run, run_table, CsiMode, ExperimentSpec, Scenario, SystemSection};
use mixadc::switching::SwitchPolicy;

#[derive(Parser)]
#[command(name = "mixadc", version, about = "Achievable rates and BER of mixed-ADC massive MIMO-OFDM uplinks")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "MIXADC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write `<out>` plus `<out>.meta.json`.
    Run(SpecArgs),
    /// Compare closed forms with Monte Carlo estimates; exit 0 iff all pass.
    Verify {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Agreement threshold in standard errors.
        #[arg(long, default_value_t = 3.0)]
        n_se: f64,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the block-permuted equalizer solve against dense LU.
    Bench {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 32)]
        q: usize,
        #[arg(long, default_value_t = 4)]
        taps: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// A spec file, command-line fields, or both (flags override the file).
#[derive(Args)]
struct SpecArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// gmi-vs-K, gmi-vs-snr, ergodic-bounds, ber or verify.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_antennas: Option<usize>,
    #[arg(long)]
    n_subcarriers: Option<usize>,
    #[arg(long)]
    taps: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    mse_h: Option<f64>,
    #[arg(long)]
    coherence_len: Option<usize>,
    #[arg(long)]
    pilot_spacing: Option<usize>,
    /// Comma-separated SNR grid in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    /// Comma-separated high-resolution ADC counts.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Comma-separated tap counts for gmi-vs-snr.
    #[arg(long, value_delimiter = ',')]
    taps_grid: Option<Vec<usize>>,
    /// Multi-bit converters as BITS:COUNT, comma-separated.
    #[arg(long, value_delimiter = ',')]
    multibit: Option<Vec<String>>,
    /// norm-based or random.
    #[arg(long)]
    policy: Option<String>,
    /// perfect or estimated.
    #[arg(long)]
    csi: Option<String>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    csi_draws: Option<usize>,
    #[arg(long)]
    plug_in: bool,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    ofdm_symbols: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    n_se: Option<f64>,
    /// Design the BER equalizer with multi-bit converters treated as ideal.
    #[arg(long)]
    multibit_as_highres: Option<bool>,
}

fn enum_value<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T, Error> {
    toml::Value::String(s.to_string()).try_into().map_err(|_| Error::InvalidConfig(format!("unknown {what} `{s}`")))
}

impl SpecArgs {
    fn into_spec(self) -> Result<ExperimentSpec, Error> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p)?,
            None => {
                let scenario = self.scenario.as_deref().ok_or_else(|| Error::InvalidConfig("--config or --scenario is required".into()))?;
                let system = SystemSection {
                    n_antennas: self.n_antennas.ok_or_else(|| Error::InvalidConfig("--n-antennas is required".into()))?,
                    n_subcarriers: self.n_subcarriers.ok_or_else(|| Error::InvalidConfig("--n-subcarriers is required".into()))?,
                    taps: 1,
                    users: 1,
                    mse_h: 0.0,
                    coherence_len: 53,
                    pilot_spacing: 14,
                };
                let text = format!("scenario = \"{scenario}\"\n[system]\n{}", toml::to_string(&system).expect("plain struct"));
                ExperimentSpec::from_toml(&text)?
            }
        };
        if let Some(s) = &self.scenario {
            spec.scenario = Scenario::parse(s)?;
        }
        macro_rules! set {
            ($field:ident => $target:expr) => {
                if let Some(v) = self.$field {
                    $target = v;
                }
            };
        }
        set!(seed => spec.seed);
        set!(n_antennas => spec.system.n_antennas);
        set!(n_subcarriers => spec.system.n_subcarriers);
        set!(taps => spec.system.taps);
        set!(users => spec.system.users);
        set!(mse_h => spec.system.mse_h);
        set!(coherence_len => spec.system.coherence_len);
        set!(pilot_spacing => spec.system.pilot_spacing);
        set!(snr_db => spec.grid.snr_db);
        set!(k => spec.grid.k);
        set!(taps_grid => spec.grid.taps);
        set!(draws => spec.run.draws);
        set!(csi_draws => spec.run.csi_draws);
        set!(frames => spec.run.frames);
        set!(ofdm_symbols => spec.run.ofdm_symbols);
        set!(samples => spec.run.samples);
        set!(n_se => spec.run.n_se);
        set!(multibit_as_highres => spec.adc.multibit_as_highres);
        if self.out.is_some() {
            spec.output = self.out;
        }
        if self.plug_in {
            spec.run.plug_in = true;
        }
        if let Some(p) = &self.policy {
            spec.run.policy = enum_value::<SwitchPolicy>(p, "policy")?;
        }
        if let Some(c) = &self.csi {
            spec.run.csi = enum_value::<CsiMode>(c, "CSI mode")?;
        }
        if let Some(list) = &self.multibit {
            spec.adc.multibit = list
                .iter()
                .map(|item| {
                    let (b, c) = item.split_once(':').ok_or_else(|| Error::InvalidConfig(format!("bad multibit entry `{item}`")))?;
                    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::InvalidConfig(format!("bad multibit entry `{item}`")));
                    Ok((parse(b)? as u32, parse(c)?))
                })
                .collect::<Result<_, Error>>()?;
        }
        Ok(spec)
    }
}

fn fail(kind: &str, err: &dyn std::fmt::Display) -> ExitCode {
    let msg = serde_json::json!({ "error": kind, "message": err.to_string() });
    eprintln!("{msg}");
    ExitCode::from(2)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidConfig(_) | Error::Config(_) | Error::InvalidMse(_) | Error::LengthMismatch { .. } => "invalid-spec",
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => "io",
        _ => "numerical",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail("threads", &e);
        }
    }
    match cli.command {
        Command::Run(args) => {
            let spec = match args.into_spec() {
                Ok(s) => s,
                Err(e) => return fail(error_kind(&e), &e),
            };
            match run(&spec) {
                Ok(table) => {
                    if spec.scenario == Scenario::Verify && table.column("pass").is_some_and(|c| c.iter().any(|p| *p != "true")) {
                        return ExitCode::from(1);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(error_kind(&e), &e),
            }
        }
        Command::Verify { samples, seed, n_se, out } => {
            let text = format!(
                "scenario = \"verify\"\nseed = {seed}\n[system]\nn_antennas = 1\nn_subcarriers = 1\n[run]\nsamples = {samples}\nn_se = {n_se:?}\n"
            );
            let mut spec = match ExperimentSpec::from_toml(&text) {
                Ok(s) => s,
                Err(e) => return fail("invalid-spec", &e),
            };
            spec.output = out;
            let table = match run_table(&spec) {
                Ok(t) => t,
                Err(e) => return fail(error_kind(&e), &e),
            };
            println!("{:<58} {:>12} {:>12} {:>10} {:>7}  result", "check", "closed form", "estimate", "std err", "z");
            for r in &table.rows {
                let status = if r[7] == "true" { "pass" } else { "FAIL" };
                let num = |s: &str| s.parse::<f64>().unwrap_or(f64::NAN);
                println!(
                    "{:<58} {:>12.6} {:>12.6} {:>10.2e} {:>7.2}  {status}",
                    r[0],
                    num(&r[1]),
                    num(&r[3]),
                    num(&r[5]),
                    num(&r[6])
                );
            }
            if let Some(path) = &spec.output {
                if let Err(e) = mixadc::experiment::write_artifacts(&spec, &table, path) {
                    return fail("io", &e);
                }
            }
            let passed = table.rows.iter().filter(|r| r[7] == "true").count();
            println!("{passed}/{} checks passed", table.rows.len());
            if passed == table.rows.len() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Bench { n, q, taps, reps, seed } => match bench_solvers(n, q, taps, reps, seed) {
            Ok(r) => {
                println!("N = {n}, Q = {q}: system size {}", n * q);
                println!("permuted block solve: {:.3e} s", r.permuted_secs);
                println!("dense LU solve:       {:.3e} s", r.dense_secs);
                println!("speedup:              {:.1}x", r.speedup);
                println!("max |w_perm - w_dense|: {:.2e}", r.max_abs_diff);
                ExitCode::SUCCESS
            }
            Err(e) => fail(error_kind(&e), &e),
        },
    }
}
