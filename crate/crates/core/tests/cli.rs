use std::path::Path;
use std::process::{Command, Output};

use mixadc::experiment::{sidecar_path, Scenario};

fn mixadc(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mixadc"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("MIXADC_THREADS", t),
        None => cmd.env_remove("MIXADC_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn run_spec(dir: &Path, name: &str, spec: &str, threads: Option<&str>) -> (String, serde_json::Value) {
    let cfg = dir.join(format!("{name}.toml"));
    let out = dir.join(format!("{name}.csv"));
    std::fs::write(&cfg, spec).unwrap();
    let o = mixadc(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], threads);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let meta = serde_json::from_str(&std::fs::read_to_string(sidecar_path(&out)).unwrap()).unwrap();
    (csv, meta)
}

const GMI_VS_K: &str = r#"
scenario = "gmi-vs-K"
seed = 7
[system]
n_antennas = 8
n_subcarriers = 8
taps = 3
users = 2
[grid]
snr_db = [-5.0, 10.0]
k = [0, 4, 8]
[run]
draws = 12
"#;

const ERGODIC: &str = r#"
scenario = "ergodic-bounds"
seed = 3
[system]
n_antennas = 4
n_subcarriers = 4
taps = 2
[grid]
snr_db = [0.0]
k = [2]
[run]
draws = 5
"#;

const BER: &str = r#"
scenario = "ber"
seed = 11
[system]
n_antennas = 8
n_subcarriers = 8
taps = 2
users = 2
[grid]
snr_db = [10.0]
k = [2]
[run]
frames = 4
"#;

const GMI_VS_SNR: &str = r#"
scenario = "gmi-vs-snr"
[system]
n_antennas = 4
n_subcarriers = 8
[grid]
snr_db = [0.0, 20.0]
k = [0]
taps = [1, 4]
[run]
draws = 4
"#;

#[test]
fn golden_column_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("k", GMI_VS_K, Scenario::GmiVsK, 2 * 3),
        ("snr", GMI_VS_SNR, Scenario::GmiVsSnr, 2 * 2),
        ("erg", ERGODIC, Scenario::ErgodicBounds, 5),
        ("ber", BER, Scenario::Ber, 2),
    ];
    for (name, spec, scenario, rows) in cases {
        let (csv, meta) = run_spec(dir.path(), name, spec, None);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), scenario.columns().join(","), "{name}");
        assert_eq!(lines.count(), rows, "{name}");
        assert_eq!(meta["schema_version"], 1);
        assert_eq!(meta["rows"], rows);
        assert_eq!(meta["columns"].as_array().unwrap().len(), scenario.columns().len());
    }
}

#[test]
fn csv_is_reproducible_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    for (name, spec) in [("k", GMI_VS_K), ("ber", BER)] {
        let (a, _) = run_spec(dir.path(), &format!("{name}1"), spec, Some("1"));
        let (b, _) = run_spec(dir.path(), &format!("{name}2"), spec, Some("1"));
        let (c, _) = run_spec(dir.path(), &format!("{name}4"), spec, Some("4"));
        assert_eq!(a, b, "{name}");
        assert_eq!(a, c, "{name}");
    }
}

#[test]
fn flags_override_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k.toml");
    let out = dir.path().join("k.csv");
    std::fs::write(&cfg, GMI_VS_K).unwrap();
    let o = mixadc(
        &["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--snr-db", "-10,0", "--k", "2"],
        None,
    );
    assert!(o.status.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    let snr: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(snr, ["-10", "0"]);
}

#[test]
fn invalid_spec_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, GMI_VS_K.replace("gmi-vs-K", "nonsense")).unwrap();
    let o = mixadc(&["run", "--config", cfg.to_str().unwrap(), "--out", "x.csv"], None);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "invalid-spec");

    std::fs::write(&cfg, GMI_VS_K.replace("k = [0, 4, 8]", "k = [9]")).unwrap();
    let o = mixadc(&["run", "--config", cfg.to_str().unwrap(), "--out", "x.csv"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes() {
    let o = mixadc(&["verify", "--samples", "20000"], Some("2"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("checks passed"));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            mixadc::experiment::ExperimentSpec::load(&path).unwrap().validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
