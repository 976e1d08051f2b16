use std::fs;
use std::path::Path;
use std::process::Command as Process;

use clap::Parser;
use rankone::cli::{self, Cli, Command};
use rankone::config::{ConfigFile, EffectiveConfig};

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("rankone").chain(args.iter().copied());
    let code = cli::main_with_args(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn small_sweep(out: &Path) -> Vec<String> {
    [
        "sweep",
        "--M",
        "32",
        "--K",
        "2",
        "--P",
        "2",
        "--trials",
        "3",
        "--snr-db-list",
        "-5,10,20",
        "--estimators",
        "rank1,rank1_fast,ls,mmse,fft",
        "--seed",
        "9",
        "--out-dir",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([out.display().to_string()])
    .collect()
}

fn args(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn parses_sweep_with_config() {
    let cli = Cli::try_parse_from(["rankone", "sweep", "--config", "f.toml"]).unwrap();
    match cli.command {
        Command::Sweep { common, .. } => {
            assert_eq!(common.config.as_deref(), Some(Path::new("f.toml")))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn parses_inline_estimate() {
    let cli = Cli::try_parse_from([
        "rankone", "estimate", "--M", "128", "--P", "3", "--snr-db", "20",
    ])
    .unwrap();
    match cli.command {
        Command::Estimate { common, .. } => {
            assert_eq!(common.antennas, Some(128));
            assert_eq!(common.paths, Some(3));
            assert_eq!(common.snr_db, Some(20.0));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_flags_exit_two() {
    let (code, out, err) = run(&["--bogus"]);
    assert_eq!(code, 2);
    assert!(out.is_empty() && err.contains("--bogus"));
    assert_eq!(run(&["sweep", "--bogus"]).0, 2);
    assert_eq!(run(&["estimate", "--M", "abc"]).0, 2);
    assert_eq!(run(&["sweep", "--mode", "low_rank:x"]).0, 2);
    assert_eq!(run(&[]).0, 2);
}

#[test]
fn help_exits_zero() {
    let (code, out, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("validate"));
}

#[test]
fn invalid_values_are_named_errors() {
    let (code, _, err) = run(&["estimate", "--M", "0"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error: "), "{err}");
    let (code, _, err) = run(&[
        "sweep", "--trials", "0", "--M", "16", "--K", "1", "--P", "1",
    ]);
    assert_eq!(code, 1, "{err}");
    let (code, _, err) = run(&["estimate", "--config", "/nonexistent/x.toml"]);
    assert_eq!(code, 1);
    assert!(err.contains("/nonexistent/x.toml"), "{err}");
}

#[test]
fn bad_config_file_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[system]\nantennas = 4\n").unwrap();
    let (code, _, err) = run(&["estimate", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("bad.toml"), "{err}");
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&args(&small_sweep(a.path())));
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("mmse"));
    assert_eq!(run(&args(&small_sweep(b.path()))).0, 0);
    for f in [
        "sweep.csv",
        "sweep_aggregates.csv",
        "config.toml",
        "nmse_vs_snr.svg",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn dumped_config_reproduces_the_sweep() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run(&args(&small_sweep(a.path()))).0, 0);
    let cfg = a.path().join("config.toml");
    let (code, _, err) = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        b.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    for f in ["sweep.csv", "config.toml"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap()
        );
    }
}

#[test]
fn effective_config_round_trips() {
    let file: ConfigFile = toml::from_str("[system]\nM = 64\nP = 3\nsnr_db = 10.0\n").unwrap();
    let eff = EffectiveConfig::resolve(&[&file]);
    assert_eq!(
        (eff.system.antennas, eff.system.stack_len, eff.system.paths),
        (64, 32, 3)
    );
    let text = eff.to_toml().unwrap();
    let back: ConfigFile = toml::from_str(&text).unwrap();
    assert_eq!(EffectiveConfig::resolve(&[&back]), eff);
    assert_eq!(EffectiveConfig::resolve(&[&eff.as_file()]), eff);
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(
        &path,
        "[system]\nM = 64\nK = 2\nP = 2\n\n[sweep]\ntrials = 1\nsnr_db_list = [10.0]\nestimators = [\"ls\"]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let (code, _, err) = run(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--M",
        "32",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let dumped: ConfigFile =
        toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(dumped.system.antennas, Some(32));
    assert_eq!(dumped.system.stack_len, Some(16));
    assert_eq!(dumped.sweep.trials, Some(1));
}

#[test]
fn estimate_prints_degrees_gains_and_nmse() {
    let (code, out, err) = run(&[
        "estimate", "--M", "64", "--K", "2", "--P", "3", "--snr-db", "20",
    ]);
    assert_eq!(code, 0, "{err}");
    for key in ["aoa_deg = [", "true_aoa_deg = [", "gains = [", "nmse_db = "] {
        assert!(out.contains(key), "{key} missing in {out}");
    }
    let line = out.lines().find(|l| l.starts_with("aoa_deg")).unwrap();
    let inner = line.split('[').nth(1).unwrap().trim_end_matches(']');
    for v in inner.split(", ") {
        let deg: f64 = v.parse().unwrap();
        assert!((-90.0..90.0).contains(&deg));
    }
}

#[test]
fn spectrum_has_three_dominant_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = run(&[
        "spectrum",
        "--M",
        "128",
        "--K",
        "1",
        "--P",
        "3",
        "--snr-db",
        "30",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("fast_aoa_deg"));
    let svg = fs::read_to_string(dir.path().join("spectrum.svg")).unwrap();
    assert_eq!(svg.matches("class=\"series\"").count(), 2);
    let csv = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    let exact: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let n = exact.len();
    let mut sorted = exact.clone();
    sorted.sort_by(f64::total_cmp);
    let baseline = sorted[n / 2];
    let mut peaks: Vec<f64> = (0..n)
        .filter(|&i| exact[i] > exact[(i + n - 1) % n] && exact[i] > exact[(i + 1) % n])
        .map(|i| exact[i])
        .collect();
    peaks.sort_by(|a, b| b.total_cmp(a));
    assert!(peaks.len() >= 3);
    assert!(peaks[2] / baseline >= 10.0, "{} vs {baseline}", peaks[2]);
}

#[test]
fn bench_prints_table_and_slopes() {
    let (code, out, err) = run(&[
        "bench",
        "--M-list",
        "32,64",
        "--K",
        "1",
        "--P",
        "2",
        "--estimators",
        "rank1_fast,ls",
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("rank1_fast: log-log slope"));
    assert_eq!(
        run(&["bench", "--M", "32", "--K", "1", "--P", "2", "--reps", "3"]).0,
        1
    );
}

#[test]
fn validate_default_config_passes() {
    let (code, out, err) = run(&["validate"]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("PASS sweep_determinism"));
    assert!(!out.contains("FAIL"));
}

#[test]
fn binary_reads_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_rankone");
    let status = Process::new(bin)
        .args([
            "sweep",
            "--M",
            "16",
            "--K",
            "1",
            "--P",
            "1",
            "--trials",
            "1",
            "--snr-db-list",
            "10",
        ])
        .args(["--estimators", "ls", "--no-plots"])
        .env(cli::ENV_SEED, "77")
        .env(cli::ENV_OUT_DIR, dir.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{status:?}");
    let dumped = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(dumped.contains("seed = 77"), "{dumped}");
    let bad = Process::new(bin).arg("--bogus").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(!bad.stderr.is_empty());
}
