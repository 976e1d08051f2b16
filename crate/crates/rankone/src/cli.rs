//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use rankone_core::model::{self, CorrelationMode, PilotKind};
use rankone_core::{
    fastpath, rank1, rng, EstimatorTag, GainMode, NystromCore, NystromWeight, Refinement,
};

use crate::config::{self, ConfigFile, EffectiveConfig, OptionsPatch, SweepPatch, SystemPatch};
use crate::error::{CliError, Result};
use crate::harness::{self, Metric};
use crate::output;
use crate::plot::{self, PlotKind, PlotSource};
use crate::validate;

pub const ENV_SEED: &str = "RANKONE_SEED";
pub const ENV_OUT_DIR: &str = "RANKONE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "rankone-out";

#[derive(Debug, Parser)]
#[command(
    name = "rankone",
    version,
    about = "Rank-1 subspace channel estimation: sweeps, single estimates, benchmarks, spectra and self-checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo sweep over SNR and M; writes CSV (and SVG plots).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// One end-to-end estimate against a drawn channel.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "rank1", value_parser = config::parse_name::<EstimatorTag>)]
        estimator: EstimatorTag,
        #[arg(long, value_parser = config::parse_mode)]
        mode: Option<CorrelationMode>,
        #[arg(long = "pilot-kind", value_parser = config::parse_name::<PilotKind>)]
        pilot_kind: Option<PilotKind>,
    },
    /// Single-threaded runtime table.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', value_parser = config::parse_name::<EstimatorTag>)]
        estimators: Option<Vec<EstimatorTag>>,
        #[arg(long = "M-list", value_delimiter = ',')]
        antennas_list: Option<Vec<usize>>,
        #[arg(long, default_value_t = harness::MIN_REPETITIONS)]
        reps: usize,
    },
    /// Exact and fast pseudo-spectra of one realization (CSV and SVG).
    Spectrum {
        #[command(flatten)]
        common: Common,
    },
    /// Run the invariant suite.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

/// Options shared by every subcommand. Inline values override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML file with [system], [sweep] and [options] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "out-dir", env = ENV_OUT_DIR)]
    pub out_dir: Option<PathBuf>,
    /// Repeat for more detail.
    #[arg(short, long, action = ArgAction::Count)]
    pub verbose: u8,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,

    #[arg(long = "M")]
    pub antennas: Option<usize>,
    #[arg(long = "K")]
    pub users: Option<usize>,
    #[arg(long = "B")]
    pub pilot_len: Option<usize>,
    #[arg(long = "L")]
    pub stack_len: Option<usize>,
    #[arg(long = "P")]
    pub paths: Option<usize>,
    #[arg(long = "N")]
    pub grid_size: Option<usize>,
    #[arg(long = "d-over-lambda")]
    pub d_over_lambda: Option<f64>,
    #[arg(long = "sigma-x2")]
    pub sigma_x2: Option<f64>,
    #[arg(long = "sigma-n2")]
    pub sigma_n2: Option<f64>,
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    #[arg(long, env = ENV_SEED)]
    pub seed: Option<u64>,
    #[arg(long = "rho-h2")]
    pub rho_h2: Option<f64>,

    #[arg(long = "gain-mode", value_parser = config::parse_name::<GainMode>)]
    pub gain_mode: Option<GainMode>,
    #[arg(long, value_parser = config::parse_name::<Refinement>)]
    pub refinement: Option<Refinement>,
    #[arg(long = "sampling-len")]
    pub sampling_len: Option<usize>,
    #[arg(long = "nystrom-weight", value_parser = config::parse_name::<NystromWeight>)]
    pub nystrom_weight: Option<NystromWeight>,
    #[arg(long = "nystrom-core", value_parser = config::parse_name::<NystromCore>)]
    pub nystrom_core: Option<NystromCore>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[arg(
        long = "snr-db-list",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    pub snr_db_list: Option<Vec<f64>>,
    #[arg(long = "M-list", value_delimiter = ',')]
    pub antennas_list: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = config::parse_name::<EstimatorTag>)]
    pub estimators: Option<Vec<EstimatorTag>>,
    /// `full_rank` or `low_rank:<r>`.
    #[arg(long, value_parser = config::parse_mode)]
    pub mode: Option<CorrelationMode>,
    #[arg(long, value_delimiter = ',', value_parser = config::parse_name::<Metric>)]
    pub metrics: Option<Vec<Metric>>,
    #[arg(long = "pilot-kind", value_parser = config::parse_name::<PilotKind>)]
    pub pilot_kind: Option<PilotKind>,
    #[arg(long = "genie-samples")]
    pub genie_samples: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = config::parse_name::<PlotKind>)]
    pub plots: Option<Vec<PlotKind>>,
    /// Skip SVG output.
    #[arg(long = "no-plots")]
    pub no_plots: bool,
    /// Target NMSE for the gain_vs_M plot.
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl Common {
    fn patch(&self) -> ConfigFile {
        ConfigFile {
            system: SystemPatch {
                antennas: self.antennas,
                users: self.users,
                pilot_len: self.pilot_len,
                stack_len: self.stack_len,
                paths: self.paths,
                grid_size: self.grid_size,
                d_over_lambda: self.d_over_lambda,
                sigma_x2: self.sigma_x2,
                sigma_n2: self.sigma_n2,
                snr_db: self.snr_db,
                seed: self.seed,
                rho_h2: self.rho_h2,
            },
            sweep: SweepPatch::default(),
            options: OptionsPatch {
                gain_mode: self.gain_mode,
                refinement: self.refinement,
                sampling_len: self.sampling_len,
                nystrom_weight: self.nystrom_weight,
                nystrom_core: self.nystrom_core,
                pinv_rtol: None,
            },
        }
    }

    /// File layer (if any) and the inline layer.
    fn layers(&self, extra: Option<SweepPatch>) -> Result<(ConfigFile, ConfigFile)> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let mut inline = self.patch();
        if let Some(s) = extra {
            inline.sweep = s;
        }
        Ok((file, inline))
    }

    fn effective(&self, extra: Option<SweepPatch>) -> Result<(EffectiveConfig, PathBuf)> {
        let (file, inline) = self.layers(extra)?;
        let eff = EffectiveConfig::resolve(&[&file, &inline]);
        eff.system.validate()?;
        let out = self
            .out_dir
            .clone()
            .or_else(|| file.sweep.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        Ok((eff, out))
    }
}

impl SweepArgs {
    fn patch(&self) -> SweepPatch {
        SweepPatch {
            snr_db_list: self.snr_db_list.clone(),
            antennas_list: self.antennas_list.clone(),
            trials: self.trials,
            estimators: self.estimators.clone(),
            mode: self.mode,
            metrics: self.metrics.clone(),
            pilot_kind: self.pilot_kind,
            genie_samples: self.genie_samples,
            out_dir: None,
            plots: if self.no_plots {
                Some(Vec::new())
            } else {
                self.plots.clone()
            },
            gamma: self.gamma,
        }
    }
}

/// Parse `argv` (including the program name), run, and return the exit code:
/// 0 on success, 1 on a failed check or runtime error, 2 on a usage error.
pub fn main_with_args<I, T>(
    argv: I,
    stdout: &mut dyn std::io::Write,
    stderr: &mut dyn std::io::Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return code;
        }
    };
    match run(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Harness(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn out(w: &mut dyn std::io::Write, text: &str) -> Result<()> {
    w.write_all(text.as_bytes())
        .map_err(|e| CliError::io("<stdout>", e))
}

/// Execute a parsed command.
pub fn run(cmd: Command, stdout: &mut dyn std::io::Write) -> Result<i32> {
    match cmd {
        Command::Sweep { common, sweep } => {
            let (eff, out_dir) = common.effective(Some(sweep.patch()))?;
            let spec = eff.sweep_spec();
            let result = with_threads(common.threads, || harness::run_sweep(&spec))??;
            write_file(&out_dir.join("config.toml"), &eff.to_toml()?)?;
            let csv_path = out_dir.join("sweep.csv");
            output::emit_csv(&result, &csv_path)?;
            let source = PlotSource::Sweep {
                result: &result,
                gamma: eff.sweep.gamma,
            };
            let mut text = String::new();
            for kind in &eff.sweep.plots {
                let path = out_dir.join(format!("{}.svg", kind.as_str()));
                match plot::emit_plot(&source, *kind, &path) {
                    Ok(()) if common.verbose > 0 => {
                        let _ = writeln!(text, "wrote {}", path.display());
                    }
                    Ok(()) => {}
                    Err(e) => {
                        let _ = writeln!(text, "skipped {}: {e}", kind.as_str());
                    }
                }
            }
            let _ = writeln!(
                text,
                "{:<11} {:>5} {:>7} {:>7} {:>9} {:>11} {:>11}",
                "estimator", "M", "snr_db", "trials", "failures", "mean_db", "median_db"
            );
            for a in &result.aggregates {
                let _ = writeln!(
                    text,
                    "{:<11} {:>5} {:>7.2} {:>7} {:>9} {:>11.3} {:>11.3}",
                    a.estimator.as_str(),
                    a.antennas,
                    a.snr_db,
                    a.trials,
                    a.failures,
                    a.nmse_mean_db,
                    a.nmse_median_db
                );
            }
            let _ = writeln!(text, "records: {}", csv_path.display());
            out(stdout, &text)?;
            Ok(0)
        }
        Command::Estimate {
            common,
            estimator,
            mode,
            pilot_kind,
        } => {
            let (eff, _) = common.effective(None)?;
            let cfg = &eff.system;
            let mode = mode.unwrap_or(eff.sweep.mode);
            let kind = pilot_kind.unwrap_or(eff.sweep.pilot_kind);
            let trial = model::draw_trial(cfg, mode, kind, cfg.seed)?;
            let cov = if estimator == EstimatorTag::Mmse {
                let mut r = rng::stream(cfg.seed, &[cfg.antennas as u64, u64::MAX]);
                Some(rankone_core::baselines::genie_covariance(
                    cfg,
                    mode,
                    rankone_core::baselines::default_genie_samples(cfg),
                    &mut r,
                )?)
            } else {
                None
            };
            let est = harness::run_estimator(
                estimator,
                &trial,
                cfg,
                &eff.options,
                cov.as_ref(),
                cfg.seed,
            )?;
            let nmse = harness::nmse(&est.h, &trial.channel.h)?;
            let mut text = String::new();
            let _ = writeln!(
                text,
                "estimator = \"{estimator}\"\nM = {}\nK = {}\nB = {}\nL = {}\nP = {}\nsnr_db = {:.3}\nseed = {}\nnmse = {nmse:e}\nnmse_db = {:.3}",
                cfg.antennas,
                cfg.users,
                cfg.pilot_len,
                cfg.stack_len,
                cfg.paths,
                cfg.snr_db(),
                cfg.seed,
                harness::db(nmse)
            );
            for (k, truth) in trial.channel.users.iter().enumerate() {
                let _ = writeln!(text, "\n[[user]]\nindex = {k}");
                let _ = writeln!(text, "true_aoa_deg = {}", deg_list(&truth.thetas));
                if let Some(Some(p)) = est.paths.get(k) {
                    let _ = writeln!(text, "aoa_deg = {}", deg_list(&p.thetas));
                    let gains: Vec<String> = p
                        .gains
                        .iter()
                        .map(|g| format!("[{:.6}, {:.6}]", g.re, g.im))
                        .collect();
                    let _ = writeln!(text, "gains = [{}]", gains.join(", "));
                }
                let col = est.h.column(k) - trial.channel.h.column(k);
                let _ = writeln!(
                    text,
                    "nmse = {:e}",
                    col.norm_squared() / trial.channel.h.column(k).norm_squared()
                );
            }
            for (k, e) in &est.failures {
                let _ = writeln!(text, "\n# user {k} failed: {e}");
            }
            out(stdout, &text)?;
            Ok(if est.is_complete() { 0 } else { 1 })
        }
        Command::Bench {
            common,
            estimators,
            antennas_list,
            reps,
        } => {
            let (eff, _) = common.effective(None)?;
            let tags =
                estimators.unwrap_or_else(|| vec![EstimatorTag::Rank1, EstimatorTag::Rank1Fast]);
            let ms = antennas_list.unwrap_or_else(|| vec![eff.system.antennas]);
            let mut text = format!(
                "{:<11} {:>5} {:>14} {:>14} {:>14}\n",
                "estimator", "M", "median_ms", "min_ms", "max_ms"
            );
            let mut csv = String::from("estimator,M,median_ns,min_ns,max_ns,repetitions\n");
            let mut slopes = String::new();
            for tag in tags {
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for &m in &ms {
                    let cfg = SystemPatch {
                        antennas: Some(m),
                        ..Default::default()
                    }
                    .apply(&eff.system);
                    let stats = harness::single_threaded(|| {
                        harness::bench_runtime(tag, &cfg, &eff.options, reps)
                    })??;
                    let _ = writeln!(
                        text,
                        "{:<11} {:>5} {:>14.3} {:>14.3} {:>14.3}",
                        tag.as_str(),
                        m,
                        stats.median_ns * 1e-6,
                        stats.min_ns * 1e-6,
                        stats.max_ns * 1e-6
                    );
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{}",
                        tag, m, stats.median_ns, stats.min_ns, stats.max_ns, stats.repetitions
                    );
                    xs.push(m as f64);
                    ys.push(stats.median_ns);
                }
                if let Some(s) = harness::loglog_slope(&xs, &ys) {
                    let _ = writeln!(slopes, "{tag}: log-log slope {s:.3}");
                }
            }
            text.push_str(&slopes);
            if let Some(dir) = &common.out_dir {
                write_file(&dir.join("bench.csv"), &csv)?;
            }
            out(stdout, &text)?;
            Ok(0)
        }
        Command::Spectrum { common } => {
            let (eff, out_dir) = common.effective(None)?;
            let cfg = &eff.system;
            let trial = model::draw_trial(cfg, eff.sweep.mode, eff.sweep.pilot_kind, cfg.seed)?;
            let y = model::despread(&trial.received, &trial.pilots.column(0))?;
            let h = rank1::build_hankel(&y, cfg.stack_len)?;
            let exact = rank1::signal_subspace(&h, cfg.paths)?;
            let s = eff
                .options
                .sampling_len
                .unwrap_or_else(|| fastpath::default_sampling_len(cfg.paths));
            let mut r = rng::stream(cfg.seed, &[3]);
            let fast = fastpath::sketch_subspace(&h, cfg.paths, s, &eff.options, &mut r)?;
            let spectra = vec![
                ("exact".to_string(), rank1::pseudo_spectrum(&exact.u, cfg)),
                ("fast".to_string(), rank1::pseudo_spectrum(&fast.u, cfg)),
            ];
            let mut csv = String::from("theta_deg,exact,fast\n");
            for i in 0..spectra[0].1.len() {
                let _ = writeln!(
                    csv,
                    "{},{},{}",
                    spectra[0].1.thetas[i].to_degrees(),
                    spectra[0].1.values[i],
                    spectra[1].1.values[i]
                );
            }
            write_file(&out_dir.join("spectrum.csv"), &csv)?;
            plot::emit_plot(
                &PlotSource::Spectra(&spectra),
                PlotKind::Spectrum,
                &out_dir.join("spectrum.svg"),
            )?;
            let mut text = String::new();
            let _ = writeln!(
                text,
                "true_aoa_deg = {}",
                deg_list(&trial.channel.users[0].thetas)
            );
            for (name, spec) in &spectra {
                let peaks = rank1::detect_peaks(spec, cfg.paths, Refinement::None)?;
                let _ = writeln!(text, "{name}_aoa_deg = {}", deg_list(&peaks.thetas));
            }
            let _ = writeln!(text, "spectrum: {}", out_dir.join("spectrum.svg").display());
            out(stdout, &text)?;
            Ok(0)
        }
        Command::Validate { common } => {
            let (eff, _) = common.effective(None)?;
            let checks = with_threads(common.threads, || validate::run_suite(&eff.system))?;
            let mut text = String::new();
            let mut failed = 0;
            for c in &checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                failed += usize::from(!c.passed);
                if common.verbose > 0 || !c.passed {
                    let _ = writeln!(text, "{status} {}: {}", c.name, c.detail);
                } else {
                    let _ = writeln!(text, "{status} {}", c.name);
                }
            }
            let _ = writeln!(
                text,
                "{} of {} checks passed",
                checks.len() - failed,
                checks.len()
            );
            out(stdout, &text)?;
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn deg_list(thetas: &[f64]) -> String {
    let v: Vec<String> = thetas
        .iter()
        .map(|t| format!("{:.4}", t.to_degrees()))
        .collect();
    format!("[{}]", v.join(", "))
}
