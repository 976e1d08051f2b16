//! Monte Carlo engine: metrics, paired sweeps, SNR-gap interpolation and timing.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rankone_core::baselines::{self, CovarianceModel};
use rankone_core::model::{self, CorrelationMode, PilotKind, SystemConfig, Trial};
use rankone_core::{
    fastpath, rank1, rng, CMatrix, ChannelEstimate, EstimatorOptions, EstimatorTag,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// `‖Ĥ − H‖²_F / ‖H‖²_F`.
pub fn nmse(h_hat: &CMatrix, h: &CMatrix) -> Result<f64> {
    if h_hat.shape() != h.shape() {
        return Err(CliError::Harness(format!(
            "nmse: shape {:?} vs {:?}",
            h_hat.shape(),
            h.shape()
        )));
    }
    let denom = h.norm_squared();
    if denom == 0.0 {
        return Err(rankone_core::Error::ZeroNorm.into());
    }
    Ok((h_hat - h).norm_squared() / denom)
}

/// RMS AoA error after pairing sorted estimates with sorted truth.
pub fn aoa_rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(CliError::Harness(format!(
            "aoa_rmse: {} estimates for {} angles",
            estimate.len(),
            truth.len()
        )));
    }
    Ok((squared_aoa_errors(estimate, truth) / truth.len() as f64).sqrt())
}

fn squared_aoa_errors(estimate: &[f64], truth: &[f64]) -> f64 {
    let mut e = estimate.to_vec();
    let mut t = truth.to_vec();
    e.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);
    e.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Quantities a sweep records or plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nmse,
    AoaRmse,
    /// Wall-clock time per estimate. Makes records timing-dependent.
    Runtime,
}

/// A grid of `(estimator, M, SNR, trial)` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: SystemConfig,
    pub snr_db_list: Vec<f64>,
    #[serde(rename = "M_list")]
    pub antennas_list: Vec<usize>,
    pub trials: usize,
    pub estimators: Vec<EstimatorTag>,
    #[serde(default)]
    pub mode: CorrelationMode,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub pilot_kind: PilotKind,
    #[serde(default)]
    pub options: EstimatorOptions,
    /// Genie covariance draws per `M`; `None` uses `20 M K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genie_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_metrics() -> Vec<Metric> {
    vec![Metric::Nmse, Metric::AoaRmse]
}

impl SweepSpec {
    pub fn new(base: SystemConfig, estimators: Vec<EstimatorTag>) -> Self {
        SweepSpec {
            snr_db_list: vec![base.snr_db()],
            antennas_list: vec![base.antennas],
            base,
            trials: 1,
            estimators,
            mode: CorrelationMode::FullRank,
            metrics: default_metrics(),
            pilot_kind: PilotKind::Orthonormal,
            options: EstimatorOptions::default(),
            genie_samples: None,
            out_dir: None,
        }
    }

    /// Configuration at one `(M, SNR)` point. `L` follows `M/2` when the base
    /// configuration uses `L = M/2`.
    pub fn point_config(&self, antennas: usize, snr_db: f64) -> SystemConfig {
        let mut c = self.base.clone();
        if self.base.stack_len * 2 == self.base.antennas {
            c.stack_len = antennas / 2;
        }
        c.antennas = antennas;
        c.grid_size = c.grid_size.max(antennas);
        c.with_snr_db(snr_db)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.snr_db_list.is_empty() || self.antennas_list.is_empty() {
            return bad("snr_db_list and M_list must be nonempty");
        }
        if self.estimators.is_empty() {
            return bad("estimators must be nonempty");
        }
        if self.snr_db_list.iter().any(|s| !s.is_finite()) {
            return bad("snr_db_list entries must be finite");
        }
        for &m in &self.antennas_list {
            for &snr in &self.snr_db_list {
                self.point_config(m, snr).validate()?;
            }
        }
        Ok(())
    }

    pub fn records_runtime(&self) -> bool {
        self.metrics.contains(&Metric::Runtime)
    }
}

/// One estimator on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub estimator: EstimatorTag,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "B")]
    pub pilot_len: usize,
    #[serde(rename = "L")]
    pub stack_len: usize,
    #[serde(rename = "P")]
    pub paths: usize,
    pub snr_db: f64,
    pub trial: usize,
    pub nmse: f64,
    /// Radians, pooled over users; absent for non-angular estimators.
    pub aoa_rmse: Option<f64>,
    /// Present when the sweep records [`Metric::Runtime`].
    pub runtime_ns: Option<u64>,
    pub seed: u64,
    pub failed: bool,
}

/// Summary of one `(estimator, M, SNR)` point over its successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub estimator: EstimatorTag,
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "B")]
    pub pilot_len: usize,
    #[serde(rename = "L")]
    pub stack_len: usize,
    #[serde(rename = "P")]
    pub paths: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub failures: usize,
    pub nmse_mean_db: f64,
    pub nmse_median_db: f64,
    pub nmse_p10_db: f64,
    pub nmse_p90_db: f64,
    pub runtime_median_ns: Option<f64>,
}

impl Aggregate {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Ordered by estimator (in sweep order), `M`, SNR, trial.
    pub records: Vec<TrialRecord>,
    pub aggregates: Vec<Aggregate>,
}

impl SweepResult {
    pub fn from_records(records: Vec<TrialRecord>) -> Self {
        let aggregates = aggregate(&records);
        SweepResult {
            records,
            aggregates,
        }
    }

    pub fn aggregate_at(
        &self,
        tag: EstimatorTag,
        antennas: usize,
        snr_db: f64,
    ) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.estimator == tag && a.antennas == antennas && a.snr_db == snr_db)
    }

    pub fn estimators(&self) -> Vec<EstimatorTag> {
        let mut out: Vec<EstimatorTag> = Vec::new();
        for a in &self.aggregates {
            if !out.contains(&a.estimator) {
                out.push(a.estimator);
            }
        }
        out
    }

    /// Mean AoA RMSE over successful trials at one point.
    pub fn mean_aoa_rmse(&self, tag: EstimatorTag, antennas: usize, snr_db: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .records
            .iter()
            .filter(|r| {
                r.estimator == tag && r.antennas == antennas && r.snr_db == snr_db && !r.failed
            })
            .filter_map(|r| r.aoa_rmse)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn aggregate(records: &[TrialRecord]) -> Vec<Aggregate> {
    // Groups keep the order in which records first mention them.
    let mut groups: Vec<Vec<&TrialRecord>> = Vec::new();
    let mut index: BTreeMap<(EstimatorTag, usize, u64), usize> = BTreeMap::new();
    for r in records {
        let key = (r.estimator, r.antennas, r.snr_db.to_bits());
        let slot = *index.entry(key).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(r);
    }
    groups
        .into_iter()
        .map(|rs| {
            let first = rs[0];
            let ok: Vec<&TrialRecord> = rs.iter().copied().filter(|r| !r.failed).collect();
            let lin: Vec<f64> = ok.iter().map(|r| r.nmse).collect();
            let mut dbs: Vec<f64> = lin.iter().map(|&x| db(x)).collect();
            dbs.sort_by(f64::total_cmp);
            let mean = if lin.is_empty() {
                f64::NAN
            } else {
                db(lin.iter().sum::<f64>() / lin.len() as f64)
            };
            let mut times: Vec<f64> = ok
                .iter()
                .filter_map(|r| r.runtime_ns.map(|t| t as f64))
                .collect();
            times.sort_by(f64::total_cmp);
            Aggregate {
                estimator: first.estimator,
                antennas: first.antennas,
                users: first.users,
                pilot_len: first.pilot_len,
                stack_len: first.stack_len,
                paths: first.paths,
                snr_db: first.snr_db,
                trials: rs.len(),
                failures: rs.len() - ok.len(),
                nmse_mean_db: mean,
                nmse_median_db: quantile(&dbs, 0.5),
                nmse_p10_db: quantile(&dbs, 0.1),
                nmse_p90_db: quantile(&dbs, 0.9),
                runtime_median_ns: (!times.is_empty()).then(|| quantile(&times, 0.5)),
            }
        })
        .collect()
}

/// Seed of one trial; independent of the SNR so SNR points share channels.
pub fn trial_seed(seed: u64, antennas: usize, trial: usize) -> u64 {
    rng::derive_seed(seed, &[antennas as u64, trial as u64])
}

/// Genie covariance for one antenna count, drawn from its own stream.
pub fn genie_for(spec: &SweepSpec, antennas: usize) -> Result<CovarianceModel> {
    let cfg = spec.point_config(antennas, spec.base.snr_db());
    let n = spec
        .genie_samples
        .unwrap_or_else(|| baselines::default_genie_samples(&cfg));
    let mut r = rng::stream(spec.base.seed, &[antennas as u64, u64::MAX]);
    Ok(baselines::genie_covariance(&cfg, spec.mode, n, &mut r)?)
}

/// Run one estimator on a drawn trial.
pub fn run_estimator(
    tag: EstimatorTag,
    trial: &Trial,
    config: &SystemConfig,
    opts: &EstimatorOptions,
    cov: Option<&CovarianceModel>,
    seed: u64,
) -> Result<ChannelEstimate> {
    let rx = &trial.received;
    let x = &trial.pilots;
    let est = match tag {
        EstimatorTag::Rank1 => rank1::estimate_multi_user(rx, x, config, opts)?,
        EstimatorTag::Rank1Fast => {
            let mut r = rng::stream(seed, &[3]);
            fastpath::estimate_multi_user_fast(rx, x, config, opts, &mut r)?
        }
        EstimatorTag::Ls => baselines::ls_estimate(rx, x)?,
        EstimatorTag::Mmse => {
            let cov = cov.ok_or_else(|| CliError::Harness("mmse needs a covariance".into()))?;
            let mut cov = cov.clone();
            cov.sigma_n2 = config.sigma_n2;
            baselines::mmse_estimate(rx, x, &cov)?
        }
        EstimatorTag::Fft => baselines::fft_angular_estimate(rx, x, config)?,
    };
    Ok(est)
}

fn record_for(
    spec: &SweepSpec,
    tag: EstimatorTag,
    config: &SystemConfig,
    snr_db: f64,
    trial_idx: usize,
    seed: u64,
    trial: &Trial,
    cov: Option<&CovarianceModel>,
) -> TrialRecord {
    let start = Instant::now();
    let outcome = run_estimator(tag, trial, config, &spec.options, cov, seed);
    let elapsed = (start.elapsed().as_nanos() as u64).max(1);
    let truth = &trial.channel.h;
    let (nmse_v, aoa, failed) = match outcome {
        Ok(est) => {
            let failed = !est.is_complete();
            let nm = nmse(&est.h, truth).unwrap_or(f64::NAN);
            let aoa = if tag.is_angular() && !failed {
                pooled_aoa_rmse(&est, trial)
            } else {
                None
            };
            (nm, aoa, failed || !nm.is_finite())
        }
        Err(_) => (f64::NAN, None, true),
    };
    TrialRecord {
        estimator: tag,
        antennas: config.antennas,
        users: config.users,
        pilot_len: config.pilot_len,
        stack_len: config.stack_len,
        paths: config.paths,
        snr_db,
        trial: trial_idx,
        nmse: nmse_v,
        aoa_rmse: aoa,
        runtime_ns: spec.records_runtime().then_some(elapsed),
        seed,
        failed,
    }
}

fn pooled_aoa_rmse(est: &ChannelEstimate, trial: &Trial) -> Option<f64> {
    let mut sq = 0.0;
    let mut n = 0usize;
    for (p, truth) in est.paths.iter().zip(&trial.channel.users) {
        let p = p.as_ref()?;
        if p.thetas.len() != truth.thetas.len() {
            return None;
        }
        sq += squared_aoa_errors(&p.thetas, &truth.thetas);
        n += truth.thetas.len();
    }
    (n > 0).then(|| (sq / n as f64).sqrt())
}

/// Run every `(estimator, M, SNR, trial)` point. All estimators at a point see the
/// same channel, pilots and noise, and results do not depend on scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let mut covs: BTreeMap<usize, CovarianceModel> = BTreeMap::new();
    if spec.estimators.contains(&EstimatorTag::Mmse) {
        for &m in &spec.antennas_list {
            covs.insert(m, genie_for(spec, m)?);
        }
    }
    let mut work = Vec::new();
    for &m in &spec.antennas_list {
        for &snr in &spec.snr_db_list {
            for t in 0..spec.trials {
                work.push((m, snr, t));
            }
        }
    }
    let per_point: Vec<Vec<TrialRecord>> = work
        .par_iter()
        .map(|&(m, snr, t)| -> Result<Vec<TrialRecord>> {
            let cfg = spec.point_config(m, snr);
            let seed = trial_seed(spec.base.seed, m, t);
            let trial = model::draw_trial(&cfg, spec.mode, spec.pilot_kind, seed)?;
            Ok(spec
                .estimators
                .iter()
                .map(|&tag| record_for(spec, tag, &cfg, snr, t, seed, &trial, covs.get(&m)))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<TrialRecord> = per_point.into_iter().flatten().collect();
    let order = |t: EstimatorTag| {
        spec.estimators
            .iter()
            .position(|&e| e == t)
            .unwrap_or(usize::MAX)
    };
    let m_order = |m: usize| {
        spec.antennas_list
            .iter()
            .position(|&x| x == m)
            .unwrap_or(usize::MAX)
    };
    let s_order = |s: f64| {
        spec.snr_db_list
            .iter()
            .position(|&x| x == s)
            .unwrap_or(usize::MAX)
    };
    records.sort_by(|a, b| {
        (
            order(a.estimator),
            m_order(a.antennas),
            s_order(a.snr_db),
            a.trial,
        )
            .cmp(&(
                order(b.estimator),
                m_order(b.antennas),
                s_order(b.snr_db),
                b.trial,
            ))
    });
    Ok(SweepResult::from_records(records))
}

/// SNR at which a curve of `(snr_db, nmse_db)` points crosses `target_db`, by linear
/// interpolation between the first bracketing pair.
pub fn crossing_snr(curve: &[(f64, f64)], target_db: f64) -> Option<f64> {
    let mut pts = curve.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.windows(2).find_map(|w| {
        let ((s0, v0), (s1, v1)) = (w[0], w[1]);
        let lo = v0.min(v1);
        let hi = v0.max(v1);
        if !(lo <= target_db && target_db <= hi) || !(v0.is_finite() && v1.is_finite()) {
            return None;
        }
        if v0 == v1 {
            return Some(s0);
        }
        Some(s0 + (target_db - v0) * (s1 - s0) / (v1 - v0))
    })
}

/// For each `M`, `snr_b − snr_a` where both estimators reach mean NMSE `gamma`.
pub fn snr_gain_at_target(
    result: &SweepResult,
    gamma: f64,
    est_a: EstimatorTag,
    est_b: EstimatorTag,
) -> Result<Vec<(usize, f64)>> {
    let target = db(gamma);
    let mut ms: Vec<usize> = result.aggregates.iter().map(|a| a.antennas).collect();
    ms.sort_unstable();
    ms.dedup();
    let curve = |tag: EstimatorTag, m: usize| -> Vec<(f64, f64)> {
        result
            .aggregates
            .iter()
            .filter(|a| a.estimator == tag && a.antennas == m)
            .map(|a| (a.snr_db, a.nmse_mean_db))
            .collect()
    };
    let mut out = Vec::new();
    for m in ms {
        let (ca, cb) = (curve(est_a, m), curve(est_b, m));
        if ca.is_empty() || cb.is_empty() {
            continue;
        }
        let sa = crossing_snr(&ca, target);
        let sb = crossing_snr(&cb, target);
        match (sa, sb) {
            (Some(a), Some(b)) => out.push((m, b - a)),
            _ => {
                return Err(CliError::Harness(format!(
                    "target {target:.2} dB outside the swept range at M = {m}"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Harness(
            "no common M for the two estimators".into(),
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub estimator: EstimatorTag,
    #[serde(rename = "M")]
    pub antennas: usize,
    pub median_ns: f64,
    pub min_ns: f64,
    pub max_ns: f64,
    pub repetitions: usize,
}

/// Minimum repetitions accepted by [`bench_runtime`].
pub const MIN_REPETITIONS: usize = 5;
const WARMUP: usize = 2;

/// Median wall-clock time of one estimate after two warmup runs, on the calling
/// thread. The MMSE baseline is timed in its joint `MK`-dimensional form.
pub fn bench_runtime(
    tag: EstimatorTag,
    config: &SystemConfig,
    opts: &EstimatorOptions,
    repetitions: usize,
) -> Result<RuntimeStats> {
    if repetitions < MIN_REPETITIONS {
        return Err(CliError::Config(format!(
            "bench needs at least {MIN_REPETITIONS} repetitions"
        )));
    }
    config.validate()?;
    let trial = model::draw_trial(
        config,
        CorrelationMode::FullRank,
        PilotKind::Orthonormal,
        config.seed,
    )?;
    let cov = if tag == EstimatorTag::Mmse {
        let mut r = rng::stream(config.seed, &[u64::MAX]);
        Some(baselines::genie_covariance(
            config,
            CorrelationMode::FullRank,
            10 * config.antennas,
            &mut r,
        )?)
    } else {
        None
    };
    let mut times = Vec::with_capacity(repetitions);
    for i in 0..WARMUP + repetitions {
        let start = Instant::now();
        let est = match (tag, &cov) {
            (EstimatorTag::Mmse, Some(c)) => {
                baselines::mmse_estimate_joint(&trial.received, &trial.pilots, c)?
            }
            _ => run_estimator(tag, &trial, config, opts, None, config.seed)?,
        };
        let t = start.elapsed().as_nanos() as f64;
        std::hint::black_box(&est);
        if i >= WARMUP {
            times.push(t.max(1.0));
        }
    }
    times.sort_by(f64::total_cmp);
    Ok(RuntimeStats {
        estimator: tag,
        antennas: config.antennas,
        median_ns: quantile(&times, 0.5),
        min_ns: times[0],
        max_ns: times[times.len() - 1],
        repetitions,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Run `f` on a dedicated single-thread pool.
pub fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Harness(e.to_string()))?;
    Ok(pool.install(f))
}
