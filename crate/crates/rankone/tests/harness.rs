use std::fs;

use proptest::prelude::*;
use rankone::harness::{self, Metric, SweepResult, SweepSpec, TrialRecord};
use rankone::output;
use rankone::plot::{self, PlotKind, PlotSource};
use rankone_core::model::SystemConfig;
use rankone_core::{baselines, rank1, rng, CMatrix, EstimatorTag, C64};

fn small(snr: f64) -> SystemConfig {
    SystemConfig::new(32, 2, 2).with_snr_db(snr)
}

fn record(tag: EstimatorTag, snr_db: f64, nmse: f64) -> TrialRecord {
    TrialRecord {
        estimator: tag,
        antennas: 64,
        users: 1,
        pilot_len: 2,
        stack_len: 32,
        paths: 1,
        snr_db,
        trial: 0,
        nmse,
        aoa_rmse: None,
        runtime_ns: None,
        seed: 1,
        failed: false,
    }
}

/// NMSE = c / snr for `a`, and the same curve needing 10x the SNR for `b`.
fn shifted_curves(shift: f64) -> SweepResult {
    let mut records = Vec::new();
    for i in 0..=8 {
        let snr_db = -10.0 + 5.0 * i as f64;
        let snr = 10f64.powf(snr_db / 10.0);
        records.push(record(EstimatorTag::Ls, snr_db, 0.5 / snr));
        records.push(record(EstimatorTag::Mmse, snr_db, 0.5 * shift / snr));
    }
    SweepResult::from_records(records)
}

#[test]
fn nmse_examples() {
    let h = rng::complex_gaussian_matrix(&mut rng::stream(3, &[]), 8, 3, 1.0);
    assert_eq!(harness::nmse(&h, &h).unwrap(), 0.0);
    assert!((harness::nmse(&CMatrix::zeros(8, 3), &h).unwrap() - 1.0).abs() < 1e-15);
    assert!((harness::nmse(&(&h * C64::new(2.0, 0.0)), &h).unwrap() - 1.0).abs() < 1e-12);
    assert!(harness::nmse(&h, &CMatrix::zeros(8, 3)).is_err());
}

#[test]
fn aoa_rmse_examples() {
    assert_eq!(harness::aoa_rmse(&[0.1, -0.3], &[0.1, -0.3]).unwrap(), 0.0);
    assert_eq!(harness::aoa_rmse(&[-0.3, 0.1], &[0.1, -0.3]).unwrap(), 0.0);
    let r = harness::aoa_rmse(&[-0.5 + 0.01, 0.5 - 0.01], &[-0.5, 0.5]).unwrap();
    assert!((r - 0.01).abs() < 1e-12);
    assert!(harness::aoa_rmse(&[0.1], &[0.1, 0.2]).is_err());
}

proptest! {
    #[test]
    fn aoa_rmse_permutation_and_shift(
        truth in prop::collection::vec(-1.2f64..1.2, 1..5),
        errs in prop::collection::vec(-1e-3f64..1e-3, 5),
        shift in -0.2f64..0.2,
        rot in 0usize..5,
    ) {
        let mut truth = truth;
        truth.sort_by(f64::total_cmp);
        truth.dedup_by(|a, b| (*a - *b).abs() < 0.01);
        let est: Vec<f64> = truth.iter().zip(&errs).map(|(t, e)| t + e).collect();
        let base = harness::aoa_rmse(&est, &truth).unwrap();
        let mut permuted = est.clone();
        permuted.rotate_left(rot % est.len());
        prop_assert!((harness::aoa_rmse(&permuted, &truth).unwrap() - base).abs() <= 1e-15);
        let se: Vec<f64> = est.iter().map(|x| x + shift).collect();
        let st: Vec<f64> = truth.iter().map(|x| x + shift).collect();
        prop_assert!((harness::aoa_rmse(&se, &st).unwrap() - base).abs() <= 1e-12);
    }
}

#[test]
fn single_trial_single_record() {
    let mut spec = SweepSpec::new(small(10.0), vec![EstimatorTag::Ls]);
    spec.snr_db_list = vec![10.0];
    spec.trials = 1;
    let r = harness::run_sweep(&spec).unwrap();
    assert_eq!(r.records.len(), 1);
    assert_eq!(r.aggregates.len(), 1);
}

#[test]
fn sweep_is_deterministic_across_thread_counts() {
    let mut spec = SweepSpec::new(
        small(20.0),
        vec![
            EstimatorTag::Rank1,
            EstimatorTag::Rank1Fast,
            EstimatorTag::Mmse,
        ],
    );
    spec.snr_db_list = vec![0.0, 20.0];
    spec.trials = 4;
    let one = harness::single_threaded(|| harness::run_sweep(&spec))
        .unwrap()
        .unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let four = pool.install(|| harness::run_sweep(&spec)).unwrap();
    assert_eq!(one, four);
    assert!(one.records.iter().all(|r| r.runtime_ns.is_none()));
}

#[test]
fn trials_are_paired_and_shared_across_snr() {
    let mut spec = SweepSpec::new(small(20.0), vec![EstimatorTag::Ls, EstimatorTag::Fft]);
    spec.snr_db_list = vec![5.0, 15.0];
    spec.trials = 3;
    let r = harness::run_sweep(&spec).unwrap();
    for t in 0..3 {
        let seeds: Vec<u64> = r
            .records
            .iter()
            .filter(|x| x.trial == t)
            .map(|x| x.seed)
            .collect();
        assert_eq!(seeds.len(), 4);
        assert!(seeds.iter().all(|&s| s == seeds[0]));
    }
}

#[test]
fn records_follow_spec_order() {
    let mut spec = SweepSpec::new(small(20.0), vec![EstimatorTag::Fft, EstimatorTag::Ls]);
    spec.snr_db_list = vec![20.0, 0.0];
    spec.trials = 2;
    let r = harness::run_sweep(&spec).unwrap();
    let keys: Vec<(EstimatorTag, f64, usize)> = r
        .records
        .iter()
        .map(|x| (x.estimator, x.snr_db, x.trial))
        .collect();
    assert_eq!(keys[0], (EstimatorTag::Fft, 20.0, 0));
    assert_eq!(keys[2], (EstimatorTag::Fft, 0.0, 0));
    assert_eq!(keys[4], (EstimatorTag::Ls, 20.0, 0));
}

#[test]
fn runtime_metric_is_recorded_on_request() {
    let mut spec = SweepSpec::new(small(20.0), vec![EstimatorTag::Ls]);
    spec.snr_db_list = vec![20.0];
    spec.trials = 2;
    spec.metrics = vec![Metric::Nmse, Metric::Runtime];
    let r = harness::run_sweep(&spec).unwrap();
    assert!(r.records.iter().all(|x| x.runtime_ns.is_some()));
    assert!(r.aggregates[0].runtime_median_ns.is_some());
}

#[test]
fn invalid_sweeps_are_rejected() {
    let mut spec = SweepSpec::new(small(20.0), vec![EstimatorTag::Ls]);
    spec.trials = 0;
    assert!(harness::run_sweep(&spec).is_err());
    let mut spec = SweepSpec::new(small(20.0), vec![]);
    spec.trials = 1;
    assert!(harness::run_sweep(&spec).is_err());
}

#[test]
fn snr_gain_identical_is_zero() {
    let r = shifted_curves(1.0);
    let g = harness::snr_gain_at_target(&r, 1e-2, EstimatorTag::Ls, EstimatorTag::Mmse).unwrap();
    assert_eq!(g.len(), 1);
    assert!(g[0].1.abs() < 1e-12);
}

#[test]
fn snr_gain_tenfold_shift_is_ten_db() {
    let r = shifted_curves(10.0);
    let g = harness::snr_gain_at_target(&r, 1e-2, EstimatorTag::Ls, EstimatorTag::Mmse).unwrap();
    assert!((g[0].1 - 10.0).abs() < 1e-9, "{:?}", g);
}

#[test]
fn snr_gain_outside_range_errors() {
    let r = shifted_curves(1.0);
    assert!(harness::snr_gain_at_target(&r, 1e-9, EstimatorTag::Ls, EstimatorTag::Mmse).is_err());
}

#[test]
fn crossing_interpolates_in_db() {
    let c = [(0.0, -10.0), (10.0, -20.0)];
    assert!((harness::crossing_snr(&c, -15.0).unwrap() - 5.0).abs() < 1e-12);
    assert_eq!(harness::crossing_snr(&c, -30.0), None);
}

#[test]
fn loglog_slope_of_power_law() {
    let xs = [128.0, 256.0, 512.0, 1024.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(3)).collect();
    assert!((harness::loglog_slope(&xs, &ys).unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(harness::loglog_slope(&[1.0], &[1.0]), None);
}

#[test]
fn bench_needs_five_repetitions() {
    let cfg = small(20.0);
    let opts = Default::default();
    assert!(harness::bench_runtime(EstimatorTag::Ls, &cfg, &opts, 4).is_err());
    let s = harness::bench_runtime(EstimatorTag::Ls, &cfg, &opts, 5).unwrap();
    assert_eq!(s.repetitions, 5);
    assert!(s.min_ns <= s.median_ns && s.median_ns <= s.max_ns);
}

#[test]
fn empty_result_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    output::emit_csv(&SweepResult::from_records(Vec::new()), &path).unwrap();
    assert_eq!(
        fs::read_to_string(&path).unwrap(),
        output::RECORD_HEADER.join(",") + "\n"
    );
    let agg = fs::read_to_string(output::aggregates_path(&path)).unwrap();
    assert_eq!(agg, output::AGGREGATE_HEADER.join(",") + "\n");
}

#[test]
fn one_record_two_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.csv");
    output::emit_csv(
        &SweepResult::from_records(vec![record(EstimatorTag::Ls, 10.0, 0.01)]),
        &path,
    )
    .unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.ends_with("ls,64,1,2,32,1,10,0,0.01,,,1,false\n"));
    assert_eq!(
        output::aggregates_path(&path),
        dir.path().join("one_aggregates.csv")
    );
}

#[test]
fn csv_round_trip_is_exact() {
    let mut spec = SweepSpec::new(small(20.0), vec![EstimatorTag::Rank1, EstimatorTag::Ls]);
    spec.snr_db_list = vec![10.0, 20.0];
    spec.trials = 3;
    let r = harness::run_sweep(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/out.csv");
    output::emit_csv(&r, &path).unwrap();
    assert_eq!(output::read_records(&path).unwrap(), r.records);
    assert_eq!(
        output::read_aggregates(&output::aggregates_path(&path)).unwrap(),
        r.aggregates
    );
}

#[test]
fn unwritable_path_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let path = blocker.join("out.csv");
    let e = output::emit_csv(&SweepResult::from_records(Vec::new()), &path).unwrap_err();
    assert!(e.to_string().contains("file"), "{e}");
}

#[test]
fn nmse_plot_has_one_series_per_estimator() {
    let mut spec = SweepSpec::new(small(20.0), vec![EstimatorTag::Rank1, EstimatorTag::Ls]);
    spec.snr_db_list = vec![0.0, 10.0, 20.0];
    spec.trials = 2;
    let r = harness::run_sweep(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nmse.svg");
    let src = PlotSource::Sweep {
        result: &r,
        gamma: 1e-2,
    };
    plot::emit_plot(&src, PlotKind::NmseVsSnr, &path).unwrap();
    let svg = fs::read_to_string(&path).unwrap();
    assert_eq!(svg.matches("class=\"series\"").count(), 2);
    assert!(svg.contains("data-scale=\"log\""));
    assert!(plot::figure(&src, PlotKind::Spectrum).is_err());
}

#[test]
fn gain_plot_overlays_prediction() {
    let mut records = Vec::new();
    for (m, shift) in [(64, 10.0), (128, 20.0)] {
        for r in shifted_curves(shift).records {
            let (tag, snr_db, nmse) = (r.estimator, r.snr_db, r.nmse);
            let tag = if tag == EstimatorTag::Ls {
                EstimatorTag::Rank1
            } else {
                tag
            };
            records.push(TrialRecord {
                antennas: m,
                ..record(tag, snr_db, nmse)
            });
        }
    }
    let r = SweepResult::from_records(records);
    let fig = plot::figure(
        &PlotSource::Sweep {
            result: &r,
            gamma: 1e-2,
        },
        PlotKind::GainVsM,
    )
    .unwrap();
    assert_eq!(fig.series.len(), 2);
    assert!(fig.series.iter().any(|s| s.reference));
    let measured = &fig.series[0].points;
    assert!((measured[0].1 - 10.0).abs() < 1e-9 && (measured[1].1 - 13.0103).abs() < 1e-3);
    assert!(fig.to_svg().unwrap().contains("class=\"reference\""));
}

#[test]
fn spectrum_plot_uses_degrees() {
    let mut cfg = SystemConfig::new(32, 1, 2);
    cfg.grid_size = 256;
    let y = rng::complex_gaussian_vector(&mut rng::stream(5, &[]), 32, 1.0);
    let u = rank1::signal_subspace(&rank1::build_hankel(&y, 16).unwrap(), 2)
        .unwrap()
        .u;
    let spectra = vec![("exact".to_string(), rank1::pseudo_spectrum(&u, &cfg))];
    let fig = plot::figure(&PlotSource::Spectra(&spectra), PlotKind::Spectrum).unwrap();
    let xs: Vec<f64> = fig.series[0].points.iter().map(|p| p.0).collect();
    assert!((xs[0] + 90.0).abs() < 1e-9 && *xs.last().unwrap() < 90.0);
    assert!(fig.x_label.contains("deg"));
}

#[test]
fn rank1_nmse_tracks_the_bound() {
    let cfg = SystemConfig::new(256, 8, 5).with_snr_db(20.0);
    let mut spec = SweepSpec::new(cfg.clone(), vec![EstimatorTag::Rank1]);
    spec.snr_db_list = vec![20.0];
    spec.trials = 200;
    let r = harness::run_sweep(&spec).unwrap();
    let got = r.aggregates[0].nmse_mean_db;
    let bound = harness::db(baselines::crlb_rank1(&cfg));
    assert!((got - bound).abs() <= 3.0, "{got} vs {bound}");
}
