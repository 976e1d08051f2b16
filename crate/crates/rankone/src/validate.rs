//! Fast invariant suite behind `rankone validate`.

use std::f64::consts::FRAC_PI_2;

use rankone_core::baselines;
use rankone_core::model::{self, CorrelationMode, PilotKind, SystemConfig};
use rankone_core::{
    fastpath, linalg, rank1, rng, CMatrix, EstimatorOptions, EstimatorTag, NystromWeight, C64,
};

use crate::harness::{self, SweepSpec};

/// Outcome of one property check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn user_signal(cfg: &SystemConfig, seed: u64) -> Result<rankone_core::CVector, String> {
    let tr = model::draw_trial(cfg, CorrelationMode::FullRank, PilotKind::Orthonormal, seed)
        .map_err(|e| e.to_string())?;
    model::despread(&tr.received, &tr.pilots.column(0)).map_err(|e| e.to_string())
}

fn steering_unit_modulus(cfg: &SystemConfig) -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..64 {
        let theta = -FRAC_PI_2 + i as f64 * 0.049;
        let a = model::steering_vector(theta, cfg.antennas, cfg.d_over_lambda);
        worst = a.iter().fold(worst, |w, z| w.max((z.norm() - 1.0).abs()));
        worst = worst.max((a.norm_squared() - cfg.antennas as f64).abs() / cfg.antennas as f64);
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:.1e}"))
}

fn hankel_structure(cfg: &SystemConfig) -> Outcome {
    let m = cfg.antennas;
    let y = rng::complex_gaussian_vector(&mut rng::stream(cfg.seed, &[1]), m, 1.0);
    let h = rank1::build_hankel(&y, cfg.stack_len).map_err(|e| e.to_string())?;
    let d = h.to_matrix();
    for i in 0..h.rows() {
        for j in 0..h.cols() {
            if d[(i, j)] != y[i + j] {
                return Err(format!("entry ({i}, {j}) breaks the index rule"));
            }
        }
    }
    if h.is_square() && d.transpose() != d {
        return Err("square Hankel is not symmetric".into());
    }
    Ok(format!("{}x{}", h.rows(), h.cols()))
}

fn noiseless_rank(cfg: &SystemConfig) -> Outcome {
    let mut c = cfg.clone();
    c.sigma_n2 = 0.0;
    let y = user_signal(&c, cfg.seed)?;
    let h = rank1::build_hankel(&y, c.stack_len).map_err(|e| e.to_string())?;
    let s = linalg::singular_values(h.to_matrix()).map_err(|e| e.to_string())?;
    let r = linalg::numerical_rank(&s, 1e-8);
    ensure(r == c.paths, format!("rank {r}, P = {}", c.paths))
}

fn projector_and_denominator(cfg: &SystemConfig) -> Outcome {
    let y = user_signal(cfg, cfg.seed)?;
    let h = rank1::build_hankel(&y, cfg.stack_len).map_err(|e| e.to_string())?;
    let u = rank1::signal_subspace(&h, cfg.paths)
        .map_err(|e| e.to_string())?
        .u;
    let p = &u * u.adjoint();
    let idem = (&p * &p - &p).norm();
    let spec = rank1::pseudo_spectrum(&u, cfg);
    let l = cfg.stack_len as f64;
    let worst = spec.values.iter().map(|v| 1.0 / v).fold(0.0, f64::max);
    ensure(
        idem <= 1e-8 && worst <= l * (1.0 + 1e-6),
        format!("idempotence {idem:.1e}, max denominator {worst:.3} of L = {l}"),
    )
}

fn sketch_exact_and_orthonormal(cfg: &SystemConfig) -> Outcome {
    let y = user_signal(cfg, cfg.seed)?;
    let h = rank1::build_hankel(&y, cfg.stack_len).map_err(|e| e.to_string())?;
    if !h.is_square() {
        return Ok("skipped: Hankel not square".into());
    }
    let exact = rank1::signal_subspace(&h, cfg.paths)
        .map_err(|e| e.to_string())?
        .u;
    let opts = EstimatorOptions {
        nystrom_weight: NystromWeight::Sketched,
        ..Default::default()
    };
    let mut r = rng::stream(cfg.seed, &[2]);
    let full = fastpath::sketch_subspace(&h, cfg.paths, cfg.stack_len, &opts, &mut r)
        .map_err(|e| e.to_string())?;
    let dist = linalg::projector_distance(&full.u, &exact);
    let s = fastpath::default_sampling_len(cfg.paths);
    let small = fastpath::sketch_subspace(&h, cfg.paths, s, &EstimatorOptions::default(), &mut r)
        .map_err(|e| e.to_string())?;
    let gram = linalg::gram_deviation(&small.u);
    ensure(
        dist <= 1e-8 && gram <= 1e-10,
        format!("s = L distance {dist:.1e}, s = {s} Gram deviation {gram:.1e}"),
    )
}

fn despread_linear(cfg: &SystemConfig) -> Outcome {
    let mut r = rng::stream(cfg.seed, &[3]);
    let pilots =
        model::draw_pilots(cfg, &mut r, PilotKind::RandomGaussian).map_err(|e| e.to_string())?;
    let h1 = rng::complex_gaussian_matrix(&mut r, cfg.antennas, cfg.users, 1.0);
    let h2 = rng::complex_gaussian_matrix(&mut r, cfg.antennas, cfg.users, 1.0);
    let tx = |h: &CMatrix| {
        model::transmit(h, &pilots, 0.0, &mut rng::stream(0, &[])).map_err(|e| e.to_string())
    };
    let (a, b, s) = (tx(&h1)?, tx(&h2)?, tx(&(&h1 + &h2))?);
    let mut worst: f64 = 0.0;
    for k in 0..cfg.users {
        let x = pilots.column(k);
        let lhs = model::despread(&s, &x).map_err(|e| e.to_string())?;
        let rhs = model::despread(&a, &x).map_err(|e| e.to_string())?
            + model::despread(&b, &x).map_err(|e| e.to_string())?;
        worst = worst.max((&lhs - &rhs).norm() / lhs.norm());
    }
    ensure(worst <= 1e-12, format!("relative defect {worst:.1e}"))
}

fn phase_equivariance(cfg: &SystemConfig) -> Outcome {
    let y = user_signal(cfg, cfg.seed)?;
    let opts = EstimatorOptions::default();
    let rot = C64::from_polar(1.0, 0.7);
    let (a, _) = rank1::estimate_single_user(&y, cfg, &opts).map_err(|e| e.to_string())?;
    let (b, _) = rank1::estimate_single_user(&(&y * rot), cfg, &opts).map_err(|e| e.to_string())?;
    let dt = a
        .thetas
        .iter()
        .zip(&b.thetas)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let dg = a
        .gains
        .iter()
        .zip(&b.gains)
        .map(|(x, y)| (x * rot - y).norm() / x.norm())
        .fold(0.0, f64::max);
    ensure(
        dt <= 1e-9 && dg <= 1e-6,
        format!("AoA shift {dt:.1e}, gain defect {dg:.1e}"),
    )
}

fn ls_mmse_limit(cfg: &SystemConfig) -> Outcome {
    let mut c = SystemConfig::new(16, 2, cfg.paths.min(3));
    c.pilot_len = 4;
    c.sigma_n2 = 1e-10;
    c.seed = cfg.seed;
    let mut r = rng::stream(cfg.seed, &[4]);
    let cov = baselines::genie_covariance(
        &c,
        CorrelationMode::FullRank,
        baselines::default_genie_samples(&c),
        &mut r,
    )
    .map_err(|e| e.to_string())?;
    let tr = model::draw_trial(
        &c,
        CorrelationMode::FullRank,
        PilotKind::Orthonormal,
        cfg.seed,
    )
    .map_err(|e| e.to_string())?;
    let ls = baselines::ls_estimate(&tr.received, &tr.pilots).map_err(|e| e.to_string())?;
    let mm = baselines::mmse_estimate(&tr.received, &tr.pilots, &cov).map_err(|e| e.to_string())?;
    let gap = (&mm.h - &ls.h).norm() / tr.channel.h.norm();
    ensure(gap <= 1e-4, format!("relative gap {gap:.1e}"))
}

fn bound_ordering(cfg: &SystemConfig) -> Outcome {
    let (r1, mm) = (baselines::crlb_rank1(cfg), baselines::crlb_mmse(cfg));
    let d = baselines::predicted_snr_gain(2 * cfg.antennas, cfg.pilot_len, 1e-2, cfg.rho_h2())
        - baselines::predicted_snr_gain(cfg.antennas, cfg.pilot_len, 1e-2, cfg.rho_h2());
    ensure(
        mm > r1 && (2.9..=3.02).contains(&d),
        format!("crlb_mmse {mm:.3e} > crlb_rank1 {r1:.3e}, doubling adds {d:.3} dB"),
    )
}

fn metric_examples(_: &SystemConfig) -> Outcome {
    let h = rng::complex_gaussian_matrix(&mut rng::stream(1, &[]), 4, 2, 1.0);
    let z = CMatrix::zeros(4, 2);
    let n = [
        harness::nmse(&h, &h).map_err(|e| e.to_string())?,
        harness::nmse(&z, &h).map_err(|e| e.to_string())?,
        harness::nmse(&(&h * C64::new(2.0, 0.0)), &h).map_err(|e| e.to_string())?,
    ];
    let a =
        harness::aoa_rmse(&[0.5 - 0.01, -0.5 + 0.01], &[-0.5, 0.5]).map_err(|e| e.to_string())?;
    ensure(
        n[0] == 0.0
            && (n[1] - 1.0).abs() < 1e-15
            && (n[2] - 1.0).abs() < 1e-12
            && (a - 0.01).abs() < 1e-12,
        format!("nmse {n:?}, aoa_rmse {a}"),
    )
}

fn sweep_determinism(cfg: &SystemConfig) -> Outcome {
    let mut spec = SweepSpec::new(cfg.clone(), vec![EstimatorTag::Rank1, EstimatorTag::Ls]);
    spec.trials = 2;
    let a = harness::run_sweep(&spec).map_err(|e| e.to_string())?;
    let b = harness::run_sweep(&spec).map_err(|e| e.to_string())?;
    ensure(a == b, format!("{} records", a.records.len()))
}

type CheckFn = (&'static str, fn(&SystemConfig) -> Outcome);

const CHECKS: [CheckFn; 11] = [
    ("steering_unit_modulus", steering_unit_modulus),
    ("hankel_structure", hankel_structure),
    ("noiseless_rank", noiseless_rank),
    ("projector_and_denominator", projector_and_denominator),
    ("sketch_exact_and_orthonormal", sketch_exact_and_orthonormal),
    ("despread_linear", despread_linear),
    ("phase_equivariance", phase_equivariance),
    ("ls_mmse_limit", ls_mmse_limit),
    ("bound_ordering", bound_ordering),
    ("metric_examples", metric_examples),
    ("sweep_determinism", sweep_determinism),
];

/// Run every check against `cfg`.
pub fn run_suite(cfg: &SystemConfig) -> Vec<Check> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = match std::panic::catch_unwind(|| f(cfg)) {
                Ok(Ok(d)) => (true, d),
                Ok(Err(d)) => (false, d),
                Err(_) => (false, "panicked".into()),
            };
            Check {
                name,
                passed,
                detail,
            }
        })
        .collect()
}
