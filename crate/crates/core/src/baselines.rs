//! Reference estimators (LS, genie-aided linear MMSE, FFT-angular) and closed-form
//! accuracy bounds.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{LN_2, PI};

use nalgebra::{Cholesky, LU};
use rand::Rng;

use crate::estimator::{ChannelEstimate, EstimatorTag, PathEstimate};
use crate::linalg::{CMatrix, CVector, C64};
use crate::model::{self, CorrelationMode, PilotMatrix, ReceivedSignal, SystemConfig};
use crate::{math, rank1, Error, Result};

fn gram(pilots: &PilotMatrix) -> CMatrix {
    pilots.x.ad_mul(&pilots.x)
}

/// Least squares `Ĥ = Y X (X^H X)^{−1}`, the right inverse of `X^H`.
pub fn ls_estimate(received: &ReceivedSignal, pilots: &PilotMatrix) -> Result<ChannelEstimate> {
    if received.y.ncols() != pilots.x.nrows() {
        return Err(Error::Dimension {
            expected: pilots.x.nrows(),
            got: received.y.ncols(),
        });
    }
    let g = gram(pilots);
    let scale = g.diagonal().iter().map(|z| z.re).fold(0.0, f64::max);
    let chol = Cholesky::new(g.clone()).ok_or(Error::RankDeficientPilots)?;
    let l = chol.l();
    let (dmax, dmin) = l
        .diagonal()
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), z| {
            (a.max(z.re), b.min(z.re))
        });
    if scale == 0.0 || dmin <= 1e-8 * dmax {
        return Err(Error::RankDeficientPilots);
    }
    // Ĥ^T = (X^H X)^{-T} (Y X)^T, solved as Ĥ^H = G^{-1} (Y X)^H.
    let yx = &received.y * &pilots.x;
    let h_adj = chol.solve(&yx.adjoint());
    Ok(ChannelEstimate::linear(EstimatorTag::Ls, h_adj.adjoint()))
}

/// Channel covariance available to the genie-aided MMSE estimator.
///
/// Users in the same block share one `M × M` covariance; blocks of users in
/// different groups are zero. The full `MK × MK` matrix is `R_H(k, l) =
/// blocks[user_block[k]]` when `user_block[k] == user_block[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    pub blocks: Vec<CMatrix>,
    pub user_block: Vec<usize>,
    /// Noise covariance is `sigma_n2 · I`.
    pub sigma_n2: f64,
    pub sample_count: usize,
    /// Each user has its own block.
    pub block_diagonal: bool,
}

impl CovarianceModel {
    pub fn antennas(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    pub fn users(&self) -> usize {
        self.user_block.len()
    }

    /// Dense `MK × MK` covariance of `vec(H)`.
    pub fn dense(&self) -> CMatrix {
        let (m, k) = (self.antennas(), self.users());
        let mut r = CMatrix::zeros(m * k, m * k);
        for a in 0..k {
            for b in 0..k {
                if self.user_block[a] == self.user_block[b] {
                    r.view_mut((a * m, b * m), (m, m))
                        .copy_from(&self.blocks[self.user_block[a]]);
                }
            }
        }
        r
    }

    /// `‖R − R^H‖_F`, over blocks.
    pub fn hermitian_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| (b - b.adjoint()).norm())
            .fold(0.0, f64::max)
    }
}

/// Default genie sample count, `20 M K` channel draws.
pub fn default_genie_samples(config: &SystemConfig) -> usize {
    20 * config.antennas * config.users
}

/// Sample covariance from `n_samples` independent channel draws (at least `10 M`).
pub fn genie_covariance<R: Rng + ?Sized>(
    config: &SystemConfig,
    mode: CorrelationMode,
    n_samples: usize,
    rng: &mut R,
) -> Result<CovarianceModel> {
    covariance_from_draws(config, mode, n_samples, || {
        model::draw_channel(config, rng, mode)
    })
}

/// Sample covariance over `n_samples` channels produced by `draw`.
pub fn covariance_from_draws<F>(
    config: &SystemConfig,
    mode: CorrelationMode,
    n_samples: usize,
    mut draw: F,
) -> Result<CovarianceModel>
where
    F: FnMut() -> Result<model::ChannelRealization>,
{
    config.validate()?;
    let m = config.antennas;
    if n_samples < 10 * m {
        return Err(Error::InsufficientSamples {
            got: n_samples,
            min: 10 * m,
        });
    }
    let groups = mode.clusters(config.users);
    let mut blocks = vec![CMatrix::zeros(m, m); groups];
    let one = C64::new(1.0, 0.0);
    let w = 1.0 / n_samples as f64;
    for _ in 0..n_samples {
        let ch = draw()?;
        for (g, block) in blocks.iter_mut().enumerate() {
            // Users of one cluster share a channel, so the cluster's first user stands in.
            let k = (0..config.users)
                .find(|&k| mode.cluster_of(k) == g)
                .unwrap_or(g);
            let h = ch.h.column(k);
            block.hegerc(C64::new(w, 0.0), &h, &h, one);
        }
    }
    // hegerc fills the lower triangle; mirror it to make each block exactly Hermitian.
    for b in blocks.iter_mut() {
        for j in 0..m {
            b[(j, j)].im = 0.0;
            for i in (j + 1)..m {
                b[(j, i)] = b[(i, j)].conj();
            }
        }
    }
    let user_block = (0..config.users).map(|k| mode.cluster_of(k)).collect();
    Ok(CovarianceModel {
        blocks,
        user_block,
        sigma_n2: config.sigma_n2,
        sample_count: n_samples,
        block_diagonal: groups == config.users,
    })
}

/// Solve `(A + reg·I) z = b` for Hermitian PSD `A`, regularizing when the pivot-based
/// condition estimate exceeds `1e12` or the factorization fails.
fn solve_hermitian(mut a: CMatrix, b: &CVector) -> Result<CVector> {
    let n = a.nrows();
    let trace: f64 = a.diagonal().iter().map(|z| z.re).sum();
    let reg = 1e-12 * trace.abs().max(f64::MIN_POSITIVE) / n as f64;
    if let Some(chol) = Cholesky::new(a.clone()) {
        let d = chol.l_dirty().diagonal();
        let (hi, lo) = d.iter().fold((0.0f64, f64::INFINITY), |(h, l), z| {
            (h.max(z.re), l.min(z.re))
        });
        if lo > 0.0 && (hi / lo) * (hi / lo) <= 1e12 {
            return Ok(chol.solve(b));
        }
    }
    for i in 0..n {
        a[(i, i)] += reg;
    }
    let chol = Cholesky::new(a).ok_or(Error::SingularInnerMatrix)?;
    Ok(chol.solve(b))
}

fn solve_general(mut a: CMatrix, b: &CVector) -> Result<CVector> {
    let n = a.nrows();
    let trace: f64 = a.diagonal().iter().map(|z| math::abs(*z)).sum();
    let lu = LU::new(a.clone());
    let u = lu.u();
    let (hi, lo) = u
        .diagonal()
        .iter()
        .fold((0.0f64, f64::INFINITY), |(h, l), z| {
            (h.max(math::abs(*z)), l.min(math::abs(*z)))
        });
    if lo > 0.0 && hi / lo <= 1e12 {
        if let Some(x) = lu.solve(b) {
            return Ok(x);
        }
    }
    let reg = 1e-12 * trace.max(f64::MIN_POSITIVE) / n as f64;
    for i in 0..n {
        a[(i, i)] += reg;
    }
    LU::new(a).solve(b).ok_or(Error::SingularInnerMatrix)
}

fn check_mmse_shapes(
    received: &ReceivedSignal,
    pilots: &PilotMatrix,
    cov: &CovarianceModel,
) -> Result<()> {
    if cov.users() != pilots.x.ncols() {
        return Err(Error::Dimension {
            expected: pilots.x.ncols(),
            got: cov.users(),
        });
    }
    if cov.antennas() != received.y.nrows() {
        return Err(Error::Dimension {
            expected: received.y.nrows(),
            got: cov.antennas(),
        });
    }
    if received.y.ncols() != pilots.x.nrows() {
        return Err(Error::Dimension {
            expected: pilots.x.nrows(),
            got: received.y.ncols(),
        });
    }
    Ok(())
}

/// Genie-aided linear MMSE over the whole `MK`-dimensional `vec(H)`.
///
/// With `Y = H X^H + N`, `vec(Y) = X̃ vec(H) + vec(N)` where `X̃ = conj(X) ⊗ I_M`.
/// The estimator `R_H X̃^H (X̃ R_H X̃^H + σ² I)^{−1} vec(Y)` is evaluated in the
/// equivalent `MK × MK` form `R_H (G R_H + σ² I)^{−1} vec(Y X)`, `G = X̃^H X̃`.
pub fn mmse_estimate_joint(
    received: &ReceivedSignal,
    pilots: &PilotMatrix,
    cov: &CovarianceModel,
) -> Result<ChannelEstimate> {
    check_mmse_shapes(received, pilots, cov)?;
    let (m, k) = (cov.antennas(), cov.users());
    let r = cov.dense();
    let g = gram(pilots);
    let yx = &received.y * &pilots.x;
    let rhs = CVector::from_column_slice(yx.as_slice());
    let sigma2 = C64::new(cov.sigma_n2, 0.0);

    let diag_g = (0..k)
        .all(|a| (0..k).all(|b| a == b || math::abs(g[(a, b)]) <= 1e-12 * math::abs(g[(a, a)])));
    let g0 = g[(0, 0)];
    let scalar_g = diag_g && (0..k).all(|a| math::abs(g[(a, a)] - g0) <= 1e-12 * math::abs(g0));

    let z = if scalar_g {
        // G = g I keeps the inner matrix Hermitian.
        let mut inner = &r * g0;
        for i in 0..m * k {
            inner[(i, i)] += sigma2;
        }
        solve_hermitian(inner, &rhs)?
    } else {
        // G R_H with G = conj(X^H X) ⊗ I_M.
        let mut inner = CMatrix::zeros(m * k, m * k);
        for a in 0..k {
            for b in 0..k {
                let gab = g[(a, b)].conj();
                if gab == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..k {
                    let blk = r.view((b * m, c * m), (m, m));
                    let mut dst = inner.view_mut((a * m, c * m), (m, m));
                    dst += blk * gab;
                }
            }
        }
        for i in 0..m * k {
            inner[(i, i)] += sigma2;
        }
        solve_general(inner, &rhs)?
    };
    let vec_h = r * z;
    Ok(ChannelEstimate::linear(
        EstimatorTag::Mmse,
        CMatrix::from_column_slice(m, k, vec_h.as_slice()),
    ))
}

/// Genie-aided linear MMSE. When users have independent covariance blocks and the
/// pilot Gram matrix is diagonal the joint problem splits into `K` problems of size
/// `M`, `ĥ_k = R_k (g_kk R_k + σ² I)^{−1} Y x_k`, which this uses; otherwise it
/// defers to [`mmse_estimate_joint`]. Both give the same estimate.
pub fn mmse_estimate(
    received: &ReceivedSignal,
    pilots: &PilotMatrix,
    cov: &CovarianceModel,
) -> Result<ChannelEstimate> {
    check_mmse_shapes(received, pilots, cov)?;
    let g = gram(pilots);
    let k = cov.users();
    let diag_g = (0..k)
        .all(|a| (0..k).all(|b| a == b || math::abs(g[(a, b)]) <= 1e-12 * math::abs(g[(a, a)])));
    if !(cov.block_diagonal && diag_g) {
        return mmse_estimate_joint(received, pilots, cov);
    }
    let m = cov.antennas();
    let mut h = CMatrix::zeros(m, k);
    let sigma2 = C64::new(cov.sigma_n2, 0.0);
    for u in 0..k {
        let rk = &cov.blocks[cov.user_block[u]];
        let mut inner = rk * g[(u, u)];
        for i in 0..m {
            inner[(i, i)] += sigma2;
        }
        let yx = &received.y * pilots.x.column(u);
        let z = solve_hermitian(inner, &yx)?;
        h.set_column(u, &(rk * z));
    }
    Ok(ChannelEstimate::linear(EstimatorTag::Mmse, h))
}

/// Map DFT bin `b` of an `M`-point transform to `sin θ`, choosing the alias with
/// `|sin θ| ≤ 1` and, between two valid aliases, the smaller `|sin θ|`. The negative
/// alias wins an exact tie. `None` when neither alias is a physical angle.
pub fn bin_to_sine(bin: usize, antennas: usize, d_over_lambda: f64) -> Option<f64> {
    let m = antennas as f64;
    let pos = bin as f64 / (m * d_over_lambda);
    let neg = (bin as f64 - m) / (m * d_over_lambda);
    let ok = |s: f64| s.abs() <= 1.0 + 1e-12;
    match (ok(pos), ok(neg)) {
        (true, true) => Some(if neg.abs() <= pos.abs() { neg } else { pos }),
        (true, false) => Some(pos),
        (false, true) => Some(neg),
        (false, false) => None,
    }
}

/// FFT-angular estimator: the `P` strongest DFT bins give AoAs, gains come from
/// beamforming at those angles.
pub fn fft_angular_user(y: &CVector, config: &SystemConfig) -> Result<(PathEstimate, CVector)> {
    let m = y.len();
    if m < 2 * config.paths {
        return Err(Error::InvalidConfig(
            "FFT estimator needs M >= 2P".to_string(),
        ));
    }
    let twiddle: Vec<C64> = (0..m)
        .map(|i| math::cis(-2.0 * PI * i as f64 / m as f64))
        .collect();
    let spectrum: Vec<f64> = (0..m)
        .map(|b| {
            let mut acc = C64::new(0.0, 0.0);
            for (i, z) in y.iter().enumerate() {
                acc += z * twiddle[(b * i) % m];
            }
            acc.norm_sqr()
        })
        .collect();
    let mut bins: Vec<usize> = (0..m).collect();
    bins.sort_by(|&a, &b| spectrum[b].total_cmp(&spectrum[a]).then(a.cmp(&b)));
    let thetas: Vec<f64> = bins
        .into_iter()
        .filter_map(|b| bin_to_sine(b, m, config.d_over_lambda))
        .map(|s| math::asin(s.clamp(-1.0, 1.0)))
        .take(config.paths)
        .collect();
    if thetas.len() < config.paths {
        return Err(Error::PeakDeficit {
            found: thetas.len(),
            needed: config.paths,
        });
    }
    let gains = rank1::beamform_gains(y, &thetas, config.d_over_lambda);
    let h = rank1::reconstruct(&thetas, &gains, m, config.d_over_lambda)?;
    Ok((PathEstimate { thetas, gains }, h))
}

/// FFT-angular estimate for every user.
pub fn fft_angular_estimate(
    received: &ReceivedSignal,
    pilots: &PilotMatrix,
    config: &SystemConfig,
) -> Result<ChannelEstimate> {
    config.validate()?;
    rank1::per_user_loop(EstimatorTag::Fft, received, pilots, config, |_, y| {
        fft_angular_user(y, config)
    })
}

/// Gain-error floor of the rank-1 estimator, `σn² / (M B σx²)`.
pub fn crlb_rank1(config: &SystemConfig) -> f64 {
    config.sigma_n2 / (config.antennas as f64 * config.pilot_len as f64 * config.sigma_x2)
}

/// Linear MMSE error floor, `σn² / (B σx² + ρ σn²)` with `ρ = P + 1` unless overridden.
pub fn crlb_mmse(config: &SystemConfig) -> f64 {
    config.sigma_n2
        / (config.pilot_len as f64 * config.sigma_x2 + config.rho_h2() * config.sigma_n2)
}

/// SNR advantage in dB at equal NMSE: `10 log₁₀[M / (1 + ρ/B · σn²/σx²)]`.
pub fn predicted_snr_gain(
    antennas: usize,
    pilot_len: usize,
    noise_to_signal: f64,
    rho_h2: f64,
) -> f64 {
    math::db(antennas as f64 / (1.0 + rho_h2 / pilot_len as f64 * noise_to_signal))
}

/// Mean attenuation of a beamformed gain under AoA error `δ`: `exp(−2 ln 2 · M² δ²)`.
pub fn predicted_gain_bias(aoa_error: f64, antennas: usize) -> f64 {
    let m = antennas as f64;
    math::exp(-2.0 * LN_2 * m * m * aoa_error * aoa_error)
}

/// Gaussian main-lobe model of a beamformer, `G(δ) = M exp(−β δ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamPatternModel {
    pub beta: f64,
    pub half_power_beamwidth: f64,
    pub antennas: usize,
}

impl BeamPatternModel {
    /// `Δθ₋₃dB = 2/M`, `β = ln 2 / Δθ₋₃dB²`.
    pub fn new(antennas: usize) -> Self {
        let bw = 2.0 / antennas as f64;
        BeamPatternModel {
            beta: LN_2 / (bw * bw),
            half_power_beamwidth: bw,
            antennas,
        }
    }

    pub fn gain(&self, offset: f64) -> f64 {
        self.antennas as f64 * math::exp(-self.beta * offset * offset)
    }
}
