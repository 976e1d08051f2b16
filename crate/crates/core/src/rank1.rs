//! Exact rank-1 subspace estimator.
//!
//! One despread snapshot `y` is folded into a Hankel matrix whose column space is
//! spanned by `L`-element steering vectors of the paths. The dominant left singular
//! vectors give the signal subspace; steering vectors orthogonal to its complement
//! mark the AoAs.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::estimator::{
    ChannelEstimate, EstimatorOptions, EstimatorTag, GainMode, PathEstimate, Refinement,
};
use crate::linalg::{self, CMatrix, CVector, C64};
use crate::model::{self, PilotMatrix, ReceivedSignal, SystemConfig};
use crate::{math, Error, Result};

/// Hankel embedding `Ȳ(i, j) = y[i + j]`, `L × (M − L)`.
///
/// Only the source vector is stored; entries are read through the index rule.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelEmbedding {
    source: CVector,
    rows: usize,
    cols: usize,
}

/// Embed `y` with stack length `stack_len`.
pub fn build_hankel(y: &CVector, stack_len: usize) -> Result<HankelEmbedding> {
    let m = y.len();
    if stack_len == 0 || stack_len >= m {
        return Err(Error::StackLength {
            stack_len,
            min: 1,
            max: m.saturating_sub(1),
        });
    }
    Ok(HankelEmbedding {
        source: y.clone(),
        rows: stack_len,
        cols: m - stack_len,
    })
}

impl HankelEmbedding {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn source_len(&self) -> usize {
        self.source.len()
    }

    pub fn source(&self) -> &CVector {
        &self.source
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.source[i + j]
    }

    pub fn to_matrix(&self) -> CMatrix {
        CMatrix::from_fn(self.rows, self.cols, |i, j| self.source[i + j])
    }

    /// `Ȳ(:, cols)`.
    pub fn columns(&self, cols: &[usize]) -> CMatrix {
        CMatrix::from_fn(self.rows, cols.len(), |i, j| self.source[i + cols[j]])
    }

    /// `Ȳ(rows, cols)`.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CMatrix {
        CMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            self.source[rows[i] + cols[j]]
        })
    }
}

/// Dominant left singular vectors of a Hankel embedding.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    /// `L × P`, orthonormal columns.
    pub u: CMatrix,
    /// All singular values of `Ȳ`, descending.
    pub singular_values: Vec<f64>,
}

/// First `paths` left singular vectors of `Ȳ`, each rotated so its largest entry is
/// real and positive.
pub fn signal_subspace(hankel: &HankelEmbedding, paths: usize) -> Result<SubspaceBasis> {
    let max = hankel.rows.min(hankel.cols);
    if paths == 0 || paths > max {
        return Err(Error::InvalidConfig(alloc::format!(
            "P = {paths} outside [1, {max}]"
        )));
    }
    let svd = linalg::left_svd(hankel.to_matrix())?;
    let mut u = svd.u.columns(0, paths).into_owned();
    linalg::canonicalize_columns(&mut u);
    Ok(SubspaceBasis {
        u,
        singular_values: svd.singular_values,
    })
}

/// Count singular values above `tau · σ₁`. A model-order heuristic; estimators take
/// `P` as an input.
pub fn estimate_path_count(singular_values: &[f64], tau: f64) -> usize {
    linalg::numerical_rank(singular_values, tau)
}

/// Angle grid: `n` points uniform over `[−π/2, π/2)`.
pub fn angle_grid(n: usize) -> Vec<f64> {
    let step = PI / n as f64;
    (0..n).map(|i| -FRAC_PI_2 + step * i as f64).collect()
}

/// Pseudo-spectrum sampled on the angle grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSpectrum {
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    /// The two grid ends are neighbors. True when `2 d/λ` is an integer, since the
    /// endfire directions `±π/2` then have identical steering vectors.
    pub circular: bool,
}

impl PseudoSpectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        PI / self.values.len() as f64
    }
}

/// Whether `a(−π/2) = a(π/2)` for spacing `d_over_lambda`.
pub fn endfire_aliased(d_over_lambda: f64) -> bool {
    let twice = 2.0 * d_over_lambda;
    (twice - libm_round(twice)).abs() < 1e-12
}

fn libm_round(x: f64) -> f64 {
    math::ceil(x - 0.5)
}

/// Angles evaluated per pass in [`Projector::denominators`].
pub(crate) const BATCH: usize = 8;

/// Evaluates `g(θ) = U^H a_L(θ)` and its first two θ-derivatives by Horner's rule.
pub(crate) struct Projector {
    /// `conj(U)` stored row-major per column: `coef[p * L + m] = conj(U[m, p])`.
    coef: Vec<C64>,
    len: usize,
    d_over_lambda: f64,
}

impl Projector {
    pub(crate) fn new(u: &CMatrix, d_over_lambda: f64) -> Self {
        let (len, paths) = u.shape();
        let mut coef = Vec::with_capacity(len * paths);
        for p in 0..paths {
            coef.extend(u.column(p).iter().map(|z| z.conj()));
        }
        Projector {
            coef,
            len,
            d_over_lambda,
        }
    }

    /// `L − ‖U^H a_L(θ)‖²` at up to [`BATCH`] angles. The Horner chains of all
    /// angles advance together on split real and imaginary lanes.
    pub(crate) fn denominators(&self, thetas: &[f64], out: &mut [f64]) {
        let n = thetas.len();
        debug_assert!(n <= BATCH && out.len() == n);
        let (mut zr, mut zi) = ([0.0; BATCH], [0.0; BATCH]);
        for (i, &t) in thetas.iter().enumerate() {
            let z = math::cis(2.0 * PI * self.d_over_lambda * math::sin(t));
            zr[i] = z.re;
            zi[i] = z.im;
        }
        let mut energy = [0.0; BATCH];
        for c in self.coef.chunks_exact(self.len) {
            let (mut ar, mut ai) = ([0.0; BATCH], [0.0; BATCH]);
            for cm in c.iter().rev() {
                for k in 0..BATCH {
                    let r = ar[k] * zr[k] - ai[k] * zi[k] + cm.re;
                    ai[k] = ar[k] * zi[k] + ai[k] * zr[k] + cm.im;
                    ar[k] = r;
                }
            }
            for k in 0..BATCH {
                energy[k] += ar[k] * ar[k] + ai[k] * ai[k];
            }
        }
        for (o, e) in out.iter_mut().zip(energy) {
            *o = self.len as f64 - e;
        }
    }

    /// `(D, D', D'')` at `θ`, where `D = L − ‖g‖²`.
    pub(crate) fn denominator_derivs(&self, theta: f64) -> (f64, f64, f64) {
        let (s, c) = (math::sin(theta), math::cos(theta));
        let k = 2.0 * PI * self.d_over_lambda;
        let (dphi, ddphi) = (k * c, -k * s);
        let z = math::cis(k * s);
        let (mut e, mut cross1, mut d1sq, mut cross2) = (0.0, 0.0, 0.0, 0.0);
        for c in self.coef.chunks_exact(self.len) {
            // g = Σ c_m z^m, s1 = Σ m c_m z^m, s2 = Σ m² c_m z^m
            let (mut g, mut s1, mut s2) =
                (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            let mut zm = C64::new(1.0, 0.0);
            for (m, &cm) in c.iter().enumerate() {
                let t = cm * zm;
                let mf = m as f64;
                g += t;
                s1 += t * mf;
                s2 += t * (mf * mf);
                zm *= z;
            }
            let j = C64::new(0.0, 1.0);
            let g1 = j * s1 * dphi;
            let g2 = j * s1 * ddphi - s2 * (dphi * dphi);
            e += g.norm_sqr();
            cross1 += (g.conj() * g1).re;
            d1sq += g1.norm_sqr();
            cross2 += (g.conj() * g2).re;
        }
        (self.len as f64 - e, -2.0 * cross1, -2.0 * (d1sq + cross2))
    }
}

/// `P(θ) = 1 / max(L − ‖U^H a_L(θ)‖², 1e−12·L)` on the `N`-point grid.
pub fn pseudo_spectrum(u: &CMatrix, config: &SystemConfig) -> PseudoSpectrum {
    let thetas = angle_grid(config.grid_size);
    let proj = Projector::new(u, config.d_over_lambda);
    let floor = 1e-12 * u.nrows() as f64;
    let mut values = vec![0.0; thetas.len()];
    for (t, v) in thetas.chunks(BATCH).zip(values.chunks_mut(BATCH)) {
        proj.denominators(t, v);
        for x in v.iter_mut() {
            *x = 1.0 / x.max(floor);
        }
    }
    PseudoSpectrum {
        thetas,
        values,
        circular: endfire_aliased(config.d_over_lambda),
    }
}

/// Peaks picked from a pseudo-spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct AoAEstimate {
    /// Radians in `[−π/2, π/2)`, ordered by decreasing peak value.
    pub thetas: Vec<f64>,
    pub grid_indices: Vec<usize>,
    pub peak_values: Vec<f64>,
    pub refinement: Refinement,
}

/// The `paths` largest strict local maxima. On a non-circular spectrum the endpoints
/// count when they exceed their single neighbor; a circular spectrum compares them
/// with each other. Equal values prefer the smaller index.
///
/// `refinement` other than `None` applies a three-point parabola to the log values;
/// [`polish_aoas`] carries out the Newton stage.
pub fn detect_peaks(
    spectrum: &PseudoSpectrum,
    paths: usize,
    refinement: Refinement,
) -> Result<AoAEstimate> {
    let v = &spectrum.values;
    let n = v.len();
    let wrap = spectrum.circular && n > 2;
    let left_of = |i: usize| {
        if i > 0 {
            Some(i - 1)
        } else if wrap {
            Some(n - 1)
        } else {
            None
        }
    };
    let right_of = |i: usize| {
        if i + 1 < n {
            Some(i + 1)
        } else if wrap {
            Some(0)
        } else {
            None
        }
    };
    let mut maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = left_of(i).is_none_or(|j| v[i] > v[j]);
            let right = right_of(i).is_none_or(|j| v[i] > v[j]);
            left && right && n > 1
        })
        .collect();
    if maxima.len() < paths {
        return Err(Error::PeakDeficit {
            found: maxima.len(),
            needed: paths,
        });
    }
    maxima.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    maxima.truncate(paths);

    let step = spectrum.step();
    let thetas = maxima
        .iter()
        .map(|&i| {
            let base = spectrum.thetas[i];
            let (Some(li), Some(ri)) = (left_of(i), right_of(i)) else {
                return base;
            };
            if refinement == Refinement::None {
                return base;
            }
            let (l, c, r) = (math::ln(v[li]), math::ln(v[i]), math::ln(v[ri]));
            let curv = l - 2.0 * c + r;
            let offset = if curv < 0.0 {
                (0.5 * (l - r) / curv).clamp(-0.5, 0.5)
            } else {
                0.0
            };
            wrap_angle(base + offset * step)
        })
        .collect();
    let peak_values = maxima.iter().map(|&i| v[i]).collect();
    Ok(AoAEstimate {
        thetas,
        grid_indices: maxima,
        peak_values,
        refinement,
    })
}

/// Clamp into `[−π/2, π/2)`.
fn wrap_angle(theta: f64) -> f64 {
    theta.clamp(-FRAC_PI_2, FRAC_PI_2 - 1e-15)
}

/// Newton search for the minimum of the continuous denominator `L − ‖U^H a_L(θ)‖²`
/// within one grid cell of each detected peak. Falls back to bisection on the
/// derivative whenever a Newton step leaves the bracket; peaks whose bracket does not
/// contain a sign change of the derivative are left as they are.
pub fn polish_aoas(u: &CMatrix, aoas: &mut AoAEstimate, config: &SystemConfig) {
    let proj = Projector::new(u, config.d_over_lambda);
    let step = config.grid_step();
    for (theta, &idx) in aoas.thetas.iter_mut().zip(&aoas.grid_indices) {
        let center = -FRAC_PI_2 + step * idx as f64;
        if let Some(t) = newton_minimum(&proj, center - step, center + step, *theta) {
            *theta = wrap_angle(t);
        }
    }
    aoas.refinement = Refinement::Newton;
}

fn newton_minimum(proj: &Projector, lo: f64, hi: f64, start: f64) -> Option<f64> {
    let (_, dlo, _) = proj.denominator_derivs(lo);
    let (_, dhi, _) = proj.denominator_derivs(hi);
    if !(dlo < 0.0 && dhi > 0.0) {
        return None;
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut x = start.clamp(lo, hi);
    for _ in 0..50 {
        let (_, d1, d2) = proj.denominator_derivs(x);
        if d1 == 0.0 {
            return Some(x);
        }
        if d1 < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = if d2 > 0.0 { x - d1 / d2 } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || hi - lo <= 1e-15 {
            return Some(next);
        }
        x = next;
    }
    Some(x)
}

/// Iteration cap for [`ml_refine`] inside the estimators.
pub const ML_MAX_ITER: usize = 20;

/// Gauss-Newton refinement of AoAs and gains on the single-snapshot likelihood
/// `‖y − A(θ) α‖²`, started from `thetas`. Steps are accepted only when they lower the
/// residual, so the result is never worse than the start in that metric. Returns the
/// refined angles and the least-squares gains at those angles.
pub fn ml_refine(
    y: &CVector,
    thetas: &[f64],
    d_over_lambda: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Vec<C64>)> {
    let m = y.len();
    let p = thetas.len();
    let k = 2.0 * PI * d_over_lambda;
    let mut theta = thetas.to_vec();
    let mut alpha = joint_ls_gains(y, &theta, d_over_lambda)?;
    let residual = |t: &[f64], a: &[C64]| {
        let h = reconstruct(t, a, m, d_over_lambda).expect("equal lengths");
        (y - h).norm_squared()
    };
    let mut cost = residual(&theta, &alpha);
    for _ in 0..max_iter {
        // Real Jacobian of r = y − A α over (Re α, Im α, θ), stacked as [Re r; Im r].
        let mut jac = nalgebra::DMatrix::<f64>::zeros(2 * m, 3 * p);
        let mut r = nalgebra::DVector::<f64>::zeros(2 * m);
        let a = model::steering_matrix(&theta, m, d_over_lambda);
        let fit = &a * CVector::from_column_slice(&alpha);
        for i in 0..m {
            let e = y[i] - fit[i];
            r[i] = e.re;
            r[m + i] = e.im;
        }
        for q in 0..p {
            let dphi = k * math::cos(theta[q]);
            for i in 0..m {
                let z = a[(i, q)];
                // ∂r/∂Re α = −a, ∂r/∂Im α = −j a, ∂r/∂θ = −α j i φ' a.
                jac[(i, q)] = -z.re;
                jac[(m + i, q)] = -z.im;
                jac[(i, p + q)] = z.im;
                jac[(m + i, p + q)] = -z.re;
                let d = -(alpha[q] * z * C64::new(0.0, i as f64 * dphi));
                jac[(i, 2 * p + q)] = d.re;
                jac[(m + i, 2 * p + q)] = d.im;
            }
        }
        let step = match nalgebra::SVD::try_new(jac, true, true, linalg::SVD_EPS, linalg::MAX_ITER)
        {
            Some(svd) => match svd.solve(&r, 1e-12) {
                Ok(x) => x,
                Err(_) => break,
            },
            None => break,
        };
        let mut improved = false;
        let mut scale = 1.0;
        for _ in 0..8 {
            let t_new: Vec<f64> = (0..p).map(|q| theta[q] - scale * step[2 * p + q]).collect();
            if t_new.iter().any(|t| !(-FRAC_PI_2..FRAC_PI_2).contains(t)) {
                scale *= 0.5;
                continue;
            }
            let a_new = joint_ls_gains(y, &t_new, d_over_lambda)?;
            let c_new = residual(&t_new, &a_new);
            if c_new < cost {
                let rel = (cost - c_new) / cost.max(f64::MIN_POSITIVE);
                theta = t_new;
                alpha = a_new;
                cost = c_new;
                improved = rel > 1e-12;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok((theta, alpha))
}

/// Post-reception beamforming `α̂_p = a_M^H(θ̂_p) y / M`.
pub fn beamform_gains(y: &CVector, thetas: &[f64], d_over_lambda: f64) -> Vec<C64> {
    let m = y.len();
    thetas
        .iter()
        .map(|&t| model::steering_vector(t, m, d_over_lambda).dotc(y) / m as f64)
        .collect()
}

/// Least-squares gains `α̂ = A(θ̂)^† y`.
pub fn joint_ls_gains(y: &CVector, thetas: &[f64], d_over_lambda: f64) -> Result<Vec<C64>> {
    let a = model::steering_matrix(thetas, y.len(), d_over_lambda);
    let pinv = linalg::pinv(&a, 1e-12)?;
    Ok((pinv * y).iter().copied().collect())
}

/// `ĥ = Σ_p α̂_p a_M(θ̂_p)`.
pub fn reconstruct(
    thetas: &[f64],
    gains: &[C64],
    antennas: usize,
    d_over_lambda: f64,
) -> Result<CVector> {
    if thetas.len() != gains.len() {
        return Err(Error::Dimension {
            expected: thetas.len(),
            got: gains.len(),
        });
    }
    let paths = model::UserPaths {
        thetas: thetas.to_vec(),
        gains: gains.to_vec(),
    };
    Ok(paths.channel(antennas, d_over_lambda))
}

/// Gains for `thetas` under the configured read-out.
pub fn estimate_gains(
    y: &CVector,
    thetas: &[f64],
    config: &SystemConfig,
    mode: GainMode,
) -> Result<Vec<C64>> {
    match mode {
        GainMode::Beamforming => Ok(beamform_gains(y, thetas, config.d_over_lambda)),
        GainMode::JointLeastSquares => joint_ls_gains(y, thetas, config.d_over_lambda),
    }
}

/// AoAs from a signal-subspace basis: spectrum, peak search, optional polish.
pub fn aoas_from_subspace(
    u: &CMatrix,
    config: &SystemConfig,
    refinement: Refinement,
) -> Result<AoAEstimate> {
    let spectrum = pseudo_spectrum(u, config);
    let mut aoas = detect_peaks(&spectrum, config.paths, refinement)?;
    if matches!(refinement, Refinement::Newton | Refinement::MaxLikelihood) {
        polish_aoas(u, &mut aoas, config);
    }
    Ok(aoas)
}

/// Shared back half of the exact and fast estimators.
pub(crate) fn finish_from_subspace(
    y: &CVector,
    u: &CMatrix,
    config: &SystemConfig,
    opts: &EstimatorOptions,
) -> Result<(PathEstimate, CVector)> {
    let mut thetas = aoas_from_subspace(u, config, opts.refinement)?.thetas;
    if opts.refinement == Refinement::MaxLikelihood {
        thetas = ml_refine(y, &thetas, config.d_over_lambda, ML_MAX_ITER)?.0;
    }
    let gains = estimate_gains(y, &thetas, config, opts.gain_mode)?;
    let h = reconstruct(&thetas, &gains, y.len(), config.d_over_lambda)?;
    Ok((PathEstimate { thetas, gains }, h))
}

/// Single-user estimate from one despread snapshot.
pub fn estimate_single_user(
    y: &CVector,
    config: &SystemConfig,
    opts: &EstimatorOptions,
) -> Result<(PathEstimate, CVector)> {
    if y.len() != config.antennas {
        return Err(Error::Dimension {
            expected: config.antennas,
            got: y.len(),
        });
    }
    let hankel = build_hankel(y, config.stack_len)?;
    let basis = signal_subspace(&hankel, config.paths)?;
    finish_from_subspace(y, &basis.u, config, opts)
}

/// Despread every user and run `per_user` on each snapshot. Failures are recorded
/// per user with a zero column.
pub(crate) fn per_user_loop<F>(
    tag: EstimatorTag,
    received: &ReceivedSignal,
    pilots: &PilotMatrix,
    config: &SystemConfig,
    mut per_user: F,
) -> Result<ChannelEstimate>
where
    F: FnMut(usize, &CVector) -> Result<(PathEstimate, CVector)>,
{
    let k_users = pilots.x.ncols();
    if received.y.nrows() != config.antennas {
        return Err(Error::Dimension {
            expected: config.antennas,
            got: received.y.nrows(),
        });
    }
    let mut h = CMatrix::zeros(config.antennas, k_users);
    let mut paths = vec![None; k_users];
    let mut failures = Vec::new();
    for k in 0..k_users {
        let y = model::despread(received, &pilots.column(k))?;
        match per_user(k, &y) {
            Ok((est, col)) => {
                h.set_column(k, &col);
                paths[k] = Some(est);
            }
            Err(e) => failures.push((k, e)),
        }
    }
    Ok(ChannelEstimate {
        tag,
        h,
        paths,
        failures,
    })
}

/// Estimate every user's channel by despreading and running the single-user estimator.
pub fn estimate_multi_user(
    received: &ReceivedSignal,
    pilots: &PilotMatrix,
    config: &SystemConfig,
    opts: &EstimatorOptions,
) -> Result<ChannelEstimate> {
    config.validate()?;
    per_user_loop(EstimatorTag::Rank1, received, pilots, config, |_, y| {
        estimate_single_user(y, config, opts)
    })
}

/// `f(L) = (1/L) √(2/π) (2/π − 4/L)^{−1/2}`, defined for `L > 2π`.
pub fn minimal_gap_threshold(stack_len: usize) -> Result<f64> {
    let l = stack_len as f64;
    let inner = 2.0 / PI - 4.0 / l;
    if inner <= 0.0 {
        return Err(Error::GapThresholdDomain(stack_len));
    }
    Ok(math::sqrt(2.0 / PI) / (l * math::sqrt(inner)))
}
