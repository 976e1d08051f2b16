//! Nyström-accelerated subspace extraction for the square Hankel embedding.
//!
//! Only `s` sampled columns of `Ȳ` and the matching `s × s` principal block are
//! touched, so the subspace costs `O(L s²)` instead of `O(L³)`.

use alloc::vec::Vec;

use rand::Rng;

use crate::estimator::{
    ChannelEstimate, EstimatorOptions, EstimatorTag, NystromCore, NystromWeight, PathEstimate,
};
use crate::linalg::{self, CMatrix, CVector, C64};
use crate::model::{PilotMatrix, ReceivedSignal, SystemConfig};
use crate::rank1::{self, HankelEmbedding, PseudoSpectrum};
use crate::{math, Error, Result};

/// Sampled columns `C = Ȳ(:, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSketch {
    pub c: CMatrix,
    /// Sorted, distinct.
    pub indices: Vec<usize>,
    /// Sampling-matrix scale `√(L/s)`. It cancels in the Nyström product.
    pub scale: f64,
}

/// Nyström weight `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub w: CMatrix,
    pub pinv_rtol: f64,
    /// Rank the pseudo-inverse was restricted to, if any.
    pub rank: Option<usize>,
}

/// Approximate signal subspace from the compressed core.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxSubspace {
    /// `L × P`, orthonormal columns.
    pub u: CMatrix,
    /// Spectrum of the core for the kept directions: singular values for the
    /// transpose form, eigenvalues by decreasing modulus for the Hermitian form.
    pub core_values: Vec<f64>,
    /// `‖B − B^H‖_F / ‖B‖_F` of the core before any symmetrization.
    pub hermiticity_defect: f64,
}

fn check_square(hankel: &HankelEmbedding) -> Result<()> {
    if !hankel.is_square() {
        return Err(Error::NonSquareHankel {
            rows: hankel.rows(),
            cols: hankel.cols(),
        });
    }
    Ok(())
}

/// Draw `s` distinct column indices uniformly and gather those columns.
pub fn sample_columns<R: Rng + ?Sized>(
    hankel: &HankelEmbedding,
    s: usize,
    rng: &mut R,
) -> Result<ColumnSketch> {
    check_square(hankel)?;
    let l = hankel.rows();
    if s == 0 || s > l {
        return Err(Error::SamplingLength { s, max: l });
    }
    let mut indices = rand::seq::index::sample(rng, l, s).into_vec();
    indices.sort_unstable();
    let c = hankel.columns(&indices);
    Ok(ColumnSketch {
        c,
        indices,
        scale: math::sqrt(l as f64 / s as f64),
    })
}

/// `W = pinv(Ȳ(I, I))` with relative cutoff `rtol`.
///
/// With `rank = Some(r)` only the `r` largest singular values of `Ȳ(I, I)` are
/// inverted. Without that restriction the noise singular values of a noisy block
/// are inverted too, and their large reciprocals then dominate the core.
pub fn nystrom_weight(
    hankel: &HankelEmbedding,
    indices: &[usize],
    rtol: f64,
    rank: Option<usize>,
) -> Result<WeightMatrix> {
    let core = hankel.submatrix(indices, indices);
    let w = match rank {
        Some(r) => linalg::pinv_rank(&core, rtol, r)?,
        None => linalg::pinv(&core, rtol)?,
    };
    Ok(WeightMatrix {
        w,
        pinv_rtol: rtol,
        rank,
    })
}

/// The weight that makes the Nyström form reproduce `Ȳ` projected onto `span(C)`:
/// `W = C^† Ȳ (C^†)^T` for [`NystromCore::Transpose`], `C^† Ȳ (C^†)^H` for
/// [`NystromCore::Hermitian`]. Needs the full Hankel matrix, so it is a diagnostic only.
pub fn exact_weight(
    hankel: &HankelEmbedding,
    sketch: &ColumnSketch,
    rtol: f64,
    core_form: NystromCore,
) -> Result<WeightMatrix> {
    let cp = linalg::pinv(&sketch.c, rtol)?;
    let right = match core_form {
        NystromCore::Transpose => cp.transpose(),
        NystromCore::Hermitian => cp.adjoint(),
    };
    let w = &cp * hankel.to_matrix() * right;
    Ok(WeightMatrix {
        w,
        pinv_rtol: rtol,
        rank: None,
    })
}

/// Rank-`P` subspace from `C = U_c Σ_c V_c^H` and a compressed core.
///
/// [`NystromCore::Transpose`] uses the symmetric Nyström form `Ȳ ≈ C W C^T`, which
/// matches a complex-symmetric Hankel matrix: the core `Σ_c V_c^H W conj(V_c) Σ_c`
/// is decomposed by SVD and its `P` leading left singular vectors are lifted by
/// `U_c`. [`NystromCore::Hermitian`] uses `Ȳ ≈ C W C^H`: the core
/// `Σ_c V_c^H W V_c Σ_c` is replaced by its Hermitian part and the `P`
/// eigenvectors with the largest `|λ|` are lifted. Either way the lifted basis is
/// re-orthonormalized.
pub fn approx_subspace(
    sketch: &ColumnSketch,
    weight: &WeightMatrix,
    paths: usize,
    core_form: NystromCore,
) -> Result<ApproxSubspace> {
    let s = sketch.c.ncols();
    if paths == 0 || paths > s {
        return Err(Error::RankDeficit {
            achieved: s,
            requested: paths,
        });
    }
    let (uc, sc, vc) = linalg::thin_svd(sketch.c.clone())?;
    let rank = linalg::numerical_rank(&sc, 1e-10);
    if rank < paths {
        return Err(Error::RankDeficit {
            achieved: rank,
            requested: paths,
        });
    }
    // Directions of C below the rank tolerance are roundoff; the weight would amplify them.
    let n = rank;
    let uc = uc.columns(0, n).into_owned();
    let sigma = CMatrix::from_diagonal(&CVector::from_iterator(
        n,
        sc[..n].iter().map(|&x| C64::new(x, 0.0)),
    ));
    let vs = vc.columns(0, n) * &sigma;
    let (ub, core_values, hermiticity_defect) = match core_form {
        NystromCore::Transpose => {
            let b = vs.adjoint() * &weight.w * vs.conjugate();
            let defect = linalg::hermiticity_defect(&b);
            let svd = linalg::left_svd(b)?;
            (
                svd.u.columns(0, paths).into_owned(),
                svd.singular_values[..paths].to_vec(),
                defect,
            )
        }
        NystromCore::Hermitian => {
            let b = vs.adjoint() * &weight.w * &vs;
            let defect = linalg::hermiticity_defect(&b);
            let (vals, vecs) = linalg::hermitian_eigen(linalg::hermitian_part(&b))?;
            let mut order: Vec<usize> = (0..vals.len()).collect();
            order.sort_by(|&i, &j| vals[j].abs().total_cmp(&vals[i].abs()).then(i.cmp(&j)));
            order.truncate(paths);
            let mut ub = CMatrix::zeros(n, paths);
            for (col, &i) in order.iter().enumerate() {
                ub.set_column(col, &vecs.column(i));
            }
            (ub, order.iter().map(|&i| vals[i]).collect(), defect)
        }
    };
    let mut u = linalg::orthonormalize(&uc * ub);
    linalg::canonicalize_columns(&mut u);
    Ok(ApproxSubspace {
        u,
        core_values,
        hermiticity_defect,
    })
}

/// Default sampling length `⌈1.5 P⌉`.
pub fn default_sampling_len(paths: usize) -> usize {
    (3 * paths).div_ceil(2)
}

/// Sketch, weight and subspace in one call.
pub fn sketch_subspace<R: Rng + ?Sized>(
    hankel: &HankelEmbedding,
    paths: usize,
    s: usize,
    opts: &EstimatorOptions,
    rng: &mut R,
) -> Result<ApproxSubspace> {
    let sketch = sample_columns(hankel, s, rng)?;
    let weight = match opts.nystrom_weight {
        NystromWeight::RankRestricted => {
            nystrom_weight(hankel, &sketch.indices, opts.pinv_rtol, Some(paths))?
        }
        NystromWeight::Sketched => nystrom_weight(hankel, &sketch.indices, opts.pinv_rtol, None)?,
        NystromWeight::Exact => exact_weight(hankel, &sketch, opts.pinv_rtol, opts.nystrom_core)?,
    };
    approx_subspace(&sketch, &weight, paths, opts.nystrom_core)
}

/// Coherence `μ = (L/P) max_i ‖U(i, :)‖²` of an orthonormal basis.
pub fn coherence(u: &CMatrix) -> Result<f64> {
    let dev = linalg::gram_deviation(u);
    if dev > 1e-6 {
        return Err(Error::NotOrthonormal(dev));
    }
    let (l, p) = u.shape();
    let max_row = u.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);
    Ok(l as f64 / p as f64 * max_row)
}

/// `⌈4.5 P log₂(P/δ) μ⌉`.
pub fn required_sampling_length(paths: usize, delta: f64, mu: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Probability(delta));
    }
    if !(mu >= 1.0 - 1e-9 && mu.is_finite()) {
        return Err(Error::OutOfRange("coherence"));
    }
    let p = paths as f64;
    Ok(math::ceil(4.5 * p * math::log2(p / delta) * mu - 1e-9) as usize)
}

/// Pointwise truth of `√P(θ) ≤ (1 + (L/√s) σ_{P+1}/σ_P) √P̃(θ)`.
pub fn spectrum_bound_holds(
    exact: &PseudoSpectrum,
    approx: &PseudoSpectrum,
    stack_len: usize,
    s: usize,
    sigma_p: f64,
    sigma_p1: f64,
) -> Result<Vec<bool>> {
    if exact.thetas != approx.thetas {
        return Err(Error::GridMismatch);
    }
    let factor = 1.0 + stack_len as f64 / math::sqrt(s as f64) * (sigma_p1 / sigma_p);
    Ok(exact
        .values
        .iter()
        .zip(&approx.values)
        .map(|(&e, &a)| math::sqrt(e) <= factor * math::sqrt(a) * (1.0 + 1e-9))
        .collect())
}

/// Fast single-user estimate: Nyström subspace, then the exact estimator's back half.
pub fn estimate_fast<R: Rng + ?Sized>(
    y: &CVector,
    config: &SystemConfig,
    opts: &EstimatorOptions,
    rng: &mut R,
) -> Result<(PathEstimate, CVector)> {
    if y.len() != config.antennas {
        return Err(Error::Dimension {
            expected: config.antennas,
            got: y.len(),
        });
    }
    let hankel = rank1::build_hankel(y, config.stack_len)?;
    let s = opts
        .sampling_len
        .unwrap_or_else(|| default_sampling_len(config.paths));
    let sub = sketch_subspace(&hankel, config.paths, s, opts, rng)?;
    rank1::finish_from_subspace(y, &sub.u, config, opts)
}

/// Fast estimator for every user. Users consume `rng` in index order.
pub fn estimate_multi_user_fast<R: Rng + ?Sized>(
    received: &ReceivedSignal,
    pilots: &PilotMatrix,
    config: &SystemConfig,
    opts: &EstimatorOptions,
    rng: &mut R,
) -> Result<ChannelEstimate> {
    config.validate()?;
    rank1::per_user_loop(EstimatorTag::Rank1Fast, received, pilots, config, |_, y| {
        estimate_fast(y, config, opts, rng)
    })
}
