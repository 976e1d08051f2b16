//! Shared estimator vocabulary: tags, options and the channel-estimate record.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::linalg::{CMatrix, C64};
use crate::Error;

/// Which estimator produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EstimatorTag {
    Rank1,
    Rank1Fast,
    Ls,
    Mmse,
    Fft,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 5] = [
        EstimatorTag::Rank1,
        EstimatorTag::Rank1Fast,
        EstimatorTag::Ls,
        EstimatorTag::Mmse,
        EstimatorTag::Fft,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorTag::Rank1 => "rank1",
            EstimatorTag::Rank1Fast => "rank1_fast",
            EstimatorTag::Ls => "ls",
            EstimatorTag::Mmse => "mmse",
            EstimatorTag::Fft => "fft",
        }
    }

    /// Whether the estimator produces AoA estimates.
    pub fn is_angular(&self) -> bool {
        matches!(
            self,
            EstimatorTag::Rank1 | EstimatorTag::Rank1Fast | EstimatorTag::Fft
        )
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        EstimatorTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or(Error::OutOfRange("estimator tag"))
    }
}

/// How path gains are read out once the AoAs are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GainMode {
    /// Per-path matched filter `a^H(θ̂) y / M`.
    Beamforming,
    /// Joint least squares `A(θ̂)^† y`, which removes cross-path leakage at finite `M`.
    #[default]
    JointLeastSquares,
}

/// Sub-grid AoA refinement applied after the grid peak search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Refinement {
    /// Grid angles as found.
    None,
    /// Three-point parabola through the log spectrum.
    Parabolic,
    /// Parabola, then a safeguarded Newton search for the minimum of the
    /// continuous spectrum denominator within one grid cell.
    Newton,
    /// Newton, then Gauss-Newton on the snapshot likelihood `‖y − A(θ) α‖²`.
    #[default]
    MaxLikelihood,
}

/// Nyström weight used by the fast path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NystromWeight {
    /// `pinv(Ȳ(I, I))` restricted to the `P` dominant singular directions.
    #[default]
    RankRestricted,
    /// `pinv(Ȳ(I, I))` with only the relative cutoff applied.
    Sketched,
    /// `C^† Ȳ (C^†)^T` (or `^H` for the Hermitian core), which needs the full Hankel
    /// matrix. Diagnostic only.
    Exact,
}

/// How the Nyström core is formed and decomposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NystromCore {
    /// `Ȳ ≈ C W C^T`, core decomposed by SVD. Suits the complex-symmetric Hankel.
    #[default]
    Transpose,
    /// `Ȳ ≈ C W C^H`, Hermitian part of the core decomposed by eigenvalues.
    Hermitian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EstimatorOptions {
    pub gain_mode: GainMode,
    pub refinement: Refinement,
    /// Fast-path sampling length; `None` means `⌈1.5 P⌉`.
    pub sampling_len: Option<usize>,
    pub nystrom_weight: NystromWeight,
    pub nystrom_core: NystromCore,
    /// Relative singular-value cutoff for the Nyström pseudo-inverse.
    pub pinv_rtol: f64,
}

impl EstimatorOptions {
    /// Per-path beamformed gains and parabolic peak interpolation, without the
    /// likelihood refinement.
    pub fn beamforming() -> Self {
        EstimatorOptions {
            gain_mode: GainMode::Beamforming,
            refinement: Refinement::Parabolic,
            ..Self::default()
        }
    }
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            gain_mode: GainMode::default(),
            refinement: Refinement::default(),
            sampling_len: None,
            nystrom_weight: NystromWeight::default(),
            nystrom_core: NystromCore::default(),
            pinv_rtol: 1e-10,
        }
    }
}

/// AoAs and gains of one user's estimated paths, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEstimate {
    /// Radians, ordered by decreasing spectrum value.
    pub thetas: Vec<f64>,
    pub gains: Vec<C64>,
}

/// Estimated `M × K` channel.
///
/// A user whose estimate failed keeps a zero column, is listed in `failures`,
/// and has `None` in `paths`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub tag: EstimatorTag,
    pub h: CMatrix,
    /// Per-user path parameters; empty for non-angular estimators.
    pub paths: Vec<Option<PathEstimate>>,
    pub failures: Vec<(usize, Error)>,
}

impl ChannelEstimate {
    pub fn linear(tag: EstimatorTag, h: CMatrix) -> Self {
        ChannelEstimate {
            tag,
            h,
            paths: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}
