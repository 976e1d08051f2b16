use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("stack length {stack_len} outside [{min}, {max}]")]
    StackLength {
        stack_len: usize,
        min: usize,
        max: usize,
    },

    #[error("gap threshold undefined for stack length {0} (needs L > 2π)")]
    GapThresholdDomain(usize),

    #[error("could not draw AoAs with minimum gap {threshold:.4e} rad after {attempts} attempts")]
    InfeasibleGap { threshold: f64, attempts: usize },

    #[error("pseudo-spectrum has {found} local maxima but {needed} paths were requested")]
    PeakDeficit { found: usize, needed: usize },

    #[error("numerical rank {achieved} is below the requested subspace dimension {requested}")]
    RankDeficit { achieved: usize, requested: usize },

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("eigendecomposition did not converge")]
    EigenFailure,

    #[error("pilot matrix does not have full column rank")]
    RankDeficientPilots,

    #[error("orthonormal pilots need B >= K (B = {pilot_len}, K = {users})")]
    TooFewPilots { pilot_len: usize, users: usize },

    #[error("probability {0} outside (0, 1)")]
    Probability(f64),

    #[error("coherence needs orthonormal columns (Gram deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("sampling length {s} outside [1, {max}]")]
    SamplingLength { s: usize, max: usize },

    #[error("Nyström sketch needs a square Hankel matrix, got {rows}x{cols}")]
    NonSquareHankel { rows: usize, cols: usize },

    #[error("covariance needs at least {min} samples, got {got}")]
    InsufficientSamples { got: usize, min: usize },

    #[error("MMSE inner matrix is singular")]
    SingularInnerMatrix,

    #[error("pseudo-spectra are sampled on different grids")]
    GridMismatch,

    #[error("reference channel has zero norm")]
    ZeroNorm,

    #[error("{0} out of range")]
    OutOfRange(&'static str),
}
