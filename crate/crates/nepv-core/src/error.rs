use alloc::string::String;

/// Errors raised by the NEPv kernels, solvers and rate analysis.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NepvError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("columns are not orthonormal (drift {drift:e})")]
    NotOrthonormal { drift: f64 },

    #[error("psi(X) = {value} must be nonnegative")]
    NonPositivePsi { value: f64 },

    #[error("H(X) vanishes, the normalized residual is undefined")]
    DegenerateProblem,

    /// `X^T D` lost rank: `X` is outside the domain of the aligned NEPv.
    #[error("rank-preserving condition violated: sigma_min(X^T D1) = {sigma_min:e}, sigma_max = {sigma_max:e}")]
    RankPreservingViolation { sigma_min: f64, sigma_max: f64 },

    #[error("derivative callback `{0}` is not provided by this problem")]
    MissingDerivative(&'static str),

    #[error("eigenvalue gap lambda_k - lambda_(k+1) = {gap:e} is not positive")]
    GapNotPositive { gap: f64 },

    #[error("solution does not span the top-k eigenspace of G (sin theta = {sin_theta:e}); consider a level shift")]
    Mispositioned { sin_theta: f64 },

    #[error("solution is not converged enough to certify (nres = {nres:e}, required {tol:e})")]
    NotConverged { nres: f64, tol: f64 },

    #[error("shifted scaling is singular: denominator {denominator:e}")]
    SingularScaling { denominator: f64 },

    #[error("operator dimension {dim} exceeds the dense cap {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("operator failed the linearity probe (deviation {deviation:e})")]
    NotLinear { deviation: f64 },

    #[error("eigenvalue iteration failed: {0}")]
    EigenFailure(String),

    #[error("convergence rate undefined: {0}")]
    UndefinedRate(String),
}

pub type Result<T> = core::result::Result<T, NepvError>;
