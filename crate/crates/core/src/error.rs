//! Error type shared by every module of the crate.

use num_complex::Complex64;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by construction, numerics and sampling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible matrix/vector dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Input too far from symmetric to be silently symmetrized.
    #[error("matrix is not symmetric: max |M - M^T| = {asymmetry:.3e} exceeds tolerance {tol:.1e}")]
    NotSymmetric { asymmetry: f64, tol: f64 },

    /// Positive semidefiniteness check failed.
    #[error("matrix is not positive semidefinite: smallest eigenvalue {eig_floor:.6e} < -{tol:.1e}")]
    NotPsd { eig_floor: f64, tol: f64 },

    /// A non-finite value (NaN/inf) showed up where finite data is required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Linear operator singular or too ill-conditioned to invert.
    #[error("singular operator: condition estimate {cond:.3e} exceeds the admissible bound")]
    SingularOperator { cond: f64 },

    /// Principal matrix logarithm undefined for this spectrum.
    #[error("matrix logarithm: eigenvalue {eigenvalue} lies on the closed negative real axis")]
    LogBranchCut { eigenvalue: Complex64 },

    /// Operation requires a stable drift (all eigenvalues in the open left half-plane).
    #[error("drift matrix is not stable: spectral margin {margin:.6e} >= 0")]
    UnstableDrift { margin: f64 },

    /// Parameter outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Requested evaluation mode not available for this model.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    QuadratureFailure { achieved: f64, requested: f64 },

    /// Bessel K underflowed to zero in unscaled evaluation.
    #[error("bessel K underflow at z = {z}: value below f64 range, use the scaled variant")]
    BesselUnderflow { z: f64 },

    /// Semigroup probe positivity precondition failed even at the smallest step.
    #[error("semigroup probe: (1,1) entry of the probed image non-positive down to step {step:.3e}")]
    WindowShrinkFailure { step: f64 },

    /// The probed semigroup does not act by congruence.
    #[error("semigroup is not of congruence form: residual {residual:.3e} at t = {t:.3e}")]
    NonRepresentable { residual: f64, t: f64 },

    /// Precondition of the completely-positive factorization failed.
    #[error("matrix is not doubly nonnegative: {0}")]
    NotDoublyNonnegative(String),
}
