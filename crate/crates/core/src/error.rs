use thiserror::Error;

/// Every failure the toolkit can report.
///
/// Variants are grouped by the subsystem that raises them. The FFI layer
/// maps each variant to a stable integer through [`Error::code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // algebra construction
    #[error("basis is not closed under the bracket (residual {residual:.3e})")]
    NotClosed { residual: f64 },
    #[error("basis matrices are linearly dependent")]
    DependentBasis,
    #[error("Killing form is degenerate (sigma_min/sigma_max = {ratio:.3e})")]
    Degenerate { ratio: f64 },
    #[error("Killing form is negative definite: algebra is of compact type")]
    CompactType,
    #[error("elements belong to different algebras")]
    MixedAlgebras,
    #[error("invalid algebra family: {0}")]
    InvalidFamily(String),

    // Cartan / Iwasawa
    #[error("X -> -X^T is not an automorphism of the algebra (residual {residual:.3e})")]
    ThetaNotAutomorphism { residual: f64 },
    #[error("-B(X, theta Y) is not positive definite (min eigenvalue {min_eig:.3e})")]
    BThetaNotPositive { min_eig: f64 },
    #[error("seed is not an element of p (residual {residual:.3e})")]
    SeedNotInP { residual: f64 },
    #[error("seed does not have unit Killing norm (norm {norm:.6})")]
    SeedNotUnit { norm: f64 },
    #[error("could not extend the abelian subspace to a maximal one")]
    SeedNotExtendable,
    #[error("generic element could not separate the restricted roots after {attempts} attempts")]
    GenericityFailure { attempts: usize },
    #[error("positive root {index} has no non-negative integer expansion in simple roots")]
    NotDecomposable { index: usize },
    #[error("H1 does not have unit g0-norm (norm {norm:.6})")]
    H1NotUnit { norm: f64 },
    #[error("H1 does not lie in a (residual {residual:.3e})")]
    H1NotInA { residual: f64 },

    // geometry on S
    #[error("element has a component outside a + n (residual {residual:.3e})")]
    NotInS { residual: f64 },
    #[error("nilpotency step {step} exceeds the supported cap {cap}")]
    NilpotencyOverflow { step: u32, cap: u32 },
    #[error("field is not differentiable at the requested point")]
    NonDifferentiable,
    #[error("flow left the chart domain")]
    FlowEscape,
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    // quadrature
    #[error("integrand has mass on the box boundary (max |F| = {boundary:.3e})")]
    BoundaryMass { boundary: f64 },
    #[error("grid specification is invalid: {0}")]
    InvalidGrid(String),

    // splitting
    #[error("exponent p = {p} must exceed the dimension {dim}")]
    BadExponent { p: f64, dim: usize },
    #[error("function support leaks outside the working box")]
    SupportLeak,

    // verification
    #[error("first frame component does not decay at the box boundary (|f1| = {value:.3e})")]
    NoDecay { value: f64 },
    #[error("denominator vanishes")]
    ZeroDenominator,
    #[error("field is not divergence free (residual {residual:.3e})")]
    NotDivFree { residual: f64 },
    #[error("no direction in a with rho(H) > 0")]
    NoPositiveRho,

    // configuration
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable integer code used across the C ABI. Zero is reserved for success.
    pub fn code(&self) -> i32 {
        match self {
            Error::NotClosed { .. } => 1,
            Error::DependentBasis => 2,
            Error::Degenerate { .. } => 3,
            Error::CompactType => 4,
            Error::MixedAlgebras => 5,
            Error::InvalidFamily(_) => 6,
            Error::ThetaNotAutomorphism { .. } => 10,
            Error::BThetaNotPositive { .. } => 11,
            Error::SeedNotInP { .. } => 12,
            Error::SeedNotUnit { .. } => 13,
            Error::SeedNotExtendable => 14,
            Error::GenericityFailure { .. } => 15,
            Error::NotDecomposable { .. } => 16,
            Error::H1NotUnit { .. } => 17,
            Error::H1NotInA { .. } => 18,
            Error::NotInS { .. } => 20,
            Error::NilpotencyOverflow { .. } => 21,
            Error::NonDifferentiable => 22,
            Error::FlowEscape => 23,
            Error::IndexOutOfRange { .. } => 24,
            Error::BoundaryMass { .. } => 30,
            Error::InvalidGrid(_) => 31,
            Error::BadExponent { .. } => 40,
            Error::SupportLeak => 41,
            Error::NoDecay { .. } => 50,
            Error::ZeroDenominator => 51,
            Error::NotDivFree { .. } => 52,
            Error::NoPositiveRho => 53,
            Error::Config(_) => 60,
            Error::Io(_) => 61,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
