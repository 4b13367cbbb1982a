use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

/// Broad classes of failure, used by callers that map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or inconsistent input.
    Input,
    /// A numerical method did not deliver its contract.
    Solver,
    /// A hypothesis of the underlying theory is violated by the data.
    Hypothesis,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("mesh: grid needs at least 9 nodes per side, got {0}")]
    GridTooSmall(usize),
    #[error("{module}: fields live on different grids")]
    GridMismatch { module: &'static str },
    #[error("{module}: expected {expected} values, got {got}")]
    LengthMismatch {
        module: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{module}: non-finite value encountered")]
    NonFinite { module: &'static str },
    #[error("{module}: invalid input: {reason}")]
    InvalidInput {
        module: &'static str,
        reason: String,
    },
    #[error("sparse: operator is numerically singular (near-null dimension {near_null})")]
    Singular { near_null: usize },
    #[error("sparse: residual {residual:e} exceeds the solve contract bound {bound:e}")]
    ResidualContract { residual: f64, bound: f64 },
    #[error("sparse: eigen iteration did not converge after {iterations} steps (residual {residual:e})")]
    EigenNonConvergence { iterations: usize, residual: f64 },
    #[error("schrodinger: potential is resonant (kernel dimension {dimension}); use the kernel-aware solve")]
    ResonantPotential { dimension: usize },
    #[error("nonlinearity: derivative order {0} exceeds the supported maximum of 6")]
    OrderTooHigh(usize),
    #[error("nonlinearity: gauge shift has non-vanishing Cauchy data ({defect:e})")]
    GaugeCauchyData { defect: f64 },
    #[error("solution_map: Newton stalled after {iterations} iterations (residual {residual:e})")]
    NewtonNonConvergence { iterations: usize, residual: f64 },
    #[error("solution_map: singular Jacobian at Newton iterate {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("{module}: fixed-point iteration contracts at rate {rate:.3}; shrink the input")]
    DeltaTooLarge { module: &'static str, rate: f64 },
    #[error("{module}: fixed-point iteration did not converge (last update {update:e})")]
    FixedPointNonConvergence { module: &'static str, update: f64 },
    #[error("{module}: input does not solve the {equation} equation (residual {residual:e})")]
    NotASolution {
        module: &'static str,
        equation: &'static str,
        residual: f64,
    },
    #[error("solution_map: step {0:e} is below the round-off floor")]
    StepTooSmall(f64),
    #[error("{module}: postcondition failed: {what} ({value:e})")]
    Postcondition {
        module: &'static str,
        what: &'static str,
        value: f64,
    },
    #[error("{module}: hypothesis violated: {what} ({defect:e})")]
    Hypothesis {
        module: &'static str,
        what: &'static str,
        defect: f64,
    },
    #[error("reconstruct: no node is covered by the reachable range")]
    NoCoverage,
    #[error("reconstruct: node {node} is not covered at offset {offset}")]
    Uncovered { node: usize, offset: f64 },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::GridTooSmall(_)
            | Error::GridMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::NonFinite { .. }
            | Error::InvalidInput { .. }
            | Error::OrderTooHigh(_)
            | Error::GaugeCauchyData { .. }
            | Error::StepTooSmall(_)
            | Error::NotASolution { .. } => ErrorClass::Input,
            Error::Hypothesis { .. } => ErrorClass::Hypothesis,
            _ => ErrorClass::Solver,
        }
    }

    pub(crate) fn invalid(module: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            module,
            reason: reason.into(),
        }
    }
}
