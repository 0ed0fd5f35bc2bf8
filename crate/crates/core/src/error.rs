use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CfsError {
    #[error("matrix is not Hermitian (defect {defect:e})")]
    NotHermitian { defect: f64 },
    #[error("trace is {trace} instead of one")]
    TraceNotOne { trace: f64 },
    #[error("signature violation: {positive} positive and {negative} negative eigenvalues exceed spin dimension {n}")]
    SignatureViolation { positive: usize, negative: usize, n: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not unitary (defect {defect:e})")]
    NotUnitary { defect: f64 },
    #[error("NonPeriodicGenerator: frequency {frequency} is not an integer")]
    NonPeriodicGenerator { frequency: f64 },
    #[error("InvalidSeed: {0}")]
    InvalidSeed(String),
    #[error("ValidationFailure: {0}")]
    ValidationFailure(String),
    #[error("NoSliceAtoms: no atom sits at t0 = {t0}")]
    NoSliceAtoms { t0: f64 },
    #[error("RootFindStall: residual {residual:e} above tolerance {tol:e} after {iterations} iterations")]
    RootFindStall { residual: f64, tol: f64, iterations: usize },
    #[error("EnsembleEmpty: no slice samples available")]
    EnsembleEmpty,
    #[error("NoBracket: residual does not change sign over the allowed range")]
    NoBracket,
    #[error("OverflowGuard: every exponent is -inf")]
    OverflowGuard,
    #[error("NoAdmissibleStart: {0}")]
    NoAdmissibleStart(String),
    #[error("RegularityGateFailed: minimum slice kernel {min_over_u:e} not above floor {floor:e}")]
    RegularityGateFailed { min_over_u: f64, floor: f64 },
    #[error("DegenerateKernel: denominator {denominator:e} below floor")]
    DegenerateKernel { denominator: f64 },
    #[error("ConstantDirection: the variation is a pure time translation")]
    ConstantDirection,
    #[error("EmptySlice: the configuration has no atoms at t0")]
    EmptySlice,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("serialization: {0}")]
    Serialization(String),
    #[error("checksum mismatch: expected {expected}, found {found}")]
    ChecksumMismatch { expected: String, found: String },
}

pub type Result<T> = std::result::Result<T, CfsError>;
