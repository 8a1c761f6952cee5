//! Error type shared by the whole engine.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("unknown generator `{0}`")]
    UnknownGenerator(String),
    #[error("generator `{0}` declared twice")]
    DuplicateGenerator(String),
    #[error("defined derivative rule of `{0}` references an undeclared generator or jet")]
    ForwardReference(String),
    #[error("negative exponent on non-invertible jet `{0}`")]
    NotInvertible(String),
    #[error("polynomial `{0}` has no monomial inverse")]
    NoInverse(String),
    #[error("generator `{0}` has no image under this substitution")]
    UnmappedGenerator(String),
    #[error("substitution binds `{gen}` to a non-invertible value appearing with negative exponent")]
    NonInvertibleBinding { gen: String },
    #[error("coefficient at order {order} requested below floor {floor}")]
    BelowFloor { order: i64, floor: i64 },
    #[error("operand truncated at {floor} cannot be regenerated; order {needed} required")]
    DepthUnreachable { needed: i64, floor: i64 },
    #[error("expand_tail requires floor <= -1, got {0}")]
    BadTailFloor(i64),
    #[error("operator has negative orders; application to a function is not defined")]
    NegativeOrderApply,
    #[error("operator tail is not of integral form at order {order} (depth {depth})")]
    TailInconsistent { order: i64, depth: u32 },
    #[error("flow violates operator structure: nonzero coefficient at order {order}: {residual}")]
    StructureViolation { order: i64, residual: String },
    #[error("transformed operator top coefficient is not 1: {0}")]
    TopNotUnit(String),
    #[error("reciprocal 1-form fails closedness at q={q}: {residual}")]
    ClosednessViolation { q: u32, residual: String },
    #[error("substitution multiplier must be an invertible monomial, got `{0}`")]
    BadMultiplier(String),
    #[error("operation needs {0}")]
    Unsupported(String),
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
