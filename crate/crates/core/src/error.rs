use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PercError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("source point lies outside the exploration region")]
    SourceOutsideRegion,

    #[error("coordinates do not fit the packed vertex key ({bits} bits per axis)")]
    PackingOverflow { bits: u32 },

    #[error("graph has {edges} edges; exact enumeration supports at most {max}")]
    TooManyEdges { edges: usize, max: usize },

    #[error("operation requires the infinite lattice")]
    RequiresInfiniteLattice,

    #[error("operation requires a torus model")]
    RequiresTorus,

    #[error("grid shapes differ: {0}")]
    ShapeMismatch(String),

    #[error("mass fit needs at least {needed} usable points, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("bisection failed to bracket target {target} (residual {residual})")]
    NonBracketing { target: f64, residual: f64 },

    #[error("decision forest does not compute g: configuration {witness:#b} and {other:#b} agree on revealed indices but g differs")]
    ForestDoesNotComputeG { witness: u64, other: u64 },

    #[error("decision tree re-queried index {index} on configuration {config:#b}")]
    Requery { index: usize, config: u64 },
}

impl PercError {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        PercError::Invalid { field, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, PercError>;
