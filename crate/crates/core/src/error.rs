//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building or analysing a chain.
///
/// Variants carry enough context to point at the offending state, set or
/// quantity; callers that need an exit code can use [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("rate matrix has a negative entry at ({row}, {col}): {value}")]
    NegativeRate { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("chain is reducible: states {0:?} are not reachable from state 0")]
    Reducible(Vec<usize>),

    #[error(
        "chain is not reversible: detailed balance fails on edge ({row}, {col}) \
         with relative error {relative_error:.3e}"
    )]
    NotReversible {
        row: usize,
        col: usize,
        relative_error: f64,
    },

    #[error("subset is empty: {0}")]
    EmptySubset(String),

    #[error("subset has zero stationary mass: {0}")]
    ZeroMass(String),

    #[error("linear solve failed: {0}")]
    SolveFailure(String),

    #[error("eigensolve failed: {0}")]
    EigenFailure(String),

    #[error("reflected chain is disconnected; components of sizes {component_sizes:?}")]
    ReducibleReflection { component_sizes: Vec<usize> },

    #[error("killed chain restricted to the well is reducible")]
    ReducibleKilledChain,

    #[error("enlargement rate must be positive, got {0}")]
    NonpositiveGamma(f64),

    #[error("trajectory visits state {state} outside the wells at time {time}")]
    StateOutsideWells { state: usize, time: f64 },

    #[error("sets overlap: {0:?} belong to both")]
    OverlappingSets(Vec<usize>),

    #[error("state {0} lies inside the boundary sets")]
    StateInsideSets(usize),

    #[error("trial function violates boundary values: state {state} has value {value}")]
    TrialViolatesBoundary { state: usize, value: f64 },

    #[error("partition separating set is nonempty; operation requires wells covering the space")]
    DeltaNonempty,

    #[error("measure has mass {mass:.3e} outside well {well}")]
    MeasureOffWell { well: usize, mass: f64 },

    #[error("partition is invalid: {0}")]
    BadPartition(String),

    #[error("split is invalid: {0}")]
    BadSplit(String),

    #[error("observable has nonzero mean {0:.3e}; projection to mean zero required")]
    NonzeroMean(f64),

    #[error("time grid exceeded {max_points} points before reaching the target distance")]
    GridTooCoarse { max_points: usize },

    #[error("family has {0} members; at least 3 are required")]
    FamilyTooSmall(usize),

    #[error("family partitions are incompatible: {0}")]
    IncompatiblePartitions(String),

    #[error("scaled rates diverge: {0}")]
    DivergentRates(String),

    #[error("target set is unreachable from the initial state")]
    Unreachable,

    #[error("well is degenerate: {0}")]
    DegenerateWell(String),

    #[error("state space too large: {size} states exceeds cap {cap}")]
    StateSpaceTooLarge { size: usize, cap: usize },

    #[error("random graph stayed disconnected after {attempts} draws")]
    DisconnectedDraw { attempts: usize },

    #[error("dimension {0} is not supported")]
    DimensionUnsupported(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown verification suite '{0}'")]
    UnknownSuite(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code the command line tool maps this error to:
    /// 2 for malformed input or usage, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_)
            | Error::UnknownSuite(_)
            | Error::Io(_)
            | Error::FamilyTooSmall(_)
            | Error::StateSpaceTooLarge { .. }
            | Error::DimensionUnsupported(_) => 2,
            _ => 3,
        }
    }
}
