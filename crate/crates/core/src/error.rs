//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Which side of a transfer problem a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// The initial measure, transported forward in time.
    Source,
    /// The target measure, examined backward in time.
    Target,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Source => write!(f, "source"),
            Side::Target => write!(f, "target"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate measure: {0}")]
    DegenerateMeasure(String),

    #[error("margin collapse: subdivision n = {n} leaves no interior cell (need n >= 3)")]
    MarginCollapse { n: usize },

    #[error("state left the guard box or became non-finite at t = {t} (position {x:?})")]
    NonFiniteState { t: f64, x: [f64; 2] },

    #[error("total masses differ: {a} vs {b}")]
    MassMismatch { a: f64, b: f64 },

    #[error("point cloud of size {len} exceeds assignment cap {cap}")]
    SizeCap { len: usize, cap: usize },

    #[error("measure has zero total mass")]
    ZeroMass,

    #[error("degenerate transport plan: {0}")]
    PlanDegenerate(String),

    #[error("{side} support leaks outside the prescribed region")]
    SupportViolation { side: Side },

    #[error("confinement gain k = {k} too small; minimal admissible k from boundary samples is {required}")]
    KTooSmall { k: f64, required: f64 },

    #[error("{side} particle at {point:?} never reaches the control region within horizon {horizon}")]
    Condition1Violation {
        point: [f64; 2],
        side: Side,
        horizon: f64,
    },

    #[error("mass-flux condition infeasible even at horizon {horizon}")]
    HorizonExceeded { horizon: f64 },

    #[error("bucket {bucket}: stored mass {available} short of required {required}")]
    BucketMassDeficit {
        bucket: usize,
        required: f64,
        available: f64,
    },

    #[error("degenerate velocity window: [{a}, {b}]")]
    DegenerateWindow { a: f64, b: f64 },

    #[error("velocity window [{a}, {b}] would exit the control region")]
    WindowOverflow { a: f64, b: f64 },

    #[error("operation requires dimension {required}, measure has dimension {actual}")]
    UnsupportedDimension { required: usize, actual: usize },

    #[error("field is not of a kind this operation supports: {0}")]
    UnsupportedField(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
