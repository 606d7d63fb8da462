use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by pipeline stage; [`Error::is_numerical`]
/// distinguishes numerical failures (underflow, degenerate beliefs) from
/// input and usage errors so callers can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Scene text could not be parsed; carries source line context.
    #[error("scene parse error at line {line}: {msg}")]
    SceneParse { line: usize, msg: String },

    /// Scene parsed but violates a structural rule.
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    /// A configuration value is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A query point lies outside the map extent.
    #[error("point ({x}, {y}) lies outside the map extent")]
    OutOfBounds { x: f64, y: f64 },

    /// A topology operation was asked to do something unsupported.
    #[error("topology error: {0}")]
    Topology(String),

    /// A delta was generated against a different topology revision.
    #[error("stale topology delta: built at revision {delta_revision}, map is at {map_revision}")]
    StaleDelta {
        delta_revision: u64,
        map_revision: u64,
    },

    /// Model construction or mutation failed a consistency check.
    #[error("model error: {0}")]
    Model(String),

    /// An observation sequence is unusable (too short, out of bounds, ...).
    #[error("invalid observation sequence: {0}")]
    InvalidSequence(String),

    /// Forward pass lost all probability mass.
    #[error("numerical underflow: {0}")]
    NumericalUnderflow(String),

    /// Filter update left no mass on any state.
    #[error("degenerate belief: total filter mass {mass:e} is below the representable floor")]
    DegenerateBelief { mass: f64 },

    /// Trajectory CSV is malformed or inconsistent.
    #[error("trajectory data error: {0}")]
    TrajectoryData(String),

    /// Statistical routine received unusable input.
    #[error("statistics error: {0}")]
    Stats(String),

    /// A serialized artifact is malformed or has the wrong version.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalUnderflow(_) | Error::DegenerateBelief { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
