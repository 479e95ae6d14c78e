use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Current density at or beyond the limiting current.
    #[error("current density {i_fc} A/cm² outside [0, {i_lim}) A/cm²")]
    Domain { i_fc: f64, i_lim: f64 },

    #[error("power {requested} W outside the feasible range [0, {max}] W")]
    Range { requested: f64, max: f64 },

    /// Battery demand beyond V_oc²/(4·R_bat).
    #[error("battery power {p_bat} W exceeds the deliverable maximum {max} W")]
    InfeasiblePower { p_bat: f64, max: f64 },

    #[error("polarization calibration failed: worst residual {worst:.4} exceeds {limit} ({residuals:?})")]
    Calibration {
        worst: f64,
        limit: f64,
        residuals: Vec<f64>,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate firing strengths: sum of memberships is {0}")]
    Degenerate(f64),

    #[error("shape mismatch: expected {expected_m}x{expected_n}, found {found_m}x{found_n}")]
    ShapeMismatch {
        expected_m: usize,
        expected_n: usize,
        found_m: usize,
        found_n: usize,
    },

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("{path}: non-uniform sampling at row {row} (dt {found} s, expected {expected} s)")]
    NonUniformSampling {
        path: String,
        row: usize,
        found: f64,
        expected: f64,
    },

    #[error("{path}: negative velocity {v} at row {row}")]
    NegativeVelocity { path: String, row: usize, v: f64 },

    #[error("step called on a terminated episode")]
    Terminated,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
