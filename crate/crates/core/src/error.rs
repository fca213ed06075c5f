use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("temperature {temperature_c} °C is outside the calibrated range [{min_c}, {max_c}] °C")]
    OutOfCalibration { temperature_c: f64, min_c: f64, max_c: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no crossover between `{a}` and `{b}` in [{lo_km}, {hi_km}] km")]
    NoCrossover {
        a: String,
        b: String,
        lo_km: f64,
        hi_km: f64,
    },

    #[error("undefined visibility: {0}")]
    UndefinedVisibility(String),

    #[error("visibility scan needs at least 8 samples spanning 180° of HWP rotation (got {samples} samples over {span_deg}°)")]
    InsufficientScan { samples: usize, span_deg: f64 },

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("{}: malformed tag data at byte {offset}: {message}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
