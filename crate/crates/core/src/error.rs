use std::fmt;
use std::path::PathBuf;

use crate::score::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input document. `context` carries line/column or field information.
    #[error("parse error: {context}")]
    Parse { context: String },

    #[error("validation failed: {}", ViolationList(.0))]
    Validation(Vec<Violation>),

    #[error("invalid MIDI file: {0}")]
    Midi(String),

    #[error("unsupported meter {numerator}/{denominator} at division {at}: {reason}")]
    UnsupportedMeter {
        at: i64,
        numerator: i64,
        denominator: i64,
        reason: &'static str,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("batch assembly error: {0}")]
    Assembly(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("container format error: {0}")]
    Format(String),

    #[error(
        "checksum mismatch in section `{section}`: expected {expected:08x}, found {found:08x}"
    )]
    Checksum {
        section: String,
        expected: u32,
        found: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input (bad files, flags, configs).
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }
}

struct ViolationList<'a>(&'a [Violation]);

impl fmt::Display for ViolationList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
