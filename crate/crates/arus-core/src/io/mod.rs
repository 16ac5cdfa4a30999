//! Persistence: ASCII OBJ (triangles only), XYZ point clouds, binary
//! PGM/PPM images, pose-stream CSV and JSON artifacts.
//!
//! Text formats write full `f64` precision (round-trips are exact); every
//! JSON artifact carries a schema version tag and incompatible files are
//! refused instead of being misread.

mod obj;
mod pnm;
mod pose_csv;
mod xyz;

pub use obj::{read_obj, write_obj};
pub use pnm::{read_depth_pgm, read_ppm, read_us_pgm, write_depth_pgm, write_ppm, write_us_pgm};
pub use pose_csv::{read_annotations_csv, read_pose_csv, write_annotations_csv, write_pose_csv, PoseRecord};
pub use xyz::{read_xyz, write_xyz};

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::Path;
use thiserror::Error;

/// Schema tag carried by every JSON artifact this crate writes.
pub const SCHEMA_VERSION: &str = "arus/1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: schema version {found:?} is not {expected:?}")]
    VersionMismatch {
        path: String,
        found: String,
        expected: String,
    },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }
}

/// Serialize `value` as pretty JSON. The value's own `schema_version`
/// field is the compatibility tag.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| IoError::parse(path, 0, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

/// Read a JSON artifact, checking its `schema_version` tag before
/// deserializing the payload.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let probe: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| IoError::parse(path, e.line(), e.to_string()))?;
    match probe.get("schema_version").and_then(|v| v.as_str()) {
        Some(v) if v == SCHEMA_VERSION => {}
        Some(v) => {
            return Err(IoError::VersionMismatch {
                path: path.display().to_string(),
                found: v.to_string(),
                expected: SCHEMA_VERSION.to_string(),
            })
        }
        None => {
            return Err(IoError::VersionMismatch {
                path: path.display().to_string(),
                found: "<missing>".to_string(),
                expected: SCHEMA_VERSION.to_string(),
            })
        }
    }
    serde_json::from_str(&text).map_err(|e| IoError::parse(path, e.line(), e.to_string()))
}
