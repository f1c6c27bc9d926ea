use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("shape mismatch in `{field}`: expected {expected}, found {found}")]
    ShapeMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("invariant violated in `{field}`: {detail}")]
    Invariant { field: String, detail: String },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("slice {slice} of part {part} has no vertices; slicing number too large for this model")]
    EmptySlice { part: usize, slice: usize },

    #[error("template bone ({}, {}) has zero length", bone.0, bone.1)]
    ZeroLengthBone { bone: (usize, usize) },

    #[error("2D bone of part {part} is degenerate after the transform (viewed end-on)")]
    DegenerateBone2D { part: usize },

    #[error("bone ending at joint {joint} is perpendicular to the image plane but its target 2D length is {target_px} px")]
    Unsolvable { joint: usize, target_px: f64 },

    #[error("point system is rank deficient (Gram condition {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("no {kind} refiner for slicing number {n}")]
    MissingRefiner { kind: String, n: usize },

    #[error("parse error in {source_name}, line {line}: {detail}")]
    Parse {
        source_name: String,
        line: usize,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invariant(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
