use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::netlink::wire::ProtocolError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown tilt angle {0} deg")]
    UnknownAngle(i32),
    #[error("tilt class index {0} out of range 0..=8")]
    ClassIndex(usize),
    #[error("gripper position {0} out of range 0..=30")]
    GripperPos(i64),
    #[error("expected a {expected:?}-finger frame, got {got:?}")]
    WrongFinger {
        expected: crate::tactile::Finger,
        got: crate::tactile::Finger,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("batch norm in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("feedback mode CnnPattern needs a model")]
    MissingModel,
    #[error("bad {kind} file: {msg}")]
    Format { kind: &'static str, msg: String },
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { stored: u32, computed: u32 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            kind,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
