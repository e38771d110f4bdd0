//! Toy identity datasets and persistence: CSV for datasets and embeddings,
//! a binary container for model checkpoints.

mod checkpoint;
mod dataset;

use thiserror::Error;

use crate::denoiser::DenoiserError;
use crate::numerics::TensorError;
use crate::schedule::ScheduleError;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_FORMAT_VERSION};
pub use dataset::{
    export_embeddings, load_dataset, load_vectors_csv, make_toy_dataset, save_dataset,
    save_vectors_csv, LabeledVectors, ToyIdentityDataset,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Denoiser(#[from] DenoiserError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("checkpoint truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),
    #[error("could not satisfy centroid separation after {attempts} attempts")]
    SeparationUnachievable { attempts: usize },
    #[error("invalid arguments: {0}")]
    BadArgs(String),
}

impl DataError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
