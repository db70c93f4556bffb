use std::path::Path;

use regdgcnn_core::mesh::MeshError;
use regdgcnn_core::model::ModelError;
use regdgcnn_core::pointcloud::PointCloudError;
use regdgcnn_core::training::{CheckpointError, TrainError};
use thiserror::Error;

use crate::manifest::ManifestError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Mesh {
        path: String,
        #[source]
        source: MeshError,
    },
    #[error("{0} mesh(es) failed the watertightness check")]
    Infeasible(usize),
    #[error("{0} design(s) could not be sampled")]
    SampleFailed(usize),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 2 for usage errors, 1 for every domain failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(source: std::io::Error) -> Self {
        CliError::Io {
            path: "<output>".into(),
            source,
        }
    }
}
