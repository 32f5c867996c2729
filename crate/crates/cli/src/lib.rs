//! Experiment orchestration for `capsize-tst`: parse a JSON config, run one
//! pipeline, write its artifacts and a `manifest.json`.

pub mod config;
pub mod run;

pub use config::{ExperimentConfig, FilterConfig, Pipeline};
pub use run::{run_experiment, Artifact, ArtifactKind, ErrorRecord, Manifest, MANIFEST_FILE};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[source] capsize_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// 1 for configuration and i/o problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Io { .. } => 1,
            Self::Numerical(_) => 2,
        }
    }
}

impl From<capsize_core::Error> for RunError {
    fn from(e: capsize_core::Error) -> Self {
        if e.is_config() {
            Self::Config(e.to_string())
        } else {
            Self::Numerical(e)
        }
    }
}
