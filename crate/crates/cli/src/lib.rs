//! Experiment harness: configuration, staged pipeline, metrics, and run
//! manifests for the skill-parsing workspace.

use std::error::Error;

pub mod config;
pub mod manifest;
pub mod metrics;
pub mod pipeline;

/// Harness-level failures. Config problems exit with code 2; anything that
/// breaks mid-run exits with code 1.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        source: Box<dyn Error + Send + Sync>,
    },
}

impl HarnessError {
    pub fn stage(stage: &str, source: impl Error + Send + Sync + 'static) -> HarnessError {
        HarnessError::Stage {
            stage: stage.to_string(),
            source: Box::new(source),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Stage { .. } => 1,
        }
    }
}
