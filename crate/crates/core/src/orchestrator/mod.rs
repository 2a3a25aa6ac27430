//! The round loop: baseline training, weak-labeler filtering, sequential
//! fine-tuning under a step budget, the stopping rule, the resumable
//! journal and report emission. Also runs the one-pass comparison modes.

pub mod config;
mod generate;
pub mod journal;
pub mod plan;
mod report;
mod run;
pub mod stopping;

use thiserror::Error;

use crate::backend::BackendError;
use crate::corpus::CorpusError;
use crate::curator::CuratorError;
use crate::promptgen::{GenerateError, TemplateError};
use crate::qametrics::ProfileError;

pub use config::{ConfigError, Mode, RunConfig, StoppingCriteria};
pub use generate::{run_generate, LanguageGeneration};
pub use journal::{read_state, JournalError, RoundState, RunState, RunStatus};
pub use plan::{plan_training, PlanError, PlannedStage, TrainPlan};
pub use report::{emit_report, ReportFiles};
pub use run::{run, score_model, Fault, FaultAction, RunOptions};
pub use stopping::{select_best, should_stop, StopDecision, StopReason};

/// Environment variable read by the binary to inject a crash, e.g.
/// `after_train:3` aborts the process once round 3 has trained but before
/// it is committed.
pub const FAULT_ENV: &str = "GEMQUAD_FAULT";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Curator(#[from] CuratorError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("run interrupted after training round {round}")]
    Interrupted { round: u32 },
}

impl OrchestratorError {
    /// Process exit code: 2 config, 3 backend, 4 journal, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Template(_) | Self::Profile(_) => 2,
            Self::Generate(GenerateError::Template(_)) => 2,
            Self::Backend(_) | Self::Curator(CuratorError::Backend(_)) | Self::Generate(GenerateError::Backend { .. }) => 3,
            Self::Journal(_) => 4,
            _ => 1,
        }
    }
}
