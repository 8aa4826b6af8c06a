//! Experiment grid: planning, per-run execution with shared cached
//! materials, the result store, ablation summaries and reports.

mod config;
mod execute;
mod plan;
mod report;
mod store;

use std::path::Path;

pub use config::{CorpusConfig, ExperimentConfig, Scale};
pub use execute::{fingerprint, GridSummary, Materials, Runner};
pub use plan::{interference_levels, plan_ablation, plan_grid, RunKey, Suite};
pub use report::{emit_report, render_line_chart, summarize_ablation, AblationRow, Report, Series};
pub use store::{rows_to_csv, write_atomic, ResultStore, RunMeta, RunRecord};

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Lexicon(#[from] crate::lexicon::LexiconError),
    #[error(transparent)]
    Template(#[from] crate::template::TemplateError),
    #[error(transparent)]
    Wug(#[from] crate::wug::WugError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error(transparent)]
    Mlm(#[from] crate::mlm::MlmError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error("injection check failed: {0}")]
    Manifest(String),
    #[error("group {group} has {have} seed(s); at least 2 are needed")]
    InsufficientSeeds { group: String, have: usize },
    #[error("result store is empty")]
    EmptyStore,
}

impl RunnerError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io { path: path.display().to_string(), source }
    }
}
