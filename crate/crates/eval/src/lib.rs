//! Two-round question answering experiments: synthetic household histories,
//! question pairs around repeated actions, a replay per ablation variant and
//! the metric tables.

pub mod episodes;
pub mod history;
pub mod judge;
pub mod matrix;
pub mod qa;
pub mod report;
pub mod run;
pub mod variant;

pub use episodes::{generate_episodes, Episode, GeneratorConfig};
pub use history::{synthesize_history, History, HistoryConfig, HistoryError};
pub use judge::{judge, Grade};
pub use matrix::{prepare_seed, run_cell, run_matrix, EvalConfig, EvalError, MatrixOutput, SeedInput};
pub use qa::{generate_two_round_qa, QaConfig, QaPair};
pub use report::ExperimentReport;
pub use run::{run_experiment, variant_config, QuestionDetail, RunError, RunOutput};
pub use variant::{Construction, Forgetting, Learning, Variant};
