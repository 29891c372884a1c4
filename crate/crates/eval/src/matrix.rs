//! Seed × variant experiment matrix.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use emtree_core::config::{ConfigError, EngineConfig, LmConfig};
use emtree_core::events::EventError;

use crate::episodes::{generate_episodes, load_episodes, Episode, GeneratorConfig};
use crate::history::{synthesize_history, History, HistoryConfig, HistoryError};
use crate::qa::{generate_two_round_qa, QaConfig, QaPair};
use crate::report::{details_jsonl, runs_tsv, summary_tsv, ExperimentReport};
use crate::run::{run_experiment, QuestionDetail, RunError};
use crate::variant::Variant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub episodes_per_history: usize,
    /// Directory of `*.jsonl` episode files; generated episodes otherwise.
    pub episode_dir: Option<PathBuf>,
    /// Size of the generated episode pool per seed.
    pub episode_pool: usize,
    pub variants: Vec<Variant>,
    pub generator: GeneratorConfig,
    pub history: HistoryConfig,
    pub qa: QaConfig,
    pub engine: EngineConfig,
    /// Model for grading; the scripted judge grades by time and word overlap.
    pub judge: LmConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seeds: (0..20).collect(),
            episodes_per_history: 5,
            episode_dir: None,
            episode_pool: 24,
            variants: Variant::grid(),
            generator: GeneratorConfig::default(),
            history: HistoryConfig::default(),
            qa: QaConfig::default(),
            engine: EngineConfig::default(),
            judge: LmConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("episodes: {0}")]
    Episodes(#[from] EventError),
    #[error("seed {seed}: {source}")]
    History { seed: u64, source: HistoryError },
    #[error("seed {seed}, {variant}: {source}")]
    Run { seed: u64, variant: Variant, source: RunError },
    #[error("invalid variant: {0}")]
    Variant(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl EvalConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, EvalError> {
        let c: EvalConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        self.engine.validate()?;
        for v in &self.variants {
            v.validate().map_err(EvalError::Variant)?;
        }
        Ok(())
    }
}

/// The inputs shared by every variant for one seed.
#[derive(Clone, Debug)]
pub struct SeedInput {
    pub seed: u64,
    pub history: History,
    pub pairs: Vec<QaPair>,
}

pub fn prepare_seed(config: &EvalConfig, pool: Option<&[Episode]>, seed: u64) -> Result<SeedInput, EvalError> {
    let generated;
    let episodes = match pool {
        Some(p) => p,
        None => {
            generated = generate_episodes(config.episode_pool, seed, &config.generator);
            &generated[..]
        }
    };
    let history = synthesize_history(episodes, config.episodes_per_history, seed, &config.history)
        .map_err(|source| EvalError::History { seed, source })?;
    let pairs = generate_two_round_qa(&history, seed, &config.qa, &config.engine.builder.lifetimes);
    Ok(SeedInput { seed, history, pairs })
}

#[derive(Clone, Debug, Default)]
pub struct MatrixOutput {
    /// Seed-major, variants in configured order.
    pub reports: Vec<ExperimentReport>,
    pub details: Vec<QuestionDetail>,
}

impl MatrixOutput {
    pub fn runs_tsv(&self) -> String {
        runs_tsv(&self.reports)
    }

    pub fn summary_tsv(&self) -> String {
        summary_tsv(&self.reports)
    }

    pub fn details_jsonl(&self) -> String {
        details_jsonl(&self.details)
    }

    /// Writes `runs.tsv`, `summary.tsv` and `details.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runs.tsv"), self.runs_tsv())?;
        std::fs::write(dir.join("summary.tsv"), self.summary_tsv())?;
        std::fs::write(dir.join("details.jsonl"), self.details_jsonl())
    }

    pub fn for_variant(&self, v: Variant) -> impl Iterator<Item = &ExperimentReport> {
        self.reports.iter().filter(move |r| r.variant == v)
    }
}

/// Runs every (seed, variant) cell in parallel, each with its own model
/// instance, rule store and ledger. Results come back in a fixed order.
pub fn run_matrix(config: &EvalConfig) -> Result<MatrixOutput, EvalError> {
    config.validate()?;
    let pool = match &config.episode_dir {
        Some(dir) => Some(load_episodes(dir)?),
        None => None,
    };
    let inputs: Vec<SeedInput> = config
        .seeds
        .par_iter()
        .map(|&s| prepare_seed(config, pool.as_deref(), s))
        .collect::<Result<_, _>>()?;
    let cells: Vec<(&SeedInput, Variant)> =
        inputs.iter().flat_map(|i| config.variants.iter().map(move |v| (i, *v))).collect();
    let results: Vec<(ExperimentReport, Vec<QuestionDetail>)> = cells
        .par_iter()
        .map(|(input, variant)| run_cell(config, input, *variant))
        .collect::<Result<_, _>>()?;
    let mut out = MatrixOutput::default();
    for (r, d) in results {
        out.reports.push(r);
        out.details.extend(d);
    }
    Ok(out)
}

pub fn run_cell(
    config: &EvalConfig,
    input: &SeedInput,
    variant: Variant,
) -> Result<(ExperimentReport, Vec<QuestionDetail>), EvalError> {
    let seed = input.seed;
    let gateway = config.engine.lm.gateway()?;
    let judge = config.judge.gateway()?;
    let out = run_experiment(variant, &input.history.events, &input.pairs, &config.engine, &gateway, &judge)
        .map_err(|source| EvalError::Run { seed, variant, source })?;
    let mut report = out.report;
    report.seed = seed;
    let mut details = out.details;
    for d in &mut details {
        d.seed = seed;
    }
    Ok((report, details))
}
