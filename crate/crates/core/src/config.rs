//! Engine configuration, read from TOML.
//!
//! ```toml
//! [builder]
//! max_depth = 8
//! lifetimes = [900, 3600, 86400]
//!
//! [forgetting]
//! relevance = true
//! nightly_hour = 3
//!
//! [lm]
//! backend = "scripted"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, ExplorationMode};
use crate::builder::{BuilderConfig, DeriveConfig};
use crate::lm::parse::RelevanceScore;
use crate::lm::{Gateway, GroupingBehavior, HttpBackend, HttpConfig, LmError, RelevanceBehavior, ScriptedBackend};
use crate::time::Duration;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgettingConfig {
    pub enabled: bool,
    /// Ask the model for relevance; otherwise expired nodes go right away.
    pub relevance: bool,
    pub lm_call_budget: Option<u32>,
    /// Hour of the day (UTC) of the nightly sweep.
    pub nightly_hour: u32,
    /// The nightly sweep only runs when nothing arrived for this long.
    pub idle_before_nightly: Duration,
}

impl Default for ForgettingConfig {
    fn default() -> Self {
        ForgettingConfig {
            enabled: true,
            relevance: true,
            lm_call_budget: None,
            nightly_hour: 3,
            idle_before_nightly: Duration::minutes(30),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScriptedGrouping {
    NewGroup,
    AppendToLatest,
}

/// Behaviour of the built-in scripted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedConfig {
    pub grouping: ScriptedGrouping,
    pub max_group: usize,
    /// Relevance for items matching a rule; `None` keeps nothing.
    pub matched_relevance: Option<String>,
    pub other_relevance: u32,
}

impl Default for ScriptedConfig {
    fn default() -> Self {
        ScriptedConfig {
            grouping: ScriptedGrouping::AppendToLatest,
            max_group: 5,
            matched_relevance: Some("inf".into()),
            other_relevance: 0,
        }
    }
}

fn parse_score(s: &str) -> Result<RelevanceScore, ConfigError> {
    match s.trim() {
        "inf" => Ok(RelevanceScore::Infinite),
        v => v
            .parse::<i64>()
            .map(RelevanceScore::finite)
            .map_err(|_| ConfigError::Invalid(format!("relevance {v:?} is neither a number nor inf"))),
    }
}

impl ScriptedConfig {
    pub fn backend(&self) -> Result<ScriptedBackend, ConfigError> {
        let grouping = match self.grouping {
            ScriptedGrouping::NewGroup => GroupingBehavior::NewGroup,
            ScriptedGrouping::AppendToLatest => GroupingBehavior::AppendToLatest,
        };
        let otherwise = RelevanceScore::finite(self.other_relevance as i64);
        let relevance = match &self.matched_relevance {
            Some(m) => RelevanceBehavior::RuleMatch { matched: parse_score(m)?, otherwise },
            None => RelevanceBehavior::Constant(otherwise),
        };
        Ok(ScriptedBackend::new().grouping(grouping).max_group(self.max_group).relevance(relevance))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Http,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub backend: BackendKind,
    pub scripted: ScriptedConfig,
    pub http: HttpConfig,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { backend: BackendKind::Scripted, scripted: ScriptedConfig::default(), http: HttpConfig::default() }
    }
}

impl LmConfig {
    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        Ok(match self.backend {
            BackendKind::Scripted => Gateway::new(self.scripted.backend()?),
            BackendKind::Http => Gateway::new(
                HttpBackend::new(self.http.clone()).map_err(|e: LmError| ConfigError::Invalid(e.to_string()))?,
            ),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub builder: BuilderConfig,
    pub derive: DeriveConfig,
    pub forgetting: ForgettingConfig,
    pub agent: AgentConfig,
    pub exploration: ExplorationMode,
    pub lm: LmConfig,
    /// Initial relevance rules.
    pub rules: Vec<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            builder: BuilderConfig::default(),
            derive: DeriveConfig::default(),
            forgetting: ForgettingConfig::default(),
            agent: AgentConfig::default(),
            exploration: ExplorationMode::Tree,
            lm: LmConfig::default(),
            rules: Vec::new(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let c: EngineConfig = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.builder.validate().map_err(ConfigError::Invalid)?;
        if self.forgetting.nightly_hour > 23 {
            return Err(ConfigError::Invalid(format!("nightly_hour {} is not an hour", self.forgetting.nightly_hour)));
        }
        if self.agent.max_steps == 0 {
            return Err(ConfigError::Invalid("agent.max_steps must be positive".into()));
        }
        Ok(())
    }
}
