//! Two-round question pairs over repeated targets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use emtree_core::forgetting::Lifetimes;
use emtree_core::time::{Duration, TimeSpan, Timestamp};
use emtree_core::tree::SCENE_LEVEL;

use crate::history::{History, Occurrence, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    When,
    Where,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub ask_at: Timestamp,
    pub ground_truth: String,
    pub target_span: TimeSpan,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub kind: QuestionKind,
    pub target: Target,
    pub round1: Question,
    pub round2: Question,
    pub feedback: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QaConfig {
    /// Delay between an occurrence and the question about it; `None` uses
    /// the leaf lifetime plus one hour.
    pub offset: Option<Duration>,
    pub pairs_per_history: usize,
    pub min_repeat_gap: Duration,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig { offset: None, pairs_per_history: 3, min_repeat_gap: Duration::DAY }
    }
}

impl QaConfig {
    pub fn offset(&self, lifetimes: &Lifetimes) -> Duration {
        self.offset.unwrap_or_else(|| lifetimes.of(SCENE_LEVEL) + Duration::HOUR)
    }
}

fn ground_truth(kind: QuestionKind, occ: &Occurrence) -> String {
    let loc = occ.location.as_deref().unwrap_or("unknown");
    match kind {
        QuestionKind::When => format!("At {} at {loc}", occ.at.format_minutes()),
        QuestionKind::Where => loc.to_string(),
    }
}

fn question(kind: QuestionKind, which: &str, (action, object): &Target) -> String {
    let verb = action.to_lowercase();
    let object = object.to_lowercase();
    match kind {
        QuestionKind::When => format!("When did you {which} {verb} the {object}?"),
        QuestionKind::Where => format!("Where did you {which} {verb} the {object}?"),
    }
}

fn feedback(kind: QuestionKind, (action, object): &Target) -> String {
    let what = match kind {
        QuestionKind::When => "when",
        QuestionKind::Where => "where",
    };
    format!("You should always remember {what} you {} the {}", action.to_lowercase(), object.to_lowercase())
}

/// Up to `pairs_per_history` pairs, one per object class. Round one asks
/// about the first occurrence shortly after it has expired, round two about
/// the last one. An empty list is returned (with a warning) when nothing
/// repeats.
pub fn generate_two_round_qa(history: &History, seed: u64, config: &QaConfig, lifetimes: &Lifetimes) -> Vec<QaPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = config.offset(lifetimes);
    let mut candidates = history.repeated_targets(config.min_repeat_gap.max(offset));
    if candidates.is_empty() {
        tracing::warn!("history has no repeated target; no questions generated");
        return Vec::new();
    }
    candidates.shuffle(&mut rng);
    let mut used_objects: Vec<String> = Vec::new();
    let mut out = Vec::new();
    for (target, occ) in candidates {
        if out.len() >= config.pairs_per_history {
            break;
        }
        if used_objects.contains(&target.1) {
            continue;
        }
        used_objects.push(target.1.clone());
        let kind = if rng.random_bool(0.5) { QuestionKind::When } else { QuestionKind::Where };
        let first = &occ[0];
        let last = &occ[occ.len() - 1];
        out.push(QaPair {
            id: format!("{}-{}", target.0.to_lowercase(), target.1.to_lowercase()),
            kind,
            round1: Question {
                text: question(kind, "first", &target),
                ask_at: first.at + offset,
                ground_truth: ground_truth(kind, first),
                target_span: TimeSpan::point(first.at),
            },
            round2: Question {
                text: question(kind, "last", &target),
                ask_at: last.at + offset,
                ground_truth: ground_truth(kind, last),
                target_span: TimeSpan::point(last.at),
            },
            feedback: feedback(kind, &target),
            target,
        });
    }
    out
}
