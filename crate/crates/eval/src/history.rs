//! Long histories made by concatenating episodes with plausible gaps.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use emtree_core::builder::action_name;
use emtree_core::events::{EventKind, EventRecord};
use emtree_core::time::{Duration, Timestamp};

use crate::episodes::Episode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistoryConfig {
    /// Gap between episodes on the same day, in seconds.
    pub hour_gap: (i64, i64),
    /// Gap that skips to a later day, in seconds.
    pub day_gap: (i64, i64),
    /// Chance of a same-day gap.
    pub hour_gap_prob: f64,
    /// Smallest separation between two occurrences of a repeated target.
    pub min_repeat_gap: Duration,
    pub year: i32,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        HistoryConfig {
            hour_gap: (3 * 3600, 10 * 3600),
            day_gap: (86_400, 3 * 86_400),
            hour_gap_prob: 0.4,
            min_repeat_gap: Duration::DAY,
            year: 2024,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("no episodes to draw from")]
    NoEpisodes,
    #[error("a history of {0} episode(s) cannot repeat a target")]
    TooShort(usize),
    #[error("no episode contains an interaction with an object")]
    NoTargets,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub start: Timestamp,
    pub episode: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub events: Vec<EventRecord>,
    pub boundaries: Vec<Boundary>,
}

/// An interaction with an object class, e.g. `("Pickup", "Knife")`.
pub type Target = (String, String);

/// One scene in which a target happened.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub at: Timestamp,
    pub location: Option<String>,
    pub episode: usize,
}

/// `("Pickup", "Knife")` for `Pickup(Knife_0)`; navigation and argument-free
/// actions have no target.
pub fn target_of(action: &str) -> Option<Target> {
    let name = action_name(action);
    if name.is_empty() || name == "Navigate" {
        return None;
    }
    let arg = action.split_once('(')?.1.strip_suffix(')')?;
    let object = arg.split(['_', ',']).next()?.trim();
    if object.is_empty() {
        return None;
    }
    Some((name.to_string(), object.to_string()))
}

impl History {
    pub fn start(&self) -> Option<Timestamp> {
        self.events.first().map(|e| e.at)
    }

    pub fn end(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.at)
    }

    fn episode_at(&self, at: Timestamp) -> usize {
        self.boundaries.partition_point(|b| b.start <= at).saturating_sub(1)
    }

    /// Every target with its occurrences in time order.
    pub fn occurrences(&self) -> BTreeMap<Target, Vec<Occurrence>> {
        let mut out: BTreeMap<Target, Vec<Occurrence>> = BTreeMap::new();
        for e in &self.events {
            if e.kind != EventKind::Scene {
                continue;
            }
            let Some(t) = e.attributes.get("action").and_then(|a| target_of(a)) else { continue };
            out.entry(t).or_default().push(Occurrence {
                at: e.at,
                location: e.attributes.get("location").cloned(),
                episode: self.episode_at(e.at),
            });
        }
        out
    }

    /// Targets seen in at least two episodes with the first and last
    /// occurrence at least `min_gap` apart.
    pub fn repeated_targets(&self, min_gap: Duration) -> Vec<(Target, Vec<Occurrence>)> {
        self.occurrences()
            .into_iter()
            .filter(|(_, occ)| {
                let first = &occ[0];
                let last = &occ[occ.len() - 1];
                first.episode != last.episode && last.at - first.at >= min_gap
            })
            .collect()
    }

    pub fn write_jsonl(&self, out: impl std::io::Write) -> std::io::Result<()> {
        emtree_core::events::write_events(out, &self.events)
    }
}

fn place(episode: &Episode, start: Timestamp, out: &mut Vec<EventRecord>) {
    out.extend(episode.events.iter().map(|e| {
        let mut e = e.clone();
        e.at = start + Duration::from_secs(e.at.secs());
        e
    }));
}

fn draw_gap(rng: &mut ChaCha8Rng, c: &HistoryConfig) -> i64 {
    let (lo, hi) = if rng.random_bool(c.hour_gap_prob) { c.hour_gap } else { c.day_gap };
    rng.random_range(lo..=hi.max(lo))
}

/// Concatenates `count` randomly drawn episodes. If no target repeats with
/// the required gap, the last episode is replaced by the first one again,
/// placed at least a day later.
pub fn synthesize_history(
    episodes: &[Episode],
    count: usize,
    seed: u64,
    config: &HistoryConfig,
) -> Result<History, HistoryError> {
    if episodes.is_empty() {
        return Err(HistoryError::NoEpisodes);
    }
    if count < 2 {
        return Err(HistoryError::TooShort(count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let day = rng.random_range(0..360);
    let hour_start = rng.random_range(8 * 3600..10 * 3600);
    let origin = Timestamp::from_ymd_hms(config.year, 1, 1, 0, 0, 0).expect("valid year");
    let at = origin + Duration::days(day) + Duration::from_secs(hour_start);

    let picks: Vec<usize> = (0..count).map(|_| rng.random_range(0..episodes.len())).collect();
    let gaps: Vec<i64> = (1..count).map(|_| draw_gap(&mut rng, config)).collect();

    let build = |picks: &[usize], gaps: &[i64], mut at: Timestamp| {
        let mut h = History { events: Vec::new(), boundaries: Vec::new() };
        for (i, &p) in picks.iter().enumerate() {
            if i > 0 {
                at += Duration::from_secs(episodes[picks[i - 1]].duration_secs() + gaps[i - 1]);
            }
            h.boundaries.push(Boundary { start: at, episode: episodes[p].name.clone() });
            place(&episodes[p], at, &mut h.events);
        }
        h
    };

    let h = build(&picks, &gaps, at);
    if !h.repeated_targets(config.min_repeat_gap).is_empty() {
        return Ok(h);
    }
    let first = picks[0];
    if episodes[first].events.iter().all(|e| e.attributes.get("action").and_then(|a| target_of(a)).is_none()) {
        return Err(HistoryError::NoTargets);
    }
    let mut picks = picks;
    let mut gaps = gaps;
    *picks.last_mut().expect("count >= 2") = first;
    let last_gap = gaps.last_mut().expect("count >= 2");
    *last_gap = (*last_gap).max(config.day_gap.0).max(config.min_repeat_gap.secs());
    let h = build(&picks, &gaps, at);
    debug_assert!(!h.repeated_targets(config.min_repeat_gap).is_empty());
    Ok(h)
}
