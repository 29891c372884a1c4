//! Raw event records and their conversion into scene instants.
//!
//! Event files hold one JSON record per line:
//! `{"at": 1713949200, "kind": "skill-start", "attributes": {"skill": "Pickup(Cup_0)"}}`

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builder::SPEECH_KEY;
use crate::time::Timestamp;
use crate::tree::SceneInstant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Scene,
    Speech,
    SkillStart,
    SkillEnd,
    Face,
}

impl EventKind {
    pub fn required_attribute(self) -> &'static str {
        match self {
            EventKind::Scene => "action",
            EventKind::Speech => "text",
            EventKind::SkillStart | EventKind::SkillEnd => "skill",
            EventKind::Face => "person",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub at: Timestamp,
    pub kind: EventKind,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("{kind:?} event at {at} lacks the {attribute:?} attribute")]
    MissingAttribute { kind: EventKind, at: Timestamp, attribute: &'static str },
    #[error("event at {at} arrived after one at {last}")]
    OutOfOrder { at: Timestamp, last: Timestamp },
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl EventRecord {
    pub fn new(at: Timestamp, kind: EventKind, attrs: &[(&str, &str)]) -> Self {
        EventRecord {
            at,
            kind,
            attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            source: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), EventError> {
        let attribute = self.kind.required_attribute();
        match self.attributes.get(attribute) {
            Some(v) if !v.trim().is_empty() => Ok(()),
            _ => Err(EventError::MissingAttribute { kind: self.kind, at: self.at, attribute }),
        }
    }
}

/// Reads an event file. Blank lines and lines starting with `#` are skipped.
pub fn read_events(r: impl BufRead) -> Result<Vec<EventRecord>, EventError> {
    let mut out: Vec<EventRecord> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let rec: EventRecord = serde_json::from_str(t).map_err(|source| EventError::Parse { line: i + 1, source })?;
        rec.validate()?;
        if let Some(last) = out.last() {
            if rec.at < last.at {
                return Err(EventError::OutOfOrder { at: rec.at, last: last.at });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_events(mut w: impl Write, events: &[EventRecord]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Keeps the robot's current state and turns each record into a scene.
///
/// Scene records overwrite state attributes, faces set `person`, skill starts
/// set `action`. Speech is attached only to the scene of its own record.
/// A skill end clears the action and yields no scene.
#[derive(Clone, Debug, Default)]
pub struct SceneAssembler {
    state: BTreeMap<String, String>,
    seq: u64,
}

impl SceneAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, rec: &EventRecord) -> Option<SceneInstant> {
        let mut speech = None;
        match rec.kind {
            EventKind::Scene => {
                for (k, v) in &rec.attributes {
                    if k == SPEECH_KEY {
                        speech = Some(v.clone());
                    } else {
                        self.state.insert(k.clone(), v.clone());
                    }
                }
            }
            EventKind::Speech => speech = rec.attributes.get("text").cloned(),
            EventKind::SkillStart => {
                self.state.insert("action".into(), rec.attributes["skill"].clone());
            }
            EventKind::SkillEnd => {
                if self.state.get("action") == rec.attributes.get("skill") {
                    self.state.remove("action");
                }
                return None;
            }
            EventKind::Face => {
                self.state.insert("person".into(), rec.attributes["person"].clone());
            }
        }
        let mut attributes = self.state.clone();
        if let Some(s) = speech {
            attributes.insert(SPEECH_KEY.into(), s);
        }
        if attributes.is_empty() {
            return None;
        }
        self.seq += 1;
        let source_id = if rec.source.is_empty() { format!("e{}", self.seq) } else { rec.source.clone() };
        Some(SceneInstant { at: rec.at, attributes, source_id })
    }
}
