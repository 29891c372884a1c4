//! Ablation variants: how the tree is built, how it forgets and what the
//! learned rules are used for.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use emtree_core::engine::RuleUse;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Construction {
    Online,
    Offline,
    /// Goal nodes as one expandable list.
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Forgetting {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "time")]
    Time,
    #[serde(rename = "time+relevance")]
    TimeRelevance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Learning {
    None,
    ForgettingOnly,
    SummarizationOnly,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Variant {
    pub construction: Construction,
    pub forgetting: Forgetting,
    pub learning: Learning,
}

impl Variant {
    pub const fn new(construction: Construction, forgetting: Forgetting, learning: Learning) -> Self {
        Variant { construction, forgetting, learning }
    }

    /// The full system.
    pub const FULL: Variant = Variant::new(Construction::Online, Forgetting::TimeRelevance, Learning::Both);

    pub fn validate(&self) -> Result<(), String> {
        if self.construction == Construction::Flat
            && matches!(self.learning, Learning::SummarizationOnly | Learning::Both)
        {
            return Err(format!("{self}: a flat list has no summaries to learn for"));
        }
        Ok(())
    }

    pub fn rule_use(&self) -> RuleUse {
        match self.learning {
            Learning::None => RuleUse { building: false, forgetting: false },
            Learning::ForgettingOnly => RuleUse { building: false, forgetting: true },
            Learning::SummarizationOnly => RuleUse { building: true, forgetting: false },
            Learning::Both => RuleUse { building: true, forgetting: true },
        }
    }

    pub fn learns(&self) -> bool {
        self.learning != Learning::None
    }

    /// The paper's ablation grid, flat rows restricted to forgetting rules.
    pub fn grid() -> Vec<Variant> {
        use Construction::*;
        use Forgetting::*;
        use Learning::*;
        vec![
            Variant::new(Online, TimeRelevance, Both),
            Variant::new(Online, TimeRelevance, ForgettingOnly),
            Variant::new(Online, TimeRelevance, Learning::None),
            Variant::new(Online, Time, SummarizationOnly),
            Variant::new(Online, Time, Learning::None),
            Variant::new(Online, Forgetting::None, SummarizationOnly),
            Variant::new(Online, Forgetting::None, Learning::None),
            Variant::new(Offline, TimeRelevance, Both),
            Variant::new(Offline, TimeRelevance, Learning::None),
            Variant::new(Offline, Time, Learning::None),
            Variant::new(Offline, Forgetting::None, Learning::None),
            Variant::new(Flat, TimeRelevance, ForgettingOnly),
            Variant::new(Flat, Forgetting::None, Learning::None),
        ]
    }
}

fn name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn parse<T: for<'de> Deserialize<'de>>(s: &str) -> Option<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).ok()
}

impl fmt::Display for Variant {
    /// `online-time+relevance-both`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", name(&self.construction), name(&self.forgetting), name(&self.learning))
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("variant {s:?} is not construction-forgetting-learning");
        let (construction, rest) = s.split_once('-').ok_or_else(bad)?;
        let (forgetting, learning) = rest.split_once('-').ok_or_else(bad)?;
        let v = Variant {
            construction: parse(construction).ok_or_else(bad)?,
            forgetting: parse(forgetting).ok_or_else(bad)?,
            learning: parse(learning).ok_or_else(bad)?,
        };
        v.validate()?;
        Ok(v)
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
