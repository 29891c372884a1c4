//! Household episodes: short scripted chores as event records with times
//! relative to the episode start.

use std::io::BufReader;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use emtree_core::events::{read_events, write_events, EventError, EventKind, EventRecord};
use emtree_core::time::Timestamp;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub name: String,
    /// `at` counts seconds from the start of the episode.
    pub events: Vec<EventRecord>,
}

impl Episode {
    pub fn duration_secs(&self) -> i64 {
        self.events.last().map_or(0, |e| e.at.secs())
    }

    pub fn load(path: &Path) -> Result<Episode, EventError> {
        let f = std::fs::File::open(path)?;
        let events = read_events(BufReader::new(f))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("episode").to_string();
        let base = events.first().map_or(0, |e| e.at.secs());
        let events = events
            .into_iter()
            .map(|mut e| {
                e.at = Timestamp::from_secs(e.at.secs() - base);
                e
            })
            .collect();
        Ok(Episode { name, events })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_events(std::io::BufWriter::new(std::fs::File::create(path)?), &self.events)
    }
}

/// All `*.jsonl` files in `dir`, sorted by file name.
pub fn load_episodes(dir: &Path) -> Result<Vec<Episode>, EventError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Episode::load(p)).collect()
}

/// One step of a chore: an action on an object (or a place) somewhere.
struct Step {
    action: &'static str,
    target: &'static str,
    location: &'static str,
}

const fn step(action: &'static str, target: &'static str, location: &'static str) -> Step {
    Step { action, target, location }
}

struct Chore {
    name: &'static str,
    steps: &'static [Step],
}

const CHORES: &[Chore] = &[
    Chore {
        name: "make-coffee",
        steps: &[
            step("Navigate", "CounterTop", "Kitchen"),
            step("Pickup", "Mug", "CounterTop"),
            step("Navigate", "CoffeeMachine", "Kitchen"),
            step("Place", "Mug", "CoffeeMachine"),
            step("ToggleOn", "CoffeeMachine", "Kitchen"),
            step("ToggleOff", "CoffeeMachine", "Kitchen"),
            step("Pickup", "Mug", "CoffeeMachine"),
            step("Navigate", "DiningTable", "DiningRoom"),
            step("Place", "Mug", "DiningTable"),
        ],
    },
    Chore {
        name: "slice-bread",
        steps: &[
            step("Navigate", "CounterTop", "Kitchen"),
            step("Pickup", "Knife", "CounterTop"),
            step("Slice", "Bread", "CounterTop"),
            step("Navigate", "Sink", "Kitchen"),
            step("Place", "Knife", "Sink"),
            step("Pickup", "Plate", "Cabinet"),
            step("Place", "Plate", "CounterTop"),
        ],
    },
    Chore {
        name: "water-plant",
        steps: &[
            step("Navigate", "Sink", "Kitchen"),
            step("Pickup", "Cup", "Sink"),
            step("Fill", "Cup", "Sink"),
            step("Navigate", "HousePlant", "LivingRoom"),
            step("Pour", "Cup", "HousePlant"),
            step("Navigate", "Sink", "Kitchen"),
            step("Place", "Cup", "Sink"),
        ],
    },
    Chore {
        name: "wash-dishes",
        steps: &[
            step("Navigate", "DiningTable", "DiningRoom"),
            step("Pickup", "Plate", "DiningTable"),
            step("Navigate", "Sink", "Kitchen"),
            step("Clean", "Plate", "Sink"),
            step("Place", "Plate", "Cabinet"),
            step("Pickup", "Bowl", "DiningTable"),
            step("Clean", "Bowl", "Sink"),
            step("Place", "Bowl", "Cabinet"),
        ],
    },
    Chore {
        name: "store-groceries",
        steps: &[
            step("Navigate", "CounterTop", "Kitchen"),
            step("Pickup", "Apple", "CounterTop"),
            step("Open", "Fridge", "Kitchen"),
            step("Place", "Apple", "Fridge"),
            step("Pickup", "Egg", "CounterTop"),
            step("Place", "Egg", "Fridge"),
            step("Close", "Fridge", "Kitchen"),
        ],
    },
    Chore {
        name: "boil-potato",
        steps: &[
            step("Navigate", "Fridge", "Kitchen"),
            step("Open", "Fridge", "Kitchen"),
            step("Pickup", "Potato", "Fridge"),
            step("Close", "Fridge", "Kitchen"),
            step("Pickup", "Pot", "Cabinet"),
            step("Fill", "Pot", "Sink"),
            step("Place", "Potato", "Pot"),
            step("ToggleOn", "StoveBurner", "Kitchen"),
            step("ToggleOff", "StoveBurner", "Kitchen"),
        ],
    },
    Chore {
        name: "make-salad",
        steps: &[
            step("Navigate", "Fridge", "Kitchen"),
            step("Pickup", "Lettuce", "Fridge"),
            step("Place", "Lettuce", "CounterTop"),
            step("Pickup", "Knife", "Drawer"),
            step("Slice", "Lettuce", "CounterTop"),
            step("Slice", "Tomato", "CounterTop"),
            step("Pickup", "Bowl", "Cabinet"),
            step("Place", "Bowl", "DiningTable"),
        ],
    },
    Chore {
        name: "tidy-living-room",
        steps: &[
            step("Navigate", "Sofa", "LivingRoom"),
            step("Pickup", "RemoteControl", "Sofa"),
            step("Place", "RemoteControl", "SideTable"),
            step("Pickup", "Book", "Floor"),
            step("Place", "Book", "Shelf"),
            step("Pickup", "Cup", "SideTable"),
            step("Navigate", "Sink", "Kitchen"),
            step("Place", "Cup", "Sink"),
        ],
    },
];

const PEOPLE: &[&str] = &["Ana", "Ben", "Carla", "Dev", "Emil"];
const REQUESTS: &[&str] = &[
    "Could you help me in the kitchen?",
    "Please be careful with that.",
    "Thanks, that looks good.",
    "Can you hurry up a little?",
    "I will be back in the evening.",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub min_step_secs: i64,
    pub max_step_secs: i64,
    /// Chance that a step is skipped (never the first two).
    pub skip_prob: f64,
    pub face_prob: f64,
    pub speech_prob: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { min_step_secs: 5, max_step_secs: 40, skip_prob: 0.1, face_prob: 0.3, speech_prob: 0.3 }
    }
}

/// Draws `n` episodes. Object instances are numbered per episode, so the
/// same knife may come back as `Knife_0` or `Knife_1`.
pub fn generate_episodes(n: usize, seed: u64, config: &GeneratorConfig) -> Vec<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| generate_one(&mut rng, i, config)).collect()
}

fn generate_one(rng: &mut ChaCha8Rng, index: usize, c: &GeneratorConfig) -> Episode {
    let chore = CHORES.choose(rng).expect("chores");
    let instance = rng.random_range(0..2);
    let mut events = Vec::new();
    let mut at = 0i64;
    if rng.random_bool(c.face_prob) {
        let person = PEOPLE.choose(rng).expect("people");
        events.push(EventRecord::new(Timestamp::from_secs(at), EventKind::Face, &[("person", person)]));
        at += rng.random_range(c.min_step_secs..=c.max_step_secs);
        if rng.random_bool(c.speech_prob) {
            let text = REQUESTS.choose(rng).expect("requests");
            events.push(EventRecord::new(Timestamp::from_secs(at), EventKind::Speech, &[("text", text)]));
            at += rng.random_range(c.min_step_secs..=c.max_step_secs);
        }
    }
    for (k, s) in chore.steps.iter().enumerate() {
        if k >= 2 && rng.random_bool(c.skip_prob) {
            continue;
        }
        let action = if s.action == "Navigate" {
            format!("Navigate({})", s.target)
        } else {
            format!("{}({}_{instance})", s.action, s.target)
        };
        events.push(EventRecord::new(
            Timestamp::from_secs(at),
            EventKind::Scene,
            &[("action", &action), ("location", s.location)],
        ));
        at += rng.random_range(c.min_step_secs..=c.max_step_secs);
    }
    Episode { name: format!("{}-{index}", chore.name), events }
}
