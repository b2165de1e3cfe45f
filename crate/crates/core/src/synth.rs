//! Template-grammar generator for multi-domain SLU corpora.
//!
//! Each domain owns intents (with domain-private trigger verbs) and private
//! slot types. All domains share a function-word vocabulary and the `time`
//! slot. A small pool of ambiguous names ("phoenix", "aurora", ...) fills a
//! private slot in every domain, so their gold label depends on the domain.
//!
//! Dependency heads come from the template structure: the first verb token
//! is the root, slot phrases are head-final and attach to the root,
//! prepositions attach to the head of the phrase they introduce.

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, Example};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub domains: Vec<String>,
    pub templates_per_intent: usize,
    pub train_per_domain: usize,
    pub dev_per_domain: usize,
    pub test_per_domain: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            domains: vec!["movie".into(), "weather".into(), "music".into()],
            templates_per_intent: 6,
            train_per_domain: 200,
            dev_per_domain: 50,
            test_per_domain: 50,
            seed: 7,
        }
    }
}

struct SlotSpec {
    name: &'static str,
    preps: &'static [&'static str],
    values: &'static [&'static str],
}

struct IntentSpec {
    name: &'static str,
    verbs: &'static [&'static str],
    slots: &'static [&'static str],
}

struct DomainSpec {
    name: &'static str,
    intents: &'static [IntentSpec],
    slots: &'static [SlotSpec],
}

const AMBIGUOUS: [&str; 4] = ["phoenix", "aurora", "eden", "orion"];

const TIME: SlotSpec = SlotSpec {
    name: "time",
    preps: &["", "for"],
    values: &[
        "tomorrow",
        "tonight",
        "this evening",
        "next monday",
        "seven pm",
        "noon",
        "friday morning",
        "the weekend",
    ],
};

const PREFIXES: &[&str] = &["", "please", "can you", "i want to", "hey", "could you please"];
const SUFFIXES: &[&str] = &["", "please", "thanks", "for me"];

macro_rules! slot {
    ($name:expr, [$($p:expr),*], [$($v:expr),* $(,)?]) => {
        SlotSpec { name: $name, preps: &[$($p),*], values: &[$($v),*] }
    };
}

const BANK: &[DomainSpec] = &[
    DomainSpec {
        name: "movie",
        intents: &[
            IntentSpec { name: "WatchMovie", verbs: &["watch", "stream"], slots: &["movie_type", "movie_name", "time"] },
            IntentSpec { name: "FindShowtime", verbs: &["find showtimes", "list screenings"], slots: &["movie_name", "cinema", "time"] },
            IntentSpec { name: "BuyTicket", verbs: &["purchase tickets", "reserve seats"], slots: &["movie_name", "cinema", "time"] },
        ],
        slots: &[
            slot!("movie_name", ["", "of"], ["titanic", "inception", "the godfather", "frozen", "phoenix", "aurora", "eden", "orion"]),
            slot!("movie_type", [""], ["action movie", "comedy", "horror film", "thriller", "romantic comedy"]),
            slot!("cinema", ["at", "in"], ["grand cinema", "odeon", "star theater", "regal plaza"]),
        ],
    },
    DomainSpec {
        name: "weather",
        intents: &[
            IntentSpec { name: "GetWeather", verbs: &["forecast", "report weather"], slots: &["location", "time"] },
            IntentSpec { name: "CheckCondition", verbs: &["expect", "anticipate"], slots: &["condition", "location", "time"] },
        ],
        slots: &[
            slot!("location", ["in", "near"], ["london", "new york", "seattle", "tokyo", "phoenix", "aurora", "eden", "orion"]),
            slot!("condition", [""], ["rain", "snow", "sunshine", "heavy wind", "thunderstorms"]),
        ],
    },
    DomainSpec {
        name: "music",
        intents: &[
            IntentSpec { name: "PlayMusic", verbs: &["play", "blast"], slots: &["song", "artist", "time"] },
            IntentSpec { name: "AddToPlaylist", verbs: &["add", "append"], slots: &["song", "playlist"] },
        ],
        slots: &[
            slot!("song", [""], ["yesterday", "bohemian rhapsody", "imagine", "hey jude", "phoenix", "aurora", "eden", "orion"]),
            slot!("artist", ["by"], ["the beatles", "queen", "adele", "miles davis"]),
            slot!("playlist", ["to", "onto"], ["workout mix", "chill vibes", "road trip"]),
        ],
    },
    DomainSpec {
        name: "alarm",
        intents: &[
            IntentSpec { name: "SetAlarm", verbs: &["set alarm", "wake"], slots: &["time", "alarm_name"] },
            IntentSpec { name: "SnoozeAlarm", verbs: &["snooze", "postpone"], slots: &["alarm_name", "duration"] },
        ],
        slots: &[
            slot!("alarm_name", ["called", "named"], ["wake up", "gym", "medicine", "phoenix", "aurora", "eden", "orion"]),
            slot!("duration", ["by"], ["ten minutes", "an hour", "thirty seconds"]),
        ],
    },
    DomainSpec {
        name: "restaurant",
        intents: &[
            IntentSpec { name: "BookTable", verbs: &["book table", "hold table"], slots: &["restaurant_name", "party_size", "time"] },
            IntentSpec { name: "FindRestaurant", verbs: &["recommend", "suggest"], slots: &["cuisine", "restaurant_name"] },
        ],
        slots: &[
            slot!("restaurant_name", ["at"], ["olive garden", "the ivy", "nobu", "phoenix", "aurora", "eden", "orion"]),
            slot!("cuisine", [""], ["italian", "sushi", "thai food", "vegan"]),
            slot!("party_size", ["for"], ["two people", "four people", "a family"]),
        ],
    },
    DomainSpec {
        name: "flight",
        intents: &[
            IntentSpec { name: "BookFlight", verbs: &["fly", "travel"], slots: &["fromloc", "toloc", "airline", "time"] },
            IntentSpec { name: "FlightStatus", verbs: &["track", "locate flight"], slots: &["airline", "toloc", "time"] },
        ],
        slots: &[
            slot!("toloc", ["to"], ["paris", "boston", "denver", "phoenix", "aurora", "eden", "orion"]),
            slot!("fromloc", ["from"], ["chicago", "dallas", "miami"]),
            slot!("airline", ["on", "with"], ["delta", "united", "lufthansa"]),
        ],
    },
];

/// Names of the built-in domains.
pub fn available_domains() -> Vec<&'static str> {
    BANK.iter().map(|d| d.name).collect()
}

#[derive(Clone, Debug)]
struct SlotUse {
    slot: usize,
    prep: &'static str,
}

#[derive(Clone, Debug)]
struct Template {
    prefix: &'static str,
    verb: &'static str,
    slots: Vec<SlotUse>,
    suffix: &'static str,
}

impl DomainSpec {
    fn slot(&self, name: &str) -> &SlotSpec {
        if name == TIME.name {
            return &TIME;
        }
        self.slots
            .iter()
            .find(|s| s.name == name)
            .expect("intent references a slot its domain defines")
    }
}

fn words(s: &'static str) -> impl Iterator<Item = &'static str> {
    s.split_whitespace()
}

fn sample_templates(domain: &DomainSpec, intent: &IntentSpec, count: usize, rng: &mut Rng) -> Vec<Template> {
    (0..count)
        .map(|_| {
            let mut order: Vec<usize> = (0..intent.slots.len()).collect();
            rng.shuffle(&mut order);
            let k = 1 + rng.below(order.len());
            let slots = order[..k]
                .iter()
                .map(|&s| SlotUse {
                    slot: s,
                    prep: *rng.pick(domain.slot(intent.slots[s]).preps),
                })
                .collect();
            Template {
                prefix: *rng.pick(PREFIXES),
                verb: *rng.pick(intent.verbs),
                slots,
                suffix: *rng.pick(SUFFIXES),
            }
        })
        .collect()
}

fn realize(domain: &DomainSpec, intent: &IntentSpec, t: &Template, rng: &mut Rng) -> Example {
    let mut tokens: Vec<String> = Vec::new();
    let mut slots: Vec<String> = Vec::new();
    // heads stay unresolved (usize::MAX = root-attached) until the root is known
    let mut heads: Vec<usize> = Vec::new();
    const TO_ROOT: usize = usize::MAX;

    for w in words(t.prefix) {
        tokens.push(w.into());
        slots.push("O".into());
        heads.push(TO_ROOT);
    }
    let root = tokens.len();
    for (k, w) in words(t.verb).enumerate() {
        tokens.push(w.into());
        slots.push("O".into());
        heads.push(if k == 0 { 0 } else { TO_ROOT });
    }
    for u in &t.slots {
        let spec = domain.slot(intent.slots[u.slot]);
        let value = *rng.pick(spec.values);
        let value: Vec<&str> = words(value).collect();
        let prep: Vec<&str> = words(u.prep).collect();
        let phrase_head = tokens.len() + prep.len() + value.len() - 1;
        for w in prep {
            tokens.push(w.into());
            slots.push("O".into());
            heads.push(phrase_head + 1);
        }
        for (k, w) in value.iter().enumerate() {
            let pos = tokens.len();
            tokens.push((*w).into());
            let tag = if k == 0 { "B" } else { "I" };
            slots.push(format!("{tag}-{}", spec.name));
            heads.push(if pos == phrase_head { TO_ROOT } else { phrase_head + 1 });
        }
    }
    for w in words(t.suffix) {
        tokens.push(w.into());
        slots.push("O".into());
        heads.push(TO_ROOT);
    }
    for h in heads.iter_mut() {
        if *h == TO_ROOT {
            *h = root + 1;
        }
    }
    Example {
        tokens,
        slots,
        intent: intent.name.into(),
        domain: domain.name.into(),
        heads,
    }
}

/// Generates balanced train/dev/test splits. A pure function of `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<CorpusSplit> {
    if config.domains.len() < 2 {
        return Err(Error::config("synthetic corpus needs at least 2 domains"));
    }
    if config.templates_per_intent == 0 {
        return Err(Error::config("templates_per_intent must be at least 1"));
    }
    let mut specs = Vec::new();
    for name in &config.domains {
        let spec = BANK.iter().find(|d| d.name == name).ok_or_else(|| {
            Error::config(format!(
                "unknown synthetic domain `{name}` (available: {})",
                available_domains().join(", ")
            ))
        })?;
        if specs.iter().any(|s: &&DomainSpec| s.name == spec.name) {
            return Err(Error::config(format!("domain `{name}` listed twice")));
        }
        specs.push(spec);
    }

    let mut rng = Rng::seed(config.seed);
    let mut split = CorpusSplit::default();
    for spec in specs {
        let templates: Vec<Vec<Template>> = spec
            .intents
            .iter()
            .map(|i| sample_templates(spec, i, config.templates_per_intent, &mut rng))
            .collect();
        let mut draw = |n: usize, out: &mut Vec<Example>| {
            for k in 0..n {
                // cycle intents so every intent is represented
                let ii = (k + rng.below(spec.intents.len())) % spec.intents.len();
                let t = rng.pick(&templates[ii]).clone();
                out.push(realize(spec, &spec.intents[ii], &t, &mut rng));
            }
        };
        draw(config.train_per_domain, &mut split.train);
        draw(config.dev_per_domain, &mut split.dev);
        draw(config.test_per_domain, &mut split.test);
    }
    rng.shuffle(&mut split.train);
    rng.shuffle(&mut split.dev);
    rng.shuffle(&mut split.test);
    Ok(split)
}

/// True if `token` is one of the names that carry a different slot type in
/// every domain.
pub fn is_ambiguous(token: &str) -> bool {
    AMBIGUOUS.contains(&token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{derive_filter_labels, Vocab};
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig::default();
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn balanced_counts_and_valid_examples() {
        let s = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(s.train.len(), 600);
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &s.train {
            e.validate().unwrap();
            *per.entry(e.domain.as_str()).or_default() += 1;
        }
        assert!(per.values().all(|&c| c == 200));
        for e in s.dev.iter().chain(&s.test) {
            e.validate().unwrap();
        }
    }

    #[test]
    fn filter_labels_are_proper_nonempty_subset() {
        let s = generate_synthetic(&SynthConfig::default()).unwrap();
        let v = Vocab::build(&s.train);
        let fl = derive_filter_labels(&s.train, v.domains()).unwrap();
        assert!(!fl.is_empty());
        assert!(fl.len() < v.slots().len());
        assert!(fl.contains("O") && fl.contains("B-time"));
    }

    #[test]
    fn domain_structure() {
        let cfg = SynthConfig {
            domains: available_domains().iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        };
        let s = generate_synthetic(&cfg).unwrap();
        let mut intents: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut ambiguous_labels: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for e in &s.train {
            intents.entry(&e.domain).or_default().insert(&e.intent);
            for (t, l) in e.tokens.iter().zip(&e.slots) {
                if is_ambiguous(t) {
                    ambiguous_labels.entry(t).or_default().insert(l.clone());
                }
            }
        }
        assert!(intents.values().all(|i| i.len() >= 2));
        // some token's gold label differs across domains
        assert!(ambiguous_labels.values().any(|l| l.len() >= 2));
    }

    #[test]
    fn rejects_bad_configs() {
        let one = SynthConfig { domains: vec!["movie".into()], ..Default::default() };
        assert!(generate_synthetic(&one).is_err());
        let unknown = SynthConfig { domains: vec!["movie".into(), "zzz".into()], ..Default::default() };
        assert!(generate_synthetic(&unknown).is_err());
    }

    #[test]
    fn heads_are_rooted_at_verb() {
        let s = generate_synthetic(&SynthConfig::default()).unwrap();
        let e = &s.train[0];
        let root = e.heads.iter().position(|&h| h == 0).unwrap();
        assert_eq!(e.slots[root], "O");
    }
}
