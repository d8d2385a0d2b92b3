//! Dialogue corpora: the JSON interchange format, validation into typed
//! states, gold domain-state derivation and a synthetic generator.
//!
//! A corpus file is either an object with `train`, `validation` and `test`
//! lists (plus an optional `provenance`), or a bare list of dialogues, which is
//! read as a test split. Each dialogue looks like
//!
//! ```json
//! {"id": "d1",
//!  "goal": {"restaurant": {"constraints": {"pricerange": "cheap"}, "requests": ["phone"]}},
//!  "turns": [{"user": "i want a cheap restaurant",
//!             "belief": {"restaurant-pricerange": "cheap"},
//!             "acts": [["restaurant", "request", "area"]],
//!             "response_delex": "which area ?",
//!             "response_lex": "which area ?",
//!             "domains": ["restaurant"]}]}
//! ```
//!
//! Act slots may be `"none"` (or omitted) for slot-less acts such as `bye`.

mod synthetic;

pub use synthetic::{elliptical_turns, generate_synthetic, is_elliptical_multi_domain};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ontology::{lex, Ontology, DONTCARE};
use crate::state::{Act, ActType, BeliefState, DomainState, SlotValue, SystemAction};

/// What the user wants from one domain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DomainGoal {
    /// Informable slot -> value (`dontcare` allowed).
    pub constraints: BTreeMap<String, String>,
    /// Requestable slots the user asks for.
    pub requests: BTreeSet<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DialogueGoal {
    /// Keyed by domain index.
    pub domains: BTreeMap<usize, DomainGoal>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub user: String,
    pub belief: BeliefState,
    pub action: SystemAction,
    pub response_delex: String,
    pub response_lex: String,
    /// Domains annotated on this turn.
    pub domains: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub goal: DialogueGoal,
    pub turns: Vec<Turn>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Ingested,
    Synthetic { seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusSplits {
    pub train: Vec<Dialogue>,
    pub validation: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
    pub provenance: Provenance,
}

impl CorpusSplits {
    pub fn empty(provenance: Provenance) -> Self {
        CorpusSplits {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
            provenance,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Dialogue> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_json(&self, ontology: &Ontology) -> String {
        let file = RawSplits {
            provenance: Some(self.provenance),
            train: self.train.iter().map(|d| d.to_raw(ontology)).collect(),
            validation: self.validation.iter().map(|d| d.to_raw(ontology)).collect(),
            test: self.test.iter().map(|d| d.to_raw(ontology)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("corpus serializes")
    }

    pub fn save(&self, ontology: &Ontology, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json(ontology) + "\n").map_err(|e| Error::io(path, e))
    }

    /// Words of user utterances and delexicalized responses of the training
    /// split, for building a vocabulary.
    pub fn training_words(&self) -> BTreeSet<String> {
        self.train
            .iter()
            .flat_map(|d| &d.turns)
            .flat_map(|t| lex(&t.user).into_iter().chain(lex(&t.response_delex)))
            .filter(|w| !(w.starts_with('[') && w.ends_with(']')))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Raw JSON form

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplits {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    #[serde(default)]
    train: Vec<RawDialogue>,
    #[serde(default)]
    validation: Vec<RawDialogue>,
    #[serde(default)]
    test: Vec<RawDialogue>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDialogue {
    id: String,
    #[serde(default)]
    goal: BTreeMap<String, RawDomainGoal>,
    turns: Vec<RawTurn>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawDomainGoal {
    #[serde(default)]
    constraints: BTreeMap<String, String>,
    #[serde(default)]
    requests: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTurn {
    user: String,
    #[serde(default)]
    belief: BTreeMap<String, String>,
    #[serde(default)]
    acts: Vec<Vec<String>>,
    response_delex: String,
    response_lex: String,
    #[serde(default)]
    domains: Vec<String>,
}

/// Collects every problem in a file before failing.
struct Problems<'a> {
    file: &'a str,
    list: Vec<String>,
}

impl Problems<'_> {
    fn push(&mut self, where_: &str, msg: impl AsRef<str>) {
        self.list.push(format!("{where_}: {}", msg.as_ref()));
    }
}

fn domain_of(ontology: &Ontology, name: &str) -> std::result::Result<usize, String> {
    ontology
        .domain_index(name)
        .ok_or_else(|| format!("unknown domain `{name}`"))
}

fn slot_value(ontology: &Ontology, d: usize, slot: &str, value: &str) -> std::result::Result<(usize, SlotValue), String> {
    let dname = &ontology.domain(d).name;
    let s = ontology
        .slot_index(d, slot)
        .ok_or_else(|| format!("unknown slot `{dname}.{slot}`"))?;
    let v = value.trim().to_lowercase();
    if v == DONTCARE {
        return Ok((s, SlotValue::DontCare));
    }
    ontology
        .value_index(d, s, &v)
        .map(|i| (s, SlotValue::Value(i)))
        .ok_or_else(|| format!("illegal value `{value}` for slot `{dname}.{slot}`"))
}

impl RawDialogue {
    fn validate(self, ontology: &Ontology, p: &mut Problems<'_>) -> Option<Dialogue> {
        let before = p.list.len();
        let id = self.id;
        let mut goal = DialogueGoal::default();
        for (dname, g) in self.goal {
            let here = format!("dialogue `{id}` goal");
            let d = match domain_of(ontology, &dname) {
                Ok(d) => d,
                Err(e) => {
                    p.push(&here, e);
                    continue;
                }
            };
            let mut dg = DomainGoal::default();
            for (slot, value) in g.constraints {
                match slot_value(ontology, d, &slot, &value) {
                    Ok(_) => {
                        dg.constraints.insert(slot, value.trim().to_lowercase());
                    }
                    Err(e) => p.push(&here, e),
                }
            }
            for r in g.requests {
                if ontology.domain(d).requestable.contains(&r) {
                    dg.requests.insert(r);
                } else {
                    p.push(&here, format!("`{dname}.{r}` is not requestable"));
                }
            }
            goal.domains.insert(d, dg);
        }
        if self.turns.is_empty() {
            p.push(&format!("dialogue `{id}`"), "no turns");
        }
        let mut turns = Vec::with_capacity(self.turns.len());
        for (i, t) in self.turns.into_iter().enumerate() {
            let here = format!("dialogue `{id}` turn {}", i + 1);
            let mut belief = BeliefState::empty(ontology);
            for (key, value) in &t.belief {
                let Some((dname, slot)) = key.split_once('-') else {
                    p.push(&here, format!("belief key `{key}` is not `domain-slot`"));
                    continue;
                };
                match domain_of(ontology, dname).and_then(|d| slot_value(ontology, d, slot, value).map(|sv| (d, sv))) {
                    Ok((d, (s, v))) => belief.set(d, s, v),
                    Err(e) => p.push(&here, e),
                }
            }
            let mut acts = Vec::new();
            for raw in &t.acts {
                match parse_act(ontology, raw) {
                    Ok(a) => acts.push(a),
                    Err(e) => p.push(&here, e),
                }
            }
            let mut domains = BTreeSet::new();
            for dname in &t.domains {
                match domain_of(ontology, dname) {
                    Ok(d) => {
                        domains.insert(d);
                    }
                    Err(e) => p.push(&here, e),
                }
            }
            turns.push(Turn {
                user: t.user,
                belief,
                action: SystemAction::new(acts),
                response_delex: t.response_delex,
                response_lex: t.response_lex,
                domains,
            });
        }
        (p.list.len() == before).then_some(Dialogue { id, goal, turns })
    }
}

fn parse_act(ontology: &Ontology, raw: &[String]) -> std::result::Result<Act, String> {
    if !(2..=3).contains(&raw.len()) {
        return Err(format!("act {raw:?} must be [domain, act, slot]"));
    }
    let d = domain_of(ontology, &raw[0])?;
    let kind = ActType::from_name(&raw[1]).ok_or_else(|| format!("unknown act type `{}`", raw[1]))?;
    let slot = match raw.get(2).map(String::as_str) {
        None | Some("none") => None,
        Some(s) => Some(
            ontology
                .act_slot_index(d, s)
                .ok_or_else(|| format!("unknown act slot `{}.{s}`", raw[0]))?,
        ),
    };
    Ok(Act { domain: d, kind, slot })
}

impl Dialogue {
    fn to_raw(&self, ontology: &Ontology) -> RawDialogue {
        let goal = self
            .goal
            .domains
            .iter()
            .map(|(&d, g)| {
                (
                    ontology.domain(d).name.clone(),
                    RawDomainGoal {
                        constraints: g.constraints.clone(),
                        requests: g.requests.iter().cloned().collect(),
                    },
                )
            })
            .collect();
        let turns = self
            .turns
            .iter()
            .map(|t| RawTurn {
                user: t.user.clone(),
                belief: t
                    .belief
                    .filled(ontology)
                    .into_iter()
                    .map(|(d, s, v)| (format!("{d}-{s}"), v.to_string()))
                    .collect(),
                acts: t
                    .action
                    .acts()
                    .iter()
                    .map(|a| {
                        let def = ontology.domain(a.domain);
                        vec![
                            def.name.clone(),
                            a.kind.name().to_string(),
                            a.slot.map_or("none".to_string(), |s| def.act_slots()[s].to_string()),
                        ]
                    })
                    .collect(),
                response_delex: t.response_delex.clone(),
                response_lex: t.response_lex.clone(),
                domains: t.domains.iter().map(|&d| ontology.domain(d).name.clone()).collect(),
            })
            .collect();
        RawDialogue {
            id: self.id.clone(),
            goal,
            turns,
        }
    }

    /// Gold domain state after each turn; see [`derive_domain_states`].
    pub fn domain_states(&self, ontology: &Ontology) -> Vec<DomainState> {
        derive_domain_states(ontology, self)
    }
}

/// A domain is active at turn t once it has a non-NULL belief slot or a
/// turn-domain annotation at any turn up to t; it never switches off.
pub fn derive_domain_states(ontology: &Ontology, dialogue: &Dialogue) -> Vec<DomainState> {
    let mut d = DomainState::all_off(ontology);
    dialogue
        .turns
        .iter()
        .map(|t| {
            for dom in 0..ontology.num_domains() {
                if t.belief.has_constraint(dom) || t.domains.contains(&dom) {
                    d.set(dom, true);
                }
            }
            d.clone()
        })
        .collect()
}

pub fn parse_corpus_str(ontology: &Ontology, text: &str, origin: &str) -> Result<CorpusSplits> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        Error::format(origin, format!("line {} column {}: {e}", e.line(), e.column()))
    })?;
    let raw = if value.is_array() {
        let test: Vec<RawDialogue> = serde_json::from_value(value).map_err(|e| Error::format(origin, e.to_string()))?;
        RawSplits {
            provenance: None,
            train: Vec::new(),
            validation: Vec::new(),
            test,
        }
    } else {
        serde_json::from_value(value).map_err(|e| Error::format(origin, e.to_string()))?
    };

    let mut p = Problems {
        file: origin,
        list: Vec::new(),
    };
    let mut seen = HashSet::new();
    let mut split = |list: Vec<RawDialogue>, p: &mut Problems<'_>| -> Vec<Dialogue> {
        let mut out = Vec::with_capacity(list.len());
        for d in list {
            if !seen.insert(d.id.clone()) {
                p.push(&format!("dialogue `{}`", d.id), "duplicate id");
                continue;
            }
            if let Some(d) = d.validate(ontology, p) {
                out.push(d);
            }
        }
        out
    };
    let train = split(raw.train, &mut p);
    let validation = split(raw.validation, &mut p);
    let test = split(raw.test, &mut p);
    if !p.list.is_empty() {
        return Err(Error::format(p.file, p.list.join("; ")));
    }
    Ok(CorpusSplits {
        train,
        validation,
        test,
        provenance: raw.provenance.unwrap_or(Provenance::Ingested),
    })
}

pub fn parse_corpus(ontology: &Ontology, path: impl AsRef<Path>) -> Result<CorpusSplits> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_str(ontology, &text, &path.display().to_string())
}
