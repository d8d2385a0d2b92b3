//! Template dialogues over an ontology and database.
//!
//! Goals are read off real entities, so they are always satisfiable. Domains
//! are visited in ontology order; a later domain is usually introduced by a
//! bare request ("i also need a hotel") and its constraints then arrive in
//! elliptical answers ("a cheap one please") that never name the domain.
//!
//! The system policy is a function of the tracked state only: while the
//! current domain still has several matches and an unfilled slot, ask for the
//! first unfilled slot; otherwise offer the first matching entity.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_domain_states, CorpusSplits, Dialogue, DialogueGoal, DomainGoal, Provenance, Turn};
use crate::database::{Database, EntityRecord};
use crate::error::{Error, Result};
use crate::evaluation::lexicalize;
use crate::ontology::{lex, placeholder_token, Ontology};
use crate::state::{Act, ActType, BeliefState, SlotValue, SystemAction};

const DOMAIN_COUNT_WEIGHTS: [f64; 3] = [0.3, 0.5, 0.2];
const CONSTRAINT_PROB: f64 = 0.6;
const REQUEST_PROB: f64 = 0.35;
const BARE_INTRO_PROB: f64 = 0.85;

fn pick<'a>(rng: &mut impl Rng, options: &[&'a str]) -> &'a str {
    options.choose(rng).copied().expect("non-empty template list")
}

/// Phrase that states a value inside a sentence naming the domain.
fn mention_phrase(slot: &str, value: &str) -> String {
    match slot {
        "area" => format!("in the {value}"),
        "food" => format!("serving {value} food"),
        "stars" => format!("with {value} stars"),
        "destination" => format!("to the {value}"),
        "leaveat" => format!("in the {value}"),
        _ => format!("with {slot} {value}"),
    }
}

/// Stand-alone answer to a slot request; never names the domain.
fn answer(rng: &mut impl Rng, slot: &str, value: Option<&str>) -> String {
    let Some(v) = value else {
        return pick(rng, &["i do not mind .", "any is fine .", "it does not matter ."]).to_string();
    };
    let templates: &[&str] = match slot {
        "pricerange" => &["a {} one please .", "{} please .", "something {} ."],
        "area" => &["the {} please .", "in the {} ."],
        "food" => &["{} food please .", "i would like {} ."],
        "stars" => &["{} stars please .", "it should have {} stars ."],
        "destination" => &["to the {} please .", "i am going to the {} ."],
        "leaveat" => &["in the {} please .", "i want to leave in the {} ."],
        _ => &["{} please ."],
    };
    pick(rng, templates).replace("{}", v)
}

fn request_question(rng: &mut impl Rng, domain: &str, slot: &str) -> String {
    let templates: &[&str] = match slot {
        "pricerange" => &["what price range would you like ?", "do you have a price range in mind for the {d} ?"],
        "area" => &["which area would you like ?", "what part of town should the {d} be in ?"],
        "food" => &["what type of food would you like ?", "which cuisine do you prefer ?"],
        "stars" => &["how many stars should the {d} have ?"],
        "destination" => &["where are you going ?", "where would you like to go ?"],
        "leaveat" => &["when would you like to leave ?"],
        _ => &["what {s} would you like ?"],
    };
    pick(rng, templates).replace("{d}", domain).replace("{s}", slot)
}

fn slot_noun(slot: &str) -> String {
    match slot {
        "phone" => "phone number".into(),
        s => s.to_string(),
    }
}

/// Delexicalized offer sentence and the informable slots it mentions.
fn offer_sentence(ontology: &Ontology, d: usize) -> (String, Vec<String>, ActType) {
    let def = ontology.domain(d);
    let name = &def.name;
    let p = |s: &str| placeholder_token(name, s);
    let has = |s: &str| def.informable.iter().any(|i| i.slot == s);
    match name.as_str() {
        "restaurant" if has("pricerange") && has("food") && has("area") => (
            format!(
                "{} is a {} {} restaurant in the {} .",
                p("name"),
                p("pricerange"),
                p("food"),
                p("area")
            ),
            vec!["pricerange".into(), "food".into(), "area".into()],
            ActType::Offer,
        ),
        "hotel" if has("pricerange") && has("stars") && has("area") => (
            format!(
                "{} is a {} {} star hotel in the {} .",
                p("name"),
                p("pricerange"),
                p("stars"),
                p("area")
            ),
            vec!["pricerange".into(), "stars".into(), "area".into()],
            ActType::Offer,
        ),
        "taxi" if has("destination") && has("leaveat") => (
            format!(
                "i have booked a {} to the {} in the {} .",
                p("name"),
                p("destination"),
                p("leaveat")
            ),
            vec!["destination".into(), "leaveat".into()],
            ActType::Book,
        ),
        _ => (format!("{} is available .", p("name")), Vec::new(), ActType::Offer),
    }
}

/// Ontology value index for an entity attribute, matching through synonyms.
fn ontology_value(ontology: &Ontology, db: &Database, d: usize, s: usize, raw: &str) -> Option<usize> {
    let want = db.normalize(raw);
    ontology.domain(d).informable[s]
        .values
        .iter()
        .position(|v| db.normalize(v) == want)
}

struct Builder<'a> {
    ontology: &'a Ontology,
    db: &'a Database,
    belief: BeliefState,
    turns: Vec<Turn>,
}

impl Builder<'_> {
    fn push(&mut self, user: String, acts: Vec<Act>, delex: String, domains: BTreeSet<usize>) {
        let entities: BTreeMap<usize, &EntityRecord> = acts
            .iter()
            .map(|a| a.domain)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter_map(|d| self.db.select_entity(self.ontology, d, &self.belief).map(|e| (d, e)))
            .collect();
        let response_lex = lexicalize(self.ontology, &delex, &entities);
        self.turns.push(Turn {
            user,
            belief: self.belief.clone(),
            action: SystemAction::new(acts),
            response_delex: delex,
            response_lex,
            domains,
        });
    }

    /// First unfilled slot of `d` while more than one entity still matches.
    fn next_request(&self, d: usize) -> Option<usize> {
        if self.db.match_count(self.ontology, d, &self.belief) < 2 {
            return None;
        }
        self.belief
            .domain_values(d)
            .iter()
            .position(|v| *v == SlotValue::Null)
    }
}

fn sample_goal(
    rng: &mut ChaCha8Rng,
    ontology: &Ontology,
    db: &Database,
    d: usize,
) -> (DomainGoal, BTreeMap<usize, usize>) {
    let def = ontology.domain(d);
    let entities: Vec<&EntityRecord> = db.entities(d).collect();
    let entity = entities[rng.gen_range(0..entities.len())];
    let mut slots: Vec<usize> = (0..def.informable.len())
        .filter(|_| rng.gen_bool(CONSTRAINT_PROB))
        .collect();
    if slots.is_empty() {
        slots.push(rng.gen_range(0..def.informable.len()));
    }
    let mut goal = DomainGoal::default();
    let mut values = BTreeMap::new();
    for s in slots {
        let slot = &def.informable[s].slot;
        let Some(v) = entity.value(slot).and_then(|raw| ontology_value(ontology, db, d, s, raw)) else {
            continue;
        };
        goal.constraints
            .insert(slot.clone(), def.informable[s].values[v].clone());
        values.insert(s, v);
    }
    let mut requestable: Vec<&String> = def.requestable.iter().filter(|r| *r != "name").collect();
    requestable.shuffle(rng);
    for r in requestable.into_iter().take(2) {
        if rng.gen_bool(REQUEST_PROB) {
            goal.requests.insert(r.clone());
        }
    }
    (goal, values)
}

fn generate_dialogue(rng: &mut ChaCha8Rng, ontology: &Ontology, db: &Database, id: String, eligible: &[usize]) -> Dialogue {
    let weights: Vec<f64> = DOMAIN_COUNT_WEIGHTS
        .iter()
        .take(eligible.len())
        .copied()
        .collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    let mut k = weights.len();
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            k = i + 1;
            break;
        }
        x -= w;
    }
    let mut chosen: Vec<usize> = eligible.choose_multiple(rng, k).copied().collect();
    chosen.sort_unstable();

    let mut goal = DialogueGoal::default();
    let mut goal_values = BTreeMap::new();
    for &d in &chosen {
        let (g, v) = sample_goal(rng, ontology, db, d);
        goal.domains.insert(d, g);
        goal_values.insert(d, v);
    }

    let mut b = Builder {
        ontology,
        db,
        belief: BeliefState::empty(ontology),
        turns: Vec::new(),
    };
    for (j, &d) in chosen.iter().enumerate() {
        let def = ontology.domain(d);
        let dname = def.name.clone();
        let values = &goal_values[&d];
        let here: BTreeSet<usize> = [d].into();

        // introduction, optionally revealing some constraints
        let mut revealed: Vec<usize> = if j > 0 && rng.gen_bool(BARE_INTRO_PROB) {
            Vec::new()
        } else {
            let mut all: Vec<usize> = values.keys().copied().collect();
            all.shuffle(rng);
            let n = rng.gen_range(0..=all.len());
            all.truncate(n);
            all.sort_unstable();
            all
        };
        revealed.retain(|s| values.contains_key(s));
        for &s in &revealed {
            b.belief.set(d, s, SlotValue::Value(values[&s]));
        }
        let value_of = |s: usize| def.informable[s].values[values[&s]].as_str();
        let adjective = revealed
            .iter()
            .find(|&&s| def.informable[s].slot == "pricerange")
            .map(|&s| format!("{} ", value_of(s)))
            .unwrap_or_default();
        let phrases: Vec<String> = revealed
            .iter()
            .filter(|&&s| def.informable[s].slot != "pricerange")
            .map(|&s| mention_phrase(&def.informable[s].slot, value_of(s)))
            .collect();
        let opener = if j == 0 {
            pick(rng, &["i am looking for a", "i need a", "can you find me a"])
        } else {
            pick(rng, &["i also need a", "i am also looking for a"])
        };
        let mut user = format!("{opener} {adjective}{dname}");
        for p in &phrases {
            user.push(' ');
            user.push_str(p);
        }
        user.push_str(" .");

        // ask for slots until the match is unique or nothing is left to ask
        loop {
            match b.next_request(d) {
                Some(s) => {
                    let slot = def.informable[s].slot.clone();
                    let q = request_question(rng, &dname, &slot);
                    let act = Act {
                        domain: d,
                        kind: ActType::Request,
                        slot: ontology.act_slot_index(d, &slot),
                    };
                    b.push(std::mem::take(&mut user), vec![act], q, here.clone());
                    let v = values.get(&s).copied();
                    user = answer(rng, &slot, v.map(|v| def.informable[s].values[v].as_str()));
                    b.belief
                        .set(d, s, v.map_or(SlotValue::DontCare, SlotValue::Value));
                }
                None => break,
            }
        }

        let (sentence, mentioned, kind) = offer_sentence(ontology, d);
        let mut acts = vec![Act {
            domain: d,
            kind,
            slot: ontology.act_slot_index(d, "name"),
        }];
        acts.extend(mentioned.iter().map(|s| Act {
            domain: d,
            kind: ActType::Inform,
            slot: ontology.act_slot_index(d, s),
        }));
        b.push(user, acts, sentence, here.clone());

        let requests: Vec<&String> = goal.domains[&d].requests.iter().collect();
        if !requests.is_empty() {
            let nouns: Vec<String> = requests.iter().map(|r| slot_noun(r)).collect();
            let user = match pick(rng, &["what", "can i"]) {
                "what" => format!("what is the {} ?", nouns.join(" and ")),
                _ => format!("can i get the {} ?", nouns.join(" and ")),
            };
            let answer = requests
                .iter()
                .map(|r| format!("the {} is {}", slot_noun(r), placeholder_token(&dname, r)))
                .collect::<Vec<_>>()
                .join(" and ")
                + " .";
            let acts = requests
                .iter()
                .map(|r| Act {
                    domain: d,
                    kind: ActType::Inform,
                    slot: ontology.act_slot_index(d, r),
                })
                .collect();
            b.push(user, acts, answer, here.clone());
        }
    }

    let last = *chosen.last().expect("at least one domain");
    let user = pick(rng, &["thank you , goodbye .", "that is all , thanks ."]).to_string();
    b.push(
        user,
        vec![Act {
            domain: last,
            kind: ActType::Bye,
            slot: None,
        }],
        "you are welcome , goodbye .".into(),
        BTreeSet::new(),
    );

    Dialogue {
        id,
        goal,
        turns: b.turns,
    }
}

/// Deterministic per seed; split 80/10/10 in generation order.
pub fn generate_synthetic(ontology: &Ontology, db: &Database, n: usize, seed: u64) -> Result<CorpusSplits> {
    if n == 0 {
        return Err(Error::Argument("need at least one dialogue".into()));
    }
    let eligible: Vec<usize> = (0..ontology.num_domains())
        .filter(|&d| db.num_entities(d) > 0 && !ontology.domain(d).informable.is_empty())
        .collect();
    if eligible.is_empty() {
        return Err(Error::Argument("no domain has both informable slots and entities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = n.to_string().len().max(4);
    let dialogues: Vec<Dialogue> = (0..n)
        .map(|i| generate_dialogue(&mut rng, ontology, db, format!("syn-{seed}-{i:0width$}"), &eligible))
        .collect();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut it = dialogues.into_iter();
    let train = it.by_ref().take(n_train).collect();
    let validation = it.by_ref().take(n_val).collect();
    let test = it.collect();
    Ok(CorpusSplits {
        train,
        validation,
        test,
        provenance: Provenance::Synthetic { seed },
    })
}

/// Turns that add a belief value for a domain the utterance does not name,
/// while at least two domains are active.
pub fn elliptical_turns(ontology: &Ontology, dialogue: &Dialogue) -> usize {
    let states = derive_domain_states(ontology, dialogue);
    let mut prev = BeliefState::empty(ontology);
    let mut count = 0;
    for (t, turn) in dialogue.turns.iter().enumerate() {
        let words: BTreeSet<String> = lex(&turn.user).into_iter().collect();
        let hit = (0..ontology.num_domains()).any(|d| {
            let changed = turn
                .belief
                .domain_values(d)
                .iter()
                .zip(prev.domain_values(d))
                .any(|(a, b)| a != b && *a != SlotValue::Null);
            changed && !words.contains(&ontology.domain(d).name)
        });
        if hit && states[t].active_domains().count() >= 2 {
            count += 1;
        }
        prev = turn.belief.clone();
    }
    count
}

pub fn is_elliptical_multi_domain(ontology: &Ontology, dialogue: &Dialogue) -> bool {
    dialogue.goal.domains.len() >= 2 && elliptical_turns(ontology, dialogue) >= 1
}
