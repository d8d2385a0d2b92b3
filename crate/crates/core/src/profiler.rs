//! Input-context length per turn index: the dots response context
//! `[CLS] U [SEP] D B DB A` versus the accumulated dialogue history (every
//! earlier user utterance and system response plus the current utterance).
//! Contexts are built from gold annotations; no model is involved.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::database::Database;
use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::state::{ContextBuilder, ContextKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileMode {
    Dots,
    FullHistory,
}

impl ProfileMode {
    pub const ALL: [ProfileMode; 2] = [ProfileMode::Dots, ProfileMode::FullHistory];

    pub fn name(self) -> &'static str {
        match self {
            ProfileMode::Dots => "dots",
            ProfileMode::FullHistory => "full-history",
        }
    }
}

impl fmt::Display for ProfileMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub turn: usize,
    pub mode: ProfileMode,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    pub count: usize,
}

/// Rows ordered by turn, then mode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthProfile {
    pub rows: Vec<ProfileRow>,
}

impl LengthProfile {
    pub fn mode_rows(&self, mode: ProfileMode) -> impl Iterator<Item = &ProfileRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    pub fn means(&self, mode: ProfileMode) -> Vec<f64> {
        self.mode_rows(mode).map(|r| r.mean).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("turn,mode,mean,min,max,count\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.4},{},{},{}", r.turn, r.mode, r.mean, r.min, r.max, r.count);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Token lengths of every turn of one dialogue under `mode`.
pub fn dialogue_lengths(schema: &Schema, db: &Database, dialogue: &Dialogue, mode: ProfileMode) -> Result<Vec<usize>> {
    let vocab = schema.vocab();
    match mode {
        ProfileMode::Dots => {
            let ontology = schema.ontology();
            let builder = ContextBuilder::new(schema).with_max_len(usize::MAX);
            let states = dialogue.domain_states(ontology);
            dialogue
                .turns
                .iter()
                .zip(&states)
                .map(|(t, d)| {
                    let u = vocab.tokenize(&t.user);
                    let dbr = db.query(ontology, &t.belief, d);
                    let c = builder.build(ContextKind::Response, &u, d, &t.belief, Some(&dbr), Some(&t.action))?;
                    Ok(c.len())
                })
                .collect()
        }
        ProfileMode::FullHistory => {
            let mut history = 0;
            Ok(dialogue
                .turns
                .iter()
                .map(|t| {
                    let u = vocab.tokenize(&t.user).len();
                    let len = history + u;
                    history += u + vocab.tokenize(&t.response_delex).len();
                    len
                })
                .collect())
        }
    }
}

pub fn profile(schema: &Schema, db: &Database, dialogues: &[Dialogue], modes: &[ProfileMode]) -> Result<LengthProfile> {
    let mut acc: BTreeMap<(usize, ProfileMode), Vec<usize>> = BTreeMap::new();
    for dlg in dialogues {
        for &mode in modes {
            for (i, len) in dialogue_lengths(schema, db, dlg, mode)?.into_iter().enumerate() {
                acc.entry((i + 1, mode)).or_default().push(len);
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|((turn, mode), lens)| ProfileRow {
            turn,
            mode,
            mean: lens.iter().sum::<usize>() as f64 / lens.len() as f64,
            min: *lens.iter().min().expect("non-empty"),
            max: *lens.iter().max().expect("non-empty"),
            count: lens.len(),
        })
        .collect();
    Ok(LengthProfile { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic;
    use crate::training::corpus_schema;
    use crate::world;

    fn setup(n: usize) -> (Schema, Database, Vec<Dialogue>) {
        let o = world::ontology();
        let db = world::database(&o).unwrap();
        let splits = generate_synthetic(&o, &db, n, 11).unwrap();
        let schema = corpus_schema(&o, &splits).unwrap();
        let all: Vec<Dialogue> = splits.all().cloned().collect();
        (schema, db, all)
    }

    #[test]
    fn hand_counted_single_dialogue() {
        let (schema, db, all) = setup(10);
        let mut d = all[0].clone();
        d.turns.truncate(2);
        d.turns[0].user = "hello there".into();
        d.turns[0].response_delex = "what area ?".into();
        d.turns[1].user = "the east".into();
        let p = profile(&schema, &db, std::slice::from_ref(&d), &ProfileMode::ALL).unwrap();
        assert_eq!(p.rows.len(), 4);
        let full = p.means(ProfileMode::FullHistory);
        // "hello there" = 2; then 2 + 3 ("what area ?") + 2 ("the east")
        assert_eq!(full, [2.0, 7.0]);
        // [CLS] U [SEP] + 6 domain-state tokens + belief + DB + action
        let states = d.domain_states(schema.ontology());
        let belief = crate::state::serialize_belief_state(&schema, &d.turns[0].belief).len();
        let action = crate::state::serialize_action(&schema, &d.turns[0].action).len();
        let dbn = 2 * states[0].active_domains().count();
        let dots = p.means(ProfileMode::Dots);
        assert_eq!(dots[0], (2 + 2 + 6 + belief + dbn + action) as f64);
        let csv = p.to_csv();
        assert!(csv.starts_with("turn,mode,mean,min,max,count\n1,dots,"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn single_turn_modes_differ_by_state_segments_only() {
        let (schema, db, all) = setup(10);
        let mut d = all[0].clone();
        d.turns.truncate(1);
        let dots = dialogue_lengths(&schema, &db, &d, ProfileMode::Dots).unwrap()[0];
        let full = dialogue_lengths(&schema, &db, &d, ProfileMode::FullHistory).unwrap()[0];
        let t = &d.turns[0];
        let st = &d.domain_states(schema.ontology())[0];
        let constant = 2
            + crate::state::serialize_domain_state(&schema, st).len()
            + crate::state::serialize_belief_state(&schema, &t.belief).len()
            + 2 * st.active_domains().count()
            + crate::state::serialize_action(&schema, &t.action).len();
        assert_eq!(dots, full + constant);
    }

    #[test]
    fn counts_do_not_increase_with_turn() {
        let (schema, db, all) = setup(60);
        let p = profile(&schema, &db, &all, &[ProfileMode::Dots]).unwrap();
        let counts: Vec<usize> = p.rows.iter().map(|r| r.count).collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
        assert_eq!(counts[0], all.len());
    }

    #[test]
    fn history_grows_within_each_dialogue() {
        let (schema, db, all) = setup(60);
        for d in &all {
            let l = dialogue_lengths(&schema, &db, d, ProfileMode::FullHistory).unwrap();
            assert!(l.windows(2).all(|w| w[1] > w[0]), "{}: {l:?}", d.id);
        }
    }

    #[test]
    fn rerun_is_byte_identical() {
        let (schema, db, all) = setup(20);
        let a = profile(&schema, &db, &all, &ProfileMode::ALL).unwrap().to_csv();
        let b = profile(&schema, &db, &all, &ProfileMode::ALL).unwrap().to_csv();
        assert_eq!(a, b);
    }
}
