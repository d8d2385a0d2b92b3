//! Corpus metrics: inform rate, success rate and BLEU, plus the
//! (de)lexicalization helpers they rely on.
//!
//! Inform and success follow the usual MultiWOZ convention. A goal domain that
//! has entities is informed when the last entity the system named for it
//! (a `[domain_name]` placeholder, resolved against the belief state in force)
//! satisfies the goal constraints; if nothing in the DB matches the goal, a
//! `nooffer` act counts instead. Success additionally needs every requested
//! slot's placeholder in some response.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::corpus::{Dialogue, DialogueGoal};
use crate::database::{Database, EntityRecord};
use crate::error::{Error, Result};
use crate::ontology::{lex, placeholder_token, Ontology};
use crate::pipeline::{GoldTurn, Pipeline, TurnResult};
use crate::state::{ActType, BeliefState, SystemAction};

/// Smoothing mass for n-gram orders without a single match.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Splits a placeholder token `[domain_slot]` for a known domain.
fn split_placeholder<'t>(ontology: &Ontology, token: &'t str) -> Option<(usize, &'t str)> {
    let inner = token.strip_prefix('[')?.strip_suffix(']')?;
    ontology.domains().iter().enumerate().find_map(|(i, d)| {
        inner
            .strip_prefix(d.name.as_str())
            .and_then(|rest| rest.strip_prefix('_'))
            .map(|slot| (i, slot))
    })
}

/// Replaces every mention of the entity's attribute and extra values in
/// `response` by the matching `[domain_slot]` placeholder. Longer values win;
/// matches respect token boundaries.
pub fn delexicalize(ontology: &Ontology, domain: usize, entity: &EntityRecord, response: &str) -> String {
    let def = ontology.domain(domain);
    let mut values: Vec<(Vec<String>, String)> = def
        .act_slots()
        .into_iter()
        .filter_map(|slot| {
            let v = lex(entity.value(slot)?);
            (!v.is_empty()).then(|| (v, placeholder_token(&def.name, slot)))
        })
        .collect();
    values.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    let tokens = lex(response);
    let mut out: Vec<String> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    'outer: while i < tokens.len() {
        for (v, ph) in &values {
            if tokens[i..].starts_with(v) {
                out.push(ph.clone());
                i += v.len();
                continue 'outer;
            }
        }
        out.push(tokens[i].clone());
        i += 1;
    }
    out.join(" ")
}

/// Fills placeholders of domains present in `entities`; others stay as they are.
pub fn lexicalize(ontology: &Ontology, delex: &str, entities: &BTreeMap<usize, &EntityRecord>) -> String {
    lex(delex)
        .into_iter()
        .map(|tok| {
            split_placeholder(ontology, &tok)
                .and_then(|(d, slot)| entities.get(&d).and_then(|e| e.value(slot)))
                .map(str::to_string)
                .unwrap_or(tok)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// What the scorer needs to know about one system turn.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemTurn {
    pub action: SystemAction,
    pub response_delex: String,
    /// Domains whose name placeholder appears in the response, with the entity
    /// it resolves to (`None` when nothing matches the belief).
    pub offered: BTreeMap<usize, Option<String>>,
}

impl SystemTurn {
    pub fn new(ontology: &Ontology, db: &Database, belief: &BeliefState, action: SystemAction, response_delex: String) -> Self {
        let mut offered = BTreeMap::new();
        for tok in lex(&response_delex) {
            if let Some((d, "name")) = split_placeholder(ontology, &tok) {
                offered.insert(d, db.select_entity(ontology, d, belief).map(|e| e.id.clone()));
            }
        }
        SystemTurn {
            action,
            response_delex,
            offered,
        }
    }
}

pub fn score_inform(db: &Database, turns: &[SystemTurn], goal: &DialogueGoal) -> bool {
    goal.domains.iter().all(|(&d, g)| {
        if db.num_entities(d) == 0 {
            return true;
        }
        let offered = turns.iter().rev().find_map(|t| t.offered.get(&d));
        match offered {
            Some(Some(id)) => db
                .entity(d, id)
                .is_some_and(|e| db.satisfies(e, &g.constraints)),
            _ => {
                db.find(d, &g.constraints).is_empty()
                    && turns.iter().any(|t| t.action.has(d, ActType::NoOffer))
            }
        }
    })
}

pub fn score_success(ontology: &Ontology, turns: &[SystemTurn], goal: &DialogueGoal, inform: bool) -> bool {
    if !inform {
        return false;
    }
    let provided: std::collections::HashSet<String> = turns.iter().flat_map(|t| lex(&t.response_delex)).collect();
    goal.domains.iter().all(|(&d, g)| {
        let name = &ontology.domain(d).name;
        g.requests
            .iter()
            .all(|r| provided.contains(&placeholder_token(name, r)))
    })
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 in `[0, 100]`: clipped n-gram precisions pooled over the
/// corpus, uniform weights, brevity penalty, and [`BLEU_EPSILON`] in place of a
/// zero match count.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Argument(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Argument("BLEU of an empty corpus".into()));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4)
        .map(|i| {
            let p = if matches[i] == 0 {
                BLEU_EPSILON / totals[i].max(1) as f64
            } else {
                matches[i] as f64 / totals[i] as f64
            };
            p.ln() / 4.0
        })
        .sum();
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok((100.0 * bp * log_p.exp()).clamp(0.0, 100.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DialogueVerdict {
    pub id: String,
    pub turns: usize,
    pub inform: bool,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub inform: f64,
    pub success: f64,
    pub bleu: f64,
    /// Fraction of (turn, domain) activation flags predicted correctly, in percent.
    pub domain_accuracy: f64,
    /// Turns whose full predicted belief equals the gold one, in percent.
    pub joint_belief_accuracy: f64,
    pub dialogues: usize,
    pub turns: usize,
    pub failed_dialogues: usize,
    pub per_dialogue: Vec<DialogueVerdict>,
}

impl EvalReport {
    pub fn to_json(&self, per_dialogue: bool) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if !per_dialogue {
            v.as_object_mut().expect("object").remove("per_dialogue");
        }
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    /// Summary as a one-row CSV.
    pub fn to_csv(&self) -> String {
        format!(
            "inform,success,bleu,domain_accuracy,joint_belief_accuracy,dialogues,turns,failed_dialogues\n\
             {:.4},{:.4},{:.4},{:.4},{:.4},{},{},{}\n",
            self.inform,
            self.success,
            self.bleu,
            self.domain_accuracy,
            self.joint_belief_accuracy,
            self.dialogues,
            self.turns,
            self.failed_dialogues
        )
    }

    pub fn per_dialogue_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "turns", "inform", "success", "error"]).expect("in-memory write");
        for d in &self.per_dialogue {
            w.write_record([
                d.id.as_str(),
                &d.turns.to_string(),
                &d.inform.to_string(),
                &d.success.to_string(),
                d.error.as_deref().unwrap_or(""),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn write(&self, dir: impl AsRef<Path>, per_dialogue: bool) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        put("report.json", self.to_json(per_dialogue) + "\n")?;
        put("report.csv", self.to_csv())?;
        if per_dialogue {
            put("per_dialogue.csv", self.per_dialogue_csv())?;
        }
        Ok(())
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Per-dialogue material gathered by either the model or the gold pass-through.
struct Scored {
    verdict: DialogueVerdict,
    candidates: Vec<Vec<String>>,
    references: Vec<Vec<String>>,
    domain_hits: usize,
    domain_total: usize,
    belief_hits: usize,
}

fn aggregate(scored: Vec<Scored>) -> Result<EvalReport> {
    let dialogues = scored.len();
    let turns: usize = scored.iter().map(|s| s.verdict.turns).sum();
    let mut candidates = Vec::new();
    let mut references = Vec::new();
    for s in &scored {
        candidates.extend(s.candidates.iter().cloned());
        references.extend(s.references.iter().cloned());
    }
    let bleu = if candidates.is_empty() {
        0.0
    } else {
        bleu(&candidates, &references)?
    };
    Ok(EvalReport {
        inform: pct(scored.iter().filter(|s| s.verdict.inform).count(), dialogues),
        success: pct(scored.iter().filter(|s| s.verdict.success).count(), dialogues),
        bleu,
        domain_accuracy: pct(
            scored.iter().map(|s| s.domain_hits).sum(),
            scored.iter().map(|s| s.domain_total).sum(),
        ),
        joint_belief_accuracy: pct(scored.iter().map(|s| s.belief_hits).sum(), turns),
        dialogues,
        turns,
        failed_dialogues: scored.iter().filter(|s| s.verdict.error.is_some()).count(),
        per_dialogue: scored.into_iter().map(|s| s.verdict).collect(),
    })
}

/// Scores the gold annotations themselves, bypassing any model.
pub fn evaluate_gold(ontology: &Ontology, db: &Database, dialogues: &[Dialogue]) -> Result<EvalReport> {
    let scored = dialogues
        .iter()
        .map(|dlg| {
            let turns: Vec<SystemTurn> = dlg
                .turns
                .iter()
                .map(|t| SystemTurn::new(ontology, db, &t.belief, t.action.clone(), t.response_delex.clone()))
                .collect();
            let inform = score_inform(db, &turns, &dlg.goal);
            let refs: Vec<Vec<String>> = dlg.turns.iter().map(|t| lex(&t.response_delex)).collect();
            Scored {
                verdict: DialogueVerdict {
                    id: dlg.id.clone(),
                    turns: dlg.turns.len(),
                    inform,
                    success: score_success(ontology, &turns, &dlg.goal, inform),
                    error: None,
                },
                candidates: refs.clone(),
                references: refs,
                domain_hits: dlg.turns.len() * ontology.num_domains(),
                domain_total: dlg.turns.len() * ontology.num_domains(),
                belief_hits: dlg.turns.len(),
            }
        })
        .collect();
    aggregate(scored)
}

/// Runs every dialogue through the pipeline and scores the outcome. With
/// `oracle`, gold states are fed downstream each turn.
pub fn evaluate(pipeline: &Pipeline<'_>, dialogues: &[Dialogue], oracle: bool) -> Result<EvalReport> {
    let ontology = pipeline.schema.ontology();
    let db = pipeline.db;
    let mut scored = Vec::with_capacity(dialogues.len());
    for dlg in dialogues {
        let gold_states = dlg.domain_states(ontology);
        let golds: Vec<GoldTurn> = dlg
            .turns
            .iter()
            .zip(&gold_states)
            .map(|(t, d)| GoldTurn {
                domain: d.clone(),
                belief: t.belief.clone(),
                action: t.action.clone(),
            })
            .collect();
        let utterances: Vec<&str> = dlg.turns.iter().map(|t| t.user.as_str()).collect();
        let (results, error): (Vec<TurnResult>, Option<String>) =
            match pipeline.run_dialogue(&utterances, oracle.then_some(golds.as_slice())) {
                Ok(r) => (r, None),
                Err(e) => {
                    let msg = e.to_string();
                    (e.completed, Some(msg))
                }
            };
        let turns: Vec<SystemTurn> = results.iter().map(|r| r.system_turn(ontology, db)).collect();
        let (inform, success) = if error.is_some() {
            (false, false)
        } else {
            let inform = score_inform(db, &turns, &dlg.goal);
            (inform, score_success(ontology, &turns, &dlg.goal, inform))
        };
        let mut domain_hits = 0;
        let mut belief_hits = 0;
        for (r, (g, d)) in results.iter().zip(dlg.turns.iter().zip(&gold_states)) {
            domain_hits += r
                .domain
                .flags()
                .iter()
                .zip(d.flags())
                .filter(|(a, b)| a == b)
                .count();
            belief_hits += usize::from(r.belief == g.belief);
        }
        scored.push(Scored {
            verdict: DialogueVerdict {
                id: dlg.id.clone(),
                turns: dlg.turns.len(),
                inform,
                success,
                error,
            },
            candidates: dlg
                .turns
                .iter()
                .enumerate()
                .map(|(i, _)| results.get(i).map(|r| lex(&r.response_delex)).unwrap_or_default())
                .collect(),
            references: dlg.turns.iter().map(|t| lex(&t.response_delex)).collect(),
            domain_hits,
            domain_total: dlg.turns.len() * ontology.num_domains(),
            belief_hits,
        });
    }
    aggregate(scored)
}
