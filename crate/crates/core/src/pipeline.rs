//! The per-turn procedure. From the user utterance and the previous domain and
//! belief states:
//!
//! 1. build the belief context `[CLS] U [SEP] D B` and encode it;
//! 2. classify the domain state (threshold 0.5) and decode the belief state;
//! 3. query the DB for the active domains;
//! 4. build and encode the action context (adds the DB result), decode the action;
//! 5. build and encode the response context (adds the action), decode a
//!    delexicalized response and fill it from the DB.
//!
//! Nothing else from earlier turns is read: [`SessionState`] carries only the
//! turn index and the two states.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::database::{Database, EntityRecord};
use crate::error::Error;
use crate::evaluation::{lexicalize, SystemTurn};
use crate::nn::{DecodeMode, DecoderKind, EncoderOutput, Model};
use crate::ontology::{Ontology, TokenId};
use crate::schema::Schema;
use crate::state::{
    parse_action, parse_belief_state, serialize_belief_state, BeliefState, Context, ContextBuilder, ContextKind,
    DbResult, DomainState, Repair, SystemAction,
};

pub const DOMAIN_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionState {
    /// Index of the next turn, starting at 1.
    pub turn: usize,
    pub domain: DomainState,
    pub belief: BeliefState,
}

pub fn initial_state(ontology: &Ontology) -> SessionState {
    SessionState {
        turn: 1,
        domain: DomainState::all_off(ontology),
        belief: BeliefState::empty(ontology),
    }
}

/// Gold states substituted downstream in oracle mode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldTurn {
    pub domain: DomainState,
    pub belief: BeliefState,
    pub action: SystemAction,
}

#[derive(Clone, Copy, Debug)]
pub enum Mode<'g> {
    EndToEnd,
    Oracle(&'g GoldTurn),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeLimits {
    pub belief: usize,
    pub action: usize,
    pub response: usize,
}

impl DecodeLimits {
    pub fn for_schema(schema: &Schema) -> Self {
        let belief = serialize_belief_state(schema, &BeliefState::empty(schema.ontology())).len();
        DecodeLimits {
            belief: belief + 16,
            action: 48,
            response: 48,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnResult {
    pub turn: usize,
    pub domain_probabilities: Vec<f64>,
    /// Predicted states and action.
    pub domain: DomainState,
    pub belief: BeliefState,
    pub action: SystemAction,
    /// States that fed the action and response contexts (gold in oracle mode).
    pub domain_used: DomainState,
    pub belief_used: BeliefState,
    pub action_used: SystemAction,
    pub db: DbResult,
    pub response_tokens: Vec<TokenId>,
    pub response_delex: String,
    pub response_lex: String,
    /// Belief, action and response contexts, in that order.
    pub contexts: [Context; 3],
    pub encoder_outputs: [EncoderOutput; 3],
    /// Address of the encoder parameters used by each of the three calls.
    pub encoder_handles: [usize; 3],
    pub belief_repairs: Vec<Repair>,
    pub action_repairs: Vec<Repair>,
}

impl TurnResult {
    pub fn system_turn(&self, ontology: &Ontology, db: &Database) -> SystemTurn {
        SystemTurn::new(ontology, db, &self.belief_used, self.action.clone(), self.response_delex.clone())
    }

    pub fn is_repaired(&self) -> bool {
        !self.belief_repairs.is_empty() || !self.action_repairs.is_empty()
    }
}

/// Whatever was computed before a turn failed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartialTurn {
    pub belief_context: Option<Context>,
    pub domain: Option<DomainState>,
    pub belief_tokens: Vec<TokenId>,
    pub action_tokens: Vec<TokenId>,
}

#[derive(Debug, Error)]
#[error("turn {turn}: {source}")]
pub struct TurnError {
    pub turn: usize,
    #[source]
    pub source: Error,
    pub partial: Box<PartialTurn>,
}

#[derive(Debug, Error)]
#[error("{source}")]
pub struct DialogueError {
    #[source]
    pub source: TurnError,
    /// Results of the turns before the failing one.
    pub completed: Vec<TurnResult>,
}

/// A frozen model together with the world it talks about.
#[derive(Clone, Copy, Debug)]
pub struct Pipeline<'a> {
    pub model: &'a Model,
    pub schema: &'a Schema,
    pub db: &'a Database,
    pub limits: DecodeLimits,
}

impl<'a> Pipeline<'a> {
    pub fn new(model: &'a Model, schema: &'a Schema, db: &'a Database) -> Self {
        Pipeline {
            model,
            schema,
            db,
            limits: DecodeLimits::for_schema(schema),
        }
    }

    fn builder(&self) -> ContextBuilder<'a> {
        ContextBuilder::new(self.schema)
            .with_max_len(self.model.config.encoder.max_len)
            .with_masked_domain_state(self.model.config.mask_domain_state)
    }

    pub fn run_turn(
        &self,
        s: &SessionState,
        utterance: &str,
        mode: Mode<'_>,
    ) -> Result<(TurnResult, SessionState), TurnError> {
        let mut partial = PartialTurn::default();
        let fail = |source: Error, partial: PartialTurn| TurnError {
            turn: s.turn,
            source,
            partial: Box::new(partial),
        };
        let ontology = self.schema.ontology();
        let model = self.model;
        let builder = self.builder();
        let u = self.schema.vocab().tokenize(utterance);

        let cb = builder
            .build(ContextKind::Belief, &u, &s.domain, &s.belief, None, None)
            .map_err(|e| fail(e, partial.clone()))?;
        partial.belief_context = Some(cb.clone());
        let ob = model.encode(&cb.tokens).map_err(|e| fail(e, partial.clone()))?;
        let probs = model.classify_domains(&ob);
        let domain = DomainState::from_flags(probs.iter().map(|&p| p > DOMAIN_THRESHOLD).collect());
        partial.domain = Some(domain.clone());
        let belief_tokens = model
            .decode(DecoderKind::Belief, &ob, DecodeMode::Greedy {
                max_len: self.limits.belief,
            })
            .map_err(|e| fail(e, partial.clone()))?
            .tokens;
        partial.belief_tokens = belief_tokens.clone();
        let belief = parse_belief_state(self.schema, &belief_tokens).map_err(|e| fail(e.into(), partial.clone()))?;

        let (domain_used, belief_used) = match mode {
            Mode::EndToEnd => (domain.clone(), belief.value.clone()),
            Mode::Oracle(g) => (g.domain.clone(), g.belief.clone()),
        };
        let db = self.db.query(ontology, &belief_used, &domain_used);

        let ca = builder
            .build(ContextKind::Action, &u, &domain_used, &belief_used, Some(&db), None)
            .map_err(|e| fail(e, partial.clone()))?;
        let oa = model.encode(&ca.tokens).map_err(|e| fail(e, partial.clone()))?;
        let action_tokens = model
            .decode(DecoderKind::Action, &oa, DecodeMode::Greedy {
                max_len: self.limits.action,
            })
            .map_err(|e| fail(e, partial.clone()))?
            .tokens;
        partial.action_tokens = action_tokens.clone();
        let action = parse_action(self.schema, &action_tokens).map_err(|e| fail(e.into(), partial.clone()))?;
        let action_used = match mode {
            Mode::EndToEnd => action.value.clone(),
            Mode::Oracle(g) => g.action.clone(),
        };

        let cr = builder
            .build(ContextKind::Response, &u, &domain_used, &belief_used, Some(&db), Some(&action_used))
            .map_err(|e| fail(e, partial.clone()))?;
        let or = model.encode(&cr.tokens).map_err(|e| fail(e, partial.clone()))?;
        let response_tokens = model
            .decode(DecoderKind::Response, &or, DecodeMode::Greedy {
                max_len: self.limits.response,
            })
            .map_err(|e| fail(e, partial.clone()))?
            .tokens;
        let response_delex = self
            .schema
            .vocab()
            .detokenize(&response_tokens)
            .map_err(|e| fail(e, partial.clone()))?;
        let entities: BTreeMap<usize, &EntityRecord> = (0..ontology.num_domains())
            .filter_map(|d| self.db.select_entity(ontology, d, &belief_used).map(|e| (d, e)))
            .collect();
        let response_lex = lexicalize(ontology, &response_delex, &entities);

        let handle = model.encoder_handle();
        let next = SessionState {
            turn: s.turn + 1,
            domain: domain_used.clone(),
            belief: belief_used.clone(),
        };
        let result = TurnResult {
            turn: s.turn,
            domain_probabilities: probs,
            domain,
            belief: belief.value,
            action: action.value,
            domain_used,
            belief_used,
            action_used,
            db,
            response_tokens,
            response_delex,
            response_lex,
            contexts: [cb, ca, cr],
            encoder_outputs: [ob, oa, or],
            encoder_handles: [handle; 3],
            belief_repairs: belief.repairs,
            action_repairs: action.repairs,
        };
        Ok((result, next))
    }

    /// Runs a whole dialogue from the initial state. With `gold`, every turn
    /// runs in oracle mode with the matching gold states.
    pub fn run_dialogue(&self, utterances: &[&str], gold: Option<&[GoldTurn]>) -> Result<Vec<TurnResult>, DialogueError> {
        let mut completed = Vec::with_capacity(utterances.len());
        let mut s = initial_state(self.schema.ontology());
        for (i, u) in utterances.iter().enumerate() {
            let mode = match gold.and_then(|g| g.get(i)) {
                Some(g) => Mode::Oracle(g),
                None => Mode::EndToEnd,
            };
            match self.run_turn(&s, u, mode) {
                Ok((r, next)) => {
                    completed.push(r);
                    s = next;
                }
                Err(source) => return Err(DialogueError { source, completed }),
            }
        }
        Ok(completed)
    }
}
