//! The four tracked states, the three encoder contexts, and their token forms.
//!
//! Serialization layouts:
//!
//! * domain state: `[d1] [ON|OFF] [d2] [ON|OFF] ...` over every domain;
//! * belief state: `[d] slot - value - slot - value - ...` over every domain and
//!   informable slot, with `[NULL]` for empty slots;
//! * DB result: `[d] [db_k]` for each active domain;
//! * system action: `[d] act - slot -` per act, with `[NULL]` when the act has no slot.
//!
//! Parsers invert these exactly on well-formed input. Decoder output that is
//! malformed gets repaired where a repair is unambiguous, and the repairs are reported.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::ontology::{Ontology, TokenId, ACT_TYPES};
use crate::schema::Schema;

pub const MAX_CONTEXT_LEN: usize = 512;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DomainState {
    active: Vec<bool>,
}

impl DomainState {
    pub fn all_off(ontology: &Ontology) -> Self {
        DomainState {
            active: vec![false; ontology.num_domains()],
        }
    }

    pub fn from_flags(active: Vec<bool>) -> Self {
        DomainState { active }
    }

    pub fn is_active(&self, domain: usize) -> bool {
        self.active[domain]
    }

    pub fn set(&mut self, domain: usize, on: bool) {
        self.active[domain] = on;
    }

    pub fn flags(&self) -> &[bool] {
        &self.active
    }

    pub fn active_domains(&self) -> impl Iterator<Item = usize> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(i, _)| i)
    }

    /// Set inclusion: every domain active here is active in `other`.
    pub fn is_subset_of(&self, other: &DomainState) -> bool {
        self.active
            .iter()
            .zip(&other.active)
            .all(|(&a, &b)| !a || b)
    }

    pub fn display(&self, ontology: &Ontology) -> String {
        ontology
            .domains()
            .iter()
            .zip(&self.active)
            .map(|(d, &on)| format!("{}={}", d.name, if on { "ON" } else { "OFF" }))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SlotValue {
    Null,
    DontCare,
    /// Index into the slot's candidate values.
    Value(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BeliefState {
    values: Vec<Vec<SlotValue>>,
}

impl BeliefState {
    pub fn empty(ontology: &Ontology) -> Self {
        BeliefState {
            values: ontology
                .domains()
                .iter()
                .map(|d| vec![SlotValue::Null; d.informable.len()])
                .collect(),
        }
    }

    pub fn get(&self, domain: usize, slot: usize) -> SlotValue {
        self.values[domain][slot]
    }

    pub fn set(&mut self, domain: usize, slot: usize, value: SlotValue) {
        self.values[domain][slot] = value;
    }

    /// Sets a slot by names; `value` may be `dontcare`.
    pub fn set_named(
        &mut self,
        ontology: &Ontology,
        domain: &str,
        slot: &str,
        value: &str,
    ) -> Result<()> {
        let d = ontology
            .domain_index(domain)
            .ok_or_else(|| Error::Invariant(format!("unknown domain `{domain}`")))?;
        let s = ontology
            .slot_index(d, slot)
            .ok_or_else(|| Error::Invariant(format!("unknown slot `{domain}.{slot}`")))?;
        let v = if value == crate::ontology::DONTCARE {
            SlotValue::DontCare
        } else {
            SlotValue::Value(ontology.value_index(d, s, value).ok_or_else(|| {
                Error::Invariant(format!("illegal value `{value}` for `{domain}.{slot}`"))
            })?)
        };
        self.values[d][s] = v;
        Ok(())
    }

    pub fn domain_values(&self, domain: usize) -> &[SlotValue] {
        &self.values[domain]
    }

    pub fn has_constraint(&self, domain: usize) -> bool {
        self.values[domain].iter().any(|v| *v != SlotValue::Null)
    }

    /// Surface value of a slot, `None` when empty.
    pub fn value_str<'o>(&self, ontology: &'o Ontology, domain: usize, slot: usize) -> Option<&'o str> {
        match self.values[domain][slot] {
            SlotValue::Null => None,
            SlotValue::DontCare => Some(crate::ontology::DONTCARE),
            SlotValue::Value(v) => Some(&ontology.domain(domain).informable[slot].values[v]),
        }
    }

    /// Non-empty slots as `(domain, slot, value)` names.
    pub fn filled<'o>(&self, ontology: &'o Ontology) -> Vec<(&'o str, &'o str, &'o str)> {
        let mut out = Vec::new();
        for (di, d) in ontology.domains().iter().enumerate() {
            for (si, s) in d.informable.iter().enumerate() {
                if let Some(v) = self.value_str(ontology, di, si) {
                    out.push((d.name.as_str(), s.slot.as_str(), v));
                }
            }
        }
        out
    }

    pub fn display(&self, ontology: &Ontology) -> String {
        let filled = self.filled(ontology);
        if filled.is_empty() {
            return "{}".into();
        }
        filled
            .iter()
            .map(|(d, s, v)| format!("{d}-{s}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Bucketed number of matching entities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DbBucket {
    Zero,
    One,
    TwoToThree,
    FourPlus,
}

impl DbBucket {
    pub fn from_count(n: usize) -> Self {
        match n {
            0 => DbBucket::Zero,
            1 => DbBucket::One,
            2 | 3 => DbBucket::TwoToThree,
            _ => DbBucket::FourPlus,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        [
            DbBucket::Zero,
            DbBucket::One,
            DbBucket::TwoToThree,
            DbBucket::FourPlus,
        ]
        .get(i)
        .copied()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct DbResult {
    counts: BTreeMap<usize, DbBucket>,
}

impl DbResult {
    /// Builds a result, rejecting entries for domains inactive in `d`.
    pub fn new(counts: BTreeMap<usize, DbBucket>, d: &DomainState) -> Result<Self> {
        let r = DbResult { counts };
        r.check_against(d)?;
        Ok(r)
    }

    /// Unchecked construction; pair with [`DbResult::check_against`].
    pub fn from_map(counts: BTreeMap<usize, DbBucket>) -> Self {
        DbResult { counts }
    }

    pub fn check_against(&self, d: &DomainState) -> Result<()> {
        for &k in self.counts.keys() {
            if k >= d.flags().len() || !d.is_active(k) {
                return Err(Error::Invariant(format!(
                    "DB result holds domain {k}, which is not active"
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, domain: usize) -> Option<DbBucket> {
        self.counts.get(&domain).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, DbBucket)> + '_ {
        self.counts.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn display(&self, ontology: &Ontology) -> String {
        let labels = ["0", "1", "2-3", "4+"];
        self.counts
            .iter()
            .map(|(&d, b)| format!("{}:{}", ontology.domain(d).name, labels[b.index()]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ActType {
    Inform,
    Request,
    Offer,
    Book,
    NoOffer,
    Greet,
    Bye,
}

impl ActType {
    pub const ALL: [ActType; 7] = [
        ActType::Inform,
        ActType::Request,
        ActType::Offer,
        ActType::Book,
        ActType::NoOffer,
        ActType::Greet,
        ActType::Bye,
    ];

    pub fn name(self) -> &'static str {
        ACT_TYPES[self as usize]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        ACT_TYPES
            .iter()
            .position(|a| *a == name)
            .map(|i| Self::ALL[i])
    }
}

impl fmt::Display for ActType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One `(domain, act type, slot)` triple. Field order gives the canonical ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Act {
    pub domain: usize,
    pub kind: ActType,
    /// Index into the domain's act slots (informable, then requestable).
    pub slot: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SystemAction {
    acts: Vec<Act>,
}

impl SystemAction {
    /// Sorts into canonical order and drops duplicates.
    pub fn new(mut acts: Vec<Act>) -> Self {
        acts.sort();
        acts.dedup();
        SystemAction { acts }
    }

    pub fn acts(&self) -> &[Act] {
        &self.acts
    }

    pub fn is_empty(&self) -> bool {
        self.acts.is_empty()
    }

    pub fn has(&self, domain: usize, kind: ActType) -> bool {
        self.acts.iter().any(|a| a.domain == domain && a.kind == kind)
    }

    pub fn display(&self, ontology: &Ontology) -> String {
        self.acts
            .iter()
            .map(|a| {
                let d = ontology.domain(a.domain);
                let slot = a
                    .slot
                    .map(|s| d.act_slots()[s].to_string())
                    .unwrap_or_else(|| "none".into());
                format!("{}-{}-{}", d.name, a.kind, slot)
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    Belief,
    Action,
    Response,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Context {
    pub kind: ContextKind,
    pub tokens: Vec<TokenId>,
    /// Utterance tokens dropped from the left to respect the length limit.
    pub truncated: usize,
}

impl Context {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub raw: String,
    pub tokens: Vec<TokenId>,
}

impl Utterance {
    pub fn new(schema: &Schema, raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = schema.vocab().tokenize(&raw);
        Utterance { raw, tokens }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub raw: String,
    pub tokens: Vec<TokenId>,
    pub delexicalized: bool,
}

impl Response {
    pub fn new(schema: &Schema, raw: impl Into<String>, delexicalized: bool) -> Self {
        let raw = raw.into();
        let tokens = schema.vocab().tokenize(&raw);
        Response {
            raw,
            tokens,
            delexicalized,
        }
    }
}

// ---------------------------------------------------------------------------
// Serialization

pub fn serialize_domain_state(schema: &Schema, d: &DomainState) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(2 * d.flags().len());
    for (i, &on) in d.flags().iter().enumerate() {
        out.push(schema.domain_tokens[i]);
        out.push(if on { schema.on } else { schema.off });
    }
    out
}

fn value_tokens<'s>(schema: &'s Schema, domain: usize, slot: usize, v: SlotValue) -> &'s [TokenId] {
    match v {
        SlotValue::Null => std::slice::from_ref(&schema.null),
        SlotValue::DontCare => std::slice::from_ref(&schema.dontcare),
        SlotValue::Value(i) => &schema.value_tokens[domain][slot][i],
    }
}

pub fn serialize_belief_state(schema: &Schema, b: &BeliefState) -> Vec<TokenId> {
    let mut out = Vec::new();
    for (di, &dtok) in schema.domain_tokens.iter().enumerate() {
        out.push(dtok);
        for (si, slot) in schema.slot_tokens[di].iter().enumerate() {
            out.extend_from_slice(slot);
            out.push(schema.delimiter);
            out.extend_from_slice(value_tokens(schema, di, si, b.get(di, si)));
            out.push(schema.delimiter);
        }
    }
    out
}

/// Fails if the result names a domain that `d` has inactive.
pub fn serialize_db_result(schema: &Schema, db: &DbResult, d: &DomainState) -> Result<Vec<TokenId>> {
    db.check_against(d)?;
    let mut out = Vec::with_capacity(2 * db.len());
    for (dom, bucket) in db.entries() {
        out.push(schema.domain_tokens[dom]);
        out.push(schema.bucket_tokens[bucket.index()]);
    }
    Ok(out)
}

pub fn serialize_action(schema: &Schema, a: &SystemAction) -> Vec<TokenId> {
    let mut out = Vec::new();
    for act in a.acts() {
        out.push(schema.domain_tokens[act.domain]);
        out.push(schema.act_type_tokens[act.kind as usize]);
        out.push(schema.delimiter);
        match act.slot {
            Some(s) => out.extend_from_slice(&schema.act_slot_tokens[act.domain][s]),
            None => out.push(schema.null),
        }
        out.push(schema.delimiter);
    }
    out
}

/// Assembles encoder inputs `[CLS] U [SEP] D B (DB (A))`.
#[derive(Clone, Copy, Debug)]
pub struct ContextBuilder<'a> {
    schema: &'a Schema,
    max_len: usize,
    mask_domain_state: bool,
}

impl<'a> ContextBuilder<'a> {
    pub fn new(schema: &'a Schema) -> Self {
        ContextBuilder {
            schema,
            max_len: MAX_CONTEXT_LEN,
            mask_domain_state: false,
        }
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    /// Replaces the domain-state segment by a constant block (`[d] [NULL]` per domain).
    pub fn with_masked_domain_state(mut self, mask: bool) -> Self {
        self.mask_domain_state = mask;
        self
    }

    fn domain_segment(&self, d: &DomainState) -> Vec<TokenId> {
        if self.mask_domain_state {
            self.schema
                .domain_tokens
                .iter()
                .flat_map(|&t| [t, self.schema.null])
                .collect()
        } else {
            serialize_domain_state(self.schema, d)
        }
    }

    pub fn build(
        &self,
        kind: ContextKind,
        utterance: &[TokenId],
        d: &DomainState,
        b: &BeliefState,
        db: Option<&DbResult>,
        a: Option<&SystemAction>,
    ) -> Result<Context> {
        let needs_db = matches!(kind, ContextKind::Action | ContextKind::Response);
        let needs_action = kind == ContextKind::Response;
        if db.is_some() != needs_db {
            return Err(Error::Argument(format!(
                "{kind:?} context {} a DB result",
                if needs_db { "requires" } else { "does not take" }
            )));
        }
        if a.is_some() != needs_action {
            return Err(Error::Argument(format!(
                "{kind:?} context {} a system action",
                if needs_action { "requires" } else { "does not take" }
            )));
        }

        let mut state = self.domain_segment(d);
        state.extend(serialize_belief_state(self.schema, b));
        if let Some(db) = db {
            state.extend(serialize_db_result(self.schema, db, d)?);
        }
        if let Some(a) = a {
            state.extend(serialize_action(self.schema, a));
        }

        let fixed = state.len() + 2;
        if fixed > self.max_len {
            return Err(Error::Length {
                len: fixed,
                max: self.max_len,
            });
        }
        let budget = self.max_len - fixed;
        let truncated = utterance.len().saturating_sub(budget);
        if truncated > 0 {
            log::warn!(
                "{kind:?} context: dropped {truncated} leading utterance tokens to fit {} ids",
                self.max_len
            );
        }
        let mut tokens = Vec::with_capacity(fixed + utterance.len() - truncated);
        tokens.push(self.schema.cls);
        tokens.extend_from_slice(&utterance[truncated..]);
        tokens.push(self.schema.sep);
        tokens.extend(state);
        Ok(Context {
            kind,
            tokens,
            truncated,
        })
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("cannot parse {what}: {reason} (valid prefix: {} tokens)", valid_prefix.len())]
pub struct StateParseError {
    pub what: &'static str,
    pub reason: String,
    pub valid_prefix: Vec<TokenId>,
}

impl StateParseError {
    fn new(what: &'static str, reason: impl Into<String>, tokens: &[TokenId], upto: usize) -> Self {
        StateParseError {
            what,
            reason: reason.into(),
            valid_prefix: tokens[..upto].to_vec(),
        }
    }
}

/// A repair applied while parsing malformed decoder output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Repair {
    MissingValue { domain: usize, slot: usize },
    UnknownValue { domain: usize, slot: usize },
    DuplicateSlot { domain: usize, slot: usize },
    MissingSlot { domain: usize, slot: usize },
    MissingDelimiter { position: usize },
    MissingDomain { domain: usize },
    DuplicateDomain { domain: usize },
    MissingActSlot { domain: usize },
    UnknownActSlot { domain: usize },
    DuplicateAct,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parsed<T> {
    pub value: T,
    pub repairs: Vec<Repair>,
}

impl<T> Parsed<T> {
    pub fn is_repaired(&self) -> bool {
        !self.repairs.is_empty()
    }
}

/// Strips a trailing `[EOS]` and anything after it.
fn until_eos<'t>(schema: &Schema, tokens: &'t [TokenId]) -> &'t [TokenId] {
    match tokens.iter().position(|&t| t == schema.eos) {
        Some(i) => &tokens[..i],
        None => tokens,
    }
}

pub fn parse_domain_state(schema: &Schema, tokens: &[TokenId]) -> Result<Parsed<DomainState>, StateParseError> {
    const WHAT: &str = "domain state";
    let tokens = until_eos(schema, tokens);
    if tokens.is_empty() {
        return Err(StateParseError::new(WHAT, "empty sequence", tokens, 0));
    }
    let n = schema.domain_tokens.len();
    let mut seen = vec![false; n];
    let mut active = vec![false; n];
    let mut repairs = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let Some(d) = schema.domain_of(tokens[i]) else {
            return Err(StateParseError::new(WHAT, "expected a domain token", tokens, i));
        };
        let flag = match tokens.get(i + 1) {
            Some(&t) if t == schema.on => true,
            Some(&t) if t == schema.off => false,
            _ => return Err(StateParseError::new(WHAT, "expected [ON] or [OFF]", tokens, i)),
        };
        if seen[d] {
            repairs.push(Repair::DuplicateDomain { domain: d });
        }
        seen[d] = true;
        active[d] = flag;
        i += 2;
    }
    for (d, s) in seen.iter().enumerate() {
        if !s {
            repairs.push(Repair::MissingDomain { domain: d });
        }
    }
    Ok(Parsed {
        value: DomainState::from_flags(active),
        repairs,
    })
}

fn find_slot(table: &[Vec<TokenId>], span: &[TokenId]) -> Option<usize> {
    table.iter().position(|s| s.as_slice() == span)
}

/// Scans `tokens[from..]` up to the next delimiter or domain token.
fn span_end(schema: &Schema, tokens: &[TokenId], from: usize) -> usize {
    tokens[from..]
        .iter()
        .position(|&t| t == schema.delimiter || schema.domain_of(t).is_some())
        .map_or(tokens.len(), |p| from + p)
}

pub fn parse_belief_state(schema: &Schema, tokens: &[TokenId]) -> Result<Parsed<BeliefState>, StateParseError> {
    const WHAT: &str = "belief state";
    let tokens = until_eos(schema, tokens);
    if tokens.is_empty() {
        return Err(StateParseError::new(WHAT, "empty sequence", tokens, 0));
    }
    let ontology = schema.ontology();
    let mut belief = BeliefState::empty(ontology);
    let mut mentioned: Vec<Vec<bool>> = ontology
        .domains()
        .iter()
        .map(|d| vec![false; d.informable.len()])
        .collect();
    let mut repairs = Vec::new();
    let mut domain = None;
    let mut i = 0;
    while i < tokens.len() {
        if let Some(d) = schema.domain_of(tokens[i]) {
            domain = Some(d);
            i += 1;
            continue;
        }
        let Some(d) = domain else {
            return Err(StateParseError::new(WHAT, "slot before any domain token", tokens, i));
        };
        let slot_end = span_end(schema, tokens, i);
        let Some(s) = find_slot(&schema.slot_tokens[d], &tokens[i..slot_end]) else {
            return Err(StateParseError::new(
                WHAT,
                format!("unknown slot for domain `{}`", ontology.domain(d).name),
                tokens,
                i,
            ));
        };
        if mentioned[d][s] {
            repairs.push(Repair::DuplicateSlot { domain: d, slot: s });
        }
        mentioned[d][s] = true;
        if slot_end == tokens.len() || tokens[slot_end] != schema.delimiter {
            repairs.push(Repair::MissingValue { domain: d, slot: s });
            belief.set(d, s, SlotValue::Null);
            i = slot_end;
            continue;
        }
        let value_start = slot_end + 1;
        let value_end = span_end(schema, tokens, value_start);
        let span = &tokens[value_start..value_end];
        let value = if span.is_empty() {
            repairs.push(Repair::MissingValue { domain: d, slot: s });
            SlotValue::Null
        } else if span == [schema.null] {
            SlotValue::Null
        } else if span == [schema.dontcare] {
            SlotValue::DontCare
        } else if let Some(v) = find_slot(&schema.value_tokens[d][s], span) {
            SlotValue::Value(v)
        } else {
            repairs.push(Repair::UnknownValue { domain: d, slot: s });
            SlotValue::Null
        };
        belief.set(d, s, value);
        if value_end < tokens.len() && tokens[value_end] == schema.delimiter {
            i = value_end + 1;
        } else {
            repairs.push(Repair::MissingDelimiter { position: value_end });
            i = value_end;
        }
    }
    for (d, slots) in mentioned.iter().enumerate() {
        for (s, &m) in slots.iter().enumerate() {
            if !m {
                repairs.push(Repair::MissingSlot { domain: d, slot: s });
            }
        }
    }
    Ok(Parsed {
        value: belief,
        repairs,
    })
}

/// An empty sequence is the empty action.
pub fn parse_action(schema: &Schema, tokens: &[TokenId]) -> Result<Parsed<SystemAction>, StateParseError> {
    const WHAT: &str = "system action";
    let tokens = until_eos(schema, tokens);
    let mut acts = Vec::new();
    let mut repairs = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let Some(d) = schema.domain_of(tokens[i]) else {
            return Err(StateParseError::new(WHAT, "expected a domain token", tokens, i));
        };
        let kind = tokens
            .get(i + 1)
            .and_then(|&t| schema.act_type_tokens.iter().position(|&a| a == t))
            .map(|k| ActType::ALL[k]);
        let Some(kind) = kind else {
            return Err(StateParseError::new(WHAT, "expected an act type", tokens, i));
        };
        let mut j = i + 2;
        if tokens.get(j) == Some(&schema.delimiter) {
            j += 1;
        } else {
            repairs.push(Repair::MissingDelimiter { position: j });
        }
        let slot_end = span_end(schema, tokens, j);
        let span = &tokens[j..slot_end];
        let slot = if span == [schema.null] {
            None
        } else if span.is_empty() {
            repairs.push(Repair::MissingActSlot { domain: d });
            None
        } else if let Some(s) = find_slot(&schema.act_slot_tokens[d], span) {
            Some(s)
        } else {
            repairs.push(Repair::UnknownActSlot { domain: d });
            None
        };
        acts.push(Act {
            domain: d,
            kind,
            slot,
        });
        if slot_end < tokens.len() && tokens[slot_end] == schema.delimiter {
            i = slot_end + 1;
        } else {
            repairs.push(Repair::MissingDelimiter { position: slot_end });
            i = slot_end;
        }
    }
    let before = acts.len();
    let action = SystemAction::new(acts);
    if action.acts().len() != before {
        repairs.push(Repair::DuplicateAct);
    }
    Ok(Parsed {
        value: action,
        repairs,
    })
}

pub fn parse_db_result(schema: &Schema, tokens: &[TokenId]) -> Result<DbResult, StateParseError> {
    const WHAT: &str = "DB result";
    let mut counts = BTreeMap::new();
    for (k, pair) in tokens.chunks(2).enumerate() {
        let d = schema.domain_of(pair[0]);
        let b = pair
            .get(1)
            .and_then(|t| schema.bucket_tokens.iter().position(|b| b == t));
        match (d, b) {
            (Some(d), Some(b)) => {
                counts.insert(d, DbBucket::from_index(b).expect("bucket index"));
            }
            _ => return Err(StateParseError::new(WHAT, "expected `[domain] [bucket]`", tokens, 2 * k)),
        }
    }
    Ok(DbResult::from_map(counts))
}
