//! Domains, slots and candidate values, plus the token vocabulary derived from them.
//!
//! Everything downstream indexes domains, slots and values by their position in
//! the [`Ontology`], so the orderings here fix the layout of every serialized state.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const ON: &str = "[ON]";
pub const OFF: &str = "[OFF]";
pub const NULL: &str = "[NULL]";
pub const DELIMITER: &str = "-";
pub const DONTCARE: &str = "dontcare";

/// Ids fixed by the special-token order of every vocabulary.
pub const SEP_ID: TokenId = 2;
pub const BOS_ID: TokenId = 3;
pub const EOS_ID: TokenId = 4;

/// Surface forms of the DB match-count buckets, in bucket order.
pub const DB_BUCKET_TOKENS: [&str; 4] = ["[db_0]", "[db_1]", "[db_2-3]", "[db_4+]"];

/// Act types in canonical order.
pub const ACT_TYPES: [&str; 7] = ["inform", "request", "offer", "book", "nooffer", "greet", "bye"];

pub fn domain_token(domain: &str) -> String {
    format!("[{domain}]")
}

pub fn placeholder_token(domain: &str, slot: &str) -> String {
    format!("[{domain}_{slot}]")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformableSlot {
    pub slot: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    #[serde(default)]
    pub informable: Vec<InformableSlot>,
    #[serde(default)]
    pub requestable: Vec<String>,
}

impl DomainSpec {
    /// Slots an act may refer to: informable slots, then requestable slots not already listed.
    pub fn act_slots(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.informable.iter().map(|s| s.slot.as_str()).collect();
        for r in &self.requestable {
            if !out.contains(&r.as_str()) {
                out.push(r);
            }
        }
        out
    }
}

#[derive(Deserialize)]
struct OntologyFile {
    domains: Vec<DomainSpec>,
}

/// The validated domain universe.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Ontology {
    domains: Vec<DomainSpec>,
}

impl Ontology {
    pub fn new(domains: Vec<DomainSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &domains {
            if !seen.insert(d.name.as_str()) {
                return Err(Error::DuplicateName {
                    kind: "domain",
                    name: d.name.clone(),
                });
            }
            let mut slots = HashSet::new();
            for s in &d.informable {
                if !slots.insert(s.slot.as_str()) {
                    return Err(Error::DuplicateName {
                        kind: "slot",
                        name: format!("{}.{}", d.name, s.slot),
                    });
                }
                if s.values.is_empty() {
                    return Err(Error::EmptyValues {
                        domain: d.name.clone(),
                        slot: s.slot.clone(),
                    });
                }
                let mut values = HashSet::new();
                for v in &s.values {
                    if v == DONTCARE || !values.insert(v.as_str()) {
                        return Err(Error::DuplicateName {
                            kind: "value",
                            name: format!("{}.{}={}", d.name, s.slot, v),
                        });
                    }
                }
            }
            let mut requestable = HashSet::new();
            for r in &d.requestable {
                if !requestable.insert(r.as_str()) {
                    return Err(Error::DuplicateName {
                        kind: "requestable slot",
                        name: format!("{}.{}", d.name, r),
                    });
                }
            }
        }
        Ok(Ontology { domains })
    }

    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let file: OntologyFile = serde_json::from_str(text).map_err(|e| {
            Error::format(
                origin,
                format!("line {} column {}: {e}", e.line(), e.column()),
            )
        })?;
        Self::new(file.domains)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({ "domains": self.domains }))
            .expect("ontology serializes")
    }

    pub fn domains(&self) -> &[DomainSpec] {
        &self.domains
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domain(&self, index: usize) -> &DomainSpec {
        &self.domains[index]
    }

    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domains.iter().position(|d| d.name == name)
    }

    pub fn slot_index(&self, domain: usize, slot: &str) -> Option<usize> {
        self.domains[domain]
            .informable
            .iter()
            .position(|s| s.slot == slot)
    }

    pub fn value_index(&self, domain: usize, slot: usize, value: &str) -> Option<usize> {
        self.domains[domain].informable[slot]
            .values
            .iter()
            .position(|v| v == value)
    }

    pub fn act_slot_index(&self, domain: usize, slot: &str) -> Option<usize> {
        self.domains[domain].act_slots().iter().position(|s| *s == slot)
    }

    /// Total number of informable (domain, slot) pairs.
    pub fn num_informable(&self) -> usize {
        self.domains.iter().map(|d| d.informable.len()).sum()
    }

    /// Placeholder surface forms, one per informable or requestable slot, in domain order.
    pub fn placeholders(&self) -> Vec<String> {
        self.domains
            .iter()
            .flat_map(|d| {
                d.act_slots()
                    .into_iter()
                    .map(move |s| placeholder_token(&d.name, s))
            })
            .collect()
    }

    /// Word tokens that serialized states need: slot names, values, act types and `dontcare`.
    pub fn state_words(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        out.insert(DONTCARE.to_string());
        out.extend(ACT_TYPES.iter().map(|s| s.to_string()));
        for d in &self.domains {
            for s in d.act_slots() {
                out.extend(lex(s));
            }
            for s in &d.informable {
                for v in &s.values {
                    out.extend(lex(v));
                }
            }
        }
        out
    }
}

static LEXER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[[^\[\]\s]+\]|[\p{L}\p{N}]+(?:'[\p{L}]+)?|[^\s]").expect("lexer pattern")
});

/// Lowercases and splits text into surface tokens: bracketed special forms,
/// alphanumeric words and single punctuation characters.
pub fn lex(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    LEXER
        .find_iter(&lower)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Bidirectional token table. Special tokens occupy the low ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    num_special: usize,
}

/// Special-token surfaces mandated by an ontology, in id order.
pub fn special_tokens(ontology: &Ontology) -> Vec<String> {
    let mut out: Vec<String> = [UNK, CLS, SEP, BOS, EOS, ON, OFF, NULL, DELIMITER]
        .iter()
        .map(|s| s.to_string())
        .collect();
    out.extend(ontology.domains().iter().map(|d| domain_token(&d.name)));
    out.extend(DB_BUCKET_TOKENS.iter().map(|s| s.to_string()));
    out.extend(ontology.placeholders());
    out
}

impl Vocabulary {
    /// Specials first (ontology-derived), then corpus words in sorted order.
    pub fn build<I, S>(ontology: &Ontology, corpus_words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let specials = special_tokens(ontology);
        let special_set: HashSet<&str> = specials.iter().map(String::as_str).collect();
        let mut words = BTreeSet::new();
        for w in corpus_words {
            let w = w.as_ref();
            if special_set.contains(w) {
                return Err(Error::VocabularyCollision(w.to_string()));
            }
            words.insert(w.to_string());
        }
        let num_special = specials.len();
        let tokens: Vec<String> = specials.into_iter().chain(words).collect();
        Ok(Self::from_parts(tokens, num_special))
    }

    fn from_parts(tokens: Vec<String>, num_special: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocabulary {
            tokens,
            index,
            num_special,
        }
    }

    /// Rebuilds a vocabulary from its token list (id order), checking that the
    /// leading special block matches the ontology.
    pub fn from_token_list(ontology: &Ontology, tokens: Vec<String>) -> Result<Self> {
        let specials = special_tokens(ontology);
        if tokens.len() < specials.len() || tokens[..specials.len()] != specials[..] {
            return Err(Error::Invariant(
                "vocabulary does not start with the ontology's special tokens".into(),
            ));
        }
        let mut seen = HashSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(Error::DuplicateName {
                    kind: "token",
                    name: t.clone(),
                });
            }
        }
        Ok(Self::from_parts(tokens, specials.len()))
    }

    pub fn load(ontology: &Ontology, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_token_list(ontology, text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_special(&self) -> usize {
        self.num_special
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn special_tokens(&self) -> &[String] {
        &self.tokens[..self.num_special]
    }

    pub fn word_tokens(&self) -> &[String] {
        &self.tokens[self.num_special..]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of a token that must exist (all mandated specials do).
    pub fn expect_id(&self, token: &str) -> TokenId {
        self.id(token)
            .unwrap_or_else(|| panic!("token `{token}` missing from vocabulary"))
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn unk(&self) -> TokenId {
        0
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        lex(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(self.unk()))
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut parts = Vec::with_capacity(ids.len());
        for &id in ids {
            let s = self.surface(id).ok_or(Error::TokenRange {
                id: id as usize,
                len: self.len(),
            })?;
            parts.push(s);
        }
        Ok(parts.join(" "))
    }
}
