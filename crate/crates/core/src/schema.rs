use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ontology::{
    domain_token, lex, placeholder_token, Ontology, TokenId, Vocabulary, ACT_TYPES, BOS, CLS,
    DB_BUCKET_TOKENS, DELIMITER, DONTCARE, EOS, NULL, OFF, ON, SEP,
};

/// An ontology paired with a vocabulary that covers it, with the token ids every
/// serializer needs resolved up front.
#[derive(Clone, Debug)]
pub struct Schema {
    ontology: Ontology,
    vocab: Vocabulary,
    pub cls: TokenId,
    pub sep: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
    pub on: TokenId,
    pub off: TokenId,
    pub null: TokenId,
    pub delimiter: TokenId,
    pub dontcare: TokenId,
    pub domain_tokens: Vec<TokenId>,
    pub bucket_tokens: [TokenId; 4],
    pub act_type_tokens: [TokenId; 7],
    /// `[domain][slot]` token spelling of each informable slot name.
    pub slot_tokens: Vec<Vec<Vec<TokenId>>>,
    /// `[domain][slot][value]` token spelling of each candidate value.
    pub value_tokens: Vec<Vec<Vec<Vec<TokenId>>>>,
    /// `[domain][act slot]` token spelling of slots usable in acts.
    pub act_slot_tokens: Vec<Vec<Vec<TokenId>>>,
    domain_of_token: HashMap<TokenId, usize>,
    placeholder_of_token: HashMap<TokenId, (usize, usize)>,
}

impl Schema {
    pub fn new(ontology: Ontology, vocab: Vocabulary) -> Result<Self> {
        let spell = |text: &str| -> Result<Vec<TokenId>> {
            let ids: Vec<TokenId> = lex(text)
                .iter()
                .map(|w| {
                    vocab.id(w).ok_or_else(|| {
                        Error::Invariant(format!("vocabulary lacks ontology word `{w}`"))
                    })
                })
                .collect::<Result<_>>()?;
            if ids.is_empty() {
                return Err(Error::Invariant(format!("`{text}` has no tokens")));
            }
            Ok(ids)
        };
        let single = |text: &str| -> Result<TokenId> {
            vocab
                .id(text)
                .ok_or_else(|| Error::Invariant(format!("vocabulary lacks `{text}`")))
        };

        let mut slot_tokens = Vec::new();
        let mut value_tokens = Vec::new();
        let mut act_slot_tokens = Vec::new();
        let mut domain_tokens = Vec::new();
        let mut placeholder_of_token = HashMap::new();
        for (di, d) in ontology.domains().iter().enumerate() {
            domain_tokens.push(single(&domain_token(&d.name))?);
            let mut slots = Vec::new();
            let mut values = Vec::new();
            for s in &d.informable {
                slots.push(spell(&s.slot)?);
                values.push(
                    s.values
                        .iter()
                        .map(|v| spell(v))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            slot_tokens.push(slots);
            value_tokens.push(values);
            let act_slots = d.act_slots();
            act_slot_tokens.push(
                act_slots
                    .iter()
                    .map(|s| spell(s))
                    .collect::<Result<Vec<_>>>()?,
            );
            for (k, s) in act_slots.iter().enumerate() {
                placeholder_of_token.insert(single(&placeholder_token(&d.name, s))?, (di, k));
            }
        }
        let mut act_type_tokens = [0; 7];
        for (slot, name) in act_type_tokens.iter_mut().zip(ACT_TYPES) {
            *slot = single(name)?;
        }
        let mut bucket_tokens = [0; 4];
        for (slot, name) in bucket_tokens.iter_mut().zip(DB_BUCKET_TOKENS) {
            *slot = single(name)?;
        }
        let domain_of_token = domain_tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, i))
            .collect();

        Ok(Schema {
            cls: single(CLS)?,
            sep: single(SEP)?,
            bos: single(BOS)?,
            eos: single(EOS)?,
            on: single(ON)?,
            off: single(OFF)?,
            null: single(NULL)?,
            delimiter: single(DELIMITER)?,
            dontcare: single(DONTCARE)?,
            domain_tokens,
            bucket_tokens,
            act_type_tokens,
            slot_tokens,
            value_tokens,
            act_slot_tokens,
            domain_of_token,
            placeholder_of_token,
            ontology,
            vocab,
        })
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn domain_of(&self, token: TokenId) -> Option<usize> {
        self.domain_of_token.get(&token).copied()
    }

    /// `(domain, act slot)` addressed by a placeholder token.
    pub fn placeholder(&self, token: TokenId) -> Option<(usize, usize)> {
        self.placeholder_of_token.get(&token).copied()
    }

    pub fn is_placeholder(&self, token: TokenId) -> bool {
        self.placeholder_of_token.contains_key(&token)
    }

    pub fn placeholder_id(&self, domain: usize, slot: &str) -> Option<TokenId> {
        self.vocab
            .id(&placeholder_token(&self.ontology.domain(domain).name, slot))
    }
}
