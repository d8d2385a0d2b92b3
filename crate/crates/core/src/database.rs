//! Entity store behind the DB operator: match counts for belief states and
//! deterministic entity selection for lexicalization.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::Ontology;
use crate::state::{BeliefState, DbBucket, DbResult, DomainState, SlotValue};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

impl EntityRecord {
    /// Attribute or extra value for a slot name.
    pub fn value(&self, slot: &str) -> Option<&str> {
        self.attributes
            .get(slot)
            .or_else(|| self.extras.get(slot))
            .map(String::as_str)
    }
}

/// Canonical spelling table applied before value comparison.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymTable(BTreeMap<String, String>);

impl SynonymTable {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        SynonymTable(
            entries
                .into_iter()
                .map(|(k, v)| (k.trim().to_lowercase(), v.trim().to_lowercase()))
                .collect(),
        )
    }

    /// Lowercase, trim, then map through the synonym table.
    pub fn normalize(&self, value: &str) -> String {
        let v = value.trim().to_lowercase();
        match self.0.get(&v) {
            Some(canon) => canon.clone(),
            None => v,
        }
    }
}

#[derive(Deserialize, Serialize)]
struct DatabaseFile {
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
    domains: BTreeMap<String, Vec<EntityRecord>>,
}

#[derive(Clone, Debug)]
struct Indexed {
    record: EntityRecord,
    /// Normalized attribute value per informable slot, in ontology order.
    normalized: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Database {
    /// Per ontology domain, sorted by id.
    domains: Vec<Vec<Indexed>>,
    synonyms: SynonymTable,
}

impl Database {
    pub fn new(
        ontology: &Ontology,
        mut entities: BTreeMap<String, Vec<EntityRecord>>,
        synonyms: SynonymTable,
    ) -> Result<Self> {
        for name in entities.keys() {
            if ontology.domain_index(name).is_none() {
                return Err(Error::Invariant(format!("DB names unknown domain `{name}`")));
            }
        }
        let mut domains = Vec::with_capacity(ontology.num_domains());
        for def in ontology.domains() {
            let mut records = entities.remove(&def.name).unwrap_or_default();
            records.sort_by(|a, b| a.id.cmp(&b.id));
            let mut ids = HashSet::new();
            let mut indexed = Vec::with_capacity(records.len());
            for record in records {
                if !ids.insert(record.id.clone()) {
                    return Err(Error::DuplicateName {
                        kind: "entity id",
                        name: format!("{}.{}", def.name, record.id),
                    });
                }
                let mut normalized = Vec::with_capacity(def.informable.len());
                for slot in &def.informable {
                    let v = record.attributes.get(&slot.slot).ok_or_else(|| {
                        Error::Invariant(format!(
                            "entity `{}` lacks attribute `{}`",
                            record.id, slot.slot
                        ))
                    })?;
                    // legal up to normalization, so "Centre" and "center" both load
                    let norm = synonyms.normalize(v);
                    if !slot.values.iter().any(|legal| synonyms.normalize(legal) == norm) {
                        return Err(Error::Invariant(format!(
                            "entity `{}` has illegal {} `{v}`",
                            record.id, slot.slot
                        )));
                    }
                    normalized.push(norm);
                }
                indexed.push(Indexed { record, normalized });
            }
            domains.push(indexed);
        }
        Ok(Database { domains, synonyms })
    }

    pub fn from_json_str(ontology: &Ontology, text: &str, origin: &str) -> Result<Self> {
        let file: DatabaseFile = serde_json::from_str(text).map_err(|e| {
            Error::format(origin, format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        Self::new(ontology, file.domains, SynonymTable::new(file.synonyms))
    }

    pub fn load(ontology: &Ontology, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(ontology, &text, &path.display().to_string())
    }

    pub fn to_json(&self, ontology: &Ontology) -> String {
        let file = DatabaseFile {
            synonyms: self.synonyms.0.clone(),
            domains: ontology
                .domains()
                .iter()
                .zip(&self.domains)
                .map(|(d, recs)| (d.name.clone(), recs.iter().map(|e| e.record.clone()).collect()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("database serializes")
    }

    pub fn synonyms(&self) -> &SynonymTable {
        &self.synonyms
    }

    pub fn normalize(&self, value: &str) -> String {
        self.synonyms.normalize(value)
    }

    pub fn entities(&self, domain: usize) -> impl Iterator<Item = &EntityRecord> {
        self.domains[domain].iter().map(|e| &e.record)
    }

    pub fn num_entities(&self, domain: usize) -> usize {
        self.domains[domain].len()
    }

    pub fn entity(&self, domain: usize, id: &str) -> Option<&EntityRecord> {
        self.entities(domain).find(|e| e.id == id)
    }

    /// Normalized constraints of `b` for one domain; NULL and dontcare constrain nothing.
    fn constraints(&self, ontology: &Ontology, domain: usize, b: &BeliefState) -> Vec<(usize, String)> {
        let def = ontology.domain(domain);
        b.domain_values(domain)
            .iter()
            .enumerate()
            .filter_map(|(s, v)| match v {
                SlotValue::Value(i) => Some((s, self.normalize(&def.informable[s].values[*i]))),
                _ => None,
            })
            .collect()
    }

    fn matching<'a>(
        &'a self,
        domain: usize,
        constraints: &'a [(usize, String)],
    ) -> impl Iterator<Item = &'a EntityRecord> + 'a {
        self.domains[domain]
            .iter()
            .filter(move |e| constraints.iter().all(|(s, v)| e.normalized[*s] == *v))
            .map(|e| &e.record)
    }

    pub fn match_count(&self, ontology: &Ontology, domain: usize, b: &BeliefState) -> usize {
        let c = self.constraints(ontology, domain, b);
        self.matching(domain, &c).count()
    }

    /// Bucketed match counts for the active domains of `d`.
    pub fn query(&self, ontology: &Ontology, b: &BeliefState, d: &DomainState) -> DbResult {
        let counts = d
            .active_domains()
            .map(|dom| (dom, DbBucket::from_count(self.match_count(ontology, dom, b))))
            .collect();
        DbResult::from_map(counts)
    }

    /// The matching entity with the smallest id.
    pub fn select_entity(
        &self,
        ontology: &Ontology,
        domain: usize,
        b: &BeliefState,
    ) -> Option<&EntityRecord> {
        let c = self.constraints(ontology, domain, b);
        self.domains[domain]
            .iter()
            .find(|e| c.iter().all(|(s, v)| e.normalized[*s] == *v))
            .map(|e| &e.record)
    }

    /// Whether an entity satisfies named constraints (`dontcare` matches anything).
    pub fn satisfies(&self, entity: &EntityRecord, constraints: &BTreeMap<String, String>) -> bool {
        constraints.iter().all(|(slot, value)| {
            let v = self.normalize(value);
            v == crate::ontology::DONTCARE
                || entity
                    .attributes
                    .get(slot)
                    .is_some_and(|a| self.normalize(a) == v)
        })
    }

    /// Entities of `domain` satisfying named constraints.
    pub fn find(&self, domain: usize, constraints: &BTreeMap<String, String>) -> Vec<&EntityRecord> {
        self.entities(domain)
            .filter(|e| self.satisfies(e, constraints))
            .collect()
    }
}
