//! The bundled restaurant / hotel / taxi world used by the synthetic corpus
//! and as the default for every command.

use crate::database::Database;
use crate::error::Result;
use crate::ontology::Ontology;

pub const ONTOLOGY_JSON: &str = include_str!("../data/ontology.json");
pub const DATABASE_JSON: &str = include_str!("../data/db.json");

pub fn ontology() -> Ontology {
    Ontology::from_json_str(ONTOLOGY_JSON, "built-in ontology").expect("bundled ontology is valid")
}

pub fn database(ontology: &Ontology) -> Result<Database> {
    Database::from_json_str(ontology, DATABASE_JSON, "built-in database")
}
