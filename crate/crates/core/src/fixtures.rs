//! Small hand-authored worlds shared by unit tests.

use std::collections::BTreeMap;

use rand::Rng;

use crate::database::{Database, EntityRecord, SynonymTable};
use crate::ontology::{Ontology, Vocabulary};
use crate::schema::Schema;

pub const TOY_ONTOLOGY: &str = r#"{"domains": [
    {"name": "restaurant",
     "informable": [{"slot": "pricerange", "values": ["cheap", "expensive"]},
                    {"slot": "area", "values": ["east", "west"]}],
     "requestable": ["name", "phone", "address"]},
    {"name": "hotel",
     "informable": [{"slot": "stars", "values": ["3", "4"]},
                    {"slot": "area", "values": ["east", "west"]}],
     "requestable": ["name", "phone"]},
    {"name": "taxi",
     "informable": [{"slot": "destination", "values": ["station", "airport"]}],
     "requestable": ["phone"]}
]}"#;

pub fn ontology() -> Ontology {
    Ontology::from_json_str(TOY_ONTOLOGY, "toy").unwrap()
}

pub fn two_domain_ontology() -> Ontology {
    Ontology::from_json_str(
        r#"{"domains": [
            {"name": "hotel", "informable": [{"slot": "stars", "values": ["3", "4"]}]},
            {"name": "taxi", "informable": [{"slot": "destination", "values": ["station"]}]}
        ]}"#,
        "two",
    )
    .unwrap()
}

pub const EXTRA_WORDS: [&str; 12] = [
    "find", "a", "cheap", "restaurant", "i", "want", "one", "try", "on", "the", "is", "hotel",
];

pub fn schema_with(ontology: Ontology) -> Schema {
    let mut words = ontology.state_words();
    words.extend(EXTRA_WORDS.iter().map(|w| w.to_string()));
    let vocab = Vocabulary::build(&ontology, words).unwrap();
    Schema::new(ontology, vocab).unwrap()
}

pub fn schema() -> Schema {
    schema_with(ontology())
}

fn entity(id: &str, attrs: &[(&str, &str)], extras: &[(&str, &str)]) -> EntityRecord {
    EntityRecord {
        id: id.into(),
        attributes: attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        extras: extras.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    }
}

/// Five restaurants, two of them cheap and in the east (r2, r5).
pub fn database(ontology: &Ontology) -> Database {
    let r = |id: &str, p: &str, a: &str, street: &str| {
        entity(
            id,
            &[("pricerange", p), ("area", a)],
            &[("name", id), ("phone", "01223 000"), ("address", street)],
        )
    };
    let mut entities = BTreeMap::new();
    entities.insert(
        "restaurant".to_string(),
        vec![
            r("r4", "cheap", "west", "mill road"),
            r("r1", "cheap", "west", "hills road"),
            r("r2", "cheap", "east", "main street"),
            r("r3", "expensive", "west", "king street"),
            r("r5", "cheap", "east", "bridge street"),
        ],
    );
    entities.insert(
        "hotel".to_string(),
        vec![
            entity("h1", &[("stars", "3"), ("area", "east")], &[("name", "acorn"), ("phone", "111")]),
            entity("h2", &[("stars", "4"), ("area", "west")], &[("name", "gonville"), ("phone", "222")]),
        ],
    );
    entities.insert(
        "taxi".to_string(),
        vec![entity("t1", &[("destination", "station")], &[("phone", "333")])],
    );
    Database::new(ontology, entities, SynonymTable::default()).unwrap()
}

pub fn random_database(ontology: &Ontology, rng: &mut impl Rng) -> Database {
    let mut entities = BTreeMap::new();
    for d in ontology.domains() {
        let n = rng.gen_range(0..8);
        let recs = (0..n)
            .map(|i| EntityRecord {
                id: format!("e{i}"),
                attributes: d
                    .informable
                    .iter()
                    .map(|s| (s.slot.clone(), s.values[rng.gen_range(0..s.values.len())].clone()))
                    .collect(),
                extras: BTreeMap::new(),
            })
            .collect();
        entities.insert(d.name.clone(), recs);
    }
    Database::new(ontology, entities, SynonymTable::default()).unwrap()
}

/// Hand-sets a decoder (hidden size > `seq.len()`) to emit `seq` then `[EOS]`
/// whatever its input: the hidden state is a one-hot position counter shifted
/// by the recurrent weights, and each position votes for one output token.
pub fn script_decoder(dec: &mut crate::nn::DecoderParams, seq: &[crate::ontology::TokenId]) {
    const K: f64 = 20.0;
    // gates saturate exactly, otherwise leftovers get amplified by K per step
    const GATE: f64 = 1000.0;
    let d = dec.init_b.len();
    assert!(seq.len() + 1 < d, "decoder too small for the script");
    for a in [&mut dec.init_w, &mut dec.emb, &mut dec.w_ih, &mut dec.w_hh, &mut dec.out_w] {
        a.fill(0.0);
    }
    for a in [&mut dec.init_b, &mut dec.b_ih, &mut dec.b_hh, &mut dec.out_b] {
        a.fill(0.0);
    }
    // h0 = e_0 (approximately); step t produces h_t = e_{t+1}
    dec.init_b[0] = K;
    for i in 0..d {
        dec.b_ih[i] = GATE; // reset gate open
        dec.b_ih[d + i] = -GATE; // update gate closed
        if i + 1 < d {
            dec.w_hh[[i, 2 * d + i + 1]] = K;
        }
    }
    let tokens = seq.iter().copied().chain([crate::ontology::EOS_ID]);
    for (t, tok) in tokens.enumerate() {
        dec.out_w[[t + 1, tok as usize]] = 30.0;
    }
}
