//! Checkpoint files: `DOTSCKPT`, a little-endian u32 format version, a u64
//! header length, a JSON header (configs, vocabulary, block names and shapes),
//! then every parameter block as little-endian f64 — followed by the Adam first
//! and second moments in the same order when optimizer state is present.

use std::path::Path;

use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainingConfig;
use crate::error::{Error, Result};
use crate::nn::{AdamState, Model, ModelConfig, ModelParameters};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DOTSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Token list in id order; rebuilds the vocabulary the model was trained with.
    pub vocabulary: Vec<String>,
    pub training: Option<TrainingConfig>,
    pub optimizer: Option<AdamState>,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    training: Option<TrainingConfig>,
    vocabulary: Vec<String>,
    epoch: usize,
    optimizer: Option<OptimizerHeader>,
    blocks: Vec<(String, Vec<usize>)>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: crate::nn::AdamConfig,
    step: u64,
}

fn corrupt(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let params = &self.model.params;
        let header = Header {
            model: self.model.config.clone(),
            training: self.training.clone(),
            vocabulary: self.vocabulary.clone(),
            epoch: self.epoch,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config.clone(),
                step: o.step,
            }),
            blocks: params
                .blocks()
                .iter()
                .map(|(n, b)| (n.clone(), b.shape().to_vec()))
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(24 + header.len() + params.num_parameters() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |a: ndarray::ArrayViewD<'_, f64>| {
            for v in a.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, b) in params.blocks() {
            put(b);
        }
        if let Some(o) = &self.optimizer {
            for a in o.m.iter().chain(&o.v) {
                put(a.view());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and insists on the given architecture.
    pub fn load_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if &ck.model.config != expected {
            return Err(Error::Shape(format!(
                "checkpoint architecture {:?} does not match requested {:?}",
                ck.model.config, expected
            )));
        }
        Ok(ck)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(corrupt(origin, "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(
                origin,
                format!("format version {version}, this build reads {CHECKPOINT_VERSION}"),
            ));
        }
        let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| corrupt(origin, e))?;
        header.model.validate()?;

        // shapes come from the config; the header must agree with them
        let mut params = ModelParameters::init(&header.model, &mut ChaCha8Rng::seed_from_u64(0));
        let expected: Vec<(String, Vec<usize>)> = params
            .blocks()
            .iter()
            .map(|(n, b)| (n.clone(), b.shape().to_vec()))
            .collect();
        if expected != header.blocks {
            return Err(Error::Shape(format!(
                "{}: parameter blocks do not match the stored configuration",
                origin.display()
            )));
        }
        for (_, mut b) in params.blocks_mut() {
            for v in b.iter_mut() {
                *v = r.f64()?;
            }
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(h) => {
                let mut st = AdamState::new(h.config, &params);
                st.step = h.step;
                for a in st.m.iter_mut().chain(st.v.iter_mut()) {
                    fill(a, &mut r)?;
                }
                Some(st)
            }
        };
        if r.pos != bytes.len() {
            return Err(corrupt(origin, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            model: Model::from_parts(header.model, params)?,
            vocabulary: header.vocabulary,
            training: header.training,
            optimizer,
            epoch: header.epoch,
        })
    }
}

fn fill(a: &mut ArrayD<f64>, r: &mut Reader<'_>) -> Result<()> {
    for v in a.iter_mut() {
        *v = r.f64()?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(corrupt(
                self.origin,
                format!("truncated at byte {} (wanted {n} more)", self.bytes.len()),
            )),
        }
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
