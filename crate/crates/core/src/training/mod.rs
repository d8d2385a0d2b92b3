//! Joint training: the summed domain / belief / action / response losses are
//! minimized with Adam over shuffled turn-level batches, and training stops once
//! validation inform + success has not strictly improved for `patience` epochs.

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusSplits, Dialogue};
use crate::database::Database;
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::nn::{clip_global_norm, AdamConfig, AdamState, LossBreakdown, LossWeights, Model, ModelConfig, TurnExample};
use crate::ontology::{Ontology, Vocabulary};
use crate::pipeline::Pipeline;
use crate::schema::Schema;
use crate::state::{serialize_action, serialize_belief_state, ContextBuilder, ContextKind, DomainState};

pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub clip_norm: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainingConfig {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            batch_size: 8,
            max_epochs: 50,
            patience: 5,
            seed: DEFAULT_SEED,
            loss_weights: LossWeights::default(),
            clip_norm: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: TrainingConfig = toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("training config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("eps", self.eps),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Argument(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Argument(
                "batch_size, max_epochs and patience must be at least 1".into(),
            ));
        }
        let w = &self.loss_weights;
        if [w.domain, w.belief, w.action, w.response]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Argument("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

// ---------------------------------------------------------------------------
// Early stopping

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopVerdict {
    pub improved: bool,
    pub stop: bool,
}

/// Patience rule over a validation score where only strict increases count.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopVerdict {
        let improved = match self.best {
            None => true,
            Some((_, b)) => score > b,
        };
        if improved {
            self.best = Some((epoch, score));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopVerdict {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

/// Replays a score sequence (epoch 1 first). Returns the epoch after which
/// training stops (`None` if it runs through) and the best epoch.
pub fn replay_early_stopping(scores: &[f64], patience: usize) -> (Option<usize>, Option<usize>) {
    let mut es = EarlyStopping::new(patience);
    for (i, &s) in scores.iter().enumerate() {
        if es.observe(i + 1, s).stop {
            return (Some(i + 1), es.best_epoch());
        }
    }
    (None, es.best_epoch())
}

// ---------------------------------------------------------------------------
// Examples

/// Vocabulary for a corpus: training-split words plus every word that
/// serialized states can contain.
pub fn corpus_schema(ontology: &Ontology, splits: &CorpusSplits) -> Result<Schema> {
    let mut words = splits.training_words();
    words.extend(ontology.state_words());
    let vocab = Vocabulary::build(ontology, words)?;
    Schema::new(ontology.clone(), vocab)
}

/// Where a training example came from, for diagnostics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExampleOrigin {
    pub dialogue: String,
    pub turn: usize,
}

/// Teacher-forced examples for every turn of a dialogue: all contexts are built
/// from gold states (the previous turn's for the belief context).
pub fn turn_examples(
    schema: &Schema,
    db: &Database,
    config: &ModelConfig,
    dialogue: &Dialogue,
) -> Result<Vec<TurnExample>> {
    let ontology = schema.ontology();
    let builder = ContextBuilder::new(schema)
        .with_max_len(config.encoder.max_len)
        .with_masked_domain_state(config.mask_domain_state);
    let domains = dialogue.domain_states(ontology);
    let mut prev_d = DomainState::all_off(ontology);
    let mut prev_b = crate::state::BeliefState::empty(ontology);
    let mut out = Vec::with_capacity(dialogue.turns.len());
    for (i, (turn, d)) in dialogue.turns.iter().zip(&domains).enumerate() {
        let wrap = |e: Error| Error::Turn {
            dialogue: dialogue.id.clone(),
            turn: i + 1,
            message: e.to_string(),
        };
        let u = schema.vocab().tokenize(&turn.user);
        let dbr = db.query(ontology, &turn.belief, d);
        let cb = builder
            .build(ContextKind::Belief, &u, &prev_d, &prev_b, None, None)
            .map_err(wrap)?;
        let ca = builder
            .build(ContextKind::Action, &u, d, &turn.belief, Some(&dbr), None)
            .map_err(wrap)?;
        let cr = builder
            .build(ContextKind::Response, &u, d, &turn.belief, Some(&dbr), Some(&turn.action))
            .map_err(wrap)?;
        out.push(TurnExample {
            belief_context: cb.tokens,
            action_context: ca.tokens,
            response_context: cr.tokens,
            gold_domains: d.flags().to_vec(),
            belief_target: serialize_belief_state(schema, &turn.belief),
            action_target: serialize_action(schema, &turn.action),
            response_target: schema.vocab().tokenize(&turn.response_delex),
        });
        prev_d = d.clone();
        prev_b = turn.belief.clone();
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Log

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Per-turn means over the epoch.
    pub loss: LossBreakdown,
    pub val_inform: f64,
    pub val_success: f64,
    pub val_bleu: f64,
}

impl EpochRecord {
    pub fn score(&self) -> f64 {
        self.val_inform + self.val_success
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epoch,loss_domain,loss_belief,loss_action,loss_response,loss_total,val_inform,val_success,val_bleu,best\n",
        );
        for r in &self.epochs {
            let l = &r.loss;
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4},{}",
                r.epoch,
                l.domain,
                l.belief,
                l.action,
                l.response,
                l.total,
                r.val_inform,
                r.val_success,
                r.val_bleu,
                u8::from(self.best_epoch == Some(r.epoch))
            );
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

// ---------------------------------------------------------------------------
// Loop

#[derive(Debug)]
pub struct TrainingOutcome {
    /// Parameters from the epoch with the best validation inform + success.
    pub best: Checkpoint,
    pub log: TrainingLog,
}

/// A run that aborted; whatever was best so far is kept.
#[derive(Debug, Error)]
#[error("training failed: {source}")]
pub struct TrainingFailure {
    #[source]
    pub source: Error,
    pub best: Option<Box<Checkpoint>>,
    pub log: TrainingLog,
}

impl TrainingFailure {
    fn new(source: Error) -> Self {
        TrainingFailure {
            source,
            best: None,
            log: TrainingLog::default(),
        }
    }
}

fn mean_breakdown(sum: &LossBreakdown, n: usize) -> LossBreakdown {
    sum.scaled(1.0 / n.max(1) as f64)
}

pub fn train(
    model: Model,
    schema: &Schema,
    db: &Database,
    splits: &CorpusSplits,
    cfg: &TrainingConfig,
) -> std::result::Result<TrainingOutcome, TrainingFailure> {
    cfg.validate().map_err(TrainingFailure::new)?;
    if splits.train.is_empty() || splits.validation.is_empty() {
        return Err(TrainingFailure::new(Error::Argument(
            "training needs non-empty train and validation splits".into(),
        )));
    }
    let mut examples = Vec::new();
    let mut origins = Vec::new();
    for dlg in &splits.train {
        let ex = turn_examples(schema, db, &model.config, dlg).map_err(TrainingFailure::new)?;
        origins.extend((1..=ex.len()).map(|turn| ExampleOrigin {
            dialogue: dlg.id.clone(),
            turn,
        }));
        examples.extend(ex);
    }
    if examples.is_empty() {
        return Err(TrainingFailure::new(Error::Argument("training split has no turns".into())));
    }
    log::info!(
        "training on {} turns from {} dialogues ({} parameters)",
        examples.len(),
        splits.train.len(),
        model.params.num_parameters()
    );

    let mut model = model;
    let mut adam = AdamState::new(cfg.adam(), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut log = TrainingLog::default();
    let mut best: Option<Checkpoint> = None;
    let snapshot = |model: &Model, adam: &AdamState, epoch: usize| Checkpoint {
        model: model.clone(),
        vocabulary: schema.vocab().tokens().to_vec(),
        training: Some(cfg.clone()),
        optimizer: Some(adam.clone()),
        epoch,
    };

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = model.params.zeros_like();
            for &i in batch {
                let losses = model
                    .turn_loss_and_grad(&examples[i], &cfg.loss_weights, &mut grads)
                    .map_err(|e| {
                        let o = &origins[i];
                        let source = Error::NonFiniteLoss(format!(
                            "epoch {epoch} batch {}: dialogue `{}` turn {}: {e}",
                            b + 1,
                            o.dialogue,
                            o.turn
                        ));
                        TrainingFailure {
                            source,
                            best: best.clone().map(Box::new),
                            log: log.clone(),
                        }
                    })?;
                sum.accumulate(&losses);
            }
            grads.scale(1.0 / batch.len() as f64);
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.update(&mut model.params, &grads).map_err(|e| TrainingFailure {
                source: e,
                best: best.clone().map(Box::new),
                log: log.clone(),
            })?;
        }

        let pipeline = Pipeline::new(&model, schema, db);
        let report = evaluate(&pipeline, &splits.validation, false).map_err(|e| TrainingFailure {
            source: e,
            best: best.clone().map(Box::new),
            log: log.clone(),
        })?;
        let record = EpochRecord {
            epoch,
            loss: mean_breakdown(&sum, examples.len()),
            val_inform: report.inform,
            val_success: report.success,
            val_bleu: report.bleu,
        };
        let verdict = stopping.observe(epoch, record.score());
        log::info!(
            "epoch {epoch}: loss {:.4} (domain {:.4} belief {:.4} action {:.4} response {:.4}) val inform {:.1} success {:.1} bleu {:.2}{}",
            record.loss.total,
            record.loss.domain,
            record.loss.belief,
            record.loss.action,
            record.loss.response,
            record.val_inform,
            record.val_success,
            record.val_bleu,
            if verdict.improved { " *" } else { "" }
        );
        log.epochs.push(record);
        if verdict.improved {
            best = Some(snapshot(&model, &adam, epoch));
        }
        log.best_epoch = stopping.best_epoch();
        if verdict.stop {
            log.stopped_early = true;
            break;
        }
    }
    Ok(TrainingOutcome {
        best: best.expect("at least one epoch ran"),
        log,
    })
}
