use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoder::{DecodeMode, DecoderCache, Decoded};
use super::encoder::EncoderCache;
use super::ops::sigmoid;
use super::{DecoderParams, EncoderOutput, ModelConfig, ModelParameters};
use crate::error::{Error, Result};
use crate::ontology::{TokenId, BOS_ID, EOS_ID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Belief,
    Action,
    Response,
}

/// Token-level training example for one turn. Targets exclude `[EOS]`, which
/// is appended internally.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnExample {
    pub belief_context: Vec<TokenId>,
    pub action_context: Vec<TokenId>,
    pub response_context: Vec<TokenId>,
    pub gold_domains: Vec<bool>,
    pub belief_target: Vec<TokenId>,
    pub action_target: Vec<TokenId>,
    pub response_target: Vec<TokenId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub domain: f64,
    pub belief: f64,
    pub action: f64,
    pub response: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            domain: 1.0,
            belief: 1.0,
            action: 1.0,
            response: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub domain: f64,
    pub belief: f64,
    pub action: f64,
    pub response: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.domain, self.belief, self.action, self.response, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub(crate) fn accumulate(&mut self, other: &LossBreakdown) {
        self.domain += other.domain;
        self.belief += other.belief;
        self.action += other.action;
        self.response += other.response;
        self.total += other.total;
    }

    pub(crate) fn scaled(mut self, k: f64) -> LossBreakdown {
        self.domain *= k;
        self.belief *= k;
        self.action *= k;
        self.response *= k;
        self.total *= k;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
}

fn with_eos(target: &[TokenId]) -> Vec<TokenId> {
    let mut t = target.to_vec();
    t.push(EOS_ID);
    t
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParameters::init(&config, &mut rng);
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParameters) -> Result<Self> {
        config.validate()?;
        let expected = ModelParameters::init(&config, &mut ChaCha8Rng::seed_from_u64(0));
        for ((name, a), (_, b)) in expected.blocks().iter().zip(params.blocks()) {
            if a.shape() != b.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected {:?}, found {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    /// Address of the encoder parameters; every encode call of a turn goes
    /// through this one set.
    pub fn encoder_handle(&self) -> usize {
        &self.params.encoder as *const _ as usize
    }

    fn decoder(&self, kind: DecoderKind) -> &DecoderParams {
        match kind {
            DecoderKind::Belief => &self.params.belief,
            DecoderKind::Action => &self.params.action,
            DecoderKind::Response => &self.params.response,
        }
    }

    fn check_input(&self, tokens: &[TokenId]) -> Result<()> {
        let cfg = &self.config.encoder;
        if tokens.is_empty() {
            return Err(Error::Argument("cannot encode an empty context".into()));
        }
        if tokens.len() > cfg.max_len {
            return Err(Error::Length {
                len: tokens.len(),
                max: cfg.max_len,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::TokenRange {
                id: bad as usize,
                len: cfg.vocab_size,
            });
        }
        Ok(())
    }

    fn encode_cached(&self, tokens: &[TokenId]) -> Result<(Array1<f64>, EncoderCache)> {
        self.check_input(tokens)?;
        Ok(self.params.encoder.forward(&self.config.encoder, tokens))
    }

    pub fn encode(&self, tokens: &[TokenId]) -> Result<EncoderOutput> {
        Ok(EncoderOutput(self.encode_cached(tokens)?.0))
    }

    /// Per-domain activation probabilities.
    pub fn classify_domains(&self, o: &EncoderOutput) -> Vec<f64> {
        let head = &self.params.domain_head;
        (head.w.dot(&o.0) + &head.b).iter().map(|&z| sigmoid(z)).collect()
    }

    pub fn decode(&self, kind: DecoderKind, o: &EncoderOutput, mode: DecodeMode<'_>) -> Result<Decoded> {
        if !o.is_finite() {
            return Err(Error::Argument("encoder output is not finite".into()));
        }
        self.decoder(kind).decode(&o.0, BOS_ID, EOS_ID, mode)
    }

    fn check_example(&self, ex: &TurnExample) -> Result<()> {
        if ex.gold_domains.len() != self.config.num_domains {
            return Err(Error::Shape(format!(
                "{} gold domain flags for {} domains",
                ex.gold_domains.len(),
                self.config.num_domains
            )));
        }
        let v = self.config.encoder.vocab_size;
        for t in [&ex.belief_target, &ex.action_target, &ex.response_target] {
            if let Some(&bad) = t.iter().find(|&&x| x as usize >= v) {
                return Err(Error::TokenRange {
                    id: bad as usize,
                    len: v,
                });
            }
        }
        Ok(())
    }

    fn bce(&self, o: &Array1<f64>, gold: &[bool]) -> (f64, Vec<f64>) {
        let head = &self.params.domain_head;
        let logits = head.w.dot(o) + &head.b;
        let n = gold.len() as f64;
        let mut loss = 0.0;
        let mut dlogits = Vec::with_capacity(gold.len());
        for (&z, &y) in logits.iter().zip(gold) {
            let y = if y { 1.0 } else { 0.0 };
            // log(1 + e^-|z|) keeps both branches finite
            let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
            loss += y * softplus(-z) + (1.0 - y) * softplus(z);
            dlogits.push((sigmoid(z) - y) / n);
        }
        (loss / n, dlogits)
    }

    /// Weighted joint loss of one turn with oracle contexts.
    pub fn turn_loss(&self, ex: &TurnExample, w: &LossWeights) -> Result<LossBreakdown> {
        self.check_example(ex)?;
        let (ob, _) = self.encode_cached(&ex.belief_context)?;
        let (oa, _) = self.encode_cached(&ex.action_context)?;
        let (or, _) = self.encode_cached(&ex.response_context)?;
        let domain = self.bce(&ob, &ex.gold_domains).0;
        let ce = |dec: &DecoderParams, o: &Array1<f64>, target: &[TokenId]| {
            let t = with_eos(target);
            DecoderParams::loss(&dec.forward(o, BOS_ID, &t), &t)
        };
        let belief = ce(&self.params.belief, &ob, &ex.belief_target);
        let action = ce(&self.params.action, &oa, &ex.action_target);
        let response = ce(&self.params.response, &or, &ex.response_target);
        finish(domain, belief, action, response, w)
    }

    /// Loss plus gradients accumulated into `grads`.
    pub fn turn_loss_and_grad(
        &self,
        ex: &TurnExample,
        w: &LossWeights,
        grads: &mut ModelParameters,
    ) -> Result<LossBreakdown> {
        self.check_example(ex)?;
        let p = &self.params;
        let (ob, cb) = self.encode_cached(&ex.belief_context)?;
        let (oa, ca) = self.encode_cached(&ex.action_context)?;
        let (or, cr) = self.encode_cached(&ex.response_context)?;

        let (domain, dlogits) = self.bce(&ob, &ex.gold_domains);
        let tb = with_eos(&ex.belief_target);
        let ta = with_eos(&ex.action_target);
        let tr = with_eos(&ex.response_target);
        let fb = p.belief.forward(&ob, BOS_ID, &tb);
        let fa = p.action.forward(&oa, BOS_ID, &ta);
        let fr = p.response.forward(&or, BOS_ID, &tr);
        let losses = finish(
            domain,
            DecoderParams::loss(&fb, &tb),
            DecoderParams::loss(&fa, &ta),
            DecoderParams::loss(&fr, &tr),
            w,
        )?;

        let mut d_ob = Array1::zeros(ob.len());
        for (k, &dz) in dlogits.iter().enumerate() {
            let dz = dz * w.domain;
            let mut row = grads.domain_head.w.row_mut(k);
            row.scaled_add(dz, &ob);
            grads.domain_head.b[k] += dz;
            d_ob.scaled_add(dz, &p.domain_head.w.row(k));
        }
        let run = |dec: &DecoderParams,
                   g: &mut DecoderParams,
                   o: &Array1<f64>,
                   cache: &DecoderCache,
                   target: &[TokenId],
                   weight: f64|
         -> Array1<f64> {
            if weight == 1.0 {
                return dec.backward(o, cache, target, g);
            }
            let mut scratch = g.clone();
            scratch.zero();
            let d = dec.backward(o, cache, target, &mut scratch);
            g.add_scaled(&scratch, weight);
            d * weight
        };
        d_ob += &run(&p.belief, &mut grads.belief, &ob, &fb, &tb, w.belief);
        let d_oa = run(&p.action, &mut grads.action, &oa, &fa, &ta, w.action);
        let d_or = run(&p.response, &mut grads.response, &or, &fr, &tr, w.response);

        let cfg = &self.config.encoder;
        p.encoder.backward(cfg, &cb, &d_ob, &mut grads.encoder);
        p.encoder.backward(cfg, &ca, &d_oa, &mut grads.encoder);
        p.encoder.backward(cfg, &cr, &d_or, &mut grads.encoder);
        Ok(losses)
    }
}

fn finish(domain: f64, belief: f64, action: f64, response: f64, w: &LossWeights) -> Result<LossBreakdown> {
    let out = LossBreakdown {
        domain,
        belief,
        action,
        response,
        total: w.domain * domain + w.belief * belief + w.action * action + w.response * response,
    };
    if !out.is_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "domain {domain}, belief {belief}, action {action}, response {response}"
        )));
    }
    Ok(out)
}

impl DecoderParams {
    fn zero(&mut self) {
        for a in [
            &mut self.init_w,
            &mut self.emb,
            &mut self.w_ih,
            &mut self.w_hh,
            &mut self.out_w,
        ] {
            a.fill(0.0);
        }
        for a in [
            &mut self.init_b,
            &mut self.b_ih,
            &mut self.b_hh,
            &mut self.out_b,
        ] {
            a.fill(0.0);
        }
    }

    fn add_scaled(&mut self, other: &DecoderParams, k: f64) {
        self.init_w.scaled_add(k, &other.init_w);
        self.emb.scaled_add(k, &other.emb);
        self.w_ih.scaled_add(k, &other.w_ih);
        self.w_hh.scaled_add(k, &other.w_hh);
        self.out_w.scaled_add(k, &other.out_w);
        self.init_b.scaled_add(k, &other.init_b);
        self.b_ih.scaled_add(k, &other.b_ih);
        self.b_hh.scaled_add(k, &other.b_hh);
        self.out_b.scaled_add(k, &other.out_b);
    }
}

/// Below this block norm both gradients are indistinguishable from
/// finite-difference round-off (e.g. key biases, which softmax cancels).
const GRAD_FLOOR: f64 = 1e-7;

/// Compares analytic gradients with central differences, block by block.
/// Returns `(block name, relative error)` where the error is
/// `|analytic - numeric| / max(|analytic|, |numeric|)` over the whole block
/// (zero when both are below round-off level).
pub fn gradient_check(model: &Model, ex: &TurnExample, w: &LossWeights, h: f64) -> Result<Vec<(String, f64)>> {
    let mut grads = model.params.zeros_like();
    model.turn_loss_and_grad(ex, w, &mut grads)?;
    let mut probe = model.clone();
    let n_blocks = grads.blocks().len();
    let mut out = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let (name, analytic) = {
            let blocks = grads.blocks();
            (blocks[b].0.clone(), blocks[b].1.iter().copied().collect::<Vec<f64>>())
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = get_entry(&mut probe, b, i);
            set_entry(&mut probe, b, i, orig + h);
            let plus = probe.turn_loss(ex, w)?.total;
            set_entry(&mut probe, b, i, orig - h);
            let minus = probe.turn_loss(ex, w)?.total;
            set_entry(&mut probe, b, i, orig);
            numeric.push((plus - minus) / (2.0 * h));
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        let rel = if scale < GRAD_FLOOR { 0.0 } else { norm(&diff) / scale };
        out.push((name, rel));
    }
    Ok(out)
}

fn get_entry(m: &mut Model, block: usize, i: usize) -> f64 {
    let mut blocks = m.params.blocks_mut();
    blocks[block].1.as_slice_mut().expect("contiguous block")[i]
}

fn set_entry(m: &mut Model, block: usize, i: usize, v: f64) {
    let mut blocks = m.params.blocks_mut();
    blocks[block].1.as_slice_mut().expect("contiguous block")[i] = v;
}
