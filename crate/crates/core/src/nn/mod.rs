//! Trainable machinery: a small self-attention context encoder, a linear
//! multi-label domain head, one-layer GRU decoders and Adam, with hand-written
//! backward passes (checked against finite differences in the tests).

mod adam;
mod decoder;
mod encoder;
mod model;
mod ops;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use decoder::{DecodeMode, Decoded};
pub use model::{gradient_check, DecoderKind, LossBreakdown, LossWeights, Model, TurnExample};

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Width of the feed-forward sublayer.
    pub ffn: usize,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 64,
            heads: 2,
            max_len: crate::state::MAX_CONTEXT_LEN,
            vocab_size,
            ffn: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.layers,
            self.hidden,
            self.heads,
            self.max_len,
            self.vocab_size,
            self.ffn,
        ]
        .iter()
        .all(|&v| v > 0);
        if !all_positive {
            return Err(Error::Argument(format!("encoder sizes must be positive: {self:?}")));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Argument(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder_hidden: usize,
    pub num_domains: usize,
    /// Feed a constant block instead of the domain state into every context.
    #[serde(default)]
    pub mask_domain_state: bool,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, num_domains: usize) -> Self {
        let encoder = EncoderConfig::new(vocab_size);
        ModelConfig {
            decoder_hidden: encoder.hidden,
            encoder,
            num_domains,
            mask_domain_state: false,
        }
    }

    /// Tiny sizes for finite-difference checks.
    pub fn tiny(vocab_size: usize, num_domains: usize) -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                layers: 2,
                hidden: 8,
                heads: 2,
                max_len: 64,
                vocab_size,
                ffn: 16,
            },
            decoder_hidden: 8,
            num_domains,
            mask_domain_state: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.decoder_hidden == 0 || self.num_domains == 0 {
            return Err(Error::Argument("decoder size and domain count must be positive".into()));
        }
        Ok(())
    }
}

/// Top-layer encoder state at the `[CLS]` position.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput(pub Array1<f64>);

impl EncoderOutput {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub tok: Array2<f64>,
    pub pos: Array2<f64>,
    /// Two rows: `[CLS] U [SEP]`, then the state segments.
    pub seg: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
}

/// Linear multi-label classifier; `w` is `domains x hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainHead {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// GRU gates are packed `[reset | update | candidate]` along the second axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub init_w: Array2<f64>,
    pub init_b: Array1<f64>,
    pub emb: Array2<f64>,
    pub w_ih: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub w_hh: Array2<f64>,
    pub b_hh: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub encoder: EncoderParams,
    pub domain_head: DomainHead,
    pub belief: DecoderParams,
    pub action: DecoderParams,
    pub response: DecoderParams,
}

fn uniform2(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
}

fn zeros(n: usize) -> Array1<f64> {
    Array1::zeros(n)
}

fn ones(n: usize) -> Array1<f64> {
    Array1::ones(n)
}

impl LayerParams {
    fn init(h: usize, f: usize, rng: &mut impl Rng) -> Self {
        LayerParams {
            ln1_g: ones(h),
            ln1_b: zeros(h),
            wq: uniform2(rng, h, h, h),
            bq: zeros(h),
            wk: uniform2(rng, h, h, h),
            bk: zeros(h),
            wv: uniform2(rng, h, h, h),
            bv: zeros(h),
            wo: uniform2(rng, h, h, h),
            bo: zeros(h),
            ln2_g: ones(h),
            ln2_b: zeros(h),
            w1: uniform2(rng, h, f, h),
            b1: zeros(f),
            w2: uniform2(rng, f, h, f),
            b2: zeros(h),
        }
    }
}

impl DecoderParams {
    fn init(h: usize, d: usize, v: usize, rng: &mut impl Rng) -> Self {
        DecoderParams {
            init_w: uniform2(rng, h, d, h),
            init_b: zeros(d),
            emb: uniform2(rng, v, d, d),
            w_ih: uniform2(rng, d, 3 * d, d),
            b_ih: zeros(3 * d),
            w_hh: uniform2(rng, d, 3 * d, d),
            b_hh: zeros(3 * d),
            out_w: uniform2(rng, d, v, d),
            out_b: zeros(v),
        }
    }
}

macro_rules! collect_blocks {
    ($out:ident, $prefix:expr, $s:expr, $view:ident; $($f:ident),+ $(,)?) => {
        $( $out.push((format!("{}.{}", $prefix, stringify!($f)), $s.$f.$view().into_dyn())); )+
    };
}

impl ModelParameters {
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let c = &config.encoder;
        let (h, v, d) = (c.hidden, c.vocab_size, config.decoder_hidden);
        let encoder = EncoderParams {
            tok: uniform2(rng, v, h, h),
            pos: uniform2(rng, c.max_len, h, h),
            seg: uniform2(rng, 2, h, h),
            layers: (0..c.layers).map(|_| LayerParams::init(h, c.ffn, rng)).collect(),
            lnf_g: ones(h),
            lnf_b: zeros(h),
        };
        let domain_head = DomainHead {
            w: uniform2(rng, config.num_domains, h, h),
            b: zeros(config.num_domains),
        };
        ModelParameters {
            encoder,
            domain_head,
            belief: DecoderParams::init(h, d, v, rng),
            action: DecoderParams::init(h, d, v, rng),
            response: DecoderParams::init(h, d, v, rng),
        }
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut b) in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    /// Every parameter block with a stable dotted name, in a fixed order.
    pub fn blocks(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        let e = &self.encoder;
        collect_blocks!(out, "encoder", e, view; tok, pos, seg);
        for (i, l) in e.layers.iter().enumerate() {
            let p = format!("encoder.layer{i}");
            collect_blocks!(out, p, l, view;
                ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2);
        }
        collect_blocks!(out, "encoder", e, view; lnf_g, lnf_b);
        collect_blocks!(out, "domain_head", self.domain_head, view; w, b);
        for (name, dec) in [("belief", &self.belief), ("action", &self.action), ("response", &self.response)] {
            collect_blocks!(out, name, dec, view;
                init_w, init_b, emb, w_ih, b_ih, w_hh, b_hh, out_w, out_b);
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        let e = &mut self.encoder;
        collect_blocks!(out, "encoder", e, view_mut; tok, pos, seg);
        for (i, l) in e.layers.iter_mut().enumerate() {
            let p = format!("encoder.layer{i}");
            collect_blocks!(out, p, l, view_mut;
                ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2);
        }
        collect_blocks!(out, "encoder", e, view_mut; lnf_g, lnf_b);
        collect_blocks!(out, "domain_head", self.domain_head, view_mut; w, b);
        for (name, dec) in [
            ("belief", &mut self.belief),
            ("action", &mut self.action),
            ("response", &mut self.response),
        ] {
            collect_blocks!(out, name, dec, view_mut;
                init_w, init_b, emb, w_ih, b_ih, w_hh, b_hh, out_w, out_b);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut b) in self.blocks_mut() {
            b.mapv_inplace(|v| v * factor);
        }
    }

    pub fn add_assign(&mut self, other: &ModelParameters) {
        for ((_, mut a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a += &b;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .map(|(_, b)| b.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}
