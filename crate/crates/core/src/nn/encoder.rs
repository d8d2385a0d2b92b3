//! Pre-norm self-attention encoder. Only the `[CLS]` row is needed from the top
//! layer, so the last layer computes queries, attention output and the
//! feed-forward sublayer for position 0 alone.
//!
//! Positions restart after the first `[SEP]` and a segment embedding marks
//! which side of it a token is on, so every state segment sits at the same
//! positions whatever the utterance length.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, softmax_rows, LnCache};
use super::{EncoderConfig, EncoderParams, LayerParams};
use crate::ontology::{TokenId, SEP_ID};

pub(crate) struct LayerCache {
    rows: usize,
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
}

pub(crate) struct EncoderCache {
    tokens: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

fn add_bias(mut m: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    m += b;
    m
}

fn layer_forward(
    p: &LayerParams,
    x: ArrayView2<f64>,
    rows: usize,
    heads: usize,
) -> (Array2<f64>, LayerCache) {
    let h = x.ncols();
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (a, ln1) = layer_norm(x, &p.ln1_g, &p.ln1_b);
    let q = add_bias(a.slice(s![..rows, ..]).dot(&p.wq), &p.bq);
    let k = add_bias(a.dot(&p.wk), &p.bk);
    let v = add_bias(a.dot(&p.wv), &p.bv);
    let mut ctx = Array2::zeros((rows, h));
    let mut probs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let cols = s![.., hd * dh..(hd + 1) * dh];
        let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        let pr = softmax_rows(scores);
        ctx.slice_mut(cols).assign(&pr.dot(&v.slice(cols)));
        probs.push(pr);
    }
    let o = add_bias(ctx.dot(&p.wo), &p.bo);
    let y = &x.slice(s![..rows, ..]) + &o;
    let (b, ln2) = layer_norm(y.view(), &p.ln2_g, &p.ln2_b);
    let f1 = add_bias(b.dot(&p.w1), &p.b1);
    let g = f1.mapv(gelu);
    let f2 = add_bias(g.dot(&p.w2), &p.b2);
    let z = y + f2;
    let cache = LayerCache {
        rows,
        ln1,
        a,
        q,
        k,
        v,
        probs,
        ctx,
        ln2,
        b,
        f1,
        g,
    };
    (z, cache)
}

/// Returns `dx` for the full layer input (all positions).
fn layer_backward(
    p: &LayerParams,
    c: &LayerCache,
    dz: ArrayView2<f64>,
    grad: &mut LayerParams,
    seq_len: usize,
    heads: usize,
) -> Array2<f64> {
    let h = dz.ncols();
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let rows = c.rows;

    // feed-forward
    grad.w2 += &c.g.t().dot(&dz);
    grad.b2 += &dz.sum_axis(Axis(0));
    let mut df1 = dz.dot(&p.w2.t());
    ndarray::Zip::from(&mut df1)
        .and(&c.f1)
        .for_each(|d, &x| *d *= gelu_grad(x));
    grad.w1 += &c.b.t().dot(&df1);
    grad.b1 += &df1.sum_axis(Axis(0));
    let db = df1.dot(&p.w1.t());
    let dy = layer_norm_backward(db.view(), &c.ln2, &p.ln2_g, &mut grad.ln2_g, &mut grad.ln2_b)
        + &dz;

    // attention output projection; the residual passes dy straight to x[..rows]
    let mut dx = Array2::zeros((seq_len, h));
    dx.slice_mut(s![..rows, ..]).assign(&dy);
    grad.wo += &c.ctx.t().dot(&dy);
    grad.bo += &dy.sum_axis(Axis(0));
    let dctx = dy.dot(&p.wo.t());

    let mut dq = Array2::zeros((rows, h));
    let mut dk = Array2::zeros((seq_len, h));
    let mut dv = Array2::zeros((seq_len, h));
    for (hd, pr) in c.probs.iter().enumerate() {
        let cols = s![.., hd * dh..(hd + 1) * dh];
        let dctx_h = dctx.slice(cols);
        let dp = dctx_h.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&pr.t().dot(&dctx_h));
        let row_dot = (&dp * pr).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ds = (dp - &row_dot) * pr * scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    grad.wq += &c.a.slice(s![..rows, ..]).t().dot(&dq);
    grad.bq += &dq.sum_axis(Axis(0));
    grad.wk += &c.a.t().dot(&dk);
    grad.bk += &dk.sum_axis(Axis(0));
    grad.wv += &c.a.t().dot(&dv);
    grad.bv += &dv.sum_axis(Axis(0));
    let mut da = dk.dot(&p.wk.t()) + dv.dot(&p.wv.t());
    {
        let mut head = da.slice_mut(s![..rows, ..]);
        head += &dq.dot(&p.wq.t());
    }
    dx += &layer_norm_backward(da.view(), &c.ln1, &p.ln1_g, &mut grad.ln1_g, &mut grad.ln1_b);
    dx
}

/// `(position, segment)` of every token.
pub(crate) fn position_ids(tokens: &[usize]) -> Vec<(usize, usize)> {
    let sep = tokens.iter().position(|&t| t == SEP_ID as usize);
    (0..tokens.len())
        .map(|i| match sep {
            Some(k) if i > k => (i - k - 1, 1),
            _ => (i, 0),
        })
        .collect()
}

impl EncoderParams {
    fn embed(&self, tokens: &[usize]) -> Array2<f64> {
        let h = self.tok.ncols();
        let mut x = Array2::zeros((tokens.len(), h));
        for ((&t, (p, g)), mut row) in tokens.iter().zip(position_ids(tokens)).zip(x.rows_mut()) {
            row.assign(&self.tok.row(t));
            row += &self.pos.row(p);
            row += &self.seg.row(g);
        }
        x
    }

    pub(crate) fn forward(
        &self,
        cfg: &EncoderConfig,
        tokens: &[TokenId],
    ) -> (Array1<f64>, EncoderCache) {
        let tokens: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let mut x = self.embed(&tokens);
        let n_layers = self.layers.len();
        let mut caches = Vec::with_capacity(n_layers);
        for (i, layer) in self.layers.iter().enumerate() {
            let rows = if i + 1 == n_layers { 1 } else { tokens.len() };
            let (z, c) = layer_forward(layer, x.view(), rows, cfg.heads);
            caches.push(c);
            x = z;
        }
        let (out, lnf) = layer_norm(x.view(), &self.lnf_g, &self.lnf_b);
        let cls = out.row(0).to_owned();
        (
            cls,
            EncoderCache {
                tokens,
                layers: caches,
                lnf,
            },
        )
    }

    pub(crate) fn backward(
        &self,
        cfg: &EncoderConfig,
        cache: &EncoderCache,
        d_cls: &Array1<f64>,
        grad: &mut EncoderParams,
    ) {
        let seq_len = cache.tokens.len();
        let dtop = d_cls.view().insert_axis(Axis(0));
        let mut dx = layer_norm_backward(dtop, &cache.lnf, &self.lnf_g, &mut grad.lnf_g, &mut grad.lnf_b);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            dx = layer_backward(
                layer,
                &cache.layers[i],
                dx.view(),
                &mut grad.layers[i],
                seq_len,
                cfg.heads,
            );
        }
        for ((&t, (p, g)), row) in cache.tokens.iter().zip(position_ids(&cache.tokens)).zip(dx.rows()) {
            let mut tr = grad.tok.row_mut(t);
            tr += &row;
            let mut pr = grad.pos.row_mut(p);
            pr += &row;
            let mut sr = grad.seg.row_mut(g);
            sr += &row;
        }
    }
}
