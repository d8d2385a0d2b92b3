//! One-layer GRU decoder conditioned on the encoder output through its initial
//! hidden state `h0 = tanh(init_w^T o + init_b)`.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::ops::{sigmoid, softmax_inplace};
use super::DecoderParams;
use crate::error::{Error, Result};
use crate::ontology::TokenId;

#[derive(Clone, Copy, Debug)]
pub enum DecodeMode<'a> {
    /// Feed the target (shifted right behind `[BOS]`) and score every position.
    TeacherForced(&'a [TokenId]),
    /// Feed back the argmax until `[EOS]` or `max_len` tokens.
    Greedy { max_len: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Emitted tokens without `[EOS]` (the target itself when teacher-forced).
    pub tokens: Vec<TokenId>,
    /// Softmax over the vocabulary at each step.
    pub distributions: Vec<Array1<f64>>,
}

pub(crate) struct DecoderCache {
    inputs: Vec<usize>,
    x: Array2<f64>,
    h0: Array1<f64>,
    h_prev: Array2<f64>,
    gh: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    hs: Array2<f64>,
    probs: Array2<f64>,
}

/// One GRU update. `gi` and `gh` are the packed input and hidden projections.
/// Returns `(h', r, z, n)`.
pub(crate) fn gru_cell(
    gi: ArrayView1<f64>,
    gh: ArrayView1<f64>,
    h: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
    let d = h.len();
    let r = Array1::from_shape_fn(d, |i| sigmoid(gi[i] + gh[i]));
    let z = Array1::from_shape_fn(d, |i| sigmoid(gi[d + i] + gh[d + i]));
    let n = Array1::from_shape_fn(d, |i| (gi[2 * d + i] + r[i] * gh[2 * d + i]).tanh());
    let h_new = Array1::from_shape_fn(d, |i| (1.0 - z[i]) * n[i] + z[i] * h[i]);
    (h_new, r, z, n)
}

impl DecoderParams {
    pub(crate) fn initial_hidden(&self, o: &Array1<f64>) -> Array1<f64> {
        (o.dot(&self.init_w) + &self.init_b).mapv(f64::tanh)
    }

    fn hidden_dim(&self) -> usize {
        self.init_b.len()
    }

    /// Teacher-forced pass over `target` (which should end with `[EOS]`).
    pub(crate) fn forward(
        &self,
        o: &Array1<f64>,
        bos: TokenId,
        target: &[TokenId],
    ) -> DecoderCache {
        let d = self.hidden_dim();
        let steps = target.len();
        let inputs: Vec<usize> = std::iter::once(bos)
            .chain(target[..steps.saturating_sub(1)].iter().copied())
            .map(|t| t as usize)
            .collect();
        let mut x = Array2::zeros((steps, d));
        for (mut row, &t) in x.rows_mut().into_iter().zip(&inputs) {
            row.assign(&self.emb.row(t));
        }
        let gi = x.dot(&self.w_ih) + &self.b_ih;
        let h0 = self.initial_hidden(o);
        let mut h_prev = Array2::zeros((steps, d));
        let mut gh_all = Array2::zeros((steps, 3 * d));
        let mut r_all = Array2::zeros((steps, d));
        let mut z_all = Array2::zeros((steps, d));
        let mut n_all = Array2::zeros((steps, d));
        let mut hs = Array2::zeros((steps, d));
        let mut h = h0.clone();
        for t in 0..steps {
            let gh = h.dot(&self.w_hh) + &self.b_hh;
            let (h_new, r, z, n) = gru_cell(gi.row(t), gh.view(), h.view());
            h_prev.row_mut(t).assign(&h);
            gh_all.row_mut(t).assign(&gh);
            r_all.row_mut(t).assign(&r);
            z_all.row_mut(t).assign(&z);
            n_all.row_mut(t).assign(&n);
            hs.row_mut(t).assign(&h_new);
            h = h_new;
        }
        let mut probs = hs.dot(&self.out_w) + &self.out_b;
        for row in probs.rows_mut() {
            softmax_inplace(row);
        }
        DecoderCache {
            inputs,
            x,
            h0,
            h_prev,
            gh: gh_all,
            r: r_all,
            z: z_all,
            n: n_all,
            hs,
            probs,
        }
    }

    /// Negative log-likelihood of the whole `target` sequence under a forward
    /// cache (averaged over tokens).
    pub(crate) fn loss(cache: &DecoderCache, target: &[TokenId]) -> f64 {
        let n = target.len().max(1) as f64;
        -target
            .iter()
            .enumerate()
            .map(|(t, &y)| cache.probs[[t, y as usize]].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n
    }

    /// Backward of the sequence cross-entropy; returns the gradient with respect to `o`.
    pub(crate) fn backward(
        &self,
        o: &Array1<f64>,
        cache: &DecoderCache,
        target: &[TokenId],
        grad: &mut DecoderParams,
    ) -> Array1<f64> {
        let d = self.hidden_dim();
        let steps = target.len();
        let mut dlogits = cache.probs.clone();
        for (t, &y) in target.iter().enumerate() {
            dlogits[[t, y as usize]] -= 1.0;
        }
        dlogits /= steps.max(1) as f64;
        grad.out_w += &cache.hs.t().dot(&dlogits);
        grad.out_b += &dlogits.sum_axis(Axis(0));
        let dhs = dlogits.dot(&self.out_w.t());

        let mut dgi = Array2::zeros((steps, 3 * d));
        let mut dgh = Array2::zeros((steps, 3 * d));
        let mut dh_next = Array1::zeros(d);
        for t in (0..steps).rev() {
            let dh = &dhs.row(t) + &dh_next;
            let (r, z, n) = (cache.r.row(t), cache.z.row(t), cache.n.row(t));
            let hp = cache.h_prev.row(t);
            let gh = cache.gh.row(t);
            let mut dh_prev = Array1::zeros(d);
            for i in 0..d {
                let dn = dh[i] * (1.0 - z[i]);
                let dz = dh[i] * (hp[i] - n[i]);
                dh_prev[i] = dh[i] * z[i];
                let dan = dn * (1.0 - n[i] * n[i]);
                let dr = dan * gh[2 * d + i];
                let daz = dz * z[i] * (1.0 - z[i]);
                let dar = dr * r[i] * (1.0 - r[i]);
                dgi[[t, i]] = dar;
                dgi[[t, d + i]] = daz;
                dgi[[t, 2 * d + i]] = dan;
                dgh[[t, i]] = dar;
                dgh[[t, d + i]] = daz;
                dgh[[t, 2 * d + i]] = dan * r[i];
            }
            dh_prev += &self.w_hh.dot(&dgh.row(t));
            dh_next = dh_prev;
        }
        grad.w_hh += &cache.h_prev.t().dot(&dgh);
        grad.b_hh += &dgh.sum_axis(Axis(0));
        grad.w_ih += &cache.x.t().dot(&dgi);
        grad.b_ih += &dgi.sum_axis(Axis(0));
        let dx = dgi.dot(&self.w_ih.t());
        for (&tok, row) in cache.inputs.iter().zip(dx.rows()) {
            let mut e = grad.emb.row_mut(tok);
            e += &row;
        }
        let dpre = &dh_next * &cache.h0.mapv(|v| 1.0 - v * v);
        grad.init_b += &dpre;
        let outer = o
            .view()
            .insert_axis(Axis(1))
            .dot(&dpre.view().insert_axis(Axis(0)));
        grad.init_w += &outer;
        self.init_w.dot(&dpre)
    }

    pub(crate) fn decode(
        &self,
        o: &Array1<f64>,
        bos: TokenId,
        eos: TokenId,
        mode: DecodeMode<'_>,
    ) -> Result<Decoded> {
        match mode {
            DecodeMode::TeacherForced(target) => {
                if target.is_empty() {
                    return Err(Error::Argument("teacher-forced target is empty".into()));
                }
                let cache = self.forward(o, bos, target);
                Ok(Decoded {
                    tokens: target.to_vec(),
                    distributions: cache.probs.rows().into_iter().map(|r| r.to_owned()).collect(),
                })
            }
            DecodeMode::Greedy { max_len } => {
                if max_len == 0 {
                    return Err(Error::Argument("greedy decoding needs max_len > 0".into()));
                }
                let mut h = self.initial_hidden(o);
                let mut prev = bos as usize;
                let mut tokens = Vec::new();
                let mut distributions = Vec::new();
                for _ in 0..max_len {
                    let gi = self.emb.row(prev).dot(&self.w_ih) + &self.b_ih;
                    let gh = h.dot(&self.w_hh) + &self.b_hh;
                    h = gru_cell(gi.view(), gh.view(), h.view()).0;
                    let mut p = h.dot(&self.out_w) + &self.out_b;
                    softmax_inplace(p.view_mut());
                    let best = argmax(p.view());
                    distributions.push(p);
                    if best == eos as usize {
                        break;
                    }
                    tokens.push(best as TokenId);
                    prev = best;
                }
                Ok(Decoded {
                    tokens,
                    distributions,
                })
            }
        }
    }
}

/// First index of the maximum.
pub(crate) fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
