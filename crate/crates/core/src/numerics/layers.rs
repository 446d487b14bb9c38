use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Graph, Var};
use super::tensor::Scalar;
use crate::error::{dim_err, Error, Result};

/// Fully connected layer `y = W·x + b`, weight `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[out_dim, in_dim], in_dim, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[out_dim], in_dim, rng);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, Some(b))
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Gated recurrent unit with gate order (reset, update, candidate).
///
/// `r = σ(W_ir x + b_ir + W_hr h + b_hr)`,
/// `u = σ(W_iu x + b_iu + W_hu h + b_hu)`,
/// `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`,
/// `h' = (1 − u) ⊙ n + u ⊙ h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let h3 = 3 * hidden_dim;
        Self {
            w_ih: store.add_uniform(format!("{name}.w_ih"), &[h3, input_dim], hidden_dim, rng),
            w_hh: store.add_uniform(format!("{name}.w_hh"), &[h3, hidden_dim], hidden_dim, rng),
            b_ih: store.add_uniform(format!("{name}.b_ih"), &[h3], hidden_dim, rng),
            b_hh: store.add_uniform(format!("{name}.b_hh"), &[h3], hidden_dim, rng),
            input_dim,
            hidden_dim,
        }
    }

    pub fn step<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden_dim;
        if g.value(x).cols() != self.input_dim {
            return dim_err("gru input", g.value(x).shape(), &[self.input_dim]);
        }
        if g.value(h).cols() != hd || g.value(h).rows() != g.value(x).rows() {
            return dim_err("gru hidden", g.value(h).shape(), &[g.value(x).rows(), hd]);
        }
        let (w_ih, b_ih) = (g.param(self.w_ih), g.param(self.b_ih));
        let (w_hh, b_hh) = (g.param(self.w_hh), g.param(self.b_hh));
        let gi = g.linear(x, w_ih, Some(b_ih))?;
        let gh = g.linear(h, w_hh, Some(b_hh))?;
        let (ir, hr) = (g.slice_cols(gi, 0, hd)?, g.slice_cols(gh, 0, hd)?);
        let (iu, hu) = (g.slice_cols(gi, hd, hd)?, g.slice_cols(gh, hd, hd)?);
        let (inn, hn) = (g.slice_cols(gi, 2 * hd, hd)?, g.slice_cols(gh, 2 * hd, hd)?);
        let r = g.add(ir, hr)?;
        let r = g.sigmoid(r);
        let u = g.add(iu, hu)?;
        let u = g.sigmoid(u);
        let rn = g.mul(r, hn)?;
        let n = g.add(inn, rn)?;
        let n = g.tanh(n);
        let diff = g.sub(h, n)?;
        let gated = g.mul(u, diff)?;
        g.add(n, gated)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w_ih, self.w_hh, self.b_ih, self.b_hh]
    }
}

/// Multi-head attention with one query and `K` key/value sources per row.
///
/// Per head: `α_k = softmax_k(λ · (W_q q)_h · (W_k key_k)_h)` and
/// output `Σ_k α_k (W_v value_k)_h`; head outputs are concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub n_heads: usize,
    pub head_dim: usize,
    pub temperature: f64,
}

/// Attention output and the per-head weight matrices (`[R, K]` each).
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        query_dim: usize,
        key_dim: usize,
        n_heads: usize,
        head_dim: usize,
        temperature: f64,
        rng: &mut R,
    ) -> Self {
        let d = n_heads * head_dim;
        Self {
            w_q: store.add_uniform(format!("{name}.w_q"), &[d, query_dim], query_dim, rng),
            w_k: store.add_uniform(format!("{name}.w_k"), &[d, key_dim], key_dim, rng),
            w_v: store.add_uniform(format!("{name}.w_v"), &[d, key_dim], key_dim, rng),
            n_heads,
            head_dim,
            temperature,
        }
    }

    pub fn width(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        query: Var,
        keys: &[Var],
        values: &[Var],
    ) -> Result<AttentionOutput> {
        if keys.is_empty() {
            return Err(Error::Argument("attention needs at least one key".into()));
        }
        if keys.len() != values.len() {
            return dim_err("attention keys/values", &[keys.len()], &[values.len()]);
        }
        let (w_q, w_k, w_v) = (g.param(self.w_q), g.param(self.w_k), g.param(self.w_v));
        let q = g.linear(query, w_q, None)?;
        let mut ks = Vec::with_capacity(keys.len());
        let mut vs = Vec::with_capacity(keys.len());
        for (&k, &v) in keys.iter().zip(values) {
            ks.push(g.linear(k, w_k, None)?);
            vs.push(g.linear(v, w_v, None)?);
        }
        let hd = self.head_dim;
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice_cols(q, h * hd, hd)?;
            let mut scores = Vec::with_capacity(ks.len());
            for &k in &ks {
                let kh = g.slice_cols(k, h * hd, hd)?;
                scores.push(g.row_dot(qh, kh)?);
            }
            let s = g.concat(&scores)?;
            let s = g.scale(s, self.temperature);
            let alpha = g.softmax(s);
            let mut acc: Option<Var> = None;
            for (i, &v) in vs.iter().enumerate() {
                let vh = g.slice_cols(v, h * hd, hd)?;
                let a = g.slice_cols(alpha, i, 1)?;
                let term = g.mul_col(a, vh)?;
                acc = Some(match acc {
                    None => term,
                    Some(prev) => g.add(prev, term)?,
                });
            }
            heads.push(acc.expect("at least one key"));
            weights.push(alpha);
        }
        let output = g.concat(&heads)?;
        Ok(AttentionOutput { output, weights })
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w_q, self.w_k, self.w_v]
    }
}
