//! Scaled dot-product attention, dense and probsparse, plus the multi-head
//! wrapper used by the forecaster.

use rand::Rng;

use crate::graph::{Bound, Graph, Mat, Var};
use crate::params::{uniform_init, Params};
use crate::{Error, Result};

/// Number of active queries `⌈factor·ln L⌉`, capped at `L` and at least 1.
pub fn top_u_count(factor: f64, len: usize) -> usize {
    let u = (factor * (len as f64).ln()).ceil();
    (u.max(1.0) as usize).min(len.max(1))
}

/// Per-query sparsity `max_j s_ij − mean_j s_ij` with `s = QKᵀ/√d`.
pub fn sparsity_measurement(q: &Mat, k: &Mat) -> Vec<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let scores = q.dot(&k.t()) * scale;
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            max - row.mean().unwrap_or(0.0)
        })
        .collect()
}

/// Indices of the `u` largest measurements, ties broken by lower index,
/// returned in ascending index order.
pub fn top_u(measure: &[f64], u: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..measure.len()).collect();
    order.sort_by(|&a, &b| measure[b].total_cmp(&measure[a]).then(a.cmp(&b)));
    let mut chosen = order[..u.min(measure.len())].to_vec();
    chosen.sort_unstable();
    chosen
}

/// `softmax(QKᵀ/√d)·V`, optionally with a causal mask.
pub fn dense_attention(g: &mut Graph, q: Var, k: Var, v: Var, causal: bool) -> Var {
    let d = g.value(q).ncols() as f64;
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt);
    let scores = g.scale(scores, 1.0 / d.sqrt());
    let weights = g.softmax_rows(scores, causal);
    g.matmul(weights, v)
}

/// Probsparse attention: the `u` queries with the largest sparsity
/// measurement attend densely, every other row receives the mean of `V`.
/// Selection is computed from current values and is not differentiated.
pub fn probsparse_attention(g: &mut Graph, q: Var, k: Var, v: Var, u: usize) -> Result<Var> {
    if u == 0 {
        return Err(Error::Config("probsparse attention needs u >= 1".into()));
    }
    let len = g.value(q).nrows();
    if u > len {
        return Err(Error::Config(format!("u = {u} exceeds {len} queries")));
    }
    let chosen = top_u(&sparsity_measurement(g.value(q), g.value(k)), u);
    let q_sel = g.gather_rows(q, &chosen);
    let active = dense_attention(g, q_sel, k, v, false);
    let mean = g.mean_rows(v);
    let base = g.broadcast_rows(mean, len);
    Ok(g.overwrite_rows(base, active, &chosen))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Dense,
    Causal,
    /// Probsparse with the given top-u factor.
    Sparse,
}

/// Parameter indices of one multi-head attention block within a [`Params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiHead {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    heads: usize,
}

impl MultiHead {
    pub fn register(params: &mut Params, prefix: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        let mut add = |name: &str| params.add(format!("{prefix}.{name}"), uniform_init(dim, dim, dim, rng));
        Self {
            wq: add("wq"),
            wk: add("wk"),
            wv: add("wv"),
            wo: add("wo"),
            heads,
        }
    }

    /// Attention of `queries` over `memory`; `top_u_factor` is used only by
    /// the sparse kind.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Bound,
        queries: Var,
        memory: Var,
        kind: AttentionKind,
        top_u_factor: f64,
    ) -> Result<Var> {
        let q = g.matmul(queries, b.var(self.wq));
        let k = g.matmul(memory, b.var(self.wk));
        let v = g.matmul(memory, b.var(self.wv));
        let dim = g.value(q).ncols();
        let dk = dim / self.heads;
        let len = g.value(q).nrows();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dk, (h + 1) * dk);
            let kh = g.slice_cols(k, h * dk, (h + 1) * dk);
            let vh = g.slice_cols(v, h * dk, (h + 1) * dk);
            let out = match kind {
                AttentionKind::Dense => dense_attention(g, qh, kh, vh, false),
                AttentionKind::Causal => dense_attention(g, qh, kh, vh, true),
                AttentionKind::Sparse => probsparse_attention(g, qh, kh, vh, top_u_count(top_u_factor, len))?,
            };
            outs.push(out);
        }
        let joined = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        Ok(g.matmul(joined, b.var(self.wo)))
    }
}
