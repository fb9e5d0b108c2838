//! Weight constructions that turn attention into recurrent networks, and
//! linear recurrences into decayed attention.

mod budget;
mod invariance;
mod lru;
mod lstm;
mod report;

pub use budget::{compile_budgeted, BudgetedConstruction, VerifyConfig};
pub use invariance::{permute_hidden, permute_outputs, rescale_hidden, rescale_outputs, transform_queries};
pub use lru::lru_standard_twin;
pub use lstm::{compile_lstm_attention, compile_lstm_attention_standard, compile_lstm_gated_rnn, SATURATION_BIAS};
pub use report::{hidden_count, verify_equivalence, verify_on_batch, ConstructionReport};

use crate::error::{Error, Result};
use crate::models::{AttentionParams, DecayedAttentionParams, GatedRnnParams, Recurrence, SideGatedRnnParams};
use crate::numerics::{inverse, svd, Matrix};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

pub fn full_hidden(d: usize) -> usize {
    d * d + d
}

pub fn compact_hidden(d: usize) -> usize {
    d * (d + 1) / 2 + d
}

pub fn side_hidden(d: usize) -> usize {
    d * d
}

pub fn low_rank_hidden(rank_kq: usize, rank_v: usize) -> usize {
    rank_kq * (rank_v + 1)
}

/// Key-value neurons integrate `(x-row · x)(m-row · x)`, query neurons copy
/// `x-row · x`; each output gate multiplies one of each and is read out
/// through its column.
struct Layout {
    d_data: usize,
    d_out: usize,
    kv: Vec<(Vec<f64>, Vec<f64>)>,
    queries: Vec<Vec<f64>>,
    outputs: Vec<(usize, usize, Vec<f64>)>,
}

impl Layout {
    fn assemble(self) -> GatedRnnParams {
        let d = self.d_data;
        let nkv = self.kv.len();
        let n = nkv + self.queries.len();
        let m = self.outputs.len();
        let mut w_x_in = Matrix::zeros(n, d + 1);
        let mut w_m_in = Matrix::zeros(n, d + 1);
        for (i, (xr, mr)) in self.kv.iter().enumerate() {
            w_x_in.row_mut(i)[..d].copy_from_slice(xr);
            w_m_in.row_mut(i)[..d].copy_from_slice(mr);
        }
        for (j, qr) in self.queries.iter().enumerate() {
            w_x_in.row_mut(nkv + j)[..d].copy_from_slice(qr);
            w_m_in[(nkv + j, d)] = 1.0;
        }
        let lambda = (0..n).map(|i| if i < nkv { 1.0 } else { 0.0 }).collect();
        let mut w_x_out = Matrix::zeros(m, n);
        let mut w_m_out = Matrix::zeros(m, n);
        let mut d_readout = Matrix::zeros(self.d_out, m);
        for (r, (kv, q, col)) in self.outputs.iter().enumerate() {
            w_x_out[(r, *kv)] = 1.0;
            w_m_out[(r, nkv + q)] = 1.0;
            for (a, v) in col.iter().enumerate() {
                d_readout[(a, r)] = *v;
            }
        }
        GatedRnnParams {
            w_m_in,
            w_x_in,
            recurrence: Recurrence::Clamped { lambda },
            w_m_out,
            w_x_out,
            d_readout,
            augmented: true,
        }
    }
}

fn unit(d: usize, a: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[a] = 1.0;
    e
}

/// `d² + d` neurons: neuron `i < d²` stores `(W_V x)_{i/d} (W_K x)_{i mod d}`,
/// the last `d` hold the current query. Inputs are augmented to width `d + 1`.
pub fn compile_full(p: &AttentionParams) -> GatedRnnParams {
    let d = p.d();
    let kv = (0..d * d).map(|i| (p.w_v.row(i / d).to_vec(), p.w_k.row(i % d).to_vec())).collect();
    let queries = (0..d).map(|j| p.w_q.row(j).to_vec()).collect();
    let outputs = (0..d * d).map(|r| (r, r % d, unit(d, r / d))).collect();
    Layout {
        d_data: d,
        d_out: d,
        kv,
        queries,
        outputs,
    }
    .assemble()
}

/// Keys re-expressed through the values so the key-value memory is symmetric;
/// only its upper triangle is stored.
pub fn compile_compact(p: &AttentionParams) -> Result<GatedRnnParams> {
    let d = p.d();
    let inv = inverse(&p.w_v).map_err(|e| match e {
        Error::Singular { ratio } => Error::CompactNeedsInvertibleValues { ratio },
        other => other,
    })?;
    let q = inv.inv.t_matmul(&p.w_k.t_matmul(&p.w_q)?)?;
    let mut kv = Vec::with_capacity(d * (d + 1) / 2);
    let mut outputs = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in a..d {
            let k = kv.len();
            kv.push((p.w_v.row(a).to_vec(), p.w_v.row(b).to_vec()));
            outputs.push((k, b, unit(d, a)));
            if a != b {
                outputs.push((k, a, unit(d, b)));
            }
        }
    }
    let queries = (0..d).map(|j| q.row(j).to_vec()).collect();
    Ok(Layout {
        d_data: d,
        d_out: d,
        kv,
        queries,
        outputs,
    }
    .assemble())
}

/// Ranks of `W_V` and `W_Kᵀ W_Q` after dropping singular values at or below
/// `rank_tol · σ_max`.
pub fn attention_ranks(p: &AttentionParams, rank_tol: f64) -> Result<(usize, usize)> {
    let m = p.w_k.t_matmul(&p.w_q)?;
    Ok((svd(&m).rank(rank_tol), svd(&p.w_v).rank(rank_tol)))
}

/// `rank(W_Kᵀ W_Q) · (rank(W_V) + 1)` neurons working in the singular bases.
pub fn compile_low_rank(p: &AttentionParams, rank_tol: f64) -> Result<GatedRnnParams> {
    let (r_kq, r_v) = attention_ranks(p, rank_tol)?;
    low_rank_truncated(p, r_kq, r_v)
}

/// Low-rank construction keeping the leading `r_kq` and `r_v` singular directions.
pub(crate) fn low_rank_truncated(p: &AttentionParams, r_kq: usize, r_v: usize) -> Result<GatedRnnParams> {
    let d = p.d();
    let sv = svd(&p.w_v);
    let sm = svd(&p.w_k.t_matmul(&p.w_q)?);
    let r_kq = r_kq.min(sm.s.len());
    let r_v = r_v.min(sv.s.len());
    let scaled_row = |v: &Matrix, s: f64, j: usize| v.col(j).into_iter().map(|x| s * x).collect::<Vec<f64>>();
    let mut kv = Vec::with_capacity(r_v * r_kq);
    let mut outputs = Vec::with_capacity(r_v * r_kq);
    for i in 0..r_v {
        let value = scaled_row(&sv.v, sv.s[i], i);
        for j in 0..r_kq {
            outputs.push((kv.len(), j, sv.u.col(i)));
            kv.push((value.clone(), sm.u.col(j)));
        }
    }
    let queries = (0..r_kq).map(|j| scaled_row(&sm.v, sm.s[j], j)).collect();
    Ok(Layout {
        d_data: d,
        d_out: d,
        kv,
        queries,
        outputs,
    }
    .assemble())
}

/// `d²` neurons with the query applied by side gating; no constant input.
pub fn compile_side(p: &AttentionParams) -> SideGatedRnnParams {
    let d = p.d();
    let n = d * d;
    let w_x_in = Matrix::from_fn(n, d, |i, j| p.w_v[(i / d, j)]);
    let w_m_in = Matrix::from_fn(n, d, |i, j| p.w_k[(i % d, j)]);
    let w_side = Matrix::from_fn(n, d, |i, j| p.w_q[(i % d, j)]);
    let d_readout = Matrix::from_fn(d, n, |a, i| if i / d == a { 1.0 } else { 0.0 });
    SideGatedRnnParams {
        w_m_in,
        w_x_in,
        recurrence: Recurrence::Clamped { lambda: vec![1.0; n] },
        w_side,
        d_readout,
        augmented: false,
    }
}

/// Decayed attention computing `y_t = λ ⊙ y_{t−1} + x_t`.
pub fn compile_recurrence_to_decayed_lsa(lambda: &[f64]) -> Result<DecayedAttentionParams> {
    if let Some(l) = lambda.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Invalid(format!("λ = {l} lies outside [0, 1]")));
    }
    let d = lambda.len();
    Ok(DecayedAttentionParams {
        w_v: Matrix::identity(d),
        w_k: Matrix::zeros(d, d),
        w_q: Matrix::zeros(d, d),
        b_v: vec![0.0; d],
        b_k: vec![1.0; d],
        b_q: vec![1.0 / d as f64; d],
        gamma: lambda.iter().map(|l| 1.0 - l).collect(),
    })
}

/// Appends `extra` inert neurons (zero weights, λ = 0).
pub fn pad_hidden(p: &GatedRnnParams, extra: usize) -> GatedRnnParams {
    let (n, d, m) = (p.n(), p.d_in(), p.m());
    let grow_rows = |w: &Matrix| Matrix::vstack(&[w, &Matrix::zeros(extra, d)]).expect("same width");
    let grow_cols = |w: &Matrix| Matrix::hstack(&[w, &Matrix::zeros(m, extra)]).expect("same height");
    let mut lambda = p.lambda();
    lambda.resize(n + extra, 0.0);
    GatedRnnParams {
        w_m_in: grow_rows(&p.w_m_in),
        w_x_in: grow_rows(&p.w_x_in),
        recurrence: Recurrence::Clamped { lambda },
        w_m_out: grow_cols(&p.w_m_out),
        w_x_out: grow_cols(&p.w_x_out),
        d_readout: p.d_readout.clone(),
        augmented: p.augmented,
    }
}
