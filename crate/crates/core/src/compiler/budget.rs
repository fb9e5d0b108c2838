use serde::{Deserialize, Serialize};

use super::report::{verify_equivalence, ConstructionReport};
use super::{attention_ranks, compact_hidden, compile_compact, low_rank_truncated, pad_hidden, DEFAULT_RANK_TOL};
use crate::error::{Error, Result};
use crate::models::{AttentionParams, GatedRnnParams, Model};

/// Best construction found within a hidden-neuron budget.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BudgetedConstruction {
    pub budget: usize,
    pub method: String,
    /// The construction is exact; truncated ones are approximations.
    pub exact: bool,
    pub params: GatedRnnParams,
    pub report: ConstructionReport,
}

/// Verification data used when comparing candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub steps: usize,
    pub n_seq: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            steps: 32,
            n_seq: 8,
            seed: 0,
        }
    }
}

/// Compact construction when it fits (low-rank when `W_V` is singular), padded
/// to exactly `budget` neurons. Below that, every truncated compact and
/// low-rank candidate that fits is evaluated and the lowest-error one kept.
pub fn compile_budgeted(p: &AttentionParams, budget: usize, cfg: VerifyConfig) -> Result<BudgetedConstruction> {
    let d = p.d();
    let (r_kq, r_v) = attention_ranks(p, DEFAULT_RANK_TOL)?;
    let mut exact: Vec<(String, GatedRnnParams)> = Vec::new();
    match compile_compact(p) {
        Ok(c) => exact.push(("compact".into(), c)),
        Err(Error::CompactNeedsInvertibleValues { .. }) => {}
        Err(e) => return Err(e),
    }
    exact.push(("low_rank".into(), low_rank_truncated(p, r_kq, r_v)?));
    let source = Model::Attention(p.clone());
    let evaluate = |method: String, params: GatedRnnParams, is_exact: bool| -> Result<BudgetedConstruction> {
        let params = pad_hidden(&params, budget - params.n());
        let report = verify_equivalence(&source, &Model::Gated(params.clone()), d, cfg.steps, cfg.n_seq, cfg.seed)?;
        Ok(BudgetedConstruction {
            budget,
            method,
            exact: is_exact,
            params,
            report,
        })
    };
    if let Some((method, params)) = exact.into_iter().filter(|(_, c)| c.n() <= budget).min_by_key(|(_, c)| c.n()) {
        return evaluate(method, params, true);
    }

    let mut candidates: Vec<(String, GatedRnnParams)> = Vec::new();
    if compact_hidden(d) > budget && budget >= d {
        if let Ok(c) = compile_compact(p) {
            candidates.push(("compact_truncated".into(), drop_kv(&c, d, budget - d)));
        }
    }
    for a in 0..=r_kq {
        for b in 0..=r_v {
            if a * (b + 1) <= budget && (a, b) != (r_kq, r_v) {
                candidates.push((format!("low_rank_truncated({a},{b})"), low_rank_truncated(p, a, b)?));
            }
        }
    }
    let mut best: Option<BudgetedConstruction> = None;
    for (method, params) in candidates {
        let c = evaluate(method, params, false)?;
        if best.as_ref().map_or(true, |b| c.report.mean_half_sq_error < b.report.mean_half_sq_error) {
            best = Some(c);
        }
    }
    best.ok_or_else(|| Error::Invalid(format!("no construction fits {budget} neurons")))
}

/// Keeps the `keep` key-value neurons whose gating rows have the largest norm
/// product, plus all `d` query neurons.
fn drop_kv(c: &GatedRnnParams, d: usize, keep: usize) -> GatedRnnParams {
    let nkv = c.n() - d;
    let norm = |w: &crate::numerics::Matrix, i: usize| w.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut order: Vec<usize> = (0..nkv).collect();
    let weight = |i: usize| {
        let uses = (0..c.m()).filter(|&r| c.w_x_out[(r, i)] != 0.0).count() as f64;
        uses * norm(&c.w_m_in, i) * norm(&c.w_x_in, i)
    };
    order.sort_by(|&a, &b| weight(b).total_cmp(&weight(a)));
    let mut kept: Vec<usize> = order[..keep.min(nkv)].to_vec();
    kept.sort_unstable();
    let rows: Vec<usize> = kept.iter().copied().chain(nkv..nkv + d).collect();
    let outs: Vec<usize> = (0..c.m()).filter(|&r| kept.iter().any(|&i| c.w_x_out[(r, i)] != 0.0)).collect();
    GatedRnnParams {
        w_m_in: c.w_m_in.select_rows(&rows),
        w_x_in: c.w_x_in.select_rows(&rows),
        recurrence: c.recurrence.select(&rows),
        w_m_out: c.w_m_out.select_rows(&outs).select_cols(&rows),
        w_x_out: c.w_x_out.select_rows(&outs).select_cols(&rows),
        d_readout: c.d_readout.select_cols(&outs),
        augmented: true,
    }
}
