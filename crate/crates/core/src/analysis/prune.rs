use serde::{Deserialize, Serialize};

use super::{classify, LambdaClass, DEFAULT_LAMBDA_TOL};
use crate::error::Result;
use crate::models::{GatedRnnParams, Model, SequenceBatch};
use crate::numerics::Matrix;

/// Relative to the max-abs entry of the matrix being tested.
pub const DEFAULT_WEIGHT_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub kept_hidden: Vec<usize>,
    pub removed_hidden: Vec<usize>,
    pub kept_outputs: Vec<usize>,
    pub removed_outputs: Vec<usize>,
    /// Class of each kept neuron, in kept order.
    pub classes: Vec<LambdaClass>,
    pub weight_tol: f64,
    /// Max abs output difference between the original and pruned networks.
    pub deviation: f64,
}

fn small_rows(w: &Matrix, tol: f64) -> Vec<bool> {
    let cut = tol * w.max_abs();
    (0..w.rows()).map(|i| w.row(i).iter().all(|v| v.abs() < cut)).collect()
}

fn small_cols(w: &Matrix, tol: f64) -> Vec<bool> {
    small_rows(&w.transpose(), tol)
}

/// Drops hidden neurons with a negligible input-gating row or with negligible
/// columns in both output gates, and gated outputs with a negligible readout
/// column or gating row, until nothing else qualifies. Thresholds are taken
/// from the original network's matrices.
pub fn prune(p: &GatedRnnParams, weight_tol: f64, verify: &SequenceBatch) -> Result<(GatedRnnParams, PruneReport)> {
    p.validate()?;
    let (n, m) = (p.n(), p.m());
    let in_m = small_rows(&p.w_m_in, weight_tol);
    let in_x = small_rows(&p.w_x_in, weight_tol);
    let out_m_col = small_cols(&p.w_m_out, weight_tol);
    let out_x_col = small_cols(&p.w_x_out, weight_tol);
    let out_m_row = small_rows(&p.w_m_out, weight_tol);
    let out_x_row = small_rows(&p.w_x_out, weight_tol);
    let readout = small_cols(&p.d_readout, weight_tol);
    let cut_m = weight_tol * p.w_m_out.max_abs();
    let cut_x = weight_tol * p.w_x_out.max_abs();

    let mut hidden: Vec<bool> = (0..n).map(|i| !(in_m[i] || in_x[i] || (out_m_col[i] && out_x_col[i]))).collect();
    let mut outputs: Vec<bool> = (0..m).map(|r| !(readout[r] || out_m_row[r] || out_x_row[r])).collect();
    loop {
        let mut changed = false;
        for r in 0..m {
            let live = |w: &Matrix, cut: f64| (0..n).any(|i| hidden[i] && w[(r, i)].abs() >= cut);
            if outputs[r] && !(live(&p.w_m_out, cut_m) && live(&p.w_x_out, cut_x)) {
                outputs[r] = false;
                changed = true;
            }
        }
        for i in 0..n {
            let used = (0..m).any(|r| outputs[r] && (p.w_m_out[(r, i)].abs() >= cut_m || p.w_x_out[(r, i)].abs() >= cut_x));
            if hidden[i] && !used {
                hidden[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let split = |flags: &[bool]| -> (Vec<usize>, Vec<usize>) { (0..flags.len()).partition(|&i| flags[i]) };
    let (kept_hidden, removed_hidden) = split(&hidden);
    let (kept_outputs, removed_outputs) = split(&outputs);
    let pruned = GatedRnnParams {
        w_m_in: p.w_m_in.select_rows(&kept_hidden),
        w_x_in: p.w_x_in.select_rows(&kept_hidden),
        recurrence: p.recurrence.select(&kept_hidden),
        w_m_out: p.w_m_out.select_rows(&kept_outputs).select_cols(&kept_hidden),
        w_x_out: p.w_x_out.select_rows(&kept_outputs).select_cols(&kept_hidden),
        d_readout: p.d_readout.select_cols(&kept_outputs),
        augmented: p.augmented,
    };
    let before = Model::Gated(p.clone()).forward(verify)?.output;
    let after = Model::Gated(pruned.clone()).forward(verify)?.output;
    let lambda = pruned.lambda();
    let report = PruneReport {
        classes: lambda.iter().map(|&l| classify(l, DEFAULT_LAMBDA_TOL)).collect(),
        kept_hidden,
        removed_hidden,
        kept_outputs,
        removed_outputs,
        weight_tol,
        deviation: before.max_abs_diff(&after)?,
    };
    Ok((pruned, report))
}

/// Neuron order for weight displays: by λ class, then by the input column
/// with the largest `|W_x^in|` and `|W_m^in|` entries.
pub fn display_order(p: &GatedRnnParams, tol: f64) -> Vec<usize> {
    let lambda = p.lambda();
    let argmax = |w: &Matrix, i: usize| (0..w.cols()).fold(0, |b, j| if w[(i, j)].abs() > w[(i, b)].abs() { j } else { b });
    let mut order: Vec<usize> = (0..p.n()).collect();
    order.sort_by_key(|&i| (classify(lambda[i], tol), argmax(&p.w_x_in, i), argmax(&p.w_m_in, i), i));
    order
}
