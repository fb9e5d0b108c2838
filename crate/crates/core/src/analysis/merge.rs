use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::models::{GatedRnnParams, Model, SequenceBatch};
use crate::numerics::{svd, Matrix};

/// Largest accepted σ₂/σ₁ of a combined kernel.
pub const MERGE_RANK_TOL: f64 = 1e-3;
/// Kernels count as proportional when `1 − |cos| ≤` this.
pub const MERGE_COSINE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub merged_rows: Vec<usize>,
    /// Position of the replacement row in the merged network.
    pub new_row: usize,
    /// σ₂/σ₁ per readout output with a nonzero kernel.
    pub singular_ratios: Vec<f64>,
    /// `|cos|` between each nonzero kernel and the largest one.
    pub cosines: Vec<f64>,
    pub deviation: f64,
}

fn frob_dot(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Replaces the listed gated-output rows by a single rank-1 row when, for
/// every readout output `i`, `K_i = Σ_j D_ij w_m_out_j w_x_out_jᵀ` is rank-1
/// and all `K_i` are proportional.
pub fn merge_rank1_rows(p: &GatedRnnParams, rows: &[usize], rank_tol: f64, cosine_tol: f64, verify: &SequenceBatch) -> Result<(GatedRnnParams, MergeReport)> {
    p.validate()?;
    let (n, m) = (p.n(), p.m());
    let mut sorted = rows.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() < 2 || sorted.iter().any(|&r| r >= m) {
        return shape_err("merge_rank1_rows", format!("need at least two distinct rows below {m}, got {rows:?}"));
    }
    let kernels: Vec<Matrix> = (0..p.d_out())
        .map(|i| {
            let mut k = Matrix::zeros(n, n);
            for &j in &sorted {
                let c = p.d_readout[(i, j)];
                for a in 0..n {
                    for b in 0..n {
                        k[(a, b)] += c * p.w_m_out[(j, a)] * p.w_x_out[(j, b)];
                    }
                }
            }
            k
        })
        .collect();
    let norms: Vec<f64> = kernels.iter().map(Matrix::frobenius).collect();
    let biggest = norms.iter().cloned().fold(0.0, f64::max);
    if biggest == 0.0 {
        return Err(Error::MergeRefused("all combined kernels vanish".into()));
    }
    let live: Vec<usize> = (0..kernels.len()).filter(|&i| norms[i] > 1e-12 * biggest).collect();
    let reference = live.iter().copied().max_by(|&a, &b| norms[a].total_cmp(&norms[b])).expect("nonempty");
    let mut singular_ratios = Vec::new();
    let mut cosines = Vec::new();
    for &i in &live {
        let s = svd(&kernels[i]).s;
        let ratio = s.get(1).copied().unwrap_or(0.0) / s[0];
        singular_ratios.push(ratio);
        if ratio > rank_tol {
            return Err(Error::MergeRefused(format!("kernel for output {i} has σ₂/σ₁ = {ratio:e} > {rank_tol:e}")));
        }
        let cos = frob_dot(&kernels[i], &kernels[reference]).abs() / (norms[i] * norms[reference]);
        cosines.push(cos);
        if 1.0 - cos > cosine_tol {
            return Err(Error::MergeRefused(format!("kernel for output {i} is not proportional (|cos| = {cos})")));
        }
    }
    let sv = svd(&kernels[reference]);
    let u = sv.u.col(0);
    let v = sv.v.col(0);
    let uv = Matrix::from_fn(n, n, |a, b| u[a] * v[b]);
    let coef: Vec<f64> = kernels.iter().map(|k| frob_dot(k, &uv)).collect();

    let keep: Vec<usize> = (0..m).filter(|r| !sorted.contains(r)).collect();
    let new_row = keep.len();
    let append = |w: &Matrix, row: &[f64]| Matrix::vstack(&[&w.select_rows(&keep), &Matrix::row_vector(row)]).expect("same width");
    let readout = Matrix::hstack(&[&p.d_readout.select_cols(&keep), &Matrix::from_vec(p.d_out(), 1, coef)?])?;
    let merged = GatedRnnParams {
        w_m_out: append(&p.w_m_out, &u),
        w_x_out: append(&p.w_x_out, &v),
        d_readout: readout,
        ..p.clone()
    };
    let before = Model::Gated(p.clone()).forward(verify)?.output;
    let after = Model::Gated(merged.clone()).forward(verify)?.output;
    Ok((
        merged,
        MergeReport {
            merged_rows: sorted,
            new_row,
            singular_ratios,
            cosines,
            deviation: before.max_abs_diff(&after)?,
        },
    ))
}
