use serde::{Deserialize, Serialize};

use super::{classify_lambda, LambdaClass};
use crate::error::{shape_err, Result};
use crate::models::{AttentionParams, GatedRnnParams, SequenceBatch, SideGatedRnnParams};
use crate::numerics::{least_squares, svd, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Mean over targets of `1 − R²` for the cumulative key-values.
    pub score_kv: f64,
    /// Mean over targets of `1 − R²` for the queries.
    pub score_q: f64,
    pub n_integrators: usize,
    pub n_memoryless: usize,
    /// Regression weights, last row is the bias.
    pub kv_weights: Matrix,
    pub q_weights: Matrix,
}

fn with_bias(states: &Matrix, cols: &[usize]) -> Matrix {
    let sel = states.select_cols(cols);
    Matrix::hstack(&[&sel, &Matrix::filled(sel.rows(), 1, 1.0)]).expect("same height")
}

fn score(design: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    let ls = least_squares(design, targets)?;
    let s = ls.r2.iter().map(|r| (1.0 - r).max(0.0)).sum::<f64>() / ls.r2.len().max(1) as f64;
    Ok((s, ls.x))
}

/// Regresses the teacher's running key-value sums onto integrator states and
/// its queries onto memoryless states. `hidden` is the trace from the gated
/// forward on `batch` (time-major, one row per position).
pub fn probe_kv_q(p: &GatedRnnParams, hidden: &Matrix, teacher: &AttentionParams, batch: &SequenceBatch, lambda_tol: f64) -> Result<ProbeReport> {
    let d = teacher.d();
    if hidden.shape() != (batch.rows(), p.n()) {
        return shape_err("probe_kv_q", format!("trace {:?} for {} positions and {} neurons", hidden.shape(), batch.rows(), p.n()));
    }
    if batch.d_in() != d {
        return shape_err("probe_kv_q", format!("batch width {} != teacher d = {d}", batch.d_in()));
    }
    let v = batch.inputs.matmul_t(&teacher.w_v)?;
    let k = batch.inputs.matmul_t(&teacher.w_k)?;
    let q = batch.inputs.matmul_t(&teacher.w_q)?;
    let mut kv = Matrix::zeros(batch.rows(), d * d);
    for s in 0..batch.batch {
        let mut acc = vec![0.0; d * d];
        for t in 0..batch.steps {
            let r = batch.row_index(t, s);
            for a in 0..d {
                for b in 0..d {
                    acc[a * d + b] += v[(r, a)] * k[(r, b)];
                }
            }
            kv.row_mut(r).copy_from_slice(&acc);
        }
    }
    let classes = classify_lambda(p, lambda_tol);
    let pick = |c: LambdaClass| (0..classes.len()).filter(|&i| classes[i] == c).collect::<Vec<_>>();
    let (ints, mems) = (pick(LambdaClass::Integrator), pick(LambdaClass::Memoryless));
    let (score_kv, kv_weights) = score(&with_bias(hidden, &ints), &kv)?;
    let (score_q, q_weights) = score(&with_bias(hidden, &mems), &q)?;
    Ok(ProbeReport {
        score_kv,
        score_q,
        n_integrators: ints.len(),
        n_memoryless: mems.len(),
        kv_weights,
        q_weights,
    })
}

/// `M(u_i, u_j)`: the map from query to output contributed by one stored
/// token carrying key symbol `i` and value symbol `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilinearMap {
    pub key: usize,
    pub value: usize,
    pub matrix: Matrix,
    /// σ₂/σ₁, zero for maps of rank ≤ 1.
    pub singular_ratio: f64,
    pub rank: usize,
    pub peak: (usize, usize),
    pub peak_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallProbeReport {
    pub pairs: usize,
    pub maps: Vec<BilinearMap>,
    /// Fraction of maps with numerical rank ≤ 1.
    pub rank1_fraction: f64,
    /// Fraction of maps whose largest entry sits at (value row, key column).
    pub peak_fraction: f64,
}

const RANK_TOL: f64 = 1e-3;

/// Maps for every key symbol `i < T` and value symbol `T ≤ j < 2T`, reading
/// the side-gated network as a pure memory (λ taken as 1). Only the part of
/// the input gating bilinear in (key, value) enters; terms in the key or the
/// value alone, and bias terms, sum to the same state for every sequence.
pub fn recall_bilinear_probe(p: &SideGatedRnnParams) -> Result<RecallProbeReport> {
    p.validate()?;
    let width = p.d_in() - usize::from(p.augmented);
    if width % 2 != 0 {
        return shape_err("recall_bilinear_probe", format!("vocabulary width {width} is not even"));
    }
    let t = width / 2;
    let side = p.w_side.select_cols(&(0..width).collect::<Vec<_>>());
    let mut maps = Vec::with_capacity(t * t);
    for i in 0..t {
        for j in t..2 * t {
            let g: Vec<f64> = (0..p.n()).map(|r| p.w_m_in[(r, j)] * p.w_x_in[(r, i)] + p.w_m_in[(r, i)] * p.w_x_in[(r, j)]).collect();
            let scaled = Matrix::from_fn(side.rows(), side.cols(), |r, c| g[r] * side[(r, c)]);
            let matrix = p.d_readout.matmul(&scaled)?;
            let sv = svd(&matrix);
            let s1 = sv.s.first().copied().unwrap_or(0.0);
            let s2 = sv.s.get(1).copied().unwrap_or(0.0);
            let mut peak = (0, 0);
            for r in 0..matrix.rows() {
                for c in 0..matrix.cols() {
                    if matrix[(r, c)].abs() > matrix[peak].abs() {
                        peak = (r, c);
                    }
                }
            }
            maps.push(BilinearMap {
                key: i,
                value: j,
                singular_ratio: if s1 > 0.0 { s2 / s1 } else { 0.0 },
                rank: sv.rank(RANK_TOL),
                peak,
                peak_value: matrix[peak],
                matrix,
            });
        }
    }
    let count = maps.len().max(1) as f64;
    Ok(RecallProbeReport {
        pairs: t,
        rank1_fraction: maps.iter().filter(|m| m.rank <= 1).count() as f64 / count,
        peak_fraction: maps.iter().filter(|m| m.peak == (m.value, m.key) && m.peak_value != 0.0).count() as f64 / count,
        maps,
    })
}
