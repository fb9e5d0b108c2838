use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::models::{Model, SequenceBatch};
use crate::numerics::{sample_normal, Rng};

/// Outcome of running two models on shared random sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionReport {
    pub source_arch: String,
    pub target_arch: String,
    pub hidden_count: usize,
    /// Input width the target consumes, including the constant column.
    pub augmented_width: usize,
    pub d: usize,
    pub steps: usize,
    pub n_seq: usize,
    pub seed: u64,
    pub max_abs_deviation: f64,
    /// `max_abs_deviation / max |y_source|`.
    pub max_rel_deviation: f64,
    /// Mean over positions of `½‖y_target − y_source‖²`.
    pub mean_half_sq_error: f64,
}

/// Recurrent state size; zero for attention.
pub fn hidden_count(model: &Model) -> usize {
    match model {
        Model::Attention(_) | Model::DecayedAttention(_) => 0,
        Model::Gated(p) => p.n(),
        Model::SideGated(p) => p.n(),
        Model::DenseGated(p) => p.n(),
        Model::Lstm(p) => p.layers.iter().map(|l| l.n()).sum(),
        Model::Gru(p) => p.layers.iter().map(|l| l.r.u.rows()).sum(),
        Model::Lru(p) => p.layers.iter().map(|l| l.n()).sum(),
    }
}

/// Both models on `n_seq` standard-normal sequences of length `steps`.
pub fn verify_equivalence(source: &Model, target: &Model, d: usize, steps: usize, n_seq: usize, seed: u64) -> Result<ConstructionReport> {
    let mut rng = Rng::new(seed).substream("verify");
    let x = sample_normal(&mut rng, n_seq * steps, d, 1.0);
    let batch = SequenceBatch::new(n_seq, steps, x, crate::numerics::Matrix::zeros(n_seq * steps, 1), vec![1.0; n_seq * steps])?;
    let mut report = verify_on_batch(source, target, &batch)?;
    report.seed = seed;
    Ok(report)
}

/// Comparison on caller-provided (unaugmented) inputs; `seed` is left at 0.
pub fn verify_on_batch(source: &Model, target: &Model, batch: &SequenceBatch) -> Result<ConstructionReport> {
    let d = batch.d_in();
    for m in [source, target] {
        if m.d_data() != d {
            return shape_err("verify_equivalence", format!("{} expects {} inputs, data has {d}", m.arch(), m.d_data()));
        }
    }
    let ya = source.forward(batch)?.output;
    let yb = target.forward(batch)?.output;
    let max_abs_deviation = ya.max_abs_diff(&yb)?;
    let scale = ya.max_abs();
    let diff = yb.sub(&ya)?;
    let mean_half_sq_error = 0.5 * diff.data().iter().map(|v| v * v).sum::<f64>() / batch.rows() as f64;
    Ok(ConstructionReport {
        source_arch: source.arch().into(),
        target_arch: target.arch().into(),
        hidden_count: hidden_count(target),
        augmented_width: target.d_in(),
        d,
        steps: batch.steps,
        n_seq: batch.batch,
        seed: 0,
        max_abs_deviation,
        max_rel_deviation: if scale > 0.0 { max_abs_deviation / scale } else { max_abs_deviation },
        mean_half_sq_error,
    })
}
