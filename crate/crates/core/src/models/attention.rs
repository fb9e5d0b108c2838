use serde::{Deserialize, Serialize};

use super::SequenceBatch;
use crate::error::{shape_err, Error, Result};
use crate::numerics::Matrix;

/// Causal linear self-attention, `y_t = (Σ_{s≤t} v_s k_sᵀ) q_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_v: Matrix,
    pub w_k: Matrix,
    pub w_q: Matrix,
}

impl AttentionParams {
    pub fn new(w_v: Matrix, w_k: Matrix, w_q: Matrix) -> Result<Self> {
        let d = w_v.rows();
        for (name, m) in [("w_v", &w_v), ("w_k", &w_k), ("w_q", &w_q)] {
            if m.shape() != (d, d) {
                return shape_err("AttentionParams::new", format!("{name} is {:?}, expected {d}×{d}", m.shape()));
            }
        }
        Ok(AttentionParams { w_v, w_k, w_q })
    }

    pub fn d(&self) -> usize {
        self.w_v.rows()
    }

    /// Fast-weight form: the running `W_t = W_{t−1} + v_t k_tᵀ` applied to `q_t`.
    pub fn forward(&self, batch: &SequenceBatch) -> Result<Matrix> {
        let d = self.d();
        if batch.d_in() != d {
            return shape_err("lsa_forward", format!("input width {} != d = {d}", batch.d_in()));
        }
        let v = batch.inputs.matmul_t(&self.w_v)?;
        let k = batch.inputs.matmul_t(&self.w_k)?;
        let q = batch.inputs.matmul_t(&self.w_q)?;
        let mut out = Matrix::zeros(batch.rows(), d);
        let mut w = vec![0.0; d * d];
        for b in 0..batch.batch {
            w.iter_mut().for_each(|x| *x = 0.0);
            for t in 0..batch.steps {
                let r = batch.row_index(t, b);
                let (vr, kr, qr) = (v.row(r), k.row(r), q.row(r));
                for i in 0..d {
                    for j in 0..d {
                        w[i * d + j] += vr[i] * kr[j];
                    }
                }
                let y = out.row_mut(r);
                for i in 0..d {
                    y[i] = (0..d).map(|j| w[i * d + j] * qr[j]).sum();
                }
            }
        }
        Ok(out)
    }
}

/// Linear attention whose fast weights decay row-wise,
/// `W_t = (1 − γ) ⊙ W_{t−1} + (W_V x_t + b_V)(W_K x_t + b_K)ᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayedAttentionParams {
    pub w_v: Matrix,
    pub w_k: Matrix,
    pub w_q: Matrix,
    pub b_v: Vec<f64>,
    pub b_k: Vec<f64>,
    pub b_q: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl DecayedAttentionParams {
    pub fn d(&self) -> usize {
        self.w_v.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        let square = [&self.w_v, &self.w_k, &self.w_q].iter().all(|m| m.cols() == d && m.rows() == d);
        let vecs = [&self.b_v, &self.b_k, &self.b_q, &self.gamma].iter().all(|v| v.len() == d);
        if !square || !vecs {
            return shape_err("DecayedAttentionParams", format!("all blocks must be sized for d = {d}"));
        }
        if self.gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(Error::Invalid("decay γ must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &SequenceBatch) -> Result<Matrix> {
        self.validate()?;
        let d = self.d();
        if batch.d_in() != d {
            return shape_err("decayed_lsa_forward", format!("input width {} != d = {d}", batch.d_in()));
        }
        let affine = |w: &Matrix, bias: &[f64]| -> Result<Matrix> {
            let mut m = batch.inputs.matmul_t(w)?;
            for i in 0..m.rows() {
                m.row_mut(i).iter_mut().zip(bias).for_each(|(x, b)| *x += b);
            }
            Ok(m)
        };
        let v = affine(&self.w_v, &self.b_v)?;
        let k = affine(&self.w_k, &self.b_k)?;
        let q = affine(&self.w_q, &self.b_q)?;
        let mut out = Matrix::zeros(batch.rows(), d);
        let mut w = vec![0.0; d * d];
        for b in 0..batch.batch {
            w.iter_mut().for_each(|x| *x = 0.0);
            for t in 0..batch.steps {
                let r = batch.row_index(t, b);
                let (vr, kr, qr) = (v.row(r), k.row(r), q.row(r));
                for i in 0..d {
                    let keep = 1.0 - self.gamma[i];
                    for j in 0..d {
                        w[i * d + j] = keep * w[i * d + j] + vr[i] * kr[j];
                    }
                }
                let y = out.row_mut(r);
                for i in 0..d {
                    y[i] = (0..d).map(|j| w[i * d + j] * qr[j]).sum();
                }
            }
        }
        Ok(out)
    }
}
