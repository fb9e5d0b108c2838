use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::Matrix;

/// A batch of equal-length sequences stored time-major: row `t * batch + b`
/// is timestep `t` of sequence `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceBatch {
    pub batch: usize,
    pub steps: usize,
    pub inputs: Matrix,
    pub targets: Matrix,
    /// Per-row loss weight.
    pub mask: Vec<f64>,
    /// Class targets for classification tasks; `None` rows carry no loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<Option<usize>>>,
}

impl SequenceBatch {
    pub fn new(batch: usize, steps: usize, inputs: Matrix, targets: Matrix, mask: Vec<f64>) -> Result<Self> {
        let n = batch * steps;
        if batch == 0 || steps == 0 {
            return Err(Error::Invalid("batch and steps must be positive".into()));
        }
        if inputs.rows() != n || targets.rows() != n || mask.len() != n {
            return shape_err(
                "SequenceBatch::new",
                format!(
                    "expected {n} rows, got inputs {}, targets {}, mask {}",
                    inputs.rows(),
                    targets.rows(),
                    mask.len()
                ),
            );
        }
        for b in 0..batch {
            if (0..steps).all(|t| mask[t * batch + b] == 0.0) {
                return Err(Error::Invalid(format!("sequence {b} has an empty loss mask")));
            }
        }
        Ok(SequenceBatch {
            batch,
            steps,
            inputs,
            targets,
            mask,
            labels: None,
        })
    }

    /// Builds a batch from per-sequence `T×d` matrices with a full mask.
    pub fn from_sequences(inputs: &[Matrix], targets: &[Matrix]) -> Result<Self> {
        let batch = inputs.len();
        if batch == 0 || targets.len() != batch {
            return shape_err("SequenceBatch::from_sequences", "need one target per input sequence");
        }
        let steps = inputs[0].rows();
        let interleave = |seqs: &[Matrix]| -> Result<Matrix> {
            let cols = seqs[0].cols();
            if seqs.iter().any(|s| s.rows() != steps || s.cols() != cols) {
                return shape_err("SequenceBatch::from_sequences", "ragged sequences");
            }
            Ok(Matrix::from_fn(batch * steps, cols, |r, j| seqs[r % batch][(r / batch, j)]))
        };
        Self::new(batch, steps, interleave(inputs)?, interleave(targets)?, vec![1.0; batch * steps])
    }

    pub fn rows(&self) -> usize {
        self.batch * self.steps
    }

    pub fn d_in(&self) -> usize {
        self.inputs.cols()
    }

    pub fn d_out(&self) -> usize {
        self.targets.cols()
    }

    pub fn row_index(&self, t: usize, b: usize) -> usize {
        t * self.batch + b
    }

    pub fn input(&self, t: usize, b: usize) -> &[f64] {
        self.inputs.row(self.row_index(t, b))
    }

    /// `T×k` slice of a time-major matrix for sequence `b`.
    pub fn sequence_of(&self, m: &Matrix, b: usize) -> Matrix {
        Matrix::from_fn(self.steps, m.cols(), |t, j| m[(t * self.batch + b, j)])
    }

    /// Copy with a trailing constant-1 input column.
    pub fn augmented(&self) -> SequenceBatch {
        let ones = Matrix::filled(self.rows(), 1, 1.0);
        let mut out = self.clone();
        out.inputs = Matrix::hstack(&[&self.inputs, &ones]).expect("row counts agree");
        out
    }

    /// Copy with the inputs swapped out.
    pub fn with_inputs(&self, inputs: Matrix) -> Result<SequenceBatch> {
        if inputs.rows() != self.rows() {
            return shape_err("SequenceBatch::with_inputs", "row count changed");
        }
        let mut out = self.clone();
        out.inputs = inputs;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleaves_time_major() {
        let a = Matrix::from_rows(&[[1.0], [2.0]]);
        let b = Matrix::from_rows(&[[10.0], [20.0]]);
        let batch = SequenceBatch::from_sequences(&[a.clone(), b], &[a.clone(), a.clone()]).unwrap();
        assert_eq!(batch.inputs.col(0), vec![1.0, 10.0, 2.0, 20.0]);
        assert_eq!(batch.input(1, 1), &[20.0]);
        assert_eq!(batch.sequence_of(&batch.inputs, 0), a);
    }

    #[test]
    fn empty_mask_rejected() {
        let m = Matrix::zeros(4, 1);
        let err = SequenceBatch::new(2, 2, m.clone(), m, vec![1.0, 0.0, 1.0, 0.0]);
        assert!(err.is_err());
    }

    #[test]
    fn augmentation_appends_ones() {
        let m = Matrix::zeros(2, 3);
        let b = SequenceBatch::new(1, 2, m.clone(), m, vec![1.0; 2]).unwrap().augmented();
        assert_eq!(b.d_in(), 4);
        assert_eq!(b.inputs.col(3), vec![1.0, 1.0]);
    }
}
