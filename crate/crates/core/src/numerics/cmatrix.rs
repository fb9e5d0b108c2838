use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

use super::Matrix;

/// Complex matrix stored as separate real and imaginary planes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    pub re: Matrix,
    pub im: Matrix,
}

impl CMatrix {
    pub fn new(re: Matrix, im: Matrix) -> Result<Self> {
        if re.shape() != im.shape() {
            return shape_err("cmatrix", format!("{:?} vs {:?}", re.shape(), im.shape()));
        }
        Ok(CMatrix { re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            re: Matrix::zeros(rows, cols),
            im: Matrix::zeros(rows, cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.re.rows()
    }

    pub fn cols(&self) -> usize {
        self.re.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[(i, j)], self.im[(i, j)])
    }

    pub fn matvec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.cols() {
            return shape_err("cmatvec", format!("{} cols vs {}", self.cols(), v.len()));
        }
        Ok((0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.get(i, j) * v[j]).sum())
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}
