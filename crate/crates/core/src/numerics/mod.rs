//! Dense linear algebra, complex matrices and seeded sampling.

mod cmatrix;
mod linalg;
mod matrix;
mod rng;

pub use cmatrix::CMatrix;
pub use linalg::{inverse, least_squares, pinv, svd, Inverse, LeastSquares, Svd, SINGULAR_RATIO};
pub use matrix::Matrix;
pub use rng::{sample_normal, sample_uniform, Rng, ALGORITHM as RNG_ALGORITHM};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of the logistic sigmoid on (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}
