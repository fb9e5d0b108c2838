use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::models::{instantaneous_fingerprint, AttentionParams, Model};
use crate::numerics::Matrix;
use crate::poly::{coefficient_distance, Exponent};
use crate::tasks::IclRegressionSpec;

/// Degree bound for fingerprints; gated networks are quartic.
pub const FINGERPRINT_DEGREE: usize = 4;

/// Normalized coefficient distance between two models' single-token maps.
pub fn fingerprint_distance(a: &Model, b: &Model) -> Result<f64> {
    let fa = instantaneous_fingerprint(a, FINGERPRINT_DEGREE)?;
    let fb = instantaneous_fingerprint(b, FINGERPRINT_DEGREE)?;
    coefficient_distance(&fa, &fb, FINGERPRINT_DEGREE)
}

/// One gradient step from zero written as attention on `(x, y)` tokens; the
/// prediction occupies the last `d_y` outputs.
pub fn gd_attention_model(spec: &IclRegressionSpec, eta: f64) -> AttentionParams {
    let w = spec.token_width();
    let dx = spec.d_x;
    let diag = |f: &dyn Fn(usize) -> f64| Matrix::from_fn(w, w, |i, j| if i == j { f(i) } else { 0.0 });
    let w_v = diag(&|i| if i >= dx { eta } else { 0.0 });
    let w_k = diag(&|i| if i < dx { 1.0 } else { 0.0 });
    AttentionParams::new(w_v, w_k.clone(), w_k).expect("square")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IclTerm {
    pub label: String,
    /// Index among the prediction outputs.
    pub output: usize,
    pub exponent: Exponent,
}

/// `x_j² y_i` for every prediction output `i` and input coordinate `j`.
pub fn table_terms(d_x: usize, d_y: usize) -> Vec<IclTerm> {
    let mut out = Vec::with_capacity(d_x * d_y);
    for i in 0..d_y {
        for j in 0..d_x {
            let mut e = vec![0; d_x + d_y];
            e[j] = 2;
            e[d_x + i] = 1;
            out.push(IclTerm {
                label: format!("x{}^2 y{}", j + 1, i + 1),
                output: i,
                exponent: e,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IclTermsReport {
    pub coefficients: Vec<(IclTerm, f64)>,
    /// L2 norm of every other coefficient of the outputs the terms address.
    pub residual: f64,
}

/// Reads the listed coefficients off the model's fingerprint. Models with
/// `d_x + d_y` outputs are read on their last `d_y`.
pub fn icl_polynomial_terms(model: &Model, d_x: usize, d_y: usize, terms: &[IclTerm]) -> Result<IclTermsReport> {
    if model.d_data() != d_x + d_y {
        return shape_err("icl_polynomial_terms", format!("model reads {} inputs, tokens have {}", model.d_data(), d_x + d_y));
    }
    let offset = match model.d_out() {
        o if o == d_y => 0,
        o if o == d_x + d_y => d_x,
        o => return shape_err("icl_polynomial_terms", format!("{o} outputs, expected {d_y} or {}", d_x + d_y)),
    };
    if let Some(t) = terms.iter().find(|t| t.output >= d_y || t.exponent.len() != d_x + d_y) {
        return shape_err("icl_polynomial_terms", format!("term {} does not fit the token layout", t.label));
    }
    let fp = instantaneous_fingerprint(model, FINGERPRINT_DEGREE)?;
    let coefficients = terms
        .iter()
        .map(|t| (t.clone(), fp.components[offset + t.output].coefficient(&t.exponent)))
        .collect();
    let mut outputs: Vec<usize> = terms.iter().map(|t| t.output).collect();
    outputs.sort_unstable();
    outputs.dedup();
    let mut sq = 0.0;
    for i in outputs {
        for (e, c) in fp.components[offset + i].terms() {
            if !terms.iter().any(|t| t.output == i && &t.exponent == e) {
                sq += c * c;
            }
        }
    }
    Ok(IclTermsReport {
        coefficients,
        residual: sq.sqrt(),
    })
}
