//! Reverse-engineering trained recurrent networks.

mod merge;
mod polynomial;
mod probe;
mod prune;
#[cfg(test)]
mod tests;

pub use merge::{merge_rank1_rows, MergeReport, MERGE_COSINE_TOL, MERGE_RANK_TOL};
pub use polynomial::{fingerprint_distance, gd_attention_model, icl_polynomial_terms, table_terms, IclTerm, IclTermsReport, FINGERPRINT_DEGREE};
pub use probe::{probe_kv_q, recall_bilinear_probe, BilinearMap, ProbeReport, RecallProbeReport};
pub use prune::{display_order, prune, PruneReport, DEFAULT_WEIGHT_TOL};

use serde::{Deserialize, Serialize};

use crate::models::GatedRnnParams;

pub const DEFAULT_LAMBDA_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaClass {
    Integrator,
    Memoryless,
    Other,
}

pub fn classify(lambda: f64, tol: f64) -> LambdaClass {
    if lambda >= 1.0 - tol {
        LambdaClass::Integrator
    } else if lambda <= tol {
        LambdaClass::Memoryless
    } else {
        LambdaClass::Other
    }
}

pub fn classify_lambda(p: &GatedRnnParams, tol: f64) -> Vec<LambdaClass> {
    p.lambda().into_iter().map(|l| classify(l, tol)).collect()
}

/// Count per class, in the order integrator, memoryless, other.
pub fn class_counts(classes: &[LambdaClass]) -> [usize; 3] {
    let mut c = [0; 3];
    for k in classes {
        c[*k as usize] += 1;
    }
    c
}
