use serde::{Deserialize, Serialize};

use super::RunRecord;
use crate::compiler::ConstructionReport;
use crate::error::{Error, Result};

/// Anything `report` accepts, recognized by shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReportInput {
    Run(Box<RunRecord>),
    Construction(ConstructionReport),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub seed: u64,
    pub arch: String,
    pub loss: f64,
    pub score_kv: Option<f64>,
    pub score_q: Option<f64>,
    pub poly_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub seed: u64,
    pub loss: f64,
    pub baseline_loss: Option<f64>,
    pub eta_star: Option<f64>,
    pub coefficients: Vec<(String, f64)>,
    pub residual: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metrics: Vec<MetricRow>,
    pub coefficients: Vec<CoefficientRow>,
    pub constructions: Vec<ConstructionReport>,
    pub markdown: String,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3e}"))
}

/// Metric and coefficient tables over run records plus a deviation table for
/// construction reports.
pub fn report(inputs: &[ReportInput]) -> Result<Summary> {
    if inputs.is_empty() {
        return Err(Error::Invalid("report needs at least one record".into()));
    }
    let mut metrics = Vec::new();
    let mut coefficients = Vec::new();
    let mut constructions = Vec::new();
    for input in inputs {
        match input {
            ReportInput::Construction(c) => constructions.push(c.clone()),
            ReportInput::Run(r) => {
                let a = &r.analysis;
                if let Some(t) = &a.icl_terms {
                    coefficients.push(CoefficientRow {
                        name: r.config.name.clone(),
                        seed: r.seed,
                        loss: r.final_train_loss,
                        baseline_loss: r.baseline_loss,
                        eta_star: a.eta_star,
                        coefficients: t.coefficients.iter().map(|(term, c)| (term.label.clone(), *c)).collect(),
                        residual: Some(t.residual),
                    });
                } else if a.eta_star.is_some() {
                    coefficients.push(CoefficientRow {
                        name: r.config.name.clone(),
                        seed: r.seed,
                        loss: r.final_train_loss,
                        baseline_loss: r.baseline_loss,
                        eta_star: a.eta_star,
                        coefficients: Vec::new(),
                        residual: None,
                    });
                } else {
                    metrics.push(MetricRow {
                        name: r.config.name.clone(),
                        seed: r.seed,
                        arch: r.config.arch.name().into(),
                        loss: r.final_train_loss,
                        score_kv: a.probe.as_ref().map(|p| p.score_kv),
                        score_q: a.probe.as_ref().map(|p| p.score_q),
                        poly_distance: a.fingerprint_distance,
                    });
                }
            }
        }
    }
    let mut md = String::from("# Summary\n");
    if !metrics.is_empty() {
        md.push_str("\n## Teacher identification\n\n| run | seed | arch | loss | score KV | score Q | poly. distance |\n|---|---|---|---|---|---|---|\n");
        for m in &metrics {
            md.push_str(&format!(
                "| {} | {} | {} | {:.3e} | {} | {} | {} |\n",
                m.name,
                m.seed,
                m.arch,
                m.loss,
                opt(m.score_kv),
                opt(m.score_q),
                opt(m.poly_distance)
            ));
        }
    }
    if !coefficients.is_empty() {
        let labels: Vec<String> = coefficients.iter().find(|c| !c.coefficients.is_empty()).map(|c| c.coefficients.iter().map(|(l, _)| l.clone()).collect()).unwrap_or_default();
        md.push_str("\n## In-context regression\n\n| run | seed | loss | GD loss (η*) | η* |");
        for l in &labels {
            md.push_str(&format!(" {l} |"));
        }
        md.push_str(" residual |\n|---|---|---|---|---|");
        md.push_str(&"---|".repeat(labels.len() + 1));
        md.push('\n');
        for c in &coefficients {
            md.push_str(&format!("| {} | {} | {:.4e} | {} | {} |", c.name, c.seed, c.loss, opt(c.baseline_loss), opt(c.eta_star)));
            for l in &labels {
                let v = c.coefficients.iter().find(|(k, _)| k == l).map(|(_, v)| *v);
                md.push_str(&format!(" {} |", opt(v)));
            }
            md.push_str(&format!(" {} |\n", opt(c.residual)));
        }
    }
    if !constructions.is_empty() {
        md.push_str("\n## Constructions\n\n| source | target | hidden | d | T | max abs dev | max rel dev |\n|---|---|---|---|---|---|---|\n");
        for c in &constructions {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.3e} | {:.3e} |\n",
                c.source_arch, c.target_arch, c.hidden_count, c.d, c.steps, c.max_abs_deviation, c.max_rel_deviation
            ));
        }
    }
    Ok(Summary {
        metrics,
        coefficients,
        constructions,
        markdown: md,
    })
}
