use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{run_experiment, ExperimentConfig, RunRecord};
use crate::compiler::{compile_budgeted, VerifyConfig};
use crate::error::{Error, Result};
use crate::models::ArchSpec;
use crate::tasks::TaskSpec;

pub const SWEEP_HEADER: &str = "axis,seed,final_train_loss,final_val_loss,delta_loss,runtime_s";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Hidden neurons `n` (or LSTM/GRU/LRU width).
    Hidden,
    /// Gated outputs `m`.
    GatedOutputs,
    /// Values are whole architecture specs.
    Arch,
    Layers,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    #[default]
    Train,
    /// Best construction of the teacher within the hidden budget; no training.
    Construct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<Value>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub mode: SweepMode,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(default)]
    pub workers: usize,
    pub base: ExperimentConfig,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    pub delta_loss: Option<f64>,
    pub runtime_s: f64,
    /// Construction used (construct mode only).
    pub method: Option<String>,
    pub exact: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub mode: SweepMode,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            let delta = r.delta_loss.map(|v| format!("{v:e}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{},{:e},{:e},{delta},{:.3}\n",
                csv_field(&r.axis),
                r.seed,
                r.final_train_loss,
                r.final_val_loss,
                r.runtime_s
            ));
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn as_count(v: &Value) -> Result<usize> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| Error::Invalid(format!("sweep value {v} is not a count")))
}

/// The base architecture with one axis set to `value`.
pub fn apply_axis(arch: &ArchSpec, axis: SweepAxis, value: &Value) -> Result<ArchSpec> {
    let mut a = arch.clone();
    let refuse = || Err(Error::Invalid(format!("axis {axis:?} does not apply to {}", arch.name())));
    match axis {
        SweepAxis::Arch => return Ok(serde_json::from_value(value.clone())?),
        SweepAxis::Hidden => {
            let v = as_count(value)?;
            match &mut a {
                ArchSpec::Gated { n, .. } | ArchSpec::SideGated { n, .. } | ArchSpec::DenseGated { n, .. } => *n = v,
                ArchSpec::Lstm { hidden, .. } | ArchSpec::Gru { hidden, .. } | ArchSpec::Lru { hidden, .. } => *hidden = v,
            }
        }
        SweepAxis::GatedOutputs => {
            let v = as_count(value)?;
            match &mut a {
                ArchSpec::Gated { m, .. } | ArchSpec::DenseGated { m, .. } => *m = v,
                _ => return refuse(),
            }
        }
        SweepAxis::Layers => {
            let v = as_count(value)?;
            match &mut a {
                ArchSpec::Lstm { layers, .. } | ArchSpec::Gru { layers, .. } | ArchSpec::Lru { layers, .. } => *layers = v,
                _ => return refuse(),
            }
        }
    }
    Ok(a)
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Invalid("sweep has no values".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Invalid("sweep needs at least one repeat".into()));
        }
        if self.mode == SweepMode::Construct && !(self.axis == SweepAxis::Hidden && matches!(self.base.task, TaskSpec::TeacherStudent(_))) {
            return Err(Error::Invalid("construct sweeps run over hidden counts of a teacher-student task".into()));
        }
        self.base.validate()
    }

    /// Every (value, seed) cell in table order.
    fn cells(&self) -> Vec<(usize, u64)> {
        (0..self.values.len()).flat_map(|i| (0..self.repeats as u64).map(move |k| (i, self.base.seed + k))).collect()
    }
}

fn run_cell(spec: &SweepSpec, value: &Value, seed: u64, root: &Path) -> Result<SweepRow> {
    let axis = label(value);
    match spec.mode {
        SweepMode::Construct => {
            let started = Instant::now();
            let TaskSpec::TeacherStudent(ts) = &spec.base.task else { unreachable!("validated") };
            let cfg = VerifyConfig {
                steps: spec.base.train.seq_len,
                n_seq: spec.base.eval.validation_seqs.min(64),
                seed,
            };
            let c = compile_budgeted(&ts.teacher(), as_count(value)?, cfg)?;
            Ok(SweepRow {
                axis,
                seed,
                final_train_loss: c.report.mean_half_sq_error,
                final_val_loss: c.report.mean_half_sq_error,
                delta_loss: None,
                runtime_s: started.elapsed().as_secs_f64(),
                method: Some(c.method),
                exact: Some(c.exact),
            })
        }
        SweepMode::Train => {
            let mut config = spec.base.clone();
            config.seed = seed;
            config.arch = apply_axis(&spec.base.arch, spec.axis, value)?;
            config.name = format!("{}-{}", spec.base.name, axis.replace(|c: char| !c.is_ascii_alphanumeric(), "_"));
            let r: RunRecord = run_experiment(&config, root)?;
            Ok(SweepRow {
                axis,
                seed,
                final_train_loss: r.final_train_loss,
                final_val_loss: r.final_val_loss,
                delta_loss: r.delta_loss,
                runtime_s: r.runtime_s,
                method: None,
                exact: None,
            })
        }
    }
}

/// Runs every (value, seed) cell across worker threads; rows come back in
/// (value, seed) order regardless of completion order.
pub fn run_sweep(spec: &SweepSpec, root: &Path) -> Result<SweepTable> {
    spec.validate()?;
    let cells = spec.cells();
    let workers = match spec.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    }
    .min(cells.len());
    let mut slots: Vec<Option<Result<SweepRow>>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let cells = &cells;
                s.spawn(move || {
                    (w..cells.len())
                        .step_by(workers)
                        .map(|c| (c, run_cell(spec, &spec.values[cells[c].0], cells[c].1, root)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (c, r) in h.join().expect("sweep worker panicked") {
                slots[c] = Some(r);
            }
        }
    });
    let rows = slots.into_iter().map(|r| r.expect("every cell ran")).collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        axis: spec.axis,
        mode: spec.mode,
        rows,
    })
}
