use serde::{Deserialize, Serialize};

use crate::analysis::{DEFAULT_LAMBDA_TOL, DEFAULT_WEIGHT_TOL};
use crate::error::{Error, Result};
use crate::grad::TrainConfig;
use crate::models::ArchSpec;
use crate::tasks::{AssocRecallSpec, IclRegressionSpec, TaskSpec, TeacherStudentSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub validation_seqs: usize,
    /// Size of the held-out batch behind `final_train_loss`.
    pub final_seqs: usize,
    /// Monte-Carlo tasks for the gradient-descent baseline.
    pub baseline_tasks: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            validation_seqs: 256,
            final_seqs: 1024,
            baseline_tasks: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub enabled: bool,
    pub weight_tol: f64,
    pub lambda_tol: f64,
    pub probe_seqs: usize,
    pub max_prune_deviation: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            enabled: true,
            weight_tol: DEFAULT_WEIGHT_TOL,
            lambda_tol: DEFAULT_LAMBDA_TOL,
            probe_seqs: 64,
            max_prune_deviation: 1e-5,
        }
    }
}

/// Everything needed to reproduce a run. Training fields sit at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub task: TaskSpec,
    pub arch: ArchSpec,
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("run name {:?} must be a non-empty path component", self.name));
        }
        if self.train.batch == 0 || self.train.seq_len == 0 {
            return bad("batch and seq_len must be positive".into());
        }
        if !(self.train.lr0 > 0.0 && self.train.lr_min >= 0.0 && self.train.weight_decay >= 0.0) {
            return bad("learning rates must be positive and weight decay non-negative".into());
        }
        if self.eval.validation_seqs == 0 || self.eval.final_seqs == 0 {
            return bad("evaluation batches must be non-empty".into());
        }
        Ok(())
    }
}

pub const PRESETS: &[&str] = &["smoke", "paper-mini", "teacher-student", "teacher-student-lstm", "icl", "recall"];

/// Named configurations shipped with the binary.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = |task, arch, train| ExperimentConfig {
        name: name.to_string(),
        seed: 0,
        task,
        arch,
        train,
        eval: EvalConfig::default(),
        analysis: AnalysisConfig::default(),
    };
    let ts = |d| TaskSpec::TeacherStudent(TeacherStudentSpec::new(d, 0));
    Ok(match name {
        "smoke" => base(
            ts(2),
            ArchSpec::Gated { n: 6, m: 4, augmented: true },
            TrainConfig {
                iterations: 200,
                batch: 16,
                seq_len: 8,
                log_every: 20,
                ..TrainConfig::default()
            },
        ),
        "paper-mini" | "teacher-student" => base(
            ts(3),
            ArchSpec::Gated { n: 32, m: 32, augmented: true },
            TrainConfig {
                iterations: 100_000,
                weight_decay: 0.5,
                log_every: 1000,
                ..TrainConfig::default()
            },
        ),
        "teacher-student-lstm" => base(
            ts(3),
            ArchSpec::Lstm { hidden: 32, layers: 2 },
            TrainConfig {
                iterations: 100_000,
                log_every: 1000,
                ..TrainConfig::default()
            },
        ),
        "icl" => {
            let spec = IclRegressionSpec::default();
            let seq_len = spec.t + 1;
            base(
                TaskSpec::IclRegression(spec),
                ArchSpec::Gated { n: 40, m: 40, augmented: true },
                TrainConfig {
                    iterations: 100_000,
                    seq_len,
                    weight_decay: 0.3,
                    log_every: 1000,
                    ..TrainConfig::default()
                },
            )
        }
        "recall" => {
            let spec = AssocRecallSpec::default();
            let seq_len = spec.t + 1;
            base(
                TaskSpec::AssocRecall(spec),
                ArchSpec::SideGated { n: 64, augmented: true },
                TrainConfig {
                    iterations: 100_000,
                    seq_len,
                    weight_decay: 0.3,
                    log_every: 1000,
                    ..TrainConfig::default()
                },
            )
        }
        other => return Err(Error::Invalid(format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")))),
    })
}
