//! Experiment orchestration: configs, run directories, sweeps and reports.

mod config;
mod report;
mod sweep;
#[cfg(test)]
mod tests;

pub use config::{preset, AnalysisConfig, EvalConfig, ExperimentConfig, PRESETS};
pub use sweep::apply_axis;
pub use report::{report, ReportInput, Summary};
pub use sweep::{run_sweep, SweepAxis, SweepMode, SweepRow, SweepSpec, SweepTable, SWEEP_HEADER};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    class_counts, classify_lambda, fingerprint_distance, icl_polynomial_terms, probe_kv_q, prune, recall_bilinear_probe, table_terms, IclTermsReport, LambdaClass,
};
use crate::error::{Error, Result};
use crate::grad::{loss_value, train, Hooks, Traces, TrainConfig};
use crate::models::{save_checkpoint, AttentionParams, Checkpoint, Model, SequenceBatch};
use crate::numerics::Rng;
use crate::tasks::{accuracy, gd_baseline_loss, optimal_eta, Split, TaskSampler, TaskSpec};

/// Environment variable naming the directory that holds run directories.
pub const RUNS_ENV: &str = "ATTN2RNN_RUNS";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

pub fn build_id() -> String {
    format!("attn2rnn {}", env!("CARGO_PKG_VERSION"))
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn run_dir(config: &ExperimentConfig, root: &Path) -> Result<PathBuf> {
    Ok(root.join(format!("{}-{}", config.name, &content_hash(config)?[..16])))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeScores {
    pub score_kv: f64,
    pub score_q: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneSummary {
    pub hidden_before: usize,
    pub hidden_after: usize,
    pub outputs_before: usize,
    pub outputs_after: usize,
    pub deviation: f64,
    /// Surviving neurons as (integrator, memoryless, other) at the configured λ tolerance.
    pub classes: [usize; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub accuracy: f64,
    pub max_singular_ratio: Option<f64>,
    pub peak_fraction: Option<f64>,
}

/// Post-training analyses; fields stay empty when they do not apply.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub fingerprint_distance: Option<f64>,
    pub probe: Option<ProbeScores>,
    pub prune: Option<PruneSummary>,
    pub icl_terms: Option<IclTermsReport>,
    pub eta_star: Option<f64>,
    pub recall: Option<RecallSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub build: String,
    pub seed: u64,
    pub run_dir: PathBuf,
    pub traces: Traces,
    /// Loss on a fixed held-out batch from the training distribution.
    pub final_train_loss: f64,
    /// Loss on the fixed validation batch.
    pub final_val_loss: f64,
    /// For in-context regression: `final_train_loss − gd_baseline_loss(η*)`.
    pub delta_loss: Option<f64>,
    pub baseline_loss: Option<f64>,
    pub diverged: Option<String>,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub analysis: AnalysisSummary,
    pub analysis_path: Option<PathBuf>,
    pub started_unix: u64,
    pub runtime_s: f64,
}

fn write_trace(path: &Path, rows: &[(usize, f64)]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (i, l) in rows {
        s.push_str(&format!("{i},{l:e}\n"));
    }
    fs::write(path, s)?;
    Ok(())
}

/// The task as the runner uses it: teacher-student sequence length follows
/// the training config.
fn effective_task(config: &ExperimentConfig) -> TaskSpec {
    match &config.task {
        TaskSpec::TeacherStudent(s) => {
            let mut s = s.clone();
            s.seq_len = config.train.seq_len;
            TaskSpec::TeacherStudent(s)
        }
        other => other.clone(),
    }
}

/// Trains, evaluates and analyzes one configuration; artifacts go to a
/// content-addressed directory under `root`.
pub fn run_experiment(config: &ExperimentConfig, root: &Path) -> Result<RunRecord> {
    let started = Instant::now();
    let started_unix = unix_now();
    let dir = run_dir(config, root)?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;

    let sampler = TaskSampler::new(effective_task(config));
    if let Some(t) = sampler.teacher() {
        save_checkpoint(&dir.join("teacher.json"), &Checkpoint::new(Model::Attention(t.clone()), config.seed))?;
    }
    let rng = Rng::new(config.seed);
    let model = config.arch.init(sampler.d_data(), sampler.d_out(), &mut rng.substream("init"));
    let cfg: &TrainConfig = &config.train;
    let validation = sampler.sample(&mut rng.substream("validation"), config.eval.validation_seqs, Split::Validation);
    let held_out = sampler.sample(&mut rng.substream("held_out"), config.eval.final_seqs, Split::Train);

    let mut validate = |m: &Model| loss_value(m, &validation);
    let mut checkpoints = Vec::new();
    let mut save = |step: usize, m: &Model| -> Result<()> {
        let path = dir.join(format!("ckpt-{step:08}.json"));
        save_checkpoint(&path, &Checkpoint::new(m.clone(), config.seed))?;
        checkpoints.push(path);
        Ok(())
    };
    let mut sample = |i: usize| sampler.sample(&mut rng.substream_indexed("train", i as u64), cfg.batch, Split::Train);
    let outcome = train(
        model,
        cfg,
        &mut sample,
        Hooks {
            validate: Some(&mut validate),
            checkpoint: Some(&mut save),
        },
    )?;
    let model = outcome.model;
    let final_train_loss = loss_value(&model, &held_out)?;
    let final_val_loss = loss_value(&model, &validation)?;
    let final_checkpoint = dir.join("final.json");
    save_checkpoint(&final_checkpoint, &Checkpoint::new(model.clone(), config.seed))?;
    write_trace(&dir.join("train.csv"), &outcome.traces.train)?;
    write_trace(&dir.join("validation.csv"), &outcome.traces.validation)?;

    let (baseline_loss, delta_loss) = match &sampler.spec {
        TaskSpec::IclRegression(s) => {
            let b = gd_baseline_loss(s, optimal_eta(s), config.eval.baseline_tasks, &mut Rng::new(config.seed).substream("baseline"))?;
            (Some(b), Some(final_train_loss - b))
        }
        _ => (None, None),
    };
    let analysis = if config.analysis.enabled {
        analyze_model(&model, &sampler, &config.analysis, &rng.substream("analysis"))?
    } else {
        AnalysisSummary::default()
    };
    let analysis_path = dir.join("analysis.json");
    fs::write(&analysis_path, serde_json::to_string_pretty(&analysis)?)?;

    let record = RunRecord {
        config: config.clone(),
        build: build_id(),
        seed: config.seed,
        run_dir: dir.clone(),
        traces: outcome.traces,
        final_train_loss,
        final_val_loss,
        delta_loss,
        baseline_loss,
        diverged: outcome.diverged.map(|e| e.to_string()),
        checkpoints,
        final_checkpoint,
        analysis,
        analysis_path: Some(analysis_path),
        started_unix,
        runtime_s: started.elapsed().as_secs_f64(),
    };
    fs::write(dir.join("record.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(record)
}

fn not_polynomial(e: &Error) -> bool {
    matches!(e, Error::NotPolynomial { .. } | Error::DegreeOverflow { .. })
}

/// Analyses that apply to this model and task.
pub fn analyze_model(model: &Model, sampler: &TaskSampler, cfg: &AnalysisConfig, rng: &Rng) -> Result<AnalysisSummary> {
    let mut out = AnalysisSummary::default();
    let batch = sampler.sample(&mut rng.substream("probe"), cfg.probe_seqs, Split::Train);
    match &sampler.spec {
        TaskSpec::TeacherStudent(_) => {
            let teacher = sampler.teacher().expect("teacher-student task");
            analyze_against_teacher(model, teacher, &batch, cfg, &mut out)?;
        }
        TaskSpec::IclRegression(s) => {
            out.eta_star = Some(optimal_eta(s));
            match icl_polynomial_terms(model, s.d_x, s.d_y, &table_terms(s.d_x, s.d_y)) {
                Ok(r) => out.icl_terms = Some(r),
                Err(e) if not_polynomial(&e) => {}
                Err(e) => return Err(e),
            }
        }
        TaskSpec::AssocRecall(_) => {
            let y = model.forward(&batch)?.output;
            let mut summary = RecallSummary {
                accuracy: accuracy(&y, &batch)?,
                ..RecallSummary::default()
            };
            if let Model::SideGated(p) = model {
                let r = recall_bilinear_probe(p)?;
                summary.max_singular_ratio = Some(r.maps.iter().map(|m| m.singular_ratio).fold(0.0, f64::max));
                summary.peak_fraction = Some(r.peak_fraction);
            }
            out.recall = Some(summary);
        }
    }
    Ok(out)
}

/// Fingerprint distance to `teacher` and, for gated networks, pruning plus
/// the key-value/query probe on `batch`.
pub fn analyze_against_teacher(model: &Model, teacher: &AttentionParams, batch: &SequenceBatch, cfg: &AnalysisConfig, out: &mut AnalysisSummary) -> Result<()> {
    match fingerprint_distance(&Model::Attention(teacher.clone()), model) {
        Ok(v) => out.fingerprint_distance = Some(v),
        Err(e) if not_polynomial(&e) => {}
        Err(e) => return Err(e),
    }
    if let Model::Gated(p) = model {
        let (pruned, report) = prune(p, cfg.weight_tol, batch)?;
        let hidden = Model::Gated(pruned.clone()).forward(batch)?.hidden.expect("gated trace");
        let probe = probe_kv_q(&pruned, &hidden, teacher, batch, cfg.lambda_tol)?;
        out.probe = Some(ProbeScores {
            score_kv: probe.score_kv,
            score_q: probe.score_q,
        });
        out.prune = Some(PruneSummary {
            hidden_before: p.n(),
            hidden_after: pruned.n(),
            outputs_before: p.m(),
            outputs_after: pruned.m(),
            deviation: report.deviation,
            classes: class_counts(&classify_lambda(&pruned, cfg.lambda_tol)),
        });
    }
    Ok(())
}

/// The stored record for `config` under `root` when one exists, otherwise a fresh run.
pub fn load_or_run(config: &ExperimentConfig, root: &Path) -> Result<RunRecord> {
    let path = run_dir(config, root)?.join("record.json");
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(r) = serde_json::from_str::<RunRecord>(&text) {
            if &r.config == config {
                return Ok(r);
            }
        }
    }
    run_experiment(config, root)
}

/// Re-runs a record's configuration into a scratch root and returns the new record.
pub fn replay(record: &RunRecord, root: &Path) -> Result<RunRecord> {
    run_experiment(&record.config, root)
}

/// Runs seeds `base.seed, base.seed + 1, …` until a majority of `n_seeds`
/// either passes or can no longer pass.
pub fn run_replicates(config: &ExperimentConfig, n_seeds: usize, root: &Path, pass: &dyn Fn(&RunRecord) -> bool) -> Result<(bool, Vec<RunRecord>)> {
    let need = n_seeds / 2 + 1;
    let mut records = Vec::new();
    let (mut ok, mut bad) = (0, 0);
    for k in 0..n_seeds {
        let mut c = config.clone();
        c.seed = config.seed + k as u64;
        let r = run_experiment(&c, root)?;
        if pass(&r) {
            ok += 1;
        } else {
            bad += 1;
        }
        records.push(r);
        if ok >= need || bad > n_seeds - need {
            break;
        }
    }
    Ok((ok >= need, records))
}

/// True when no surviving neuron has an intermediate λ.
pub fn only_extreme_classes(summary: &PruneSummary) -> bool {
    summary.classes[LambdaClass::Other as usize] == 0
}
