use serde_json::json;

use super::*;
use crate::compiler::compact_hidden;

fn smoke() -> ExperimentConfig {
    let mut c = preset("smoke").unwrap();
    c.train.iterations = 40;
    c.eval.validation_seqs = 16;
    c.eval.final_seqs = 16;
    c.analysis.probe_seqs = 16;
    c
}

#[test]
fn smoke_run_round_trips() {
    let root = tempfile::tempdir().unwrap();
    let r = run_experiment(&smoke(), root.path()).unwrap();
    assert!(r.final_train_loss.is_finite());
    assert!(r.diverged.is_none());
    let text = std::fs::read_to_string(r.run_dir.join("record.json")).unwrap();
    let back: RunRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(back, r);
    for f in ["config.json", "train.csv", "validation.csv", "final.json", "analysis.json", "teacher.json"] {
        assert!(r.run_dir.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(r.run_dir.join("train.csv")).unwrap();
    assert!(csv.starts_with("step,loss\n"));
}

#[test]
fn replay_reproduces_traces() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let r = run_experiment(&smoke(), a.path()).unwrap();
    let again = replay(&r, b.path()).unwrap();
    assert_eq!(r.traces, again.traces);
    assert_eq!(r.final_train_loss, again.final_train_loss);
    assert_eq!(r.analysis, again.analysis);
}

#[test]
fn run_dir_depends_on_config() {
    let root = std::path::Path::new("r");
    let c = smoke();
    let mut d = c.clone();
    d.seed += 1;
    assert_eq!(run_dir(&c, root).unwrap(), run_dir(&c.clone(), root).unwrap());
    assert_ne!(run_dir(&c, root).unwrap(), run_dir(&d, root).unwrap());
}

#[test]
fn load_or_run_reuses_records() {
    let root = tempfile::tempdir().unwrap();
    let first = load_or_run(&smoke(), root.path()).unwrap();
    let second = load_or_run(&smoke(), root.path()).unwrap();
    assert_eq!(first.started_unix, second.started_unix);
    assert_eq!(first.runtime_s, second.runtime_s);
}

#[test]
fn config_json_defaults_and_validation() {
    let c = ExperimentConfig::from_json(r#"{"name":"x","task":{"kind":"teacher_student","d":2},"arch":{"kind":"gated","n":4,"m":4},"iterations":5}"#).unwrap();
    assert_eq!(c.train.iterations, 5);
    assert_eq!(c.train.batch, TrainConfig::default().batch);
    assert!(c.analysis.enabled);
    assert!(ExperimentConfig::from_json(r#"{"name":"a/b","task":{"kind":"teacher_student","d":2},"arch":{"kind":"gated","n":4,"m":4}}"#).is_err());
    for p in PRESETS {
        let c = preset(p).unwrap();
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
    assert!(preset("nope").is_err());
}

#[test]
fn single_value_sweep_gives_single_row() {
    let root = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        axis: SweepAxis::Hidden,
        values: vec![json!(5)],
        repeats: 1,
        mode: SweepMode::Train,
        workers: 1,
        base: smoke(),
    };
    let t = run_sweep(&spec, root.path()).unwrap();
    assert_eq!(t.rows.len(), 1);
    let csv = t.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SWEEP_HEADER));
    assert!(lines.next().unwrap().starts_with("5,0,"));
    assert_eq!(lines.next(), None);
}

#[test]
fn sweep_rows_are_ordered_by_value_then_seed() {
    let root = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        axis: SweepAxis::GatedOutputs,
        values: vec![json!(2), json!(3)],
        repeats: 2,
        mode: SweepMode::Train,
        workers: 3,
        base: smoke(),
    };
    let t = run_sweep(&spec, root.path()).unwrap();
    let keys: Vec<(String, u64)> = t.rows.iter().map(|r| (r.axis.clone(), r.seed)).collect();
    assert_eq!(keys, vec![("2".into(), 0), ("2".into(), 1), ("3".into(), 0), ("3".into(), 1)]);
}

#[test]
fn sweep_rejects_empty_and_mismatched_axes() {
    let mut spec = SweepSpec {
        axis: SweepAxis::Hidden,
        values: vec![],
        repeats: 1,
        mode: SweepMode::Train,
        workers: 1,
        base: smoke(),
    };
    let root = tempfile::tempdir().unwrap();
    assert!(run_sweep(&spec, root.path()).is_err());
    spec.values = vec![json!(3)];
    spec.repeats = 0;
    assert!(run_sweep(&spec, root.path()).is_err());
    assert!(apply_axis(&smoke().arch, SweepAxis::Layers, &json!(2)).is_err());
    let a = apply_axis(&smoke().arch, SweepAxis::Arch, &json!({"kind": "gru", "hidden": 4, "layers": 1})).unwrap();
    assert_eq!(a.name(), "gru");
}

#[test]
fn construct_sweep_is_exact_from_the_compact_count() {
    let mut base = smoke();
    base.task = TaskSpec::TeacherStudent(crate::tasks::TeacherStudentSpec::new(3, 7));
    base.train.seq_len = 16;
    let spec = SweepSpec {
        axis: SweepAxis::Hidden,
        values: (1..=14).map(|n| json!(n)).collect(),
        repeats: 1,
        mode: SweepMode::Construct,
        workers: 1,
        base,
    };
    let t = run_sweep(&spec, std::path::Path::new("unused")).unwrap();
    let threshold = compact_hidden(3);
    for (n, row) in (1..=14).zip(&t.rows) {
        if n >= threshold {
            assert!(row.final_train_loss < 1e-20, "n = {n}: {}", row.final_train_loss);
            assert_eq!(row.exact, Some(true));
        } else {
            assert!(row.final_train_loss > 1e-6, "n = {n}: {}", row.final_train_loss);
            assert_eq!(row.exact, Some(false));
        }
    }
}

#[test]
fn report_requires_input_and_renders_constructions() {
    assert!(report(&[]).is_err());
    let p = crate::models::AttentionParams::new(crate::numerics::Matrix::identity(2), crate::numerics::Matrix::identity(2), crate::numerics::Matrix::identity(2)).unwrap();
    let src = crate::models::Model::Attention(p.clone());
    let dst = crate::models::Model::Gated(crate::compiler::compile_full(&p));
    let c = crate::compiler::verify_equivalence(&src, &dst, 2, 8, 2, 0).unwrap();
    let text = serde_json::to_string(&c).unwrap();
    let input: ReportInput = serde_json::from_str(&text).unwrap();
    assert!(matches!(input, ReportInput::Construction(_)));
    let s = report(&[input]).unwrap();
    assert_eq!(s.constructions.len(), 1);
    assert!(s.markdown.contains("| attention | gated | 6 | 2 | 8 | 0.000e0 | 0.000e0 |"), "{}", s.markdown);
}

#[test]
fn report_splits_runs_into_blocks() {
    let root = tempfile::tempdir().unwrap();
    let ts = run_experiment(&smoke(), root.path()).unwrap();
    let mut icl = smoke();
    icl.name = "icl-tiny".into();
    icl.task = TaskSpec::IclRegression(Default::default());
    icl.train.seq_len = 13;
    icl.arch = crate::models::ArchSpec::Gated { n: 6, m: 6, augmented: true };
    icl.eval.baseline_tasks = 256;
    let r = run_experiment(&icl, root.path()).unwrap();
    assert!(r.delta_loss.is_some());
    let text = serde_json::to_string(&r).unwrap();
    let inputs = vec![ReportInput::Run(Box::new(ts)), serde_json::from_str(&text).unwrap()];
    let s = report(&inputs).unwrap();
    assert_eq!(s.metrics.len(), 1);
    assert_eq!(s.coefficients.len(), 1);
    assert_eq!(s.coefficients[0].coefficients.len(), 9);
    assert!(s.markdown.contains("x1^2 y1"));
}

#[test]
fn replicates_stop_at_majority() {
    let root = tempfile::tempdir().unwrap();
    let (ok, runs) = run_replicates(&smoke(), 3, root.path(), &|_| true).unwrap();
    assert!(ok);
    assert_eq!(runs.len(), 2);
    let (ok, runs) = run_replicates(&smoke(), 3, root.path(), &|_| false).unwrap();
    assert!(!ok);
    assert_eq!(runs.len(), 2);
}
