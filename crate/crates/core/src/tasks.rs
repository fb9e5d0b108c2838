//! Data generators and analytic baselines.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::models::{AttentionParams, SequenceBatch};
use crate::numerics::{sample_normal, sample_uniform, Matrix, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherStudentSpec {
    pub d: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    #[serde(default = "one")]
    pub input_std: f64,
    /// Defaults to 1/√d.
    #[serde(default)]
    pub teacher_weight_std: Option<f64>,
    #[serde(default)]
    pub teacher_seed: u64,
}

fn default_seq_len() -> usize {
    32
}

fn one() -> f64 {
    1.0
}

impl TeacherStudentSpec {
    pub fn new(d: usize, teacher_seed: u64) -> Self {
        TeacherStudentSpec {
            d,
            seq_len: default_seq_len(),
            input_std: 1.0,
            teacher_weight_std: None,
            teacher_seed,
        }
    }

    pub fn weight_std(&self) -> f64 {
        self.teacher_weight_std.unwrap_or(1.0 / (self.d as f64).sqrt())
    }

    pub fn teacher(&self) -> AttentionParams {
        let mut rng = Rng::new(self.teacher_seed).substream("teacher");
        let s = self.weight_std();
        let w_v = sample_normal(&mut rng, self.d, self.d, s);
        let w_k = sample_normal(&mut rng, self.d, self.d, s);
        let w_q = sample_normal(&mut rng, self.d, self.d, s);
        AttentionParams::new(w_v, w_k, w_q).expect("square blocks")
    }
}

/// Normal inputs labelled by the teacher; every timestep carries loss.
pub fn gen_teacher_student(spec: &TeacherStudentSpec, teacher: &AttentionParams, rng: &mut Rng, batch: usize) -> SequenceBatch {
    let n = batch * spec.seq_len;
    let x = sample_normal(rng, n, spec.d, spec.input_std);
    let b = SequenceBatch::new(batch, spec.seq_len, x.clone(), Matrix::zeros(n, spec.d), vec![1.0; n]).expect("consistent shapes");
    let y = teacher.forward(&b).expect("teacher width matches");
    SequenceBatch { targets: y, ..b }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IclRegressionSpec {
    pub d_x: usize,
    pub d_y: usize,
    /// Number of context pairs; sequences have `t + 1` tokens.
    pub t: usize,
    pub w_star_var: f64,
    pub input_half_width: f64,
}

impl Default for IclRegressionSpec {
    fn default() -> Self {
        IclRegressionSpec {
            d_x: 3,
            d_y: 3,
            t: 12,
            w_star_var: 1.0 / 3.0,
            input_half_width: 3f64.sqrt(),
        }
    }
}

impl IclRegressionSpec {
    pub fn token_width(&self) -> usize {
        self.d_x + self.d_y
    }

    pub fn input_var(&self) -> f64 {
        self.input_half_width.powi(2) / 3.0
    }

    pub fn w_var(&self, split: Split) -> f64 {
        match split {
            Split::Train => self.w_star_var,
            Split::Validation => 2.0 * self.w_star_var,
        }
    }
}

/// Tokens `(x_t, W* x_t)` then the query `(x_{T+1}, 0)`; only the query carries loss.
pub fn gen_icl_regression(spec: &IclRegressionSpec, rng: &mut Rng, batch: usize, split: Split) -> SequenceBatch {
    let steps = spec.t + 1;
    let (dx, dy) = (spec.d_x, spec.d_y);
    let mut inputs = Matrix::zeros(batch * steps, dx + dy);
    let mut targets = Matrix::zeros(batch * steps, dy);
    let mut mask = vec![0.0; batch * steps];
    let a = spec.input_half_width;
    let wstd = spec.w_var(split).sqrt();
    for b in 0..batch {
        let w = if wstd > 0.0 { sample_normal(rng, dy, dx, wstd) } else { Matrix::zeros(dy, dx) };
        let xs = sample_uniform(rng, steps, dx, -a, a);
        for t in 0..steps {
            let r = t * batch + b;
            let y = w.matvec(xs.row(t)).expect("shapes");
            let row = inputs.row_mut(r);
            row[..dx].copy_from_slice(xs.row(t));
            if t < spec.t {
                row[dx..].copy_from_slice(&y);
            } else {
                targets.row_mut(r).copy_from_slice(&y);
                mask[r] = 1.0;
            }
        }
    }
    SequenceBatch::new(batch, steps, inputs, targets, mask).expect("consistent shapes")
}

/// One gradient step from `W = 0`: `ŷ = η Σ_t y_t x_tᵀ x_{T+1}`, one row per sequence.
pub fn gd_baseline_predict(batch: &SequenceBatch, d_x: usize, eta: f64) -> Result<Matrix> {
    let d_y = batch.d_in().checked_sub(d_x).filter(|&v| v > 0);
    let Some(d_y) = d_y else {
        return shape_err("gd_baseline_predict", format!("token width {} leaves no y channels for d_x = {d_x}", batch.d_in()));
    };
    let last = batch.steps - 1;
    let mut out = Matrix::zeros(batch.batch, d_y);
    for b in 0..batch.batch {
        let q = &batch.input(last, b)[..d_x];
        for t in 0..last {
            let tok = batch.input(t, b);
            let dot: f64 = tok[..d_x].iter().zip(q).map(|(a, b)| a * b).sum();
            for (o, y) in out.row_mut(b).iter_mut().zip(&tok[d_x..]) {
                *o += eta * y * dot;
            }
        }
    }
    Ok(out)
}

/// `η* = 1 / (σ_x² (T + d_x − 1/5))`.
pub fn optimal_eta(spec: &IclRegressionSpec) -> f64 {
    1.0 / (spec.input_var() * (spec.t as f64 + spec.d_x as f64 - 0.2))
}

/// Exact expectation of the quantity `gd_baseline_loss` estimates:
/// `½ d_y σ_W² σ_x² E tr((I − ηS)²)` with `S = Σ_t x_t x_tᵀ`.
pub fn gd_expected_loss(spec: &IclRegressionSpec, eta: f64) -> f64 {
    let (d, t, v) = (spec.d_x as f64, spec.t as f64, spec.input_var());
    let m4 = 1.8 * v * v;
    let tr_s = t * d * v;
    let tr_s2 = t * (d * m4 + d * (d - 1.0) * v * v) + t * (t - 1.0) * d * v * v;
    0.5 * spec.d_y as f64 * spec.w_star_var * v * (d - 2.0 * eta * tr_s + eta * eta * tr_s2)
}

/// Monte-Carlo estimate of `½‖y_{T+1} − ŷ_{T+1}‖²` under the training distribution.
pub fn gd_baseline_loss(spec: &IclRegressionSpec, eta: f64, n_mc: usize, rng: &mut Rng) -> Result<f64> {
    gd_baseline_losses(spec, &[eta], n_mc, rng).map(|v| v[0])
}

/// Same tasks scored at several learning rates.
pub fn gd_baseline_losses(spec: &IclRegressionSpec, etas: &[f64], n_mc: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if n_mc == 0 {
        return Err(Error::Invalid("n_mc must be positive".into()));
    }
    let chunk = 4096;
    let mut totals = vec![0.0; etas.len()];
    let mut done = 0;
    while done < n_mc {
        let b = chunk.min(n_mc - done);
        let batch = gen_icl_regression(spec, rng, b, Split::Train);
        let base = gd_baseline_predict(&batch, spec.d_x, 1.0)?;
        let last = batch.steps - 1;
        for s in 0..b {
            let y = batch.targets.row(batch.row_index(last, s));
            for (k, &eta) in etas.iter().enumerate() {
                totals[k] += 0.5 * y.iter().zip(base.row(s)).map(|(y, p)| (y - eta * p).powi(2)).sum::<f64>();
            }
        }
        done += b;
    }
    Ok(totals.into_iter().map(|t| t / n_mc as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssocRecallSpec {
    /// Number of (x, y) pairs; the vocabulary has width 2T.
    pub t: usize,
}

impl Default for AssocRecallSpec {
    fn default() -> Self {
        AssocRecallSpec { t: 8 }
    }
}

impl AssocRecallSpec {
    pub fn vocab(&self) -> usize {
        2 * self.t
    }
}

/// Pair tokens `x_t + y_t` (x one-hot over `0..T`, y over `T..2T`) followed by
/// the query `x_q`. The label at the query position is the vocabulary index of
/// the paired y; targets hold the same label one-hot.
pub fn gen_assoc_recall(spec: &AssocRecallSpec, rng: &mut Rng, batch: usize) -> SequenceBatch {
    let t = spec.t;
    let v = spec.vocab();
    let steps = t + 1;
    let n = batch * steps;
    let mut inputs = Matrix::zeros(n, v);
    let mut targets = Matrix::zeros(n, v);
    let mut mask = vec![0.0; n];
    let mut labels = vec![None; n];
    for b in 0..batch {
        let mut xs: Vec<usize> = (0..t).collect();
        let mut ys: Vec<usize> = (0..t).collect();
        rng.shuffle(&mut xs);
        rng.shuffle(&mut ys);
        for s in 0..t {
            let row = inputs.row_mut(s * batch + b);
            row[xs[s]] = 1.0;
            row[t + ys[s]] = 1.0;
        }
        let q = rng.below(t);
        let r = t * batch + b;
        inputs.row_mut(r)[xs[q]] = 1.0;
        let class = t + ys[q];
        targets.row_mut(r)[class] = 1.0;
        mask[r] = 1.0;
        labels[r] = Some(class);
    }
    let mut out = SequenceBatch::new(batch, steps, inputs, targets, mask).expect("consistent shapes");
    out.labels = Some(labels);
    out
}

/// Keys and queries read the x block, values the y block.
pub fn recall_attention_solution(spec: &AssocRecallSpec) -> AttentionParams {
    let v = spec.vocab();
    let px = Matrix::from_fn(v, v, |i, j| if i == j && i < spec.t { 1.0 } else { 0.0 });
    let py = Matrix::from_fn(v, v, |i, j| if i == j && i >= spec.t { 1.0 } else { 0.0 });
    AttentionParams::new(py, px.clone(), px).expect("square")
}

/// Fraction of labelled rows whose argmax output equals the label.
pub fn accuracy(outputs: &Matrix, batch: &SequenceBatch) -> Result<f64> {
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::Invalid("batch has no class labels".into()))?;
    let (mut hit, mut total) = (0usize, 0usize);
    for (r, lab) in labels.iter().enumerate() {
        if let Some(c) = lab {
            let row = outputs.row(r);
            let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
            // A tie with the correct class is not a hit.
            let unique = row.iter().filter(|&&v| v == row[best]).count() == 1;
            hit += usize::from(best == *c && unique);
            total += 1;
        }
    }
    Ok(hit as f64 / total.max(1) as f64)
}

/// Task selection as stored in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    TeacherStudent(TeacherStudentSpec),
    IclRegression(IclRegressionSpec),
    AssocRecall(AssocRecallSpec),
}

/// A task with any fixed state (the teacher) materialized.
pub struct TaskSampler {
    pub spec: TaskSpec,
    teacher: Option<AttentionParams>,
}

impl TaskSampler {
    pub fn new(spec: TaskSpec) -> Self {
        let teacher = match &spec {
            TaskSpec::TeacherStudent(s) => Some(s.teacher()),
            _ => None,
        };
        TaskSampler { spec, teacher }
    }

    pub fn teacher(&self) -> Option<&AttentionParams> {
        self.teacher.as_ref()
    }

    pub fn d_data(&self) -> usize {
        match &self.spec {
            TaskSpec::TeacherStudent(s) => s.d,
            TaskSpec::IclRegression(s) => s.token_width(),
            TaskSpec::AssocRecall(s) => s.vocab(),
        }
    }

    pub fn d_out(&self) -> usize {
        match &self.spec {
            TaskSpec::TeacherStudent(s) => s.d,
            TaskSpec::IclRegression(s) => s.d_y,
            TaskSpec::AssocRecall(s) => s.vocab(),
        }
    }

    pub fn sample(&self, rng: &mut Rng, batch: usize, split: Split) -> SequenceBatch {
        match &self.spec {
            TaskSpec::TeacherStudent(s) => gen_teacher_student(s, self.teacher.as_ref().expect("teacher"), rng, batch),
            TaskSpec::IclRegression(s) => gen_icl_regression(s, rng, batch, split),
            TaskSpec::AssocRecall(s) => gen_assoc_recall(s, rng, batch),
        }
    }
}
