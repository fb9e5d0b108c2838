//! Loss evaluation, gradients and the one-pass training loop.

use serde::{Deserialize, Serialize};

use super::{Graph, OptimConfig, OptimState, Var};
use crate::error::{Error, Result};
use crate::models::{Binder, Model, SequenceBatch};
use crate::numerics::{Matrix, Rng};

/// Mean ½‖y − ŷ‖² over masked rows, or mean cross-entropy when the batch
/// carries class labels.
pub fn batch_loss(g: &mut Graph, output: Var, batch: &SequenceBatch) -> Var {
    match &batch.labels {
        Some(labels) => g.softmax_xent(output, labels.clone()),
        None => g.masked_mse(output, batch.targets.clone(), batch.mask.clone()),
    }
}

fn prepared(model: &Model, batch: &SequenceBatch) -> SequenceBatch {
    if model.augmented() {
        batch.augmented()
    } else {
        batch.clone()
    }
}

fn record(model: &Model, batch: &SequenceBatch, trainable: bool) -> Result<(Binder, Var)> {
    let net = model
        .network()
        .ok_or_else(|| Error::Invalid(format!("{} is not trainable", model.arch())))?;
    let batch = prepared(model, batch);
    let mut b = Binder::new(trainable);
    let x = b.graph.constant(batch.inputs.clone());
    let built = net.build(&mut b, x, batch.steps)?;
    let loss = batch_loss(&mut b.graph, built.output, &batch);
    Ok((b, loss))
}

pub fn loss_value(model: &Model, batch: &SequenceBatch) -> Result<f64> {
    let (b, loss) = record(model, batch, false)?;
    Ok(b.graph.scalar(loss))
}

/// Loss and one gradient per parameter tensor, in visit order.
pub fn value_and_grad(model: &Model, batch: &SequenceBatch) -> Result<(f64, Vec<Matrix>)> {
    let (b, loss) = record(model, batch, true)?;
    let grads = b.graph.backward(loss)?;
    let out = b
        .params()
        .iter()
        .map(|&v| grads.get_or_zeros(v, b.graph.value(v).shape()))
        .collect();
    Ok((b.graph.scalar(loss), out))
}

/// Applies `f` to the `k`-th parameter tensor.
pub fn with_param_mut(model: &mut Model, k: usize, f: &mut dyn FnMut(&mut Matrix)) {
    let net = model.network_mut().expect("trainable model");
    let mut idx = 0;
    net.visit_mut(&mut |_, m, _| {
        if idx == k {
            f(m);
        }
        idx += 1;
    });
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Compares sampled gradient entries against central differences.
/// Relative error uses `max(|fd|, |analytic|, floor)` as denominator.
pub fn gradient_check(model: &Model, batch: &SequenceBatch, per_tensor: usize, h: f64, floor: f64, rng: &mut Rng) -> Result<GradCheck> {
    let (_, grads) = value_and_grad(model, batch)?;
    let mut names = Vec::new();
    model.network().expect("trainable").visit(&mut |n, _, _| names.push(n.to_string()));
    let mut report = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    for (k, g) in grads.iter().enumerate() {
        if g.is_empty() {
            continue;
        }
        let picks: Vec<usize> = if g.len() <= per_tensor {
            (0..g.len()).collect()
        } else {
            (0..per_tensor).map(|_| rng.below(g.len())).collect()
        };
        for i in picks {
            let eval = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                with_param_mut(&mut m, k, &mut |t| t.data_mut()[i] += delta);
                loss_value(&m, batch)
            };
            let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
            let an = g.data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{i}]: fd {fd:e} vs analytic {an:e}", names[k]);
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    /// Loss-trace cadence in iterations.
    pub log_every: usize,
    /// Validation cadence; 0 picks 1/50 of the run.
    #[serde(default)]
    pub eval_every: usize,
    /// Checkpoint cadence; 0 disables intermediate checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            batch: 64,
            seq_len: 32,
            lr0: 1e-3,
            lr_min: 1e-6,
            weight_decay: 1e-4,
            log_every: 100,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn eval_cadence(&self) -> usize {
        if self.eval_every > 0 {
            self.eval_every
        } else {
            (self.iterations / 50).max(1)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    /// (iteration, training-batch loss)
    pub train: Vec<(usize, f64)>,
    /// (iteration, validation loss)
    pub validation: Vec<(usize, f64)>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub traces: Traces,
    /// Set when training stopped on a non-finite loss or state overflow;
    /// `model` is then the last parameters that produced a finite loss.
    pub diverged: Option<Error>,
}

/// Callbacks invoked during training.
pub struct Hooks<'a> {
    pub validate: Option<&'a mut dyn FnMut(&Model) -> Result<f64>>,
    pub checkpoint: Option<&'a mut dyn FnMut(usize, &Model) -> Result<()>>,
}

impl Default for Hooks<'_> {
    fn default() -> Self {
        Hooks {
            validate: None,
            checkpoint: None,
        }
    }
}

/// One-pass training: iteration `i` trains on `sample(i)`, a fresh batch.
pub fn train(
    mut model: Model,
    cfg: &TrainConfig,
    sample: &mut dyn FnMut(usize) -> SequenceBatch,
    hooks: Hooks<'_>,
) -> Result<TrainOutcome> {
    let Hooks {
        mut validate,
        mut checkpoint,
    } = hooks;
    let mut opt = OptimState::new(OptimConfig {
        lr0: cfg.lr0,
        lr_min: cfg.lr_min,
        weight_decay: cfg.weight_decay,
        total_steps: cfg.iterations,
        ..OptimConfig::default()
    });
    let mut traces = Traces::default();
    let eval_every = cfg.eval_cadence();
    for it in 0..cfg.iterations {
        let batch = sample(it);
        let (loss, grads) = match value_and_grad(&model, &batch) {
            Ok(v) => v,
            Err(e @ (Error::Overflow { .. } | Error::NonFinite { .. })) => {
                return Ok(TrainOutcome {
                    model,
                    traces,
                    diverged: Some(e),
                })
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Ok(TrainOutcome {
                model,
                traces,
                diverged: Some(Error::Diverged { iteration: it, loss }),
            });
        }
        if it % cfg.log_every.max(1) == 0 {
            traces.train.push((it, loss));
        }
        if let Some(v) = validate.as_deref_mut() {
            if it % eval_every == 0 {
                traces.validation.push((it, v(&model)?));
            }
        }
        if let Some(c) = checkpoint.as_deref_mut() {
            if cfg.checkpoint_every > 0 && it > 0 && it % cfg.checkpoint_every == 0 {
                c(it, &model)?;
            }
        }
        let previous = model.clone();
        let lr = opt.lr();
        opt.begin_step(&grads);
        let mut k = 0;
        model.network_mut().expect("trainable").visit_mut(&mut |_, m, exempt| {
            opt.update(k, m, exempt, &grads[k], lr);
            k += 1;
        });
        if !params_finite(&model) {
            return Ok(TrainOutcome {
                model: previous,
                traces,
                diverged: Some(Error::Diverged { iteration: it, loss }),
            });
        }
    }
    if let Some(v) = validate.as_deref_mut() {
        traces.validation.push((cfg.iterations, v(&model)?));
    }
    Ok(TrainOutcome {
        model,
        traces,
        diverged: None,
    })
}

fn params_finite(model: &Model) -> bool {
    let mut ok = true;
    if let Some(n) = model.network() {
        n.visit(&mut |_, m, _| ok &= m.is_finite());
    }
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ActivationMode, ArchSpec, LruVariant};
    use crate::numerics::sample_normal;

    fn regression_batch(d: usize, d_out: usize, batch: usize, steps: usize, seed: u64) -> SequenceBatch {
        let mut rng = Rng::new(seed);
        let n = batch * steps;
        let x = sample_normal(&mut rng, n, d, 1.0);
        let y = sample_normal(&mut rng, n, d_out, 1.0);
        let mask: Vec<f64> = (0..n).map(|r| if r % 5 == 0 { 0.0 } else { 1.0 }).collect();
        SequenceBatch::new(batch, steps, x, y, mask).unwrap()
    }

    fn check(model: &Model, batch: &SequenceBatch) {
        let r = gradient_check(model, batch, 6, 1e-5, 1e-4, &mut Rng::new(1)).unwrap();
        assert!(r.max_rel_error <= 1e-6, "{}: {} ({})", model.arch(), r.max_rel_error, r.worst);
        assert!(r.checked > 0);
    }

    #[test]
    fn every_architecture_matches_finite_differences() {
        let specs = [
            ArchSpec::Gated { n: 6, m: 5, augmented: true },
            ArchSpec::SideGated { n: 5, augmented: true },
            ArchSpec::DenseGated { n: 4, m: 4, augmented: true },
            ArchSpec::Lstm { hidden: 4, layers: 2 },
            ArchSpec::Gru { hidden: 4, layers: 2 },
            ArchSpec::Lru { hidden: 4, layers: 2, variant: LruVariant::Out },
            ArchSpec::Lru { hidden: 4, layers: 1, variant: LruVariant::InOut },
            ArchSpec::Lru { hidden: 4, layers: 1, variant: LruVariant::InOutMlp },
        ];
        for (k, spec) in specs.iter().enumerate() {
            let model = spec.init(3, 2, &mut Rng::new(10 + k as u64));
            check(&model, &regression_batch(3, 2, 2, 8, 20 + k as u64));
        }
    }

    #[test]
    fn linearized_models_match_finite_differences() {
        let mut lstm = (ArchSpec::Lstm { hidden: 3, layers: 1 }).init(3, 2, &mut Rng::new(3));
        if let Model::Lstm(p) = &mut lstm {
            p.mode = ActivationMode::Linearized;
            p.layers[0].pin_f = Some(vec![Some(1.0), None, None]);
        }
        check(&lstm, &regression_batch(3, 2, 2, 5, 4));
    }

    #[test]
    fn cross_entropy_gradients() {
        let model = (ArchSpec::SideGated { n: 6, augmented: false }).init(4, 4, &mut Rng::new(5));
        let mut batch = regression_batch(4, 4, 3, 4, 6);
        batch.labels = Some((0..12).map(|r| if r >= 9 { Some(r % 4) } else { None }).collect());
        check(&model, &batch);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let model = (ArchSpec::Gated { n: 4, m: 4, augmented: true }).init(2, 2, &mut Rng::new(7));
        let cfg = TrainConfig {
            iterations: 5,
            batch: 4,
            seq_len: 6,
            lr0: 0.0,
            lr_min: 0.0,
            log_every: 1,
            ..TrainConfig::default()
        };
        let fixed = regression_batch(2, 2, 4, 6, 8);
        let out = train(model.clone(), &cfg, &mut |_| fixed.clone(), Hooks::default()).unwrap();
        assert_eq!(out.model, model);
        let losses: Vec<f64> = out.traces.train.iter().map(|p| p.1).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let run = || {
            let model = (ArchSpec::Gated { n: 4, m: 4, augmented: true }).init(2, 2, &mut Rng::new(9));
            let cfg = TrainConfig {
                iterations: 20,
                batch: 4,
                seq_len: 6,
                log_every: 1,
                ..TrainConfig::default()
            };
            let out = train(model, &cfg, &mut |i| regression_batch(2, 2, 4, 6, 100 + i as u64), Hooks::default()).unwrap();
            out.traces.train
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_reduces_loss_on_fixed_batch() {
        let model = (ArchSpec::Gated { n: 8, m: 8, augmented: true }).init(2, 2, &mut Rng::new(11));
        let fixed = regression_batch(2, 2, 8, 6, 12);
        let before = loss_value(&model, &fixed).unwrap();
        let cfg = TrainConfig {
            iterations: 300,
            batch: 8,
            seq_len: 6,
            lr0: 1e-2,
            lr_min: 1e-3,
            ..TrainConfig::default()
        };
        let out = train(model, &cfg, &mut |_| fixed.clone(), Hooks::default()).unwrap();
        assert!(out.diverged.is_none());
        assert!(loss_value(&out.model, &fixed).unwrap() < 0.8 * before);
    }

    #[test]
    fn divergence_keeps_last_good_parameters() {
        let model = (ArchSpec::DenseGated { n: 3, m: 3, augmented: false }).init(2, 2, &mut Rng::new(13));
        let mut big = model.clone();
        if let Model::DenseGated(p) = &mut big {
            p.a = Matrix::identity(3).scale(50.0);
        }
        let cfg = TrainConfig {
            iterations: 3,
            batch: 2,
            seq_len: 12,
            ..TrainConfig::default()
        };
        let out = train(big.clone(), &cfg, &mut |i| regression_batch(2, 2, 2, 12, i as u64), Hooks::default()).unwrap();
        assert!(matches!(out.diverged, Some(Error::Overflow { .. })));
        assert_eq!(out.model, big);
    }

    #[test]
    fn attention_is_not_trainable() {
        let p = crate::models::AttentionParams::new(Matrix::identity(2), Matrix::identity(2), Matrix::identity(2)).unwrap();
        let batch = regression_batch(2, 2, 1, 2, 1);
        assert!(matches!(value_and_grad(&Model::Attention(p), &batch), Err(Error::Invalid(_))));
    }
}
