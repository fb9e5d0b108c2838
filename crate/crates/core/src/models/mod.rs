//! Forward passes for every architecture plus checkpoints and fingerprints.

mod attention;
mod batch;
mod checkpoint;
mod fingerprint;
mod gated;
mod gru;
mod init;
mod lru;
mod lstm;

use serde::{Deserialize, Serialize};

pub use attention::{AttentionParams, DecayedAttentionParams};
pub use batch::SequenceBatch;
pub use checkpoint::{load_checkpoint, save_checkpoint, to_json_17, Checkpoint, Metadata};
pub use fingerprint::instantaneous_fingerprint;
pub use gated::{DenseGatedRnnParams, GatedRnnParams, Recurrence, SideGatedRnnParams};
pub use gru::{GruLayer, GruParams};
pub use init::{dense, nu_log_init, ArchSpec, LAMBDA_MAX, LAMBDA_MIN};
pub use lru::{LruLayer, LruParams, LruVariant};
pub use lstm::{Gate, LstmLayer, LstmParams, Pins};

use crate::error::Result;
use crate::grad::{Graph, Var};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    #[default]
    Standard,
    /// The designated nonlinearities become the identity.
    Linearized,
}

/// Graph under construction plus the parameters bound into it, in visit order.
pub struct Binder {
    pub graph: Graph,
    trainable: bool,
    params: Vec<Var>,
}

impl Binder {
    pub fn new(trainable: bool) -> Self {
        Binder {
            graph: Graph::new(),
            trainable,
            params: Vec::new(),
        }
    }

    pub fn bind(&mut self, m: &Matrix) -> Var {
        let v = if self.trainable {
            self.graph.param(m.clone())
        } else {
            self.graph.constant(m.clone())
        };
        self.params.push(v);
        v
    }

    pub fn params(&self) -> &[Var] {
        &self.params
    }
}

pub struct Built {
    pub output: Var,
    pub hidden: Option<Var>,
}

/// A trainable sequence model expressed on the tape.
pub trait Network {
    /// Visits parameters in a fixed order; the flag marks decay-exempt tensors.
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, bool));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, bool));
    /// Records the forward pass on `b`. `x` is time-major with `steps` timesteps.
    fn build(&self, b: &mut Binder, x: Var, steps: usize) -> Result<Built>;

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m, _| n += m.len());
        n
    }
}

/// Binds every parameter of `net` in visit order.
pub fn bind_params(net: &(impl Network + ?Sized), b: &mut Binder) -> Vec<Var> {
    let mut vars = Vec::new();
    net.visit(&mut |_, m, _| vars.push(b.bind(m)));
    vars
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub output: Matrix,
    pub hidden: Option<Matrix>,
}

/// Runs `net` on `batch` without recording gradients.
pub fn run_network(net: &(impl Network + ?Sized), batch: &SequenceBatch) -> Result<Forward> {
    let mut b = Binder::new(false);
    let x = b.graph.constant(batch.inputs.clone());
    let built = net.build(&mut b, x, batch.steps)?;
    Ok(Forward {
        output: b.graph.value(built.output).clone(),
        hidden: built.hidden.map(|h| b.graph.value(h).clone()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", content = "params", rename_all = "snake_case")]
pub enum Model {
    Attention(AttentionParams),
    DecayedAttention(DecayedAttentionParams),
    Gated(GatedRnnParams),
    SideGated(SideGatedRnnParams),
    DenseGated(DenseGatedRnnParams),
    Lstm(LstmParams),
    Gru(GruParams),
    Lru(LruParams),
}

impl Model {
    pub fn arch(&self) -> &'static str {
        match self {
            Model::Attention(_) => "attention",
            Model::DecayedAttention(_) => "decayed_attention",
            Model::Gated(_) => "gated",
            Model::SideGated(_) => "side_gated",
            Model::DenseGated(_) => "dense_gated",
            Model::Lstm(_) => "lstm",
            Model::Gru(_) => "gru",
            Model::Lru(_) => "lru",
        }
    }

    pub fn activation_mode(&self) -> ActivationMode {
        match self {
            Model::Lstm(p) => p.mode,
            Model::Gru(p) => p.mode,
            Model::Lru(p) => p.mode,
            _ => ActivationMode::Linearized,
        }
    }

    /// Width of the inputs the model consumes, including any constant column.
    pub fn d_in(&self) -> usize {
        match self {
            Model::Attention(p) => p.d(),
            Model::DecayedAttention(p) => p.d(),
            Model::Gated(p) => p.d_in(),
            Model::SideGated(p) => p.d_in(),
            Model::DenseGated(p) => p.d_in(),
            Model::Lstm(p) => p.d_in(),
            Model::Gru(p) => p.d_in(),
            Model::Lru(p) => p.d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Model::Attention(p) => p.d(),
            Model::DecayedAttention(p) => p.d(),
            Model::Gated(p) => p.d_out(),
            Model::SideGated(p) => p.d_out(),
            Model::DenseGated(p) => p.d_out(),
            Model::Lstm(p) => p.d_out(),
            Model::Gru(p) => p.d_out(),
            Model::Lru(p) => p.d_out(),
        }
    }

    /// Whether inputs must carry a trailing constant 1.
    pub fn augmented(&self) -> bool {
        match self {
            Model::Gated(p) => p.augmented,
            Model::SideGated(p) => p.augmented,
            Model::DenseGated(p) => p.augmented,
            _ => false,
        }
    }

    pub fn network(&self) -> Option<&dyn Network> {
        match self {
            Model::Gated(p) => Some(p),
            Model::SideGated(p) => Some(p),
            Model::DenseGated(p) => Some(p),
            Model::Lstm(p) => Some(p),
            Model::Gru(p) => Some(p),
            Model::Lru(p) => Some(p),
            Model::Attention(_) | Model::DecayedAttention(_) => None,
        }
    }

    pub fn network_mut(&mut self) -> Option<&mut dyn Network> {
        match self {
            Model::Gated(p) => Some(p),
            Model::SideGated(p) => Some(p),
            Model::DenseGated(p) => Some(p),
            Model::Lstm(p) => Some(p),
            Model::Gru(p) => Some(p),
            Model::Lru(p) => Some(p),
            Model::Attention(_) | Model::DecayedAttention(_) => None,
        }
    }

    /// Forward on raw (unaugmented) inputs; the constant column is appended
    /// here when the model expects it.
    pub fn forward(&self, batch: &SequenceBatch) -> Result<Forward> {
        let owned;
        let batch = if self.augmented() {
            owned = batch.augmented();
            &owned
        } else {
            batch
        };
        match self {
            Model::Attention(p) => Ok(Forward {
                output: p.forward(batch)?,
                hidden: None,
            }),
            Model::DecayedAttention(p) => Ok(Forward {
                output: p.forward(batch)?,
                hidden: None,
            }),
            _ => run_network(self.network().expect("recurrent model"), batch),
        }
    }

    /// Input width as seen by callers, without the constant column.
    pub fn d_data(&self) -> usize {
        self.d_in() - usize::from(self.augmented())
    }

    pub fn param_count(&self) -> usize {
        match self {
            Model::Attention(p) => 3 * p.d() * p.d(),
            Model::DecayedAttention(p) => 3 * p.d() * p.d() + 4 * p.d(),
            _ => self.network().map_or(0, |n| n.param_count()),
        }
    }

    /// Named tensor shapes, in visit order.
    pub fn shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        match self {
            Model::Attention(p) => {
                for (k, m) in [("w_v", &p.w_v), ("w_k", &p.w_k), ("w_q", &p.w_q)] {
                    out.push((k.to_string(), m.shape()));
                }
            }
            Model::DecayedAttention(p) => {
                for (k, m) in [("w_v", &p.w_v), ("w_k", &p.w_k), ("w_q", &p.w_q)] {
                    out.push((k.to_string(), m.shape()));
                }
                for (k, v) in [("b_v", &p.b_v), ("b_k", &p.b_k), ("b_q", &p.b_q), ("gamma", &p.gamma)] {
                    out.push((k.to_string(), (1, v.len())));
                }
            }
            _ => {
                if let Some(n) = self.network() {
                    n.visit(&mut |k, m, _| out.push((k.to_string(), m.shape())));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests;
