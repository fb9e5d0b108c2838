use serde::{Deserialize, Serialize};

use super::{
    ActivationMode, DenseGatedRnnParams, Gate, GatedRnnParams, GruLayer, GruParams, LruLayer, LruParams,
    LruVariant, LstmLayer, LstmParams, Model, Recurrence, SideGatedRnnParams,
};
use crate::numerics::{sample_normal, CMatrix, Matrix, Rng};

pub const LAMBDA_MIN: f64 = 0.3;
pub const LAMBDA_MAX: f64 = 0.999;
/// Largest initial LRU phase.
pub const MAX_PHASE: f64 = std::f64::consts::PI / 10.0;

/// Architecture and sizes of a trainable model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchSpec {
    Gated {
        n: usize,
        m: usize,
        #[serde(default = "yes")]
        augmented: bool,
    },
    SideGated {
        n: usize,
        #[serde(default = "yes")]
        augmented: bool,
    },
    DenseGated {
        n: usize,
        m: usize,
        #[serde(default = "yes")]
        augmented: bool,
    },
    Lstm {
        hidden: usize,
        layers: usize,
    },
    Gru {
        hidden: usize,
        layers: usize,
    },
    Lru {
        hidden: usize,
        layers: usize,
        variant: LruVariant,
    },
}

fn yes() -> bool {
    true
}

impl ArchSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ArchSpec::Gated { .. } => "gated",
            ArchSpec::SideGated { .. } => "side_gated",
            ArchSpec::DenseGated { .. } => "dense_gated",
            ArchSpec::Lstm { .. } => "lstm",
            ArchSpec::Gru { .. } => "gru",
            ArchSpec::Lru { .. } => "lru",
        }
    }

    pub fn augmented(&self) -> bool {
        match self {
            ArchSpec::Gated { augmented, .. }
            | ArchSpec::SideGated { augmented, .. }
            | ArchSpec::DenseGated { augmented, .. } => *augmented,
            _ => false,
        }
    }

    /// Fresh model for `d_data` raw inputs and `d_out` outputs.
    pub fn init(&self, d_data: usize, d_out: usize, rng: &mut Rng) -> Model {
        let d_in = d_data + usize::from(self.augmented());
        match *self {
            ArchSpec::Gated { n, m, augmented } => Model::Gated(GatedRnnParams {
                w_m_in: dense(rng, n, d_in),
                w_x_in: dense(rng, n, d_in),
                recurrence: Recurrence::Log {
                    nu_log: Matrix::row_vector(&nu_log_init(rng, n)),
                },
                w_m_out: dense(rng, m, n),
                w_x_out: dense(rng, m, n),
                d_readout: dense(rng, d_out, m),
                augmented,
            }),
            ArchSpec::SideGated { n, augmented } => Model::SideGated(SideGatedRnnParams {
                w_m_in: dense(rng, n, d_in),
                w_x_in: dense(rng, n, d_in),
                recurrence: Recurrence::Log {
                    nu_log: Matrix::row_vector(&nu_log_init(rng, n)),
                },
                w_side: dense(rng, n, d_in),
                d_readout: dense(rng, d_out, n),
                augmented,
            }),
            ArchSpec::DenseGated { n, m, augmented } => {
                let lambda: Vec<f64> = nu_log_init(rng, n).iter().map(|v| (-v.exp()).exp()).collect();
                Model::DenseGated(DenseGatedRnnParams {
                    w_m_in: dense(rng, n, d_in),
                    w_x_in: dense(rng, n, d_in),
                    a: Matrix::diag(&lambda),
                    w_m_out: dense(rng, m, n),
                    w_x_out: dense(rng, m, n),
                    d_readout: dense(rng, d_out, m),
                    augmented,
                })
            }
            ArchSpec::Lstm { hidden, layers } => Model::Lstm(LstmParams {
                embed: Some(dense(rng, hidden, d_in)),
                layers: (0..layers)
                    .map(|_| LstmLayer {
                        f: gate(rng, hidden, hidden),
                        cand: gate(rng, hidden, hidden),
                        g: gate(rng, hidden, hidden),
                        o: gate(rng, hidden, hidden),
                        pin_f: None,
                        pin_o: None,
                    })
                    .collect(),
                readout: Some(dense(rng, d_out, hidden)),
                mode: ActivationMode::Standard,
            }),
            ArchSpec::Gru { hidden, layers } => Model::Gru(GruParams {
                embed: Some(dense(rng, hidden, d_in)),
                layers: (0..layers)
                    .map(|_| GruLayer {
                        r: gate(rng, hidden, hidden),
                        cand: gate(rng, hidden, hidden),
                        z: gate(rng, hidden, hidden),
                    })
                    .collect(),
                readout: Some(dense(rng, d_out, hidden)),
                mode: ActivationMode::Standard,
            }),
            ArchSpec::Lru { hidden, layers, variant } => Model::Lru(LruParams {
                variant,
                embed: Some(dense(rng, hidden, d_in)),
                layers: (0..layers).map(|_| lru_layer(rng, hidden, hidden, variant)).collect(),
                readout: Some(dense(rng, d_out, hidden)),
                mode: ActivationMode::Standard,
            }),
        }
    }
}

/// Entries drawn from N(0, 1/fan_in).
pub fn dense(rng: &mut Rng, rows: usize, fan_in: usize) -> Matrix {
    if rows == 0 || fan_in == 0 {
        return Matrix::zeros(rows, fan_in);
    }
    sample_normal(rng, rows, fan_in, (1.0 / fan_in as f64).sqrt())
}

/// `ν_log` with λ log-uniform on [LAMBDA_MIN, LAMBDA_MAX].
pub fn nu_log_init(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let lambda = rng.uniform(LAMBDA_MIN.ln(), LAMBDA_MAX.ln()).exp();
            (-lambda.ln()).ln()
        })
        .collect()
}

fn gate(rng: &mut Rng, n: usize, d_in: usize) -> Gate {
    Gate {
        u: dense(rng, n, d_in),
        v: dense(rng, n, n),
        b: Matrix::zeros(1, n),
    }
}

fn lru_layer(rng: &mut Rng, n: usize, k: usize, variant: LruVariant) -> LruLayer {
    let nu = nu_log_init(rng, n);
    let theta: Vec<f64> = (0..n).map(|_| rng.uniform(1e-3, MAX_PHASE).ln()).collect();
    let gamma: Vec<f64> = nu
        .iter()
        .map(|v| {
            let r = (-v.exp()).exp();
            0.5 * (1.0 - r * r).ln()
        })
        .collect();
    let half = |rng: &mut Rng, rows, cols| sample_normal(rng, rows, cols, (0.5 / cols as f64).sqrt());
    let (w_m_in, w_x_in) = if variant == LruVariant::Out {
        (None, None)
    } else {
        (Some(dense(rng, k, k)), Some(dense(rng, k, k)))
    };
    LruLayer {
        nu_log: Matrix::row_vector(&nu),
        theta_log: Matrix::row_vector(&theta),
        gamma_log: Matrix::row_vector(&gamma),
        b: CMatrix {
            re: half(rng, n, k),
            im: half(rng, n, k),
        },
        c: CMatrix {
            re: half(rng, k, n),
            im: half(rng, k, n),
        },
        d: dense(rng, k, k),
        w_m: dense(rng, k, k),
        w_x: dense(rng, k, k),
        w_m_in,
        w_x_in,
    }
}
