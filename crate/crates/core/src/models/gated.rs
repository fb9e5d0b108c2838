use serde::{Deserialize, Serialize};

use super::{bind_params, Binder, Built, Network};
use crate::error::{shape_err, Result};
use crate::grad::Var;
use crate::numerics::Matrix;

/// Diagonal recurrence weights, either trainable through `λ = exp(−exp ν)`
/// or fixed values that may sit exactly on 0 or 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recurrence {
    Log { nu_log: Matrix },
    Clamped { lambda: Vec<f64> },
}

impl Recurrence {
    pub fn from_lambda_log(lambda: &[f64]) -> Self {
        let nu: Vec<f64> = lambda.iter().map(|&l| (-l.ln()).ln()).collect();
        Recurrence::Log {
            nu_log: Matrix::row_vector(&nu),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Recurrence::Log { nu_log } => nu_log.cols(),
            Recurrence::Clamped { lambda } => lambda.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lambda(&self) -> Vec<f64> {
        match self {
            Recurrence::Log { nu_log } => nu_log.data().iter().map(|&v| (-v.exp()).exp()).collect(),
            Recurrence::Clamped { lambda } => lambda.clone(),
        }
    }

    pub fn select(&self, idx: &[usize]) -> Recurrence {
        match self {
            Recurrence::Log { nu_log } => Recurrence::Log {
                nu_log: nu_log.select_cols(idx),
            },
            Recurrence::Clamped { lambda } => Recurrence::Clamped {
                lambda: idx.iter().map(|&i| lambda[i]).collect(),
            },
        }
    }

    fn bound(&self, b: &mut Binder, vars: &mut impl Iterator<Item = Var>) -> Var {
        match self {
            Recurrence::Log { .. } => {
                let nu = vars.next().expect("ν bound");
                let e = b.graph.exp(nu);
                let ne = b.graph.neg(e);
                b.graph.exp(ne)
            }
            Recurrence::Clamped { lambda } => b.graph.constant(Matrix::row_vector(lambda)),
        }
    }
}

/// `h_t = λ ⊙ h_{t−1} + (W_m^in x_t) ⊙ (W_x^in x_t)`,
/// `y_t = D ((W_m^out h_t) ⊙ (W_x^out h_t))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedRnnParams {
    pub w_m_in: Matrix,
    pub w_x_in: Matrix,
    pub recurrence: Recurrence,
    pub w_m_out: Matrix,
    pub w_x_out: Matrix,
    pub d_readout: Matrix,
    /// Inputs carry a trailing constant 1.
    #[serde(default)]
    pub augmented: bool,
}

fn check(op: &'static str, cond: bool, detail: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        shape_err(op, detail())
    }
}

impl GatedRnnParams {
    pub fn n(&self) -> usize {
        self.w_m_in.rows()
    }

    pub fn m(&self) -> usize {
        self.w_m_out.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w_m_in.cols()
    }

    pub fn d_out(&self) -> usize {
        self.d_readout.rows()
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.recurrence.lambda()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, d) = (self.n(), self.m(), self.d_in());
        check("GatedRnnParams", self.w_x_in.shape() == (n, d), || format!("w_x_in {:?} != {n}×{d}", self.w_x_in.shape()))?;
        check("GatedRnnParams", self.recurrence.len() == n, || format!("{} recurrence weights for {n} neurons", self.recurrence.len()))?;
        check("GatedRnnParams", self.w_m_out.cols() == n, || format!("w_m_out has {} columns, expected {n}", self.w_m_out.cols()))?;
        check("GatedRnnParams", self.w_x_out.shape() == (m, n), || format!("w_x_out {:?} != {m}×{n}", self.w_x_out.shape()))?;
        check("GatedRnnParams", self.d_readout.cols() == m, || format!("readout has {} columns, expected {m}", self.d_readout.cols()))
    }
}

impl Network for GatedRnnParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        f("w_m_in", &self.w_m_in, false);
        f("w_x_in", &self.w_x_in, false);
        if let Recurrence::Log { nu_log } = &self.recurrence {
            f("nu_log", nu_log, true);
        }
        f("w_m_out", &self.w_m_out, false);
        f("w_x_out", &self.w_x_out, false);
        f("d_readout", &self.d_readout, false);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        f("w_m_in", &mut self.w_m_in, false);
        f("w_x_in", &mut self.w_x_in, false);
        if let Recurrence::Log { nu_log } = &mut self.recurrence {
            f("nu_log", nu_log, true);
        }
        f("w_m_out", &mut self.w_m_out, false);
        f("w_x_out", &mut self.w_x_out, false);
        f("d_readout", &mut self.d_readout, false);
    }

    fn build(&self, b: &mut Binder, x: Var, steps: usize) -> Result<Built> {
        self.validate()?;
        check("gated_rnn_forward", b.graph.value(x).cols() == self.d_in(), || {
            format!("input width {} != {}", b.graph.value(x).cols(), self.d_in())
        })?;
        let mut vars = bind_params(self, b).into_iter();
        let (wm, wx) = (vars.next().unwrap(), vars.next().unwrap());
        let g = &mut b.graph;
        let a = g.matmul_t(x, wm);
        let c = g.matmul_t(x, wx);
        let u = g.mul(a, c);
        let lam = self.recurrence.bound(b, &mut vars);
        let h = b.graph.diag_scan(u, lam, steps)?;
        let (wmo, wxo, d) = (vars.next().unwrap(), vars.next().unwrap(), vars.next().unwrap());
        let g = &mut b.graph;
        let p = g.matmul_t(h, wmo);
        let q = g.matmul_t(h, wxo);
        let go = g.mul(p, q);
        let y = g.matmul_t(go, d);
        Ok(Built {
            output: y,
            hidden: Some(h),
        })
    }
}

/// Output gate replaced by `(W^side x_t) ⊙ h_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideGatedRnnParams {
    pub w_m_in: Matrix,
    pub w_x_in: Matrix,
    pub recurrence: Recurrence,
    pub w_side: Matrix,
    pub d_readout: Matrix,
    #[serde(default)]
    pub augmented: bool,
}

impl SideGatedRnnParams {
    pub fn n(&self) -> usize {
        self.w_m_in.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w_m_in.cols()
    }

    pub fn d_out(&self) -> usize {
        self.d_readout.rows()
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.recurrence.lambda()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = (self.n(), self.d_in());
        check("SideGatedRnnParams", self.w_x_in.shape() == (n, d), || format!("w_x_in {:?} != {n}×{d}", self.w_x_in.shape()))?;
        check("SideGatedRnnParams", self.recurrence.len() == n, || format!("{} recurrence weights for {n} neurons", self.recurrence.len()))?;
        check("SideGatedRnnParams", self.w_side.shape() == (n, d), || format!("w_side {:?} != {n}×{d}", self.w_side.shape()))?;
        check("SideGatedRnnParams", self.d_readout.cols() == n, || format!("readout has {} columns, expected {n}", self.d_readout.cols()))
    }
}

impl Network for SideGatedRnnParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        f("w_m_in", &self.w_m_in, false);
        f("w_x_in", &self.w_x_in, false);
        if let Recurrence::Log { nu_log } = &self.recurrence {
            f("nu_log", nu_log, true);
        }
        f("w_side", &self.w_side, false);
        f("d_readout", &self.d_readout, false);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        f("w_m_in", &mut self.w_m_in, false);
        f("w_x_in", &mut self.w_x_in, false);
        if let Recurrence::Log { nu_log } = &mut self.recurrence {
            f("nu_log", nu_log, true);
        }
        f("w_side", &mut self.w_side, false);
        f("d_readout", &mut self.d_readout, false);
    }

    fn build(&self, b: &mut Binder, x: Var, steps: usize) -> Result<Built> {
        self.validate()?;
        check("side_gated_rnn_forward", b.graph.value(x).cols() == self.d_in(), || {
            format!("input width {} != {}", b.graph.value(x).cols(), self.d_in())
        })?;
        let mut vars = bind_params(self, b).into_iter();
        let (wm, wx) = (vars.next().unwrap(), vars.next().unwrap());
        let g = &mut b.graph;
        let a = g.matmul_t(x, wm);
        let c = g.matmul_t(x, wx);
        let u = g.mul(a, c);
        let lam = self.recurrence.bound(b, &mut vars);
        let h = b.graph.diag_scan(u, lam, steps)?;
        let (ws, d) = (vars.next().unwrap(), vars.next().unwrap());
        let g = &mut b.graph;
        let s = g.matmul_t(x, ws);
        let gated = g.mul(s, h);
        let y = g.matmul_t(gated, d);
        Ok(Built {
            output: y,
            hidden: Some(h),
        })
    }
}

/// Gated RNN with a dense recurrence, `h_t = A h_{t−1} + g^in(x_t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseGatedRnnParams {
    pub w_m_in: Matrix,
    pub w_x_in: Matrix,
    pub a: Matrix,
    pub w_m_out: Matrix,
    pub w_x_out: Matrix,
    pub d_readout: Matrix,
    #[serde(default)]
    pub augmented: bool,
}

impl DenseGatedRnnParams {
    pub fn n(&self) -> usize {
        self.w_m_in.rows()
    }

    pub fn m(&self) -> usize {
        self.w_m_out.rows()
    }

    pub fn d_in(&self) -> usize {
        self.w_m_in.cols()
    }

    pub fn d_out(&self) -> usize {
        self.d_readout.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m, d) = (self.n(), self.m(), self.d_in());
        check("DenseGatedRnnParams", self.w_x_in.shape() == (n, d), || format!("w_x_in {:?} != {n}×{d}", self.w_x_in.shape()))?;
        check("DenseGatedRnnParams", self.a.shape() == (n, n), || format!("A {:?} != {n}×{n}", self.a.shape()))?;
        check("DenseGatedRnnParams", self.w_m_out.cols() == n, || format!("w_m_out has {} columns, expected {n}", self.w_m_out.cols()))?;
        check("DenseGatedRnnParams", self.w_x_out.shape() == (m, n), || format!("w_x_out {:?} != {m}×{n}", self.w_x_out.shape()))?;
        check("DenseGatedRnnParams", self.d_readout.cols() == m, || format!("readout has {} columns, expected {m}", self.d_readout.cols()))
    }
}

impl Network for DenseGatedRnnParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        f("w_m_in", &self.w_m_in, false);
        f("w_x_in", &self.w_x_in, false);
        f("a", &self.a, true);
        f("w_m_out", &self.w_m_out, false);
        f("w_x_out", &self.w_x_out, false);
        f("d_readout", &self.d_readout, false);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        f("w_m_in", &mut self.w_m_in, false);
        f("w_x_in", &mut self.w_x_in, false);
        f("a", &mut self.a, true);
        f("w_m_out", &mut self.w_m_out, false);
        f("w_x_out", &mut self.w_x_out, false);
        f("d_readout", &mut self.d_readout, false);
    }

    fn build(&self, b: &mut Binder, x: Var, steps: usize) -> Result<Built> {
        self.validate()?;
        check("dense_gated_rnn_forward", b.graph.value(x).cols() == self.d_in(), || {
            format!("input width {} != {}", b.graph.value(x).cols(), self.d_in())
        })?;
        let v: Vec<Var> = bind_params(self, b);
        let g = &mut b.graph;
        let p = g.matmul_t(x, v[0]);
        let q = g.matmul_t(x, v[1]);
        let u = g.mul(p, q);
        let batch = g.value(x).rows() / steps;
        let mut states = Vec::with_capacity(steps);
        let mut h = g.rows(u, 0, batch);
        states.push(h);
        for t in 1..steps {
            let ut = g.rows(u, t * batch, batch);
            let rec = g.matmul_t(h, v[2]);
            h = g.add(rec, ut);
            crate::grad::guard_state(g.value(h), t)?;
            states.push(h);
        }
        let h = g.vstack(&states);
        let p = g.matmul_t(h, v[3]);
        let q = g.matmul_t(h, v[4]);
        let go = g.mul(p, q);
        let y = g.matmul_t(go, v[5]);
        Ok(Built {
            output: y,
            hidden: Some(h),
        })
    }
}
