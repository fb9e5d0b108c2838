use serde::{Deserialize, Serialize};

use super::{bind_params, ActivationMode, Binder, Built, Network};
use crate::error::{shape_err, Result};
use crate::grad::{guard_state, Graph, Var};
use crate::numerics::Matrix;

/// Input, recurrent and bias weights of one gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub u: Matrix,
    pub v: Matrix,
    pub b: Matrix,
}

impl Gate {
    pub fn zeros(n: usize, d_in: usize) -> Self {
        Gate {
            u: Matrix::zeros(n, d_in),
            v: Matrix::zeros(n, n),
            b: Matrix::zeros(1, n),
        }
    }

    fn check(&self, name: &str, n: usize, d_in: usize) -> Result<()> {
        if self.u.shape() != (n, d_in) || self.v.shape() != (n, n) || self.b.shape() != (1, n) {
            return shape_err(
                "Gate",
                format!(
                    "{name}: u {:?}, v {:?}, b {:?} for n={n}, d_in={d_in}",
                    self.u.shape(),
                    self.v.shape(),
                    self.b.shape()
                ),
            );
        }
        Ok(())
    }
}

/// Per-neuron gate values fixed outside the sigmoid; `None` leaves the gate free.
pub type Pins = Vec<Option<f64>>;

/// `c_t = f ⊙ c_{t−1} + g ⊙ c̃`, `h_t = o ⊙ tanh(c_t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub f: Gate,
    pub cand: Gate,
    pub g: Gate,
    pub o: Gate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin_f: Option<Pins>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pin_o: Option<Pins>,
}

impl LstmLayer {
    pub fn zeros(n: usize, d_in: usize) -> Self {
        LstmLayer {
            f: Gate::zeros(n, d_in),
            cand: Gate::zeros(n, d_in),
            g: Gate::zeros(n, d_in),
            o: Gate::zeros(n, d_in),
            pin_f: None,
            pin_o: None,
        }
    }

    pub fn n(&self) -> usize {
        self.f.u.rows()
    }

    pub fn d_in(&self) -> usize {
        self.f.u.cols()
    }

    fn gates(&self) -> [(&'static str, &Gate); 4] {
        [("f", &self.f), ("cand", &self.cand), ("g", &self.g), ("o", &self.o)]
    }

    fn validate(&self) -> Result<()> {
        let (n, d) = (self.n(), self.d_in());
        for (name, gate) in self.gates() {
            gate.check(name, n, d)?;
        }
        for pins in [&self.pin_f, &self.pin_o].into_iter().flatten() {
            if pins.len() != n {
                return shape_err("LstmLayer", format!("{} pins for {n} neurons", pins.len()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<Matrix>,
    pub layers: Vec<LstmLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<Matrix>,
    pub mode: ActivationMode,
}

impl LstmParams {
    pub fn d_in(&self) -> usize {
        match &self.embed {
            Some(e) => e.cols(),
            None => self.layers[0].d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match &self.readout {
            Some(r) => r.rows(),
            None => self.layers.last().map_or(0, LstmLayer::n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return shape_err("LstmParams", "at least one layer is required");
        }
        let mut width = self.embed.as_ref().map_or(self.layers[0].d_in(), Matrix::rows);
        for layer in &self.layers {
            layer.validate()?;
            if layer.d_in() != width {
                return shape_err("LstmParams", format!("layer expects {} inputs, gets {width}", layer.d_in()));
            }
            width = layer.n();
        }
        if let Some(r) = &self.readout {
            if r.cols() != width {
                return shape_err("LstmParams", format!("readout expects {} inputs, gets {width}", r.cols()));
            }
        }
        Ok(())
    }
}

pub(super) fn visit_gate(prefix: &str, gate: &Gate, f: &mut dyn FnMut(&str, &Matrix, bool)) {
    f(&format!("{prefix}.u"), &gate.u, false);
    f(&format!("{prefix}.v"), &gate.v, false);
    f(&format!("{prefix}.b"), &gate.b, false);
}

pub(super) fn visit_gate_mut(prefix: &str, gate: &mut Gate, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
    f(&format!("{prefix}.u"), &mut gate.u, false);
    f(&format!("{prefix}.v"), &mut gate.v, false);
    f(&format!("{prefix}.b"), &mut gate.b, false);
}

impl Network for LstmParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        if let Some(e) = &self.embed {
            f("embed", e, false);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, gate) in layer.gates() {
                visit_gate(&format!("layer{l}.{name}"), gate, f);
            }
        }
        if let Some(r) = &self.readout {
            f("readout", r, false);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        if let Some(e) = &mut self.embed {
            f("embed", e, false);
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            visit_gate_mut(&format!("layer{l}.f"), &mut layer.f, f);
            visit_gate_mut(&format!("layer{l}.cand"), &mut layer.cand, f);
            visit_gate_mut(&format!("layer{l}.g"), &mut layer.g, f);
            visit_gate_mut(&format!("layer{l}.o"), &mut layer.o, f);
        }
        if let Some(r) = &mut self.readout {
            f("readout", r, false);
        }
    }

    fn build(&self, b: &mut Binder, x: Var, steps: usize) -> Result<Built> {
        self.validate()?;
        if b.graph.value(x).cols() != self.d_in() {
            return shape_err("lstm_forward", format!("input width {} != {}", b.graph.value(x).cols(), self.d_in()));
        }
        let mut vars = bind_params(self, b).into_iter();
        let g = &mut b.graph;
        let mut h = x;
        if self.embed.is_some() {
            let e = vars.next().unwrap();
            h = g.matmul_t(x, e);
        }
        for layer in &self.layers {
            let gv: Vec<[Var; 3]> = (0..4)
                .map(|_| [vars.next().unwrap(), vars.next().unwrap(), vars.next().unwrap()])
                .collect();
            h = lstm_layer(g, layer, &gv, h, steps, self.mode)?;
        }
        let hidden = h;
        if self.readout.is_some() {
            let r = vars.next().unwrap();
            h = g.matmul_t(h, r);
        }
        Ok(Built {
            output: h,
            hidden: Some(hidden),
        })
    }
}

/// Input projection plus bias for every timestep at once.
pub(super) fn project(g: &mut Graph, x: Var, u: Var, bias: Var) -> Var {
    let p = g.matmul_t(x, u);
    g.add_row(p, bias)
}

/// Gate pre-activation at step `t`: cached input part plus `h_{t−1} Vᵀ`.
pub(super) fn preact(g: &mut Graph, pre: Var, v: Var, h: Option<Var>, t: usize, batch: usize) -> Var {
    let z = g.rows(pre, t * batch, batch);
    match h {
        Some(h) => {
            let r = g.matmul_t(h, v);
            g.add(z, r)
        }
        None => z,
    }
}

fn pin(g: &mut Graph, gate: Var, pins: &Option<Pins>) -> Var {
    let Some(pins) = pins else { return gate };
    let mask: Vec<f64> = pins.iter().map(|p| if p.is_some() { 0.0 } else { 1.0 }).collect();
    let offset: Vec<f64> = pins.iter().map(|p| p.unwrap_or(0.0)).collect();
    let mask = g.constant(Matrix::row_vector(&mask));
    let offset = g.constant(Matrix::row_vector(&offset));
    let kept = g.mul_row(gate, mask);
    g.add_row(kept, offset)
}

fn lstm_layer(g: &mut Graph, layer: &LstmLayer, gv: &[[Var; 3]], x: Var, steps: usize, mode: ActivationMode) -> Result<Var> {
    let batch = g.value(x).rows() / steps;
    let lin = mode == ActivationMode::Linearized;
    let pre: Vec<Var> = gv.iter().map(|[u, _, b]| project(g, x, *u, *b)).collect();
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut hs = Vec::with_capacity(steps);
    for t in 0..steps {
        let zf = preact(g, pre[0], gv[0][1], h, t, batch);
        let zc = preact(g, pre[1], gv[1][1], h, t, batch);
        let zg = preact(g, pre[2], gv[2][1], h, t, batch);
        let zo = preact(g, pre[3], gv[3][1], h, t, batch);
        let f = g.sigmoid(zf);
        let f = pin(g, f, &layer.pin_f);
        let (cand, gate, o) = if lin {
            (zc, zg, zo)
        } else {
            (g.tanh(zc), g.sigmoid(zg), g.sigmoid(zo))
        };
        let o = pin(g, o, &layer.pin_o);
        let inflow = g.mul(gate, cand);
        let ct = match c {
            Some(prev) => {
                let kept = g.mul(f, prev);
                g.add(kept, inflow)
            }
            None => inflow,
        };
        guard_state(g.value(ct), t)?;
        let act = if lin { ct } else { g.tanh(ct) };
        let ht = g.mul(o, act);
        c = Some(ct);
        h = Some(ht);
        hs.push(ht);
    }
    Ok(g.vstack(&hs))
}
