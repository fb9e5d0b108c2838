use serde::{Deserialize, Serialize};

use super::lstm::{preact, project, visit_gate, visit_gate_mut, Gate};
use super::{bind_params, ActivationMode, Binder, Built, Network};
use crate::error::{shape_err, Result};
use crate::grad::{guard_state, Graph, Var};
use crate::numerics::Matrix;

/// `h_t = (1 − z) ⊙ h_{t−1} + z ⊙ tanh(U_h x + V_h (r ⊙ h_{t−1}) + b_h)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub r: Gate,
    pub cand: Gate,
    pub z: Gate,
}

impl GruLayer {
    pub fn zeros(n: usize, d_in: usize) -> Self {
        GruLayer {
            r: Gate::zeros(n, d_in),
            cand: Gate::zeros(n, d_in),
            z: Gate::zeros(n, d_in),
        }
    }

    pub fn n(&self) -> usize {
        self.r.u.rows()
    }

    pub fn d_in(&self) -> usize {
        self.r.u.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<Matrix>,
    pub layers: Vec<GruLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<Matrix>,
    pub mode: ActivationMode,
}

impl GruParams {
    pub fn d_in(&self) -> usize {
        match &self.embed {
            Some(e) => e.cols(),
            None => self.layers[0].d_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match &self.readout {
            Some(r) => r.rows(),
            None => self.layers.last().map_or(0, GruLayer::n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return shape_err("GruParams", "at least one layer is required");
        }
        let mut width = self.embed.as_ref().map_or(self.layers[0].d_in(), Matrix::rows);
        for layer in &self.layers {
            let n = layer.n();
            for gate in [&layer.r, &layer.cand, &layer.z] {
                if gate.u.shape() != (n, width) || gate.v.shape() != (n, n) || gate.b.shape() != (1, n) {
                    return shape_err("GruParams", format!("gate shapes do not chain at width {width}"));
                }
            }
            width = n;
        }
        if let Some(r) = &self.readout {
            if r.cols() != width {
                return shape_err("GruParams", format!("readout expects {} inputs, gets {width}", r.cols()));
            }
        }
        Ok(())
    }
}

impl Network for GruParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        if let Some(e) = &self.embed {
            f("embed", e, false);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            visit_gate(&format!("layer{l}.r"), &layer.r, f);
            visit_gate(&format!("layer{l}.cand"), &layer.cand, f);
            visit_gate(&format!("layer{l}.z"), &layer.z, f);
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
            visit_gate_mut(&format!("layer{l}.r"), &mut layer.r, f);
            visit_gate_mut(&format!("layer{l}.cand"), &mut layer.cand, f);
            visit_gate_mut(&format!("layer{l}.z"), &mut layer.z, f);
        }
        if let Some(r) = &mut self.readout {
            f("readout", r, false);
        }
    }

    fn build(&self, b: &mut Binder, x: Var, steps: usize) -> Result<Built> {
        self.validate()?;
        if b.graph.value(x).cols() != self.d_in() {
            return shape_err("gru_forward", format!("input width {} != {}", b.graph.value(x).cols(), self.d_in()));
        }
        let mut vars = bind_params(self, b).into_iter();
        let g = &mut b.graph;
        let mut h = x;
        if self.embed.is_some() {
            let e = vars.next().unwrap();
            h = g.matmul_t(x, e);
        }
        for _ in &self.layers {
            let gv: Vec<[Var; 3]> = (0..3)
                .map(|_| [vars.next().unwrap(), vars.next().unwrap(), vars.next().unwrap()])
                .collect();
            h = gru_layer(g, &gv, h, steps, self.mode)?;
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

fn gru_layer(g: &mut Graph, gv: &[[Var; 3]], x: Var, steps: usize, mode: ActivationMode) -> Result<Var> {
    let batch = g.value(x).rows() / steps;
    let pre: Vec<Var> = gv.iter().map(|[u, _, b]| project(g, x, *u, *b)).collect();
    let mut h: Option<Var> = None;
    let mut hs = Vec::with_capacity(steps);
    for t in 0..steps {
        let zr = preact(g, pre[0], gv[0][1], h, t, batch);
        let zz = preact(g, pre[2], gv[2][1], h, t, batch);
        let r = g.sigmoid(zr);
        let z = g.sigmoid(zz);
        let reset = h.map(|h| g.mul(r, h));
        let zc = preact(g, pre[1], gv[1][1], reset, t, batch);
        let cand = match mode {
            ActivationMode::Linearized => zc,
            ActivationMode::Standard => g.tanh(zc),
        };
        let upd = g.mul(z, cand);
        let ht = match h {
            Some(prev) => {
                let keep = g.affine(z, -1.0, 1.0);
                let kept = g.mul(keep, prev);
                g.add(kept, upd)
            }
            None => upd,
        };
        guard_state(g.value(ht), t)?;
        h = Some(ht);
        hs.push(ht);
    }
    Ok(g.vstack(&hs))
}
