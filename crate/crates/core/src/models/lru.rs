use serde::{Deserialize, Serialize};

use super::{bind_params, ActivationMode, Binder, Built, Network};
use crate::error::{shape_err, Result};
use crate::grad::{Graph, Var};
use crate::numerics::{CMatrix, Matrix};

/// Post-processing around the complex recurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LruVariant {
    /// GLU after the recurrence only.
    Out,
    /// GLU before and after the recurrence.
    InOut,
    /// The two GLUs replaced by equally sized one-hidden-layer tanh MLPs.
    InOutMlp,
}

/// `h_t = λ ⊙ h_{t−1} + γ ⊙ (B u_t)`, `ỹ_t = Re[C h_t] + D u_t`,
/// `y_t = σ(W_m ỹ_t) ⊙ (W_x ỹ_t)`; `u_t` is the layer input, gated first for
/// the in+out variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LruLayer {
    pub nu_log: Matrix,
    pub theta_log: Matrix,
    pub gamma_log: Matrix,
    pub b: CMatrix,
    pub c: CMatrix,
    pub d: Matrix,
    pub w_m: Matrix,
    pub w_x: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_m_in: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_x_in: Option<Matrix>,
}

impl LruLayer {
    /// State size.
    pub fn n(&self) -> usize {
        self.nu_log.cols()
    }

    /// Input and output width.
    pub fn width(&self) -> usize {
        self.d.rows()
    }

    /// Decoded λ as (re, im).
    pub fn lambda(&self) -> (Vec<f64>, Vec<f64>) {
        let mut re = Vec::new();
        let mut im = Vec::new();
        for (&nu, &th) in self.nu_log.data().iter().zip(self.theta_log.data()) {
            let r = (-nu.exp()).exp();
            let a = th.exp();
            re.push(r * a.cos());
            im.push(r * a.sin());
        }
        (re, im)
    }

    fn validate(&self, variant: LruVariant) -> Result<()> {
        let (n, k) = (self.n(), self.width());
        let ok = self.theta_log.shape() == (1, n)
            && self.gamma_log.shape() == (1, n)
            && self.b.re.shape() == (n, k)
            && self.b.im.shape() == (n, k)
            && self.c.re.shape() == (k, n)
            && self.c.im.shape() == (k, n)
            && self.d.shape() == (k, k)
            && self.w_m.shape() == (k, k)
            && self.w_x.shape() == (k, k);
        let gated_in = match (&self.w_m_in, &self.w_x_in) {
            (Some(a), Some(b)) => a.shape() == (k, k) && b.shape() == (k, k),
            (None, None) => true,
            _ => false,
        };
        let wants_in = variant != LruVariant::Out;
        if !ok || !gated_in || self.w_m_in.is_some() != wants_in {
            return shape_err("LruLayer", format!("inconsistent shapes for n={n}, width={k}, variant {variant:?}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LruParams {
    pub variant: LruVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed: Option<Matrix>,
    pub layers: Vec<LruLayer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readout: Option<Matrix>,
    pub mode: ActivationMode,
}

impl LruParams {
    pub fn d_in(&self) -> usize {
        match &self.embed {
            Some(e) => e.cols(),
            None => self.layers[0].width(),
        }
    }

    pub fn d_out(&self) -> usize {
        match &self.readout {
            Some(r) => r.rows(),
            None => self.layers.last().map_or(0, LruLayer::width),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return shape_err("LruParams", "at least one layer is required");
        }
        let mut width = self.embed.as_ref().map_or(self.layers[0].width(), Matrix::rows);
        for layer in &self.layers {
            layer.validate(self.variant)?;
            if layer.width() != width {
                return shape_err("LruParams", format!("layer width {} but input {width}", layer.width()));
            }
            width = layer.width();
        }
        if let Some(r) = &self.readout {
            if r.cols() != width {
                return shape_err("LruParams", format!("readout expects {} inputs, gets {width}", r.cols()));
            }
        }
        Ok(())
    }
}

impl Network for LruParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        if let Some(e) = &self.embed {
            f("embed", e, false);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("layer{l}");
            f(&format!("{p}.nu_log"), &layer.nu_log, true);
            f(&format!("{p}.theta_log"), &layer.theta_log, true);
            f(&format!("{p}.gamma_log"), &layer.gamma_log, false);
            f(&format!("{p}.b.re"), &layer.b.re, false);
            f(&format!("{p}.b.im"), &layer.b.im, false);
            f(&format!("{p}.c.re"), &layer.c.re, false);
            f(&format!("{p}.c.im"), &layer.c.im, false);
            f(&format!("{p}.d"), &layer.d, false);
            f(&format!("{p}.w_m"), &layer.w_m, false);
            f(&format!("{p}.w_x"), &layer.w_x, false);
            if let (Some(a), Some(b)) = (&layer.w_m_in, &layer.w_x_in) {
                f(&format!("{p}.w_m_in"), a, false);
                f(&format!("{p}.w_x_in"), b, false);
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
            let p = format!("layer{l}");
            f(&format!("{p}.nu_log"), &mut layer.nu_log, true);
            f(&format!("{p}.theta_log"), &mut layer.theta_log, true);
            f(&format!("{p}.gamma_log"), &mut layer.gamma_log, false);
            f(&format!("{p}.b.re"), &mut layer.b.re, false);
            f(&format!("{p}.b.im"), &mut layer.b.im, false);
            f(&format!("{p}.c.re"), &mut layer.c.re, false);
            f(&format!("{p}.c.im"), &mut layer.c.im, false);
            f(&format!("{p}.d"), &mut layer.d, false);
            f(&format!("{p}.w_m"), &mut layer.w_m, false);
            f(&format!("{p}.w_x"), &mut layer.w_x, false);
            if let (Some(a), Some(b)) = (&mut layer.w_m_in, &mut layer.w_x_in) {
                f(&format!("{p}.w_m_in"), a, false);
                f(&format!("{p}.w_x_in"), b, false);
            }
        }
        if let Some(r) = &mut self.readout {
            f("readout", r, false);
        }
    }

    fn build(&self, b: &mut Binder, x: Var, steps: usize) -> Result<Built> {
        self.validate()?;
        if b.graph.value(x).cols() != self.d_in() {
            return shape_err("lru_forward", format!("input width {} != {}", b.graph.value(x).cols(), self.d_in()));
        }
        let mut vars = bind_params(self, b).into_iter();
        let g = &mut b.graph;
        let mut h = x;
        if self.embed.is_some() {
            let e = vars.next().unwrap();
            h = g.matmul_t(x, e);
        }
        let mut hidden = h;
        for layer in &self.layers {
            let count = if layer.w_m_in.is_some() { 12 } else { 10 };
            let lv: Vec<Var> = (0..count).map(|_| vars.next().unwrap()).collect();
            let (out, state) = lru_layer(g, &lv, h, steps, self.variant, self.mode)?;
            h = out;
            hidden = state;
        }
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

/// GLU `σ(W_m x) ⊙ (W_x x)`, its bilinear linearization, or a tanh MLP.
fn mix(g: &mut Graph, x: Var, wm: Var, wx: Var, variant: LruVariant, mode: ActivationMode) -> Var {
    let a = g.matmul_t(x, wm);
    if variant == LruVariant::InOutMlp {
        let hid = g.tanh(a);
        return g.matmul_t(hid, wx);
    }
    let gate = match mode {
        ActivationMode::Standard => g.sigmoid(a),
        ActivationMode::Linearized => a,
    };
    let lin = g.matmul_t(x, wx);
    g.mul(gate, lin)
}

fn lru_layer(g: &mut Graph, v: &[Var], x: Var, steps: usize, variant: LruVariant, mode: ActivationMode) -> Result<(Var, Var)> {
    let [nu, th, gl, b_re, b_im, c_re, c_im, d, wm, wx] = v[..10].try_into().expect("ten layer tensors");
    let u = if v.len() == 12 { mix(g, x, v[10], v[11], variant, mode) } else { x };
    // λ = exp(−exp ν) · (cos, sin)(exp θ)
    let e = g.exp(nu);
    let ne = g.neg(e);
    let r = g.exp(ne);
    let ang = g.exp(th);
    let cs = g.cos(ang);
    let sn = g.sin(ang);
    let l_re = g.mul(r, cs);
    let l_im = g.mul(r, sn);
    let lam = g.hstack(&[l_re, l_im]);
    let gamma = g.exp(gl);
    let bu_re = g.matmul_t(u, b_re);
    let bu_im = g.matmul_t(u, b_im);
    let in_re = g.mul_row(bu_re, gamma);
    let in_im = g.mul_row(bu_im, gamma);
    let drive = g.hstack(&[in_re, in_im]);
    let h = g.complex_scan(drive, lam, steps)?;
    let n = g.value(nu).cols();
    let h_re = g.cols(h, 0, n);
    let h_im = g.cols(h, n, n);
    let p = g.matmul_t(h_re, c_re);
    let q = g.matmul_t(h_im, c_im);
    let real = g.sub(p, q);
    let skip = g.matmul_t(u, d);
    let ytil = g.add(real, skip);
    Ok((mix(g, ytil, wm, wx, variant, mode), h))
}
