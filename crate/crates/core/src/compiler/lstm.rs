use crate::error::{Error, Result};
use crate::models::{ActivationMode, AttentionParams, GatedRnnParams, LstmLayer, LstmParams};
use crate::numerics::{logit, Matrix};

/// Stand-in for an infinite forget-gate bias in standard mode; σ(30) ≈ 1 − 1e-13.
pub const SATURATION_BIAS: f64 = 30.0;

/// One linearized layer of `d²` cells: `c̃ = W_K`, `g = W_V`, `o = W_Q` rows in
/// the same flattening as the full construction, forget gate pinned open.
pub fn compile_lstm_attention(p: &AttentionParams) -> LstmParams {
    let d = p.d();
    let n = d * d;
    let mut layer = LstmLayer::zeros(n, d);
    layer.cand.u = Matrix::from_fn(n, d, |i, j| p.w_k[(i % d, j)]);
    layer.g.u = Matrix::from_fn(n, d, |i, j| p.w_v[(i / d, j)]);
    layer.o.u = Matrix::from_fn(n, d, |i, j| p.w_q[(i % d, j)]);
    layer.pin_f = Some(vec![Some(1.0); n]);
    LstmParams {
        embed: None,
        layers: vec![layer],
        readout: Some(Matrix::from_fn(d, n, |a, i| if i / d == a { 1.0 } else { 0.0 })),
        mode: ActivationMode::Linearized,
    }
}

const TWIN_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

/// Standard-mode approximation with weights scaled by `eps`.
///
/// Each key-value pair uses four cells whose input and output gates see
/// `±eps` copies of the value and query rows. The signed readout combination
/// cancels the ½ offsets of the sigmoids, leaving `tanh(eps·q/2) · [tanh(c₊) − tanh(c₋)]`,
/// which is rescaled by `4 / eps³`.
pub fn compile_lstm_attention_standard(p: &AttentionParams, eps: f64) -> Result<LstmParams> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    let d = p.d();
    let n = 4 * d * d;
    let mut layer = LstmLayer::zeros(n, d);
    let kappa = 4.0 / eps.powi(3);
    let mut readout = Matrix::zeros(d, n);
    for i in 0..n {
        let pair = i / 4;
        let (a, b) = (pair / d, pair % d);
        let (sg, so) = TWIN_SIGNS[i % 4];
        for j in 0..d {
            layer.cand.u[(i, j)] = eps * p.w_k[(b, j)];
            layer.g.u[(i, j)] = sg * eps * p.w_v[(a, j)];
            layer.o.u[(i, j)] = so * eps * p.w_q[(b, j)];
        }
        layer.f.b[(0, i)] = SATURATION_BIAS;
        readout[(a, i)] = sg * so * kappa;
    }
    Ok(LstmParams {
        embed: None,
        layers: vec![layer],
        readout: Some(readout),
        mode: ActivationMode::Standard,
    })
}

/// Two linearized layers: the first realizes the input gating and the
/// recurrence (forget bias `σ⁻¹(λ)`, endpoints pinned), the second the output
/// gating with a closed forget gate. A constant input column moves into biases.
pub fn compile_lstm_gated_rnn(p: &GatedRnnParams) -> Result<LstmParams> {
    p.validate()?;
    let lambda = p.lambda();
    if let Some(l) = lambda.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::Invalid(format!("λ = {l} cannot be a forget gate value")));
    }
    let (n, m) = (p.n(), p.m());
    let d = p.d_in() - usize::from(p.augmented);
    let split = |w: &Matrix| -> (Matrix, Matrix) {
        let u = w.select_cols(&(0..d).collect::<Vec<_>>());
        let b = if p.augmented {
            Matrix::row_vector(&w.col(d))
        } else {
            Matrix::zeros(1, w.rows())
        };
        (u, b)
    };

    let mut first = LstmLayer::zeros(n, d);
    (first.cand.u, first.cand.b) = split(&p.w_m_in);
    (first.g.u, first.g.b) = split(&p.w_x_in);
    let mut pins = vec![None; n];
    for (i, &l) in lambda.iter().enumerate() {
        if l == 0.0 || l == 1.0 {
            pins[i] = Some(l);
        } else {
            first.f.b[(0, i)] = logit(l);
        }
    }
    first.pin_f = Some(pins);
    first.pin_o = Some(vec![Some(1.0); n]);

    let mut second = LstmLayer::zeros(m, n);
    second.cand.u = p.w_m_out.clone();
    second.g.u = p.w_x_out.clone();
    second.pin_f = Some(vec![Some(0.0); m]);
    second.pin_o = Some(vec![Some(1.0); m]);

    Ok(LstmParams {
        embed: None,
        layers: vec![first, second],
        readout: Some(p.d_readout.clone()),
        mode: ActivationMode::Linearized,
    })
}
