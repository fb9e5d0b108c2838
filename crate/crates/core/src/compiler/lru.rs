use crate::error::{shape_err, Error, Result};
use crate::models::{ActivationMode, LruLayer, LruParams, LruVariant};
use crate::numerics::{CMatrix, Matrix};

fn blocks(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Matrix {
    let top = Matrix::hstack(&[a, b]).expect("same height");
    let bottom = Matrix::hstack(&[c, d]).expect("same height");
    Matrix::vstack(&[&top, &bottom]).expect("same width")
}

/// Standard-mode (sigmoid-gated) network whose output tends to that of the
/// linearized `p` as `eps → 0`. Every GLU channel is doubled into the pair
/// `σ(±ε a)·(b/ε)`, and the consumer of the layer reads `2(y₊ − y₋)`.
/// Only the output-gated variant is supported.
pub fn lru_standard_twin(p: &LruParams, eps: f64) -> Result<LruParams> {
    p.validate()?;
    if p.mode != ActivationMode::Linearized || p.variant != LruVariant::Out {
        return shape_err("lru_standard_twin", "needs a linearized network of the output-gated variant");
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    let k = p.layers[0].width();
    let z = Matrix::zeros(k, k);
    let id = Matrix::identity(k);
    let combine = Matrix::hstack(&[&id.scale(2.0), &id.scale(-2.0)])?;
    let lift = Matrix::hstack(&[&id, &z])?;
    let embed = match &p.embed {
        Some(e) => Some(Matrix::vstack(&[e, &Matrix::zeros(k, e.cols())])?),
        None => None,
    };
    let mut layers = Vec::with_capacity(p.layers.len());
    for (i, l) in p.layers.iter().enumerate() {
        let read = if i == 0 && embed.is_some() { &lift } else { &combine };
        let n = l.n();
        let zc = CMatrix::zeros(k, n);
        layers.push(LruLayer {
            b: CMatrix {
                re: l.b.re.matmul(read)?,
                im: l.b.im.matmul(read)?,
            },
            c: CMatrix {
                re: Matrix::vstack(&[&l.c.re, &zc.re])?,
                im: Matrix::vstack(&[&l.c.im, &zc.im])?,
            },
            d: Matrix::vstack(&[&l.d.matmul(read)?, &Matrix::zeros(k, 2 * k)])?,
            w_m: blocks(&l.w_m.scale(eps), &z, &l.w_m.scale(-eps), &z),
            w_x: blocks(&l.w_x.scale(1.0 / eps), &z, &l.w_x.scale(1.0 / eps), &z),
            w_m_in: None,
            w_x_in: None,
            ..l.clone()
        });
    }
    if p.embed.is_none() {
        return shape_err("lru_standard_twin", "needs an input embedding to widen the first layer");
    }
    let readout = match &p.readout {
        Some(r) => Some(r.matmul(&combine)?),
        None => return shape_err("lru_standard_twin", "needs a readout to combine the doubled channels"),
    };
    let twin = LruParams {
        variant: p.variant,
        embed,
        layers,
        readout,
        mode: ActivationMode::Standard,
    };
    twin.validate()?;
    Ok(twin)
}
