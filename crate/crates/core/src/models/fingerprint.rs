use super::{ActivationMode, LruVariant, Model};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::poly::{add_constants, linear_combine, PolyVector, Polynomial};

fn not_poly(model: &Model, reason: &str) -> Error {
    Error::NotPolynomial {
        arch: model.arch().to_string(),
        reason: reason.to_string(),
    }
}

fn row(m: &Matrix) -> Vec<f64> {
    m.data().to_vec()
}

/// The single-token map `x ↦ y_1` as exact polynomials in the data inputs.
/// A constant input column, when present, is substituted by 1.
pub fn instantaneous_fingerprint(model: &Model, max_degree: usize) -> Result<PolyVector> {
    let d = model.d_data();
    let mut x = PolyVector::variables(d);
    if model.augmented() {
        x.components.push(Polynomial::constant(d, 1.0));
    }
    let lin = |w: &Matrix, p: &PolyVector| linear_combine(w, p);
    let out = match model {
        Model::Attention(p) => {
            let v = lin(&p.w_v, &x)?;
            let kq = lin(&p.w_k, &x)?.hadamard(&lin(&p.w_q, &x)?)?;
            let s = sum(&kq, d)?;
            scale_by(&v, &s)?
        }
        Model::DecayedAttention(p) => {
            let v = add_constants(&lin(&p.w_v, &x)?, &p.b_v)?;
            let k = add_constants(&lin(&p.w_k, &x)?, &p.b_k)?;
            let q = add_constants(&lin(&p.w_q, &x)?, &p.b_q)?;
            let s = sum(&k.hadamard(&q)?, d)?;
            scale_by(&v, &s)?
        }
        Model::Gated(p) => {
            let h = lin(&p.w_m_in, &x)?.hadamard(&lin(&p.w_x_in, &x)?)?;
            let g = lin(&p.w_m_out, &h)?.hadamard(&lin(&p.w_x_out, &h)?)?;
            lin(&p.d_readout, &g)?
        }
        Model::DenseGated(p) => {
            let h = lin(&p.w_m_in, &x)?.hadamard(&lin(&p.w_x_in, &x)?)?;
            let g = lin(&p.w_m_out, &h)?.hadamard(&lin(&p.w_x_out, &h)?)?;
            lin(&p.d_readout, &g)?
        }
        Model::SideGated(p) => {
            let h = lin(&p.w_m_in, &x)?.hadamard(&lin(&p.w_x_in, &x)?)?;
            let g = lin(&p.w_side, &x)?.hadamard(&h)?;
            lin(&p.d_readout, &g)?
        }
        Model::Lstm(p) => {
            if p.mode != ActivationMode::Linearized {
                return Err(not_poly(model, "tanh and sigmoid activations in standard mode"));
            }
            let mut h = match &p.embed {
                Some(e) => lin(e, &x)?,
                None => x,
            };
            for layer in &p.layers {
                let gate = |g: &super::Gate, h: &PolyVector| add_constants(&lin(&g.u, h)?, &row(&g.b));
                let cand = gate(&layer.cand, &h)?;
                let inflow = gate(&layer.g, &h)?;
                let mut o = gate(&layer.o, &h)?;
                if let Some(pins) = &layer.pin_o {
                    for (k, pin) in pins.iter().enumerate() {
                        if let Some(v) = pin {
                            o.components[k] = Polynomial::constant(d, *v);
                        }
                    }
                }
                h = o.hadamard(&inflow.hadamard(&cand)?)?;
            }
            match &p.readout {
                Some(r) => lin(r, &h)?,
                None => h,
            }
        }
        Model::Gru(_) => return Err(not_poly(model, "the update gate is a sigmoid in every mode")),
        Model::Lru(p) => {
            if p.mode != ActivationMode::Linearized || p.variant == LruVariant::InOutMlp {
                return Err(not_poly(model, "sigmoid or tanh post-processing"));
            }
            let mut h = match &p.embed {
                Some(e) => lin(e, &x)?,
                None => x,
            };
            for layer in &p.layers {
                let u = match (&layer.w_m_in, &layer.w_x_in) {
                    (Some(a), Some(b)) => lin(a, &h)?.hadamard(&lin(b, &h)?)?,
                    _ => h,
                };
                let gamma: Vec<f64> = layer.gamma_log.data().iter().map(|g| g.exp()).collect();
                let gdiag = Matrix::diag(&gamma);
                let s_re = lin(&gdiag.matmul(&layer.b.re)?, &u)?;
                let s_im = lin(&gdiag.matmul(&layer.b.im)?, &u)?;
                let real = lin(&layer.c.re, &s_re)?.add(&lin(&layer.c.im.scale(-1.0), &s_im)?)?;
                let ytil = real.add(&lin(&layer.d, &u)?)?;
                h = lin(&layer.w_m, &ytil)?.hadamard(&lin(&layer.w_x, &ytil)?)?;
            }
            match &p.readout {
                Some(r) => lin(r, &h)?,
                None => h,
            }
        }
    };
    for poly in &out.components {
        for (e, c) in poly.terms() {
            let degree = crate::poly::total_degree(e);
            if degree > max_degree {
                return Err(Error::DegreeOverflow {
                    degree,
                    max_degree,
                    coef: c,
                });
            }
        }
    }
    Ok(out)
}

fn sum(p: &PolyVector, nvars: usize) -> Result<Polynomial> {
    p.components.iter().try_fold(Polynomial::zero(nvars), |acc, c| acc.add(c))
}

fn scale_by(v: &PolyVector, s: &Polynomial) -> Result<PolyVector> {
    let components = v.components.iter().map(|c| c.mul(s)).collect::<Result<_>>()?;
    PolyVector::new(components)
}
