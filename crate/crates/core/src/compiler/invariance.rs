//! Weight transformations that leave a gated RNN's function unchanged.

use crate::error::{shape_err, Error, Result};
use crate::models::GatedRnnParams;
use crate::numerics::{inverse, Matrix};

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n || perm.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
        return shape_err("permutation", format!("{perm:?} is not a permutation of 0..{n}"));
    }
    Ok(())
}

/// New neuron `k` is old neuron `perm[k]`.
pub fn permute_hidden(p: &GatedRnnParams, perm: &[usize]) -> Result<GatedRnnParams> {
    check_perm(perm, p.n())?;
    Ok(GatedRnnParams {
        w_m_in: p.w_m_in.select_rows(perm),
        w_x_in: p.w_x_in.select_rows(perm),
        recurrence: p.recurrence.select(perm),
        w_m_out: p.w_m_out.select_cols(perm),
        w_x_out: p.w_x_out.select_cols(perm),
        d_readout: p.d_readout.clone(),
        augmented: p.augmented,
    })
}

/// Output gate `k` becomes old gate `perm[k]`, readout columns follow.
pub fn permute_outputs(p: &GatedRnnParams, perm: &[usize]) -> Result<GatedRnnParams> {
    check_perm(perm, p.m())?;
    Ok(GatedRnnParams {
        w_m_out: p.w_m_out.select_rows(perm),
        w_x_out: p.w_x_out.select_rows(perm),
        d_readout: p.d_readout.select_cols(perm),
        ..p.clone()
    })
}

fn scale_rows(w: &Matrix, c: &[f64], inv: bool) -> Matrix {
    Matrix::from_fn(w.rows(), w.cols(), |i, j| if inv { w[(i, j)] / c[i] } else { w[(i, j)] * c[i] })
}

fn check_scales(c: &[f64], n: usize) -> Result<()> {
    if c.len() != n {
        return shape_err("rescale", format!("{} factors for {n} rows", c.len()));
    }
    if c.iter().any(|&v| v == 0.0 || !v.is_finite()) {
        return Err(Error::Invalid("scale factors must be finite and nonzero".into()));
    }
    Ok(())
}

/// Row `i` of `W_m^in` times `c_i`, row `i` of `W_x^in` divided by it.
pub fn rescale_hidden(p: &GatedRnnParams, c: &[f64]) -> Result<GatedRnnParams> {
    check_scales(c, p.n())?;
    Ok(GatedRnnParams {
        w_m_in: scale_rows(&p.w_m_in, c, false),
        w_x_in: scale_rows(&p.w_x_in, c, true),
        ..p.clone()
    })
}

/// Same split applied to the output gating.
pub fn rescale_outputs(p: &GatedRnnParams, c: &[f64]) -> Result<GatedRnnParams> {
    check_scales(c, p.m())?;
    Ok(GatedRnnParams {
        w_m_out: scale_rows(&p.w_m_out, c, false),
        w_x_out: scale_rows(&p.w_x_out, c, true),
        ..p.clone()
    })
}

/// Replaces the query neurons' states `h_Q` by `P h_Q` and reads them out
/// through `P⁻¹`. The listed neurons must share one `W_m^in` row and one λ.
pub fn transform_queries(p: &GatedRnnParams, queries: &[usize], pm: &Matrix) -> Result<GatedRnnParams> {
    let k = queries.len();
    if pm.shape() != (k, k) {
        return shape_err("transform_queries", format!("P is {:?}, expected {k}×{k}", pm.shape()));
    }
    if queries.iter().any(|&i| i >= p.n()) {
        return shape_err("transform_queries", format!("query index out of range for {} neurons", p.n()));
    }
    let lambda = p.lambda();
    let Some(&first) = queries.first() else {
        return Ok(p.clone());
    };
    if queries.iter().any(|&i| p.w_m_in.row(i) != p.w_m_in.row(first) || lambda[i] != lambda[first]) {
        return Err(Error::Invalid("query neurons must share their multiplicative gate row and λ".into()));
    }
    let p_inv = inverse(pm)?.inv;
    let mut out = p.clone();
    let old = p.w_x_in.select_rows(queries);
    let new_rows = pm.matmul(&old)?;
    for (r, &i) in queries.iter().enumerate() {
        out.w_x_in.row_mut(i).copy_from_slice(new_rows.row(r));
    }
    for (src, dst) in [(&p.w_m_out, &mut out.w_m_out), (&p.w_x_out, &mut out.w_x_out)] {
        let block = src.select_cols(queries).matmul(&p_inv)?;
        for row in 0..src.rows() {
            for (c, &i) in queries.iter().enumerate() {
                dst[(row, i)] = block[(row, c)];
            }
        }
    }
    Ok(out)
}
