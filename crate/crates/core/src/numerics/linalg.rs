use crate::error::{shape_err, Error, Result};

use super::Matrix;

/// Thin SVD `a = u · diag(s) · vᵀ` with singular values in descending order.
///
/// For an m×n input with k = min(m, n): `u` is m×k, `s` has k entries and
/// `v` is n×k, both with orthonormal columns.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// Number of singular values strictly above `rel_tol · σ_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > rel_tol * smax).count()
    }

    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.s.len(), |i, j| self.u[(i, j)] * self.s[j]);
        us.matmul_t(&self.v).expect("svd factor shapes")
    }
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Svd {
    if a.rows() < a.cols() {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (m, n) = a.shape();
    // Work column-major: w[j] is column j of the working copy of a.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (wp, wq) = (&w[p], &w[q]);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += wp[i] * wp[i];
                        beta += wq[i] * wq[i];
                        gamma += wp[i] * wq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .map(|(j, col)| (j, col.iter().map(|x| x * x).sum::<f64>().sqrt()))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut u = Matrix::zeros(m, n);
    let mut vm = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (out, &(j, sigma)) in order.iter().enumerate() {
        s.push(sigma);
        for i in 0..n {
            vm[(i, out)] = v[j][i];
        }
        if sigma > 0.0 {
            for i in 0..m {
                u[(i, out)] = w[j][i] / sigma;
            }
        }
    }
    reorthonormalize(&mut u);
    Svd { u, s, v: vm }
}

/// Modified Gram–Schmidt (two passes) over the columns of `u`, in order.
/// Columns that collapse (zero or numerically dependent singular directions)
/// are replaced by unit vectors orthogonal to the preceding ones.
fn reorthonormalize(u: &mut Matrix) {
    let (m, k) = u.shape();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for c in 0..k {
        let mut col = u.col(c);
        let orig = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        project_out(&mut col, &basis);
        let mut norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if orig == 0.0 || norm < 0.5 * orig {
            for e in 0..m {
                let mut cand: Vec<f64> = (0..m).map(|i| if i == e { 1.0 } else { 0.0 }).collect();
                project_out(&mut cand, &basis);
                let cn = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
                if cn > 1e-3 {
                    col = cand;
                    norm = cn;
                    break;
                }
            }
        }
        for x in col.iter_mut() {
            *x /= norm;
        }
        for (i, &x) in col.iter().enumerate() {
            u[(i, c)] = x;
        }
        basis.push(col);
    }
}

fn project_out(col: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let dot: f64 = b.iter().zip(col.iter()).map(|(x, y)| x * y).sum();
            for (x, bi) in col.iter_mut().zip(b) {
                *x -= dot * bi;
            }
        }
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Moore–Penrose pseudoinverse; singular values at or below `rel_tol · σ_max` are dropped.
pub fn pinv(a: &Matrix, rel_tol: f64) -> Matrix {
    let d = svd(a);
    let smax = d.s.first().copied().unwrap_or(0.0);
    let (m, n) = a.shape();
    let mut out = Matrix::zeros(n, m);
    for (k, &sigma) in d.s.iter().enumerate() {
        if sigma <= rel_tol * smax || sigma == 0.0 {
            continue;
        }
        for i in 0..n {
            let vik = d.v[(i, k)] / sigma;
            if vik == 0.0 {
                continue;
            }
            for j in 0..m {
                out[(i, j)] += vik * d.u[(j, k)];
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct LeastSquares {
    pub x: Matrix,
    /// Coefficient of determination per target column.
    pub r2: Vec<f64>,
}

/// Solves `min ‖a·x − b‖²` column-wise through the pseudoinverse.
///
/// A target column with zero variance gets `r2 = 1` when its residual is
/// (numerically) zero and `r2 = 0` otherwise.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<LeastSquares> {
    if a.rows() == 0 {
        return shape_err("least_squares", "design matrix has no rows");
    }
    if a.rows() != b.rows() {
        return shape_err(
            "least_squares",
            format!("{} design rows vs {} target rows", a.rows(), b.rows()),
        );
    }
    let x = pinv(a, 1e-13).matmul(b)?;
    let fit = a.matmul(&x)?;
    let n = b.rows() as f64;
    let r2 = (0..b.cols())
        .map(|j| {
            let mean = (0..b.rows()).map(|i| b[(i, j)]).sum::<f64>() / n;
            let mut rss = 0.0;
            let mut tss = 0.0;
            let mut scale = 0.0f64;
            for i in 0..b.rows() {
                rss += (b[(i, j)] - fit[(i, j)]).powi(2);
                tss += (b[(i, j)] - mean).powi(2);
                scale = scale.max(b[(i, j)].abs());
            }
            if tss <= f64::EPSILON * f64::EPSILON * scale * scale * n {
                if rss <= 1e-20 * (1.0 + scale * scale) * n {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - rss / tss
            }
        })
        .collect();
    Ok(LeastSquares { x, r2 })
}

#[derive(Clone, Debug)]
pub struct Inverse {
    pub inv: Matrix,
    /// σ_max / σ_min.
    pub condition: f64,
}

pub const SINGULAR_RATIO: f64 = 1e-12;

/// Gauss–Jordan inverse with partial pivoting; conditioning checked by SVD.
pub fn inverse(a: &Matrix) -> Result<Inverse> {
    let n = a.rows();
    if a.cols() != n {
        return shape_err("inverse", format!("{:?} is not square", a.shape()));
    }
    let s = svd(a).s;
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    let ratio = if smax == 0.0 { 0.0 } else { smin / smax };
    if n > 0 && ratio < SINGULAR_RATIO {
        return Err(Error::Singular { ratio });
    }
    let mut aug = Matrix::zeros(n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            aug[(i, j)] = a[(i, j)];
        }
        aug[(i, n + i)] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[(x, col)].abs().total_cmp(&aug[(y, col)].abs()))
            .expect("non-empty pivot range");
        if pivot != col {
            for j in 0..2 * n {
                let tmp = aug[(col, j)];
                aug[(col, j)] = aug[(pivot, j)];
                aug[(pivot, j)] = tmp;
            }
        }
        let p = aug[(col, col)];
        for j in 0..2 * n {
            aug[(col, j)] /= p;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = aug[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..2 * n {
                aug[(i, j)] -= f * aug[(col, j)];
            }
        }
    }
    let inv = Matrix::from_fn(n, n, |i, j| aug[(i, n + j)]);
    Ok(Inverse {
        inv,
        condition: if n == 0 { 1.0 } else { smax / smin },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_normal, Rng};
    use proptest::prelude::*;

    fn orthonormality_error(q: &Matrix) -> f64 {
        q.t_matmul(q)
            .unwrap()
            .max_abs_diff(&Matrix::identity(q.cols()))
            .unwrap()
    }

    #[test]
    fn diagonal_singular_values() {
        let d = svd(&Matrix::diag(&[3.0, 1.0]));
        assert!((d.s[0] - 3.0).abs() < 1e-15 && (d.s[1] - 1.0).abs() < 1e-15);
        let d = svd(&Matrix::diag(&[1.0, 3.0]));
        assert!((d.s[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 1.0, -1.0];
        let a = Matrix::from_fn(4, 3, |i, j| u[i] * v[j]);
        let d = svd(&a);
        assert_eq!(d.s.iter().filter(|&&s| s > 1e-10).count(), 1);
        assert!(orthonormality_error(&d.u) < 1e-10);
        assert!(orthonormality_error(&d.v) < 1e-10);
    }

    #[test]
    fn random_square_reconstruction() {
        let a = sample_normal(&mut Rng::new(11), 6, 6, 1.0);
        let d = svd(&a);
        let err = d.reconstruct().sub(&a).unwrap().frobenius() / a.frobenius();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn zero_matrix() {
        let d = svd(&Matrix::zeros(3, 2));
        assert!(d.s.iter().all(|&s| s == 0.0));
        assert!(orthonormality_error(&d.u) < 1e-10);
        assert_eq!(d.rank(1e-10), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn svd_bounds(rows in 1usize..=32, cols in 1usize..=32, seed in any::<u64>()) {
            let a = sample_normal(&mut Rng::new(seed), rows, cols, 1.0);
            let d = svd(&a);
            let err = d.reconstruct().sub(&a).unwrap().frobenius() / a.frobenius();
            prop_assert!(err <= 1e-10);
            prop_assert!(orthonormality_error(&d.u) <= 1e-10);
            prop_assert!(orthonormality_error(&d.v) <= 1e-10);
            prop_assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn matmul_associative(n in 1usize..8, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = sample_normal(&mut rng, n, n + 1, 1.0);
            let b = sample_normal(&mut rng, n + 1, n + 2, 1.0);
            let c = sample_normal(&mut rng, n + 2, n, 1.0);
            let l = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let r = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(l.sub(&r).unwrap().frobenius() <= 1e-9 * l.frobenius().max(1.0));
        }
    }

    #[test]
    fn least_squares_identity() {
        let b = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0], [0.5, 4.0]]);
        let ls = least_squares(&Matrix::identity(3), &b).unwrap();
        assert!(ls.x.max_abs_diff(&b).unwrap() < 1e-14);
        assert!(ls.r2.iter().all(|&r| (r - 1.0).abs() < 1e-14));
    }

    #[test]
    fn least_squares_noiseless_recovery() {
        let mut rng = Rng::new(5);
        let a = sample_normal(&mut rng, 40, 4, 1.0);
        let w = sample_normal(&mut rng, 4, 2, 1.0);
        let ls = least_squares(&a, &a.matmul(&w).unwrap()).unwrap();
        assert!(ls.x.max_abs_diff(&w).unwrap() <= 1e-10);
        assert!(ls.r2.iter().all(|&r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn least_squares_residual_orthogonal() {
        let mut rng = Rng::new(6);
        let a = sample_normal(&mut rng, 50, 5, 1.0);
        let b = sample_normal(&mut rng, 50, 1, 1.0);
        let ls = least_squares(&a, &b).unwrap();
        let resid = a.matmul(&ls.x).unwrap().sub(&b).unwrap();
        let normal_eq = a.t_matmul(&resid).unwrap();
        assert!(normal_eq.frobenius() <= 1e-9);
    }

    #[test]
    fn least_squares_rank_deficient() {
        let mut rng = Rng::new(8);
        let c = sample_normal(&mut rng, 30, 1, 1.0);
        let a = Matrix::hstack(&[&c, &c, &c.scale(2.0)]).unwrap();
        let ls = least_squares(&a, &c.scale(3.0)).unwrap();
        assert!((ls.r2[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_target_column() {
        let a = Matrix::from_rows(&[[1.0], [1.0], [1.0]]);
        let b = Matrix::from_rows(&[[2.0, 0.0], [2.0, 0.0], [2.0, 0.0]]);
        let ls = least_squares(&a, &b).unwrap();
        assert_eq!(ls.r2, vec![1.0, 1.0]);
        let a0 = Matrix::zeros(3, 1);
        assert_eq!(least_squares(&a0, &b).unwrap().r2[0], 0.0);
    }

    #[test]
    fn inverse_cases() {
        let i = inverse(&Matrix::identity(3)).unwrap();
        assert_eq!(i.inv, Matrix::identity(3));
        let d = inverse(&Matrix::diag(&[2.0, 4.0])).unwrap();
        assert_eq!(d.inv, Matrix::diag(&[0.5, 0.25]));
        assert!((d.condition - 2.0).abs() < 1e-12);

        let mut rng = Rng::new(9);
        let a = sample_normal(&mut rng, 4, 4, 1.0)
            .add(&Matrix::identity(4).scale(3.0))
            .unwrap();
        let inv = inverse(&a).unwrap().inv;
        let dev = a.matmul(&inv).unwrap().max_abs_diff(&Matrix::identity(4)).unwrap();
        assert!(dev <= 1e-10, "{dev}");
    }

    #[test]
    fn singular_inverse_is_an_error() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(inverse(&a), Err(Error::Singular { .. })));
    }
}
