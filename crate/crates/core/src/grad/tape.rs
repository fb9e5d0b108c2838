//! Eager reverse-mode tape over dense matrices.
//!
//! Every op computes its value when it is recorded. Sequences are laid out
//! time-major: row `t * batch + b` holds timestep `t` of sequence `b`.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix};

/// Magnitude above which recurrent state is treated as diverged.
pub const STATE_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    /// a · wᵀ
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Broadcast a 1×k row over every row of a.
    AddRow(Var, Var),
    MulRow(Var, Var),
    /// s·a plus a constant shift, which has no gradient
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Sin(Var),
    Cos(Var),
    DiagScan {
        u: Var,
        lambda: Var,
        steps: usize,
    },
    ComplexScan {
        u: Var,
        lambda: Var,
        steps: usize,
    },
    Rows {
        a: Var,
        start: usize,
    },
    VStack(Vec<Var>),
    Cols {
        a: Var,
        start: usize,
    },
    HStack(Vec<Var>),
    HalfSumSquares(Var),
    MaskedMse {
        pred: Var,
        target: Matrix,
        weights: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        labels: Vec<Option<usize>>,
    },
    Custom {
        label: String,
        inputs: Vec<Var>,
    },
}

struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn check_shape(op: &str, a: &Matrix, b: &Matrix) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: operand shapes {:?} and {:?} differ",
        a.shape(),
        b.shape()
    );
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar");
        m[(0, 0)]
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul_t(&mut self, a: Var, w: Var) -> Var {
        let value = self
            .value(a)
            .matmul_t(self.value(w))
            .unwrap_or_else(|e| panic!("{e}"));
        let rg = self.rg(a) || self.rg(w);
        self.push(Op::MatMulT(a, w), value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        check_shape("add", self.value(a), self.value(b));
        let value = self.value(a).add(self.value(b)).expect("checked");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), value, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        check_shape("sub", self.value(a), self.value(b));
        let value = self.value(a).sub(self.value(b)).expect("checked");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Sub(a, b), value, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        check_shape("mul", self.value(a), self.value(b));
        let value = self.value(a).hadamard(self.value(b)).expect("checked");
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), value, rg)
    }

    fn broadcast(&self, op: &str, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (am, rm) = (self.value(a), self.value(row));
        assert!(
            rm.rows() == 1 && rm.cols() == am.cols(),
            "{op}: row {:?} does not broadcast over {:?}",
            rm.shape(),
            am.shape()
        );
        let mut out = am.clone();
        for i in 0..out.rows() {
            for (x, &r) in out.row_mut(i).iter_mut().zip(rm.row(0)) {
                *x = f(*x, r);
            }
        }
        out
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.broadcast("add_row", a, row, |x, r| x + r);
        let rg = self.rg(a) || self.rg(row);
        self.push(Op::AddRow(a, row), value, rg)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.broadcast("mul_row", a, row, |x, r| x * r);
        let rg = self.rg(a) || self.rg(row);
        self.push(Op::MulRow(a, row), value, rg)
    }

    /// `scale · a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(Op::Affine(a, scale), value, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine(a, -1.0, 0.0)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, Op::Cos(a), f64::cos)
    }

    /// Diagonal linear recurrence `h_t = λ ⊙ h_{t−1} + u_t` from `h_0 = 0`,
    /// returning every `h_t`. `u` is time-major with `steps` timesteps.
    pub fn diag_scan(&mut self, u: Var, lambda: Var, steps: usize) -> Result<Var> {
        let (um, lm) = (self.value(u), self.value(lambda));
        assert!(lm.rows() == 1 && lm.cols() == um.cols(), "diag_scan: λ shape");
        assert!(steps > 0 && um.rows() % steps == 0, "diag_scan: rows not divisible by steps");
        let batch = um.rows() / steps;
        let n = um.cols();
        let mut h = um.clone();
        let lam = lm.row(0).to_vec();
        for t in 1..steps {
            let (prev, cur) = h.data_mut().split_at_mut(t * batch * n);
            let prev = &prev[(t - 1) * batch * n..];
            for (i, x) in cur[..batch * n].iter_mut().enumerate() {
                *x += lam[i % n] * prev[i];
            }
        }
        check_state(&h, batch * n)?;
        let rg = self.rg(u) || self.rg(lambda);
        Ok(self.push(Op::DiagScan { u, lambda, steps }, h, rg))
    }

    /// Complex diagonal recurrence. `u` is N×2n holding `[re | im]`, `lambda`
    /// is 1×2n holding `[re | im]`; the result has the same layout as `u`.
    pub fn complex_scan(&mut self, u: Var, lambda: Var, steps: usize) -> Result<Var> {
        let (um, lm) = (self.value(u), self.value(lambda));
        assert!(lm.rows() == 1 && lm.cols() == um.cols() && um.cols() % 2 == 0, "complex_scan: λ shape");
        assert!(steps > 0 && um.rows() % steps == 0, "complex_scan: rows not divisible by steps");
        let batch = um.rows() / steps;
        let n = um.cols() / 2;
        let (lr, li) = lm.row(0).split_at(n);
        let (lr, li) = (lr.to_vec(), li.to_vec());
        let mut h = um.clone();
        for t in 1..steps {
            for b in 0..batch {
                let prev = h.row((t - 1) * batch + b).to_vec();
                let cur = h.row_mut(t * batch + b);
                for k in 0..n {
                    let (pr, pi) = (prev[k], prev[n + k]);
                    cur[k] += lr[k] * pr - li[k] * pi;
                    cur[n + k] += li[k] * pr + lr[k] * pi;
                }
            }
        }
        check_state(&h, batch * 2 * n)?;
        let rg = self.rg(u) || self.rg(lambda);
        Ok(self.push(Op::ComplexScan { u, lambda, steps }, h, rg))
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).row_block(start, len);
        let rg = self.rg(a);
        self.push(Op::Rows { a, start }, value, rg)
    }

    pub fn vstack(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vstack(&mats).unwrap_or_else(|e| panic!("{e}"));
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::VStack(parts.to_vec()), value, rg)
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        let value = Matrix::from_fn(m.rows(), len, |i, j| m[(i, start + j)]);
        let rg = self.rg(a);
        self.push(Op::Cols { a, start }, value, rg)
    }

    pub fn hstack(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::hstack(&mats).unwrap_or_else(|e| panic!("{e}"));
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::HStack(parts.to_vec()), value, rg)
    }

    /// `½ Σ a²`.
    pub fn half_sum_squares(&mut self, a: Var) -> Var {
        let s = 0.5 * self.value(a).data().iter().map(|x| x * x).sum::<f64>();
        let rg = self.rg(a);
        self.push(Op::HalfSumSquares(a), Matrix::filled(1, 1, s), rg)
    }

    /// `Σ_r w_r · ½‖pred_r − target_r‖² / Σ_r w_r`.
    pub fn masked_mse(&mut self, pred: Var, target: Matrix, weights: Vec<f64>) -> Var {
        let p = self.value(pred);
        check_shape("masked_mse", p, &target);
        assert_eq!(weights.len(), p.rows(), "masked_mse: one weight per row");
        let wsum: f64 = weights.iter().sum();
        assert!(wsum > 0.0, "masked_mse: empty mask");
        let mut loss = 0.0;
        for (r, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let se: f64 = p.row(r).iter().zip(target.row(r)).map(|(a, b)| (a - b).powi(2)).sum();
            loss += w * 0.5 * se;
        }
        let rg = self.rg(pred);
        self.push(
            Op::MaskedMse {
                pred,
                target,
                weights,
            },
            Matrix::filled(1, 1, loss / wsum),
            rg,
        )
    }

    /// Mean softmax cross-entropy over rows that carry a label.
    pub fn softmax_xent(&mut self, logits: Var, labels: Vec<Option<usize>>) -> Var {
        let l = self.value(logits);
        assert_eq!(labels.len(), l.rows(), "softmax_xent: one label slot per row");
        let count = labels.iter().filter(|x| x.is_some()).count();
        assert!(count > 0, "softmax_xent: no labelled rows");
        let mut loss = 0.0;
        for (r, lab) in labels.iter().enumerate() {
            if let Some(c) = lab {
                let row = l.row(r);
                loss += log_sum_exp(row) - row[*c];
            }
        }
        let rg = self.rg(logits);
        self.push(
            Op::SoftmaxXent { logits, labels },
            Matrix::filled(1, 1, loss / count as f64),
            rg,
        )
    }

    /// Records a value computed outside the tape. It has no gradient rule:
    /// backpropagating through it is an error.
    pub fn custom(&mut self, label: &str, inputs: &[Var], value: Matrix) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            Op::Custom {
                label: label.to_string(),
                inputs: inputs.to_vec(),
            },
            value,
            rg,
        )
    }

    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let root_val = self.value(root);
        grads[root.0] = Some(Matrix::filled(root_val.rows(), root_val.cols(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let send = |v: Var, contrib: Matrix, grads: &mut Vec<Option<Matrix>>| {
                if !self.rg(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&contrib).expect("gradient shape"),
                    slot => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMulT(a, w) => {
                    if self.rg(*a) {
                        send(*a, g.matmul(self.value(*w)).expect("shape"), &mut grads);
                    }
                    if self.rg(*w) {
                        send(*w, g.t_matmul(self.value(*a)).expect("shape"), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g.clone(), &mut grads);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone(), &mut grads);
                    send(*b, g.scale(-1.0), &mut grads);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        send(*a, g.hadamard(self.value(*b)).expect("shape"), &mut grads);
                    }
                    if self.rg(*b) {
                        send(*b, g.hadamard(self.value(*a)).expect("shape"), &mut grads);
                    }
                }
                Op::AddRow(a, row) => {
                    send(*a, g.clone(), &mut grads);
                    if self.rg(*row) {
                        send(*row, column_sums(&g), &mut grads);
                    }
                }
                Op::MulRow(a, row) => {
                    let r = self.value(*row);
                    if self.rg(*a) {
                        let mut ga = g.clone();
                        for i in 0..ga.rows() {
                            for (x, &s) in ga.row_mut(i).iter_mut().zip(r.row(0)) {
                                *x *= s;
                            }
                        }
                        send(*a, ga, &mut grads);
                    }
                    if self.rg(*row) {
                        let prod = g.hadamard(self.value(*a)).expect("shape");
                        send(*row, column_sums(&prod), &mut grads);
                    }
                }
                Op::Affine(a, s) => send(*a, g.scale(*s), &mut grads),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(*a, g.zip_map(y, |gi, yi| gi * yi * (1.0 - yi)).expect("shape"), &mut grads);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    send(*a, g.zip_map(y, |gi, yi| gi * (1.0 - yi * yi)).expect("shape"), &mut grads);
                }
                Op::Exp(a) => {
                    send(*a, g.hadamard(&node.value).expect("shape"), &mut grads);
                }
                Op::Sin(a) => {
                    let x = self.value(*a);
                    send(*a, g.zip_map(x, |gi, xi| gi * xi.cos()).expect("shape"), &mut grads);
                }
                Op::Cos(a) => {
                    let x = self.value(*a);
                    send(*a, g.zip_map(x, |gi, xi| -gi * xi.sin()).expect("shape"), &mut grads);
                }
                Op::DiagScan { u, lambda, steps } => {
                    let (gu, gl) = diag_scan_backward(&g, &node.value, self.value(*lambda), *steps);
                    send(*u, gu, &mut grads);
                    send(*lambda, gl, &mut grads);
                }
                Op::ComplexScan { u, lambda, steps } => {
                    let (gu, gl) = complex_scan_backward(&g, &node.value, self.value(*lambda), *steps);
                    send(*u, gu, &mut grads);
                    send(*lambda, gl, &mut grads);
                }
                Op::Rows { a, start } => {
                    let am = self.value(*a);
                    let mut ga = Matrix::zeros(am.rows(), am.cols());
                    let w = am.cols();
                    ga.data_mut()[start * w..start * w + g.len()].copy_from_slice(g.data());
                    send(*a, ga, &mut grads);
                }
                Op::VStack(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        send(p, g.row_block(off, r), &mut grads);
                        off += r;
                    }
                }
                Op::Cols { a, start } => {
                    let am = self.value(*a);
                    let mut ga = Matrix::zeros(am.rows(), am.cols());
                    for i in 0..g.rows() {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    send(*a, ga, &mut grads);
                }
                Op::HStack(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let part = Matrix::from_fn(g.rows(), c, |i, j| g[(i, off + j)]);
                        send(p, part, &mut grads);
                        off += c;
                    }
                }
                Op::HalfSumSquares(a) => {
                    let s = g[(0, 0)];
                    send(*a, self.value(*a).scale(s), &mut grads);
                }
                Op::MaskedMse {
                    pred,
                    target,
                    weights,
                } => {
                    let s = g[(0, 0)] / weights.iter().sum::<f64>();
                    let p = self.value(*pred);
                    let mut gp = Matrix::zeros(p.rows(), p.cols());
                    for (r, &w) in weights.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let (pr, tr) = (p.row(r), target.row(r));
                        for (k, x) in gp.row_mut(r).iter_mut().enumerate() {
                            *x = s * w * (pr[k] - tr[k]);
                        }
                    }
                    send(*pred, gp, &mut grads);
                }
                Op::SoftmaxXent { logits, labels } => {
                    let count = labels.iter().filter(|x| x.is_some()).count() as f64;
                    let s = g[(0, 0)] / count;
                    let l = self.value(*logits);
                    let mut gl = Matrix::zeros(l.rows(), l.cols());
                    for (r, lab) in labels.iter().enumerate() {
                        if let Some(c) = lab {
                            let row = l.row(r);
                            let lse = log_sum_exp(row);
                            for (k, x) in gl.row_mut(r).iter_mut().enumerate() {
                                *x = s * ((row[k] - lse).exp() - if k == *c { 1.0 } else { 0.0 });
                            }
                        }
                    }
                    send(*logits, gl, &mut grads);
                }
                Op::Custom { label, inputs } => {
                    if inputs.iter().any(|&v| self.rg(v)) {
                        return Err(Error::Unregistered(label.clone()));
                    }
                }
            }
            // Keep gradients of leaves (parameters) after propagation.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        // Leaves are visited in the loop above; the `take` there removed
        // intermediate gradients, which are not part of the result.
        Ok(Gradients { grads })
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, &x) in out.row_mut(0).iter_mut().zip(g.row(i)) {
            *o += x;
        }
    }
    out
}

fn check_state(h: &Matrix, block: usize) -> Result<()> {
    for (i, &x) in h.data().iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFinite { step: i / block });
        }
        if x.abs() > STATE_LIMIT {
            return Err(Error::Overflow {
                step: i / block,
                magnitude: x.abs(),
            });
        }
    }
    Ok(())
}

/// Checks a per-step state block against the divergence guard.
pub fn guard_state(h: &Matrix, step: usize) -> Result<()> {
    check_state(h, usize::MAX).map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFinite { step },
        Error::Overflow { magnitude, .. } => Error::Overflow { step, magnitude },
        other => other,
    })
}

fn diag_scan_backward(g: &Matrix, h: &Matrix, lambda: &Matrix, steps: usize) -> (Matrix, Matrix) {
    let n = h.cols();
    let batch = h.rows() / steps;
    let lam = lambda.row(0);
    let mut gu = g.clone();
    let mut gl = vec![0.0; n];
    let block = batch * n;
    for t in (0..steps).rev() {
        if t + 1 < steps {
            let (cur, next) = gu.data_mut().split_at_mut((t + 1) * block);
            let cur = &mut cur[t * block..];
            for (i, x) in cur.iter_mut().enumerate() {
                *x += lam[i % n] * next[i];
            }
        }
        if t > 0 {
            let gcur = &gu.data()[t * block..(t + 1) * block];
            let hprev = &h.data()[(t - 1) * block..t * block];
            for i in 0..block {
                gl[i % n] += gcur[i] * hprev[i];
            }
        }
    }
    (gu, Matrix::row_vector(&gl))
}

fn complex_scan_backward(g: &Matrix, h: &Matrix, lambda: &Matrix, steps: usize) -> (Matrix, Matrix) {
    let n = h.cols() / 2;
    let batch = h.rows() / steps;
    let (lr, li) = lambda.row(0).split_at(n);
    let mut gu = g.clone();
    let mut glr = vec![0.0; n];
    let mut gli = vec![0.0; n];
    for t in (0..steps).rev() {
        for b in 0..batch {
            let r = t * batch + b;
            if t + 1 < steps {
                let next = gu.row((t + 1) * batch + b).to_vec();
                let cur = gu.row_mut(r);
                for k in 0..n {
                    let (gr, gi) = (next[k], next[n + k]);
                    // conj(λ) · G
                    cur[k] += lr[k] * gr + li[k] * gi;
                    cur[n + k] += lr[k] * gi - li[k] * gr;
                }
            }
            if t > 0 {
                let gc = gu.row(r);
                let hp = h.row((t - 1) * batch + b);
                for k in 0..n {
                    let (gr, gi) = (gc[k], gc[n + k]);
                    let (hr, hi) = (hp[k], hp[n + k]);
                    glr[k] += gr * hr + gi * hi;
                    gli[k] += gi * hr - gr * hi;
                }
            }
        }
    }
    let mut gl = glr;
    gl.extend(gli);
    (gu, Matrix::row_vector(&gl))
}
