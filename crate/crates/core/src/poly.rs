//! Sparse multivariate polynomials with real coefficients.
//!
//! Used to extract the exact instantaneous input→output map of networks
//! built from linear maps and elementwise products, and to compare two such
//! maps coefficient by coefficient.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{shape_err, Error, Result};
use crate::numerics::Matrix;

/// Coefficients with magnitude below this are dropped by [`Polynomial::normalize`].
pub const PRUNE_THRESHOLD: f64 = 1e-12;
/// Guards the all-zero case in [`coefficient_distance`].
pub const DISTANCE_EPS: f64 = 1e-30;
/// Largest tolerated coefficient above the comparison degree.
pub const DEGREE_TOLERANCE: f64 = 1e-10;

pub type Exponent = Vec<u32>;

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Exponent, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The polynomial `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable {i} out of range for {nvars} vars");
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(e, 1.0);
        p
    }

    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (Exponent, f64)>) -> Result<Self> {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            if e.len() != nvars {
                return shape_err("polynomial", format!("exponent of length {} for {nvars} vars", e.len()));
            }
            p.add_term(e, c);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponent, f64)> {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, e: &[u32]) -> f64 {
        self.terms.get(e).copied().unwrap_or(0.0)
    }

    fn add_term(&mut self, e: Exponent, c: f64) {
        if c == 0.0 {
            return;
        }
        *self.terms.entry(e).or_insert(0.0) += c;
    }

    /// Drops coefficients below [`PRUNE_THRESHOLD`].
    pub fn normalize(&mut self) {
        self.terms.retain(|_, c| c.abs() >= PRUNE_THRESHOLD);
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree of the highest-degree stored monomial (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        self.terms.keys().map(|e| total_degree(e)).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_vars(other)?;
        let mut out = self.clone();
        for (e, &c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        out.normalize();
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (e, &c) in &self.terms {
            out.add_term(e.clone(), c * s);
        }
        out.normalize();
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_vars(other)?;
        let mut out = Polynomial::zero(self.nvars);
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &other.terms {
                let e: Exponent = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out.normalize();
        Ok(out)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.nvars {
            return shape_err("poly_eval", format!("{} values for {} vars", x.len(), self.nvars));
        }
        Ok(self
            .terms
            .iter()
            .map(|(e, &c)| {
                c * e
                    .iter()
                    .zip(x)
                    .map(|(&k, &xi)| xi.powi(k as i32))
                    .product::<f64>()
            })
            .sum())
    }

    /// Dense coefficients over all monomials of degree ≤ `max_degree`, in grlex order.
    pub fn dense_coefficients(&self, max_degree: usize) -> Vec<f64> {
        monomials_grlex(self.nvars, max_degree)
            .iter()
            .map(|e| self.coefficient(e))
            .collect()
    }

    fn check_vars(&self, other: &Polynomial) -> Result<()> {
        if self.nvars != other.nvars {
            return shape_err("polynomial", format!("{} vs {} vars", self.nvars, other.nvars));
        }
        Ok(())
    }
}

pub fn total_degree(e: &[u32]) -> usize {
    e.iter().map(|&k| k as usize).sum()
}

/// All exponent vectors of total degree ≤ `max_degree`, graded then lexicographic
/// (higher power of earlier variables first).
pub fn monomials_grlex(nvars: usize, max_degree: usize) -> Vec<Exponent> {
    fn fill(rest: usize, pos: usize, cur: &mut Exponent, out: &mut Vec<Exponent>) {
        if pos + 1 == cur.len() {
            cur[pos] = rest as u32;
            out.push(cur.clone());
            return;
        }
        for k in (0..=rest).rev() {
            cur[pos] = k as u32;
            fill(rest - k, pos + 1, cur, out);
        }
    }
    let mut out = Vec::new();
    if nvars == 0 {
        out.push(Vec::new());
        return out;
    }
    let mut cur = vec![0; nvars];
    for deg in 0..=max_degree {
        fill(deg, 0, &mut cur, &mut out);
    }
    out
}

/// One polynomial per output unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyVector {
    pub components: Vec<Polynomial>,
}

impl PolyVector {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        if let Some(first) = components.first() {
            if components.iter().any(|p| p.nvars != first.nvars) {
                return shape_err("poly_vector", "components disagree on nvars");
            }
        }
        Ok(PolyVector { components })
    }

    /// The identity map `(x_1, …, x_n)`.
    pub fn variables(nvars: usize) -> Self {
        PolyVector {
            components: (0..nvars).map(|i| Polynomial::var(nvars, i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn nvars(&self) -> Option<usize> {
        self.components.first().map(|p| p.nvars)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &PolyVector) -> Result<PolyVector> {
        if self.len() != other.len() {
            return shape_err("poly_hadamard", format!("{} vs {}", self.len(), other.len()));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.mul(b))
            .collect::<Result<_>>()?;
        Ok(PolyVector { components })
    }

    pub fn add(&self, other: &PolyVector) -> Result<PolyVector> {
        if self.len() != other.len() {
            return shape_err("poly_add", format!("{} vs {}", self.len(), other.len()));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.add(b))
            .collect::<Result<_>>()?;
        Ok(PolyVector { components })
    }

    pub fn max_degree(&self) -> usize {
        self.components.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|p| p.eval(x)).collect()
    }
}

/// `out_i = Σ_j weights[i, j] · polys_j`.
pub fn linear_combine(weights: &Matrix, polys: &PolyVector) -> Result<PolyVector> {
    if weights.cols() != polys.len() {
        return shape_err(
            "poly_linear_combine",
            format!("{} weight columns vs {} polynomials", weights.cols(), polys.len()),
        );
    }
    let nvars = polys.nvars().unwrap_or(0);
    let components = (0..weights.rows())
        .map(|i| {
            let mut acc = Polynomial::zero(nvars);
            for (j, p) in polys.components.iter().enumerate() {
                let w = weights[(i, j)];
                if w == 0.0 {
                    continue;
                }
                for (e, &c) in &p.terms {
                    acc.add_term(e.clone(), w * c);
                }
            }
            acc.normalize();
            acc
        })
        .collect();
    Ok(PolyVector { components })
}

/// Adds a per-component constant.
pub fn add_constants(polys: &PolyVector, c: &[f64]) -> Result<PolyVector> {
    if c.len() != polys.len() {
        return shape_err("poly_add_constants", format!("{} vs {}", c.len(), polys.len()));
    }
    let nvars = polys.nvars().unwrap_or(0);
    let components = polys
        .components
        .iter()
        .zip(c)
        .map(|(p, &ci)| p.add(&Polynomial::constant(nvars, ci)))
        .collect::<Result<_>>()?;
    Ok(PolyVector { components })
}

/// Mean over output units of `‖c_p − c_q‖ / max(‖c_p‖, ‖c_q‖, ε)`, with `c` the
/// dense coefficient vectors up to `max_degree`.
pub fn coefficient_distance(p: &PolyVector, q: &PolyVector, max_degree: usize) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return shape_err(
            "coefficient_distance",
            format!("{} vs {} output units", p.len(), q.len()),
        );
    }
    if p.nvars() != q.nvars() {
        return shape_err("coefficient_distance", "operands disagree on nvars");
    }
    for poly in p.components.iter().chain(&q.components) {
        for (e, c) in poly.terms() {
            let degree = total_degree(e);
            if degree > max_degree && c.abs() > DEGREE_TOLERANCE {
                return Err(Error::DegreeOverflow {
                    degree,
                    max_degree,
                    coef: c,
                });
            }
        }
    }
    let mut total = 0.0;
    for (a, b) in p.components.iter().zip(&q.components) {
        let ca = a.dense_coefficients(max_degree);
        let cb = b.dense_coefficients(max_degree);
        let diff = ca.iter().zip(&cb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = ca.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = cb.iter().map(|x| x * x).sum::<f64>().sqrt();
        total += diff / na.max(nb).max(DISTANCE_EPS);
    }
    Ok(total / p.len() as f64)
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    exp: Exponent,
    coef: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    nvars: usize,
    terms: Vec<TermRepr>,
}

impl Serialize for Polynomial {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyRepr {
            nvars: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(e, &c)| TermRepr {
                    exp: e.clone(),
                    coef: c,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PolyRepr::deserialize(d)?;
        Polynomial::from_terms(repr.nvars, repr.terms.into_iter().map(|t| (t.exp, t.coef)))
            .map_err(serde::de::Error::custom)
    }
}
