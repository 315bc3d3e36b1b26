//! Graded polynomials in `(z, conj z, rho)` with parts of degree at most two
//! in the continuous component `f`.
//!
//! A term is `z^mu conj(z)^nu rho^r` times one of `c`, `<a, f>` or
//! `1/2 <B f, f>`. The grading weight is `|mu| + |nu| + 2|r| + deg_f`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::space::PhaseSpace;

/// Exponents of `z^mu conj(z)^nu rho^r`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Monomial {
    pub mu: Vec<u32>,
    pub nu: Vec<u32>,
    pub rho: Vec<u32>,
}

impl Monomial {
    pub fn new(mu: Vec<u32>, nu: Vec<u32>, rho: Vec<u32>) -> Self {
        assert_eq!(mu.len(), nu.len(), "mu and nu must have equal length");
        Self { mu, nu, rho }
    }

    pub fn one(n_modes: usize, n_sym: usize) -> Self {
        Self::new(vec![0; n_modes], vec![0; n_modes], vec![0; n_sym])
    }

    /// `z^mu conj(z)^nu` with empty `rho`-exponents of length `n_sym`.
    pub fn z(mu: &[u32], nu: &[u32], n_sym: usize) -> Self {
        Self::new(mu.to_vec(), nu.to_vec(), vec![0; n_sym])
    }

    pub fn z_degree(&self) -> u32 {
        self.mu.iter().chain(&self.nu).sum()
    }

    pub fn rho_degree(&self) -> u32 {
        self.rho.iter().sum()
    }

    pub fn weight(&self) -> u32 {
        self.z_degree() + 2 * self.rho_degree()
    }

    pub fn conj(&self) -> Self {
        Self::new(self.nu.clone(), self.mu.clone(), self.rho.clone())
    }

    /// `e . (mu - nu)`.
    pub fn frequency(&self, e: &[f64]) -> f64 {
        e.iter().zip(self.mu.iter().zip(&self.nu)).map(|(w, (a, b))| w * (*a as f64 - *b as f64)).sum()
    }

    pub fn times(&self, other: &Self) -> Self {
        let add = |a: &[u32], b: &[u32]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Self::new(add(&self.mu, &other.mu), add(&self.nu, &other.nu), add(&self.rho, &other.rho))
    }

    /// `z^mu conj(z)^nu`.
    pub fn z_value(&self, z: &[Complex64]) -> Complex64 {
        let mut v = Complex64::new(1.0, 0.0);
        for (j, zj) in z.iter().enumerate() {
            v *= zj.powu(self.mu[j]) * zj.conj().powu(self.nu[j]);
        }
        v
    }

    pub fn rho_value(&self, rho: &[f64]) -> f64 {
        self.rho.iter().zip(rho).map(|(k, r)| r.powi(*k as i32)).product()
    }

    /// `d/dz_j` (when `conj` is false) or `d/d conj(z)_j` of the monomial.
    pub fn z_derivative(&self, j: usize, conj: bool) -> Option<(f64, Self)> {
        let mut out = self.clone();
        let slot = if conj { &mut out.nu[j] } else { &mut out.mu[j] };
        if *slot == 0 {
            return None;
        }
        let k = *slot as f64;
        *slot -= 1;
        Some((k, out))
    }

    pub fn rho_derivative(&self, j: usize) -> Option<(f64, Self)> {
        if self.rho[j] == 0 {
            return None;
        }
        let mut out = self.clone();
        out.rho[j] -= 1;
        Some((self.rho[j] as f64, out))
    }
}

/// Record of content dropped by truncation: `(weight, f-degree)`.
pub type Tag = (u32, u32);

/// Normal-form class of a term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TermClass {
    /// Scalar with `e . (mu - nu) = 0`.
    Z0,
    /// `f`-linear with `|e . (nu - mu)|` in the essential spectrum.
    Z1,
    /// Scalar or `f`-linear term that a homological equation removes.
    Removable,
    /// `f`-quadratic part, kept as remainder.
    Quadratic,
}

impl TermClass {
    pub fn label(&self) -> &'static str {
        match self {
            TermClass::Z0 => "Z0",
            TermClass::Z1 => "Z1",
            TermClass::Removable => "removed",
            TermClass::Quadratic => "R2",
        }
    }
}

/// Polynomial Hamiltonian with explicit parts up to `f`-degree two.
#[derive(Clone, Debug)]
pub struct Poly {
    pub n_modes: usize,
    pub n_sym: usize,
    pub dim: usize,
    pub scalar: BTreeMap<Monomial, Complex64>,
    /// Covectors `a` of the terms `<a, f>`, acting on the continuous subspace.
    pub linear: BTreeMap<Monomial, DVector<Complex64>>,
    /// Symmetric `B` of the terms `1/2 <B f, f>`.
    pub quadratic: BTreeMap<Monomial, DMatrix<Complex64>>,
    pub tags: BTreeSet<Tag>,
}

/// `c`, `<a, f>` or `1/2 <B f, f>`.
#[derive(Clone, Debug)]
pub enum Part {
    Scalar(Complex64),
    Linear(DVector<Complex64>),
    Quadratic(DMatrix<Complex64>),
}

impl Part {
    pub fn degree(&self) -> u32 {
        match self {
            Part::Scalar(_) => 0,
            Part::Linear(_) => 1,
            Part::Quadratic(_) => 2,
        }
    }

    pub fn scaled(self, s: Complex64) -> Self {
        match self {
            Part::Scalar(c) => Part::Scalar(c * s),
            Part::Linear(a) => Part::Linear(a * s),
            Part::Quadratic(b) => Part::Quadratic(b * s),
        }
    }
}

impl Poly {
    pub fn zero(space: &PhaseSpace) -> Self {
        Self {
            n_modes: space.n_modes(),
            n_sym: space.n_sym(),
            dim: space.dim(),
            scalar: BTreeMap::new(),
            linear: BTreeMap::new(),
            quadratic: BTreeMap::new(),
            tags: BTreeSet::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.scalar.is_empty() && self.linear.is_empty() && self.quadratic.is_empty()
    }

    pub fn len(&self) -> usize {
        self.scalar.len() + self.linear.len() + self.quadratic.len()
    }

    pub fn add_scalar(&mut self, m: Monomial, c: Complex64) {
        *self.scalar.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c;
    }

    pub fn add_linear(&mut self, m: Monomial, a: &DVector<Complex64>) {
        match self.linear.get_mut(&m) {
            Some(v) => *v += a,
            None => {
                self.linear.insert(m, a.clone());
            }
        }
    }

    pub fn add_quadratic(&mut self, m: Monomial, b: &DMatrix<Complex64>) {
        match self.quadratic.get_mut(&m) {
            Some(v) => *v += b,
            None => {
                self.quadratic.insert(m, b.clone());
            }
        }
    }

    pub fn add_part(&mut self, m: Monomial, p: Part) {
        match p {
            Part::Scalar(c) => self.add_scalar(m, c),
            Part::Linear(a) => self.add_linear(m, &a),
            Part::Quadratic(b) => self.add_quadratic(m, &b),
        }
    }

    /// `self + s * other`.
    pub fn axpy(&mut self, s: Complex64, other: &Poly) {
        for (m, c) in &other.scalar {
            self.add_scalar(m.clone(), c * s);
        }
        for (m, a) in &other.linear {
            self.add_linear(m.clone(), &(a * s));
        }
        for (m, b) in &other.quadratic {
            self.add_quadratic(m.clone(), &(b * s));
        }
        self.tags.extend(other.tags.iter().copied());
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        let mut out = self.clone();
        out.scalar.values_mut().for_each(|c| *c *= s);
        out.linear.values_mut().for_each(|a| *a *= s);
        out.quadratic.values_mut().for_each(|b| *b *= s);
        out
    }

    /// Drops parts whose largest entry is exactly zero.
    pub fn prune(&mut self) {
        self.scalar.retain(|_, c| c.norm() > 0.0);
        self.linear.retain(|_, a| a.iter().any(|v| v.norm() > 0.0));
        self.quadratic.retain(|_, b| b.iter().any(|v| v.norm() > 0.0));
    }

    /// Smallest grading weight over all terms, `None` when empty.
    pub fn min_weight(&self) -> Option<u32> {
        let s = self.scalar.keys().map(|m| m.weight());
        let l = self.linear.keys().map(|m| m.weight() + 1);
        let q = self.quadratic.keys().map(|m| m.weight() + 2);
        s.chain(l).chain(q).min()
    }

    pub fn max_weight(&self) -> Option<u32> {
        let s = self.scalar.keys().map(|m| m.weight());
        let l = self.linear.keys().map(|m| m.weight() + 1);
        let q = self.quadratic.keys().map(|m| m.weight() + 2);
        s.chain(l).chain(q).max()
    }

    /// Keeps terms of weight at most `cap` and tags the rest.
    pub fn truncate(&mut self, cap: u32) {
        let mut dropped = Vec::new();
        self.scalar.retain(|m, _| {
            let keep = m.weight() <= cap;
            if !keep {
                dropped.push((m.weight(), 0));
            }
            keep
        });
        self.linear.retain(|m, _| {
            let keep = m.weight() + 1 <= cap;
            if !keep {
                dropped.push((m.weight() + 1, 1));
            }
            keep
        });
        self.quadratic.retain(|m, _| {
            let keep = m.weight() + 2 <= cap;
            if !keep {
                dropped.push((m.weight() + 2, 2));
            }
            keep
        });
        self.tags.extend(dropped);
    }

    /// Largest violation of `a_{mu nu} = conj(a_{nu mu})` over all parts.
    pub fn reality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (m, c) in &self.scalar {
            let other = self.scalar.get(&m.conj()).copied().unwrap_or_default();
            worst = worst.max((c - other.conj()).norm());
        }
        for (m, a) in &self.linear {
            let d = match self.linear.get(&m.conj()) {
                Some(b) => (a - b.map(|v| v.conj())).camax(),
                None => a.camax(),
            };
            worst = worst.max(d);
        }
        for (m, a) in &self.quadratic {
            let d = match self.quadratic.get(&m.conj()) {
                Some(b) => (a - b.map(|v| v.conj())).camax(),
                None => a.camax(),
            };
            worst = worst.max(d);
        }
        worst
    }

    /// Replaces every coefficient by the average with its mirror image, which
    /// removes roundoff violations of the reality symmetry.
    pub fn symmetrize(&mut self) {
        let keys: Vec<Monomial> = self.scalar.keys().cloned().collect();
        for m in keys {
            let c = self.scalar[&m];
            let d = self.scalar.get(&m.conj()).copied().unwrap_or_default();
            self.scalar.insert(m, 0.5 * (c + d.conj()));
        }
        let mirror = |a: &DVector<Complex64>| a.map(|v| v.conj());
        let keys: Vec<Monomial> = self.linear.keys().cloned().collect();
        for m in &keys {
            if !self.linear.contains_key(&m.conj()) {
                let z = DVector::zeros(self.dim);
                self.linear.insert(m.conj(), z);
            }
        }
        let keys: Vec<Monomial> = self.linear.keys().cloned().collect();
        let snapshot = self.linear.clone();
        for m in keys {
            let v = (&snapshot[&m] + mirror(&snapshot[&m.conj()])) * Complex64::new(0.5, 0.0);
            self.linear.insert(m, v);
        }
        let keys: Vec<Monomial> = self.quadratic.keys().cloned().collect();
        for m in &keys {
            if !self.quadratic.contains_key(&m.conj()) {
                self.quadratic.insert(m.conj(), DMatrix::zeros(self.dim, self.dim));
            }
        }
        let snapshot = self.quadratic.clone();
        for (m, b) in &snapshot {
            let c = &snapshot[&m.conj()];
            let v = (b + c.map(|x| x.conj())) * Complex64::new(0.5, 0.0);
            let v = (&v + v.transpose()) * Complex64::new(0.5, 0.0);
            self.quadratic.insert(m.clone(), v);
        }
    }

    /// Explicit value at `(z, f)` with `rho = Pi(f)`, complex before
    /// taking the real part.
    pub fn evaluate_complex(&self, space: &PhaseSpace, z: &[Complex64], f: &DVector<f64>) -> Complex64 {
        let h = space.spacing();
        let rho = space.rho(f);
        let fc = f.map(|v| Complex64::new(v, 0.0));
        let mut total = Complex64::new(0.0, 0.0);
        for (m, c) in &self.scalar {
            total += c * m.z_value(z) * m.rho_value(&rho);
        }
        for (m, a) in &self.linear {
            total += a.dot(&fc) * h * m.z_value(z) * m.rho_value(&rho);
        }
        for (m, b) in &self.quadratic {
            total += (b * &fc).dot(&fc) * (0.5 * h) * m.z_value(z) * m.rho_value(&rho);
        }
        total
    }

    /// Real value at `(z, f)`.
    pub fn evaluate(&self, space: &PhaseSpace, z: &[Complex64], f: &DVector<f64>) -> f64 {
        self.evaluate_complex(space, z, f).re
    }

    /// Hamiltonian vector field `(dz/dt, df/dt) = (i dH/d conj z, K grad_f H)`
    /// of a real polynomial.
    pub fn vector_field(
        &self,
        space: &PhaseSpace,
        z: &[Complex64],
        f: &DVector<f64>,
    ) -> (Vec<Complex64>, DVector<f64>) {
        let h = space.spacing();
        let rho = space.rho(f);
        let fc = f.map(|v| Complex64::new(v, 0.0));
        let mut dz = vec![Complex64::new(0.0, 0.0); self.n_modes];
        let mut grad = DVector::<Complex64>::zeros(self.dim);
        let part_value = |p: &Part| -> Complex64 {
            match p {
                Part::Scalar(c) => *c,
                Part::Linear(a) => a.dot(&fc) * h,
                Part::Quadratic(b) => (b * &fc).dot(&fc) * (0.5 * h),
            }
        };
        let diamond_f: Vec<DVector<Complex64>> = space.diamonds().iter().map(|d| d * &fc).collect();
        let mut visit = |m: &Monomial, p: Part| {
            let zv = m.z_value(z);
            let rv = m.rho_value(&rho);
            let pv = part_value(&p);
            for (j, dzj) in dz.iter_mut().enumerate() {
                if let Some((k, dm)) = m.z_derivative(j, true) {
                    *dzj += Complex64::new(0.0, 1.0) * k * dm.z_value(z) * rv * pv;
                }
            }
            for (j, df) in diamond_f.iter().enumerate() {
                if let Some((k, dm)) = m.rho_derivative(j) {
                    grad.axpy(zv * k * dm.rho_value(&rho) * pv, df, Complex64::new(1.0, 0.0));
                }
            }
            match p {
                Part::Scalar(_) => {}
                Part::Linear(a) => grad.axpy(zv * rv, &a, Complex64::new(1.0, 0.0)),
                Part::Quadratic(b) => {
                    let bs = (&b + b.transpose()) * Complex64::new(0.5, 0.0);
                    grad.axpy(zv * rv, &(bs * &fc), Complex64::new(1.0, 0.0));
                }
            }
        };
        for (m, c) in &self.scalar {
            visit(m, Part::Scalar(*c));
        }
        for (m, a) in &self.linear {
            visit(m, Part::Linear(a.clone()));
        }
        for (m, b) in &self.quadratic {
            visit(m, Part::Quadratic(b.clone()));
        }
        let df = space.k_apply(&grad).map(|v| v.re);
        (dz, df)
    }

    /// Field coefficient `G = J a` of an `f`-linear term.
    pub fn field_coefficient(&self, space: &PhaseSpace, m: &Monomial) -> Option<DVector<Complex64>> {
        self.linear.get(m).map(|a| space.j_apply(a))
    }
}
