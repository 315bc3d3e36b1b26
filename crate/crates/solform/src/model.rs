//! Hamiltonian models `E(U) = 1/2 <D U, U> + \int B(|U|^2)` with a symmetry
//! group generated by commuting symmetric operators.
//!
//! The kinetic operator is `D = -d^2/dx^2 + V(x)` acting on every component
//! and `B` is a polynomial without constant or linear term.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Generator, Grid, GridError, GridFunction, Symplectic};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Polynomial `B(s) = sum_k c_k s^k` with `k >= 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearity {
    terms: Vec<(u32, f64)>,
}

impl Nonlinearity {
    pub fn new(terms: Vec<(u32, f64)>) -> Result<Self, ModelError> {
        if terms.iter().any(|(k, _)| *k < 2) {
            return Err(ModelError::Invalid(
                "nonlinearity must vanish to second order at the origin".into(),
            ));
        }
        Ok(Self { terms })
    }

    /// Focusing cubic: `B(s) = -s^2 / 2`.
    pub fn cubic() -> Self {
        Self { terms: vec![(2, -0.5)] }
    }

    /// Focusing cubic with a defocusing quintic correction.
    pub fn cubic_quintic(quintic: f64) -> Self {
        Self {
            terms: vec![(2, -0.5), (3, quintic)],
        }
    }

    /// `B^{(order)}(s)`.
    pub fn derivative(&self, order: u32, s: f64) -> f64 {
        self.terms
            .iter()
            .filter(|(k, _)| *k >= order)
            .map(|&(k, c)| {
                let falling: f64 = (0..order).map(|i| (k - i) as f64).product();
                c * falling * s.powi((k - order) as i32)
            })
            .sum()
    }
}

/// The built-in model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Translation-invariant cubic Schrödinger equation; charge and momentum.
    CubicNls,
    /// Cubic Schrödinger equation with the well `-6 sech^2 x`; charge only.
    PotentialWell,
}

/// A concrete Hamiltonian system on a grid.
pub struct Model {
    kind: ModelKind,
    grid: Grid,
    symplectic: Symplectic,
    potential: Option<Vec<f64>>,
    nonlinearity: Nonlinearity,
    generators: Vec<Generator>,
    kinetic_dense: OnceLock<DMatrix<f64>>,
    generator_dense: OnceLock<Vec<DMatrix<f64>>>,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("kind", &self.kind)
            .field("grid", &self.grid)
            .field("generators", &self.generators)
            .finish()
    }
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            grid: self.grid.clone(),
            symplectic: self.symplectic.clone(),
            potential: self.potential.clone(),
            nonlinearity: self.nonlinearity.clone(),
            generators: self.generators.clone(),
            kinetic_dense: self.kinetic_dense.clone(),
            generator_dense: self.generator_dense.clone(),
        }
    }
}

impl Model {
    /// Cubic NLS with charge and momentum symmetries.
    pub fn cubic_nls(grid: &Grid) -> Self {
        Self::build(
            ModelKind::CubicNls,
            grid,
            None,
            Nonlinearity::cubic(),
            vec![Generator::Charge, Generator::Momentum],
        )
    }

    /// Cubic NLS with the well `-6 sech^2 x`; only the charge is conserved.
    pub fn potential_well(grid: &Grid) -> Self {
        let v = grid.points().iter().map(|x| -6.0 / x.cosh().powi(2)).collect();
        Self::build(
            ModelKind::PotentialWell,
            grid,
            Some(v),
            Nonlinearity::cubic(),
            vec![Generator::Charge],
        )
    }

    /// General constructor; the generator list is taken as claimed and can be
    /// checked with [`validate_assumptions`].
    pub fn custom(
        kind: ModelKind,
        grid: &Grid,
        potential: Option<Vec<f64>>,
        nonlinearity: Nonlinearity,
        generators: Vec<Generator>,
    ) -> Result<Self, ModelError> {
        if let Some(v) = &potential {
            if v.len() != grid.n_points() {
                return Err(ModelError::Invalid("potential length must match grid".into()));
            }
        }
        if generators.is_empty() {
            return Err(ModelError::Invalid("at least one generator is required".into()));
        }
        Ok(Self::build(kind, grid, potential, nonlinearity, generators))
    }

    fn build(
        kind: ModelKind,
        grid: &Grid,
        potential: Option<Vec<f64>>,
        nonlinearity: Nonlinearity,
        generators: Vec<Generator>,
    ) -> Self {
        Self {
            kind,
            grid: grid.clone(),
            symplectic: Symplectic::standard(1),
            potential,
            nonlinearity,
            generators,
            kinetic_dense: OnceLock::new(),
            generator_dense: OnceLock::new(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn symplectic(&self) -> &Symplectic {
        &self.symplectic
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    /// Number of symmetry generators `n_0`.
    pub fn n_sym(&self) -> usize {
        self.generators.len()
    }

    pub fn components(&self) -> usize {
        self.symplectic.dim()
    }

    /// Length of the stacked real vector.
    pub fn dim(&self) -> usize {
        self.components() * self.grid.n_points()
    }

    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }

    pub fn potential(&self) -> Option<&[f64]> {
        self.potential.as_deref()
    }

    pub fn zeros(&self) -> GridFunction {
        GridFunction::zeros(&self.grid, self.components())
    }

    pub fn field(&self, v: &DVector<f64>) -> GridFunction {
        GridFunction::from_dvector(&self.grid, self.components(), v)
    }

    /// `D U = -U'' + V U`.
    pub fn kinetic(&self, u: &GridFunction) -> GridFunction {
        let mut out = u.derivative(2).scaled(-1.0);
        if let Some(v) = &self.potential {
            for c in 0..u.components() {
                let src = u.component(c).to_vec();
                for ((o, s), p) in out.component_mut(c).iter_mut().zip(src).zip(v) {
                    *o += p * s;
                }
            }
        }
        out
    }

    pub fn energy(&self, u: &GridFunction) -> f64 {
        let h = self.grid.spacing();
        let kin = 0.5 * self.kinetic(u).inner(u).expect("same shape");
        let pot: f64 = u
            .pointwise_dot(u)
            .iter()
            .map(|&s| self.nonlinearity.derivative(0, s))
            .sum();
        kin + h * pot
    }

    /// `grad E = D U + 2 B'(|U|^2) U`.
    pub fn gradient(&self, u: &GridFunction) -> GridFunction {
        let mut out = self.kinetic(u);
        let s = u.pointwise_dot(u);
        let b1: Vec<f64> = s.iter().map(|&v| 2.0 * self.nonlinearity.derivative(1, v)).collect();
        for c in 0..u.components() {
            let src = u.component(c).to_vec();
            for ((o, x), w) in out.component_mut(c).iter_mut().zip(src).zip(&b1) {
                *o += w * x;
            }
        }
        out
    }

    /// `Hess E(U) X = D X + 2 B' X + 4 B'' (U.X) U`.
    pub fn hessian_apply(&self, u: &GridFunction, x: &GridFunction) -> GridFunction {
        let mut out = self.kinetic(x);
        let s = u.pointwise_dot(u);
        let ux = u.pointwise_dot(x);
        let n = self.grid.n_points();
        for c in 0..u.components() {
            let uc = u.component(c).to_vec();
            let xc = x.component(c).to_vec();
            let oc = out.component_mut(c);
            for m in 0..n {
                oc[m] += 2.0 * self.nonlinearity.derivative(1, s[m]) * xc[m]
                    + 4.0 * self.nonlinearity.derivative(2, s[m]) * ux[m] * uc[m];
            }
        }
        out
    }

    /// Third derivative `grad^3 E(U)[X, Y]`, symmetric in `X, Y`.
    pub fn third_apply(&self, u: &GridFunction, x: &GridFunction, y: &GridFunction) -> GridFunction {
        let s = u.pointwise_dot(u);
        let ux = u.pointwise_dot(x);
        let uy = u.pointwise_dot(y);
        let xy = x.pointwise_dot(y);
        let n = self.grid.n_points();
        let mut out = GridFunction::zeros(&self.grid, u.components());
        for c in 0..u.components() {
            let (uc, xc, yc) = (u.component(c).to_vec(), x.component(c).to_vec(), y.component(c).to_vec());
            let oc = out.component_mut(c);
            for m in 0..n {
                let b2 = self.nonlinearity.derivative(2, s[m]);
                let b3 = self.nonlinearity.derivative(3, s[m]);
                oc[m] = 4.0 * b2 * (uy[m] * xc[m] + xy[m] * uc[m] + ux[m] * yc[m])
                    + 8.0 * b3 * ux[m] * uy[m] * uc[m];
            }
        }
        out
    }

    /// Dense kinetic matrix, cached.
    pub fn kinetic_matrix(&self) -> &DMatrix<f64> {
        self.kinetic_dense.get_or_init(|| {
            let n = self.grid.n_points();
            let mut block = -self.grid.derivative_matrix(2);
            if let Some(v) = &self.potential {
                for (m, p) in v.iter().enumerate() {
                    block[(m, m)] += p;
                }
            }
            let d = self.components();
            let mut out = DMatrix::zeros(d * n, d * n);
            for c in 0..d {
                out.view_mut((c * n, c * n), (n, n)).copy_from(&block);
            }
            out
        })
    }

    /// Dense generator matrices, cached.
    pub fn generator_matrices(&self) -> &[DMatrix<f64>] {
        self.generator_dense.get_or_init(|| {
            self.generators
                .iter()
                .map(|g| g.dense(&self.symplectic, &self.grid))
                .collect()
        })
    }

    /// Dense Hessian at `U`.
    pub fn hessian_matrix(&self, u: &GridFunction) -> DMatrix<f64> {
        let mut out = self.kinetic_matrix().clone();
        let n = self.grid.n_points();
        let d = self.components();
        let s = u.pointwise_dot(u);
        for m in 0..n {
            let b1 = 2.0 * self.nonlinearity.derivative(1, s[m]);
            let b2 = 4.0 * self.nonlinearity.derivative(2, s[m]);
            for a in 0..d {
                out[(a * n + m, a * n + m)] += b1;
                for b in 0..d {
                    out[(a * n + m, b * n + m)] += b2 * u.component(a)[m] * u.component(b)[m];
                }
            }
        }
        out
    }

    /// `J v` on a stacked vector.
    pub fn j_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.symplectic.apply(&self.field(v)).to_dvector()
    }

    /// `J^{-1} v` on a stacked vector.
    pub fn jinv_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.symplectic.apply_inverse(&self.field(v)).to_dvector()
    }

    /// `diamond_j v` on a stacked vector.
    pub fn diamond_vec(&self, j: usize, v: &DVector<f64>) -> DVector<f64> {
        match self.generators[j] {
            Generator::Charge => v.clone(),
            g => g.apply(&self.symplectic, &self.field(v)).to_dvector(),
        }
    }

    /// `e^{J tau . diamond} v` on a stacked vector.
    pub fn group_vec(&self, tau: &[f64], v: &DVector<f64>) -> DVector<f64> {
        self.group_action(tau, &self.field(v)).to_dvector()
    }

    /// Inner product `h * a.b` of stacked vectors.
    pub fn dot(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.grid.spacing() * a.dot(b)
    }

    pub fn diamond(&self, j: usize, u: &GridFunction) -> GridFunction {
        self.generators[j].apply(&self.symplectic, u)
    }

    /// Conserved quantities `Pi_j(U) = 1/2 <diamond_j U, U>`.
    pub fn invariants(&self, u: &GridFunction) -> Vec<f64> {
        self.generators
            .iter()
            .map(|g| g.invariant(&self.symplectic, u))
            .collect()
    }

    /// `e^{J tau . diamond} U`; the generators commute so the order is irrelevant.
    pub fn group_action(&self, tau: &[f64], u: &GridFunction) -> GridFunction {
        let mut out = u.clone();
        for (g, &t) in self.generators.iter().zip(tau) {
            if t != 0.0 {
                out = g.group_action(&self.symplectic, t, &out);
            }
        }
        out
    }

    /// Lower edge of the essential spectrum of the linearization, as a
    /// function of the Lagrange multipliers.
    pub fn essential_edge(&self, lambda: &[f64]) -> f64 {
        match self.kind {
            ModelKind::CubicNls => {
                let l1 = lambda.get(1).copied().unwrap_or(0.0);
                -lambda[0] - 0.25 * l1 * l1
            }
            ModelKind::PotentialWell => -lambda[0],
        }
    }
}

/// Outcome of one structural check.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub max_error: f64,
    pub passed: bool,
}

/// Structural checks on random smooth fields.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Random smooth localized field: a few Gaussian bumps per component.
pub fn random_smooth_field(model: &Model, rng: &mut ChaCha8Rng) -> GridFunction {
    let l = model.grid().half_width();
    // A few grid spacings wide: resolved, quartic quadrature translation
    // invariant to roundoff, and negligible at the box edge.
    let wmin = 4.0 * model.grid().spacing();
    let bumps: Vec<Vec<(f64, f64, f64)>> = (0..model.components())
        .map(|_| {
            (0..3)
                .map(|_| {
                    (
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-0.2 * l..0.2 * l),
                        rng.gen_range(wmin..1.5 * wmin),
                    )
                })
                .collect()
        })
        .collect();
    GridFunction::from_fn(model.grid(), model.components(), |c, x| {
        bumps[c]
            .iter()
            .map(|(a, x0, w)| a * (-((x - x0) / w).powi(2)).exp())
            .sum()
    })
}

/// Checks antisymmetry of `J`, symmetry of the generators, `[J, diamond] = 0`,
/// involution of the invariants and invariance of the energy under the group.
pub fn validate_assumptions(model: &Model, rng: &mut ChaCha8Rng, samples: usize) -> AssumptionReport {
    let tol = 1e-9;
    let j = model.symplectic();
    let mut checks = Vec::new();
    let anti = (j.matrix() + j.matrix().transpose()).amax();
    checks.push(AssumptionCheck {
        name: "J antisymmetric".into(),
        max_error: anti,
        passed: anti < 1e-14,
    });
    let fields: Vec<GridFunction> = (0..samples.max(2)).map(|_| random_smooth_field(model, rng)).collect();
    let mut sym = 0.0f64;
    let mut comm = 0.0f64;
    let mut invol = 0.0f64;
    let mut energy = 0.0f64;
    for pair in fields.windows(2) {
        let (u, v) = (&pair[0], &pair[1]);
        for (a, g) in model.generators().iter().enumerate() {
            let gu = g.apply(j, u);
            let gv = g.apply(j, v);
            sym = sym.max((gu.inner(v).unwrap() - u.inner(&gv).unwrap()).abs());
            let c = g.apply(j, &j.apply(u)).sub(&j.apply(&gu));
            comm = comm.max(c.norm());
            for g2 in &model.generators()[a + 1..] {
                let p = gu.inner(&j.apply(&g2.apply(j, u))).unwrap();
                invol = invol.max(p.abs());
            }
            let tau = 0.37;
            let moved = g.group_action(j, tau, u);
            let e0 = model.energy(u);
            energy = energy.max((model.energy(&moved) - e0).abs() / e0.abs().max(1.0));
        }
    }
    checks.push(AssumptionCheck { name: "generators symmetric".into(), max_error: sym, passed: sym < tol });
    checks.push(AssumptionCheck { name: "generators commute with J".into(), max_error: comm, passed: comm < tol });
    checks.push(AssumptionCheck { name: "invariants in involution".into(), max_error: invol, passed: invol < tol });
    checks.push(AssumptionCheck { name: "energy invariant under group".into(), max_error: energy, passed: energy < tol });
    AssumptionReport { checks }
}
