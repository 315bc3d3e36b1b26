//! Linear data of the spectral splitting `R = sum (z xi + c.c.) + f` used by
//! the polynomial algebra.

use std::collections::BTreeMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::linearize::{complexify, LinearizedOperator, Resolvent, SpectralFrame};
use crate::modulation::Chart;

use super::NormalFormError;

/// Dense operators on the continuous subspace together with the frame.
pub struct PhaseSpace {
    h: f64,
    components: usize,
    e: Vec<f64>,
    edge: f64,
    big_n: usize,
    resonance_tol: f64,
    /// `K = P_c J`, the Poisson tensor on `X_c`.
    k: DMatrix<Complex64>,
    kt: DMatrix<Complex64>,
    j: DMatrix<Complex64>,
    jinv: DMatrix<Complex64>,
    pc: DMatrix<Complex64>,
    pct: DMatrix<Complex64>,
    pc_real: DMatrix<f64>,
    symmetric: DMatrix<f64>,
    diamonds: Vec<DMatrix<Complex64>>,
    diamonds_real: Vec<DMatrix<f64>>,
    op: LinearizedOperator,
    frame: SpectralFrame,
    resolvents: Mutex<BTreeMap<i64, std::sync::Arc<Resolvent>>>,
}

fn lift(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

impl PhaseSpace {
    pub fn from_chart(chart: &Chart) -> Self {
        let model = &chart.model;
        let n = model.grid().n_points();
        let j = model.symplectic().dense(n);
        let jinv = model.symplectic().dense_inverse(n);
        let k = &chart.pc * &j;
        let diamonds_real: Vec<DMatrix<f64>> = model.generator_matrices().to_vec();
        Self {
            h: model.grid().spacing(),
            components: model.components(),
            e: chart.frame.frequencies(),
            edge: chart.frame.edge,
            big_n: chart.frame.big_n,
            resonance_tol: 1e-9,
            kt: lift(&k.transpose()),
            k: lift(&k),
            j: lift(&j),
            jinv: lift(&jinv),
            pc: lift(&chart.pc),
            pct: lift(&chart.pc.transpose()),
            pc_real: chart.pc.clone(),
            symmetric: chart.op.symmetric.clone(),
            diamonds: diamonds_real.iter().map(lift).collect(),
            diamonds_real,
            op: chart.op.clone(),
            frame: chart.frame.clone(),
            resolvents: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.e.len()
    }

    pub fn n_sym(&self) -> usize {
        self.diamonds.len()
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Field components per grid point.
    pub fn n_components(&self) -> usize {
        self.components
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.e
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn big_n(&self) -> usize {
        self.big_n
    }

    pub fn resonance_tol(&self) -> f64 {
        self.resonance_tol
    }

    pub fn frame(&self) -> &SpectralFrame {
        &self.frame
    }

    pub fn operator(&self) -> &LinearizedOperator {
        &self.op
    }

    pub fn k(&self) -> &DMatrix<Complex64> {
        &self.k
    }

    pub fn kt(&self) -> &DMatrix<Complex64> {
        &self.kt
    }

    pub fn diamonds(&self) -> &[DMatrix<Complex64>] {
        &self.diamonds
    }

    pub fn pc(&self) -> &DMatrix<f64> {
        &self.pc_real
    }

    /// `rho_j = 1/2 <diamond_j f, f>`.
    pub fn rho(&self, f: &DVector<f64>) -> Vec<f64> {
        self.diamonds_real.iter().map(|d| 0.5 * self.h * (d * f).dot(f)).collect()
    }

    pub fn k_apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.k * v
    }

    pub fn j_apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.j * v
    }

    pub fn jinv_apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.jinv * v
    }

    pub fn pc_apply(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.pc * v
    }

    /// `P_c^T a`, the representative of a covector acting on `X_c`.
    pub fn canonical_covector(&self, a: &DVector<Complex64>) -> DVector<Complex64> {
        &self.pct * a
    }

    /// `P_c^T S P_c`, the kernel of the quadratic form `1/2 <S f, f>` on `X_c`.
    pub fn quadratic_kernel(&self) -> DMatrix<Complex64> {
        lift(&(self.pc_real.transpose() * &self.symmetric * &self.pc_real))
    }

    /// `z`-coordinates and continuous component of a real remainder.
    pub fn split(&self, r: &DVector<f64>) -> (Vec<Complex64>, DVector<f64>) {
        (self.frame.z_coordinates(r), &self.pc_real * r)
    }

    pub fn synthesize(&self, z: &[Complex64], f: &DVector<f64>) -> DVector<f64> {
        self.frame.synthesize(z) + f
    }

    /// Frame pairings `Omega(xi_j, g)` and `Omega(conj xi_j, g)`, largest modulus.
    pub fn frame_defect(&self, g: &DVector<Complex64>) -> f64 {
        let jinv_g = &self.jinv * g;
        let mut worst = 0.0f64;
        for m in &self.frame.modes {
            let a: Complex64 = m.xi.iter().zip(jinv_g.iter()).map(|(x, y)| x * y).sum::<Complex64>() * self.h;
            let b: Complex64 = m.xi.iter().zip(jinv_g.iter()).map(|(x, y)| x.conj() * y).sum::<Complex64>() * self.h;
            worst = worst.max(a.norm()).max(b.norm());
        }
        worst
    }

    /// `R_H(i omega) P_c g`, factorizations cached per frequency.
    pub fn resolvent_apply(&self, omega: f64, g: &DVector<Complex64>) -> Result<DVector<Complex64>, NormalFormError> {
        let key = (omega * 1e9).round() as i64;
        let cached = self.resolvents.lock().expect("resolvent cache").get(&key).cloned();
        let res = match cached {
            Some(r) => r,
            None => {
                let r = Resolvent::new(&self.op, &self.pc_real, &self.frame, Complex64::new(0.0, omega), 1e-6)
                    .map_err(|e| NormalFormError::Resolvent { omega, reason: e.to_string() })?;
                let r = std::sync::Arc::new(r);
                self.resolvents.lock().expect("resolvent cache").insert(key, r.clone());
                r
            }
        };
        res.apply(g, 1).map_err(|e| NormalFormError::Resolvent { omega, reason: e.to_string() })
    }

    /// `H g` with the dense linearized operator.
    pub fn h_apply(&self, g: &DVector<Complex64>) -> DVector<Complex64> {
        let re = &self.op.matrix * g.map(|c| c.re);
        let im = &self.op.matrix * g.map(|c| c.im);
        complexify(&re) + complexify(&im) * Complex64::new(0.0, 1.0)
    }
}
