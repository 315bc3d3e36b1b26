//! Linearization `H = J (Hess E(Phi) - lambda . diamond)` at a soliton, its
//! generalized kernel, the discrete spectral frame and resolvents on the
//! continuous spectral subspace.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::grid::GridFunction;
use crate::model::Model;
use crate::soliton::FamilyPoint;

#[derive(Debug, Error)]
pub enum LinearizeError {
    #[error("kernel residual {0:.3e} exceeds tolerance; the input is not a soliton")]
    KernelResidual(f64),
    #[error("unstable eigenvalue {0}")]
    Unstable(Complex64),
    #[error("eigenvalues {0} and {1} are not separated; repeated discrete spectrum is unsupported")]
    Multiplicity(Complex64, Complex64),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("resolvent point {z} is within {distance:.3e} of the spectrum")]
    NearSpectrum { z: Complex64, distance: f64 },
    #[error("mode {0} has vanishing symplectic norm")]
    NullMode(usize),
}

/// Dense `H` together with the symmetric part `S = Hess - lambda . diamond`.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    pub matrix: DMatrix<f64>,
    pub symmetric: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub kernel_residual: f64,
}

/// Builds `H` at `(phi, lambda)` and checks `||H J diamond_j phi|| <= tol`.
pub fn build_h(model: &Model, phi: &GridFunction, lambda: &[f64], tol: f64) -> Result<LinearizedOperator, LinearizeError> {
    let mut s = model.hessian_matrix(phi);
    for (j, g) in model.generator_matrices().iter().enumerate() {
        s -= g * lambda[j];
    }
    let n = model.grid().n_points();
    let matrix = model.symplectic().dense(n) * &s;
    let mut worst = 0.0f64;
    for j in 0..model.n_sym() {
        let k = model.symplectic().apply(&model.diamond(j, phi)).to_dvector();
        let r = &matrix * k;
        worst = worst.max((model.grid().spacing() * r.norm_squared()).sqrt());
    }
    if worst > tol {
        return Err(LinearizeError::KernelResidual(worst));
    }
    Ok(LinearizedOperator { matrix, symmetric: s, lambda: lambda.to_vec(), kernel_residual: worst })
}

/// Projection onto the generalized kernel `N_g = span{J diamond_j Phi, d_j Phi}`
/// along its symplectic complement, with `p`-derivatives.
#[derive(Clone, Debug)]
pub struct NgProjection {
    h: f64,
    v: Vec<DVector<f64>>,
    w: Vec<DVector<f64>>,
    dv: Vec<Vec<DVector<f64>>>,
    dw: Vec<Vec<DVector<f64>>>,
    c: DMatrix<f64>,
    condition: f64,
}

impl NgProjection {
    pub fn at(model: &Model, fp: &FamilyPoint) -> Self {
        let n0 = model.n_sym();
        let h = model.grid().spacing();
        let phi = fp.phi.to_dvector();
        let dphi: Vec<DVector<f64>> = fp.dphi.iter().map(|d| d.to_dvector()).collect();
        let mut v = Vec::with_capacity(2 * n0);
        let mut w = Vec::with_capacity(2 * n0);
        for j in 0..n0 {
            v.push(model.j_vec(&model.diamond_vec(j, &phi)));
        }
        for j in 0..n0 {
            v.push(dphi[j].clone());
        }
        for j in 0..n0 {
            w.push(model.jinv_vec(&dphi[j]));
        }
        for j in 0..n0 {
            w.push(model.diamond_vec(j, &phi));
        }
        let mut dv = Vec::with_capacity(n0);
        let mut dw = Vec::with_capacity(n0);
        for k in 0..n0 {
            let d2: Vec<DVector<f64>> = (0..n0).map(|j| fp.d2phi[j][k].to_dvector()).collect();
            let mut vk = Vec::with_capacity(2 * n0);
            let mut wk = Vec::with_capacity(2 * n0);
            for j in 0..n0 {
                vk.push(model.j_vec(&model.diamond_vec(j, &dphi[k])));
            }
            for j in 0..n0 {
                vk.push(d2[j].clone());
            }
            for j in 0..n0 {
                wk.push(model.jinv_vec(&d2[j]));
            }
            for j in 0..n0 {
                wk.push(model.diamond_vec(j, &dphi[k]));
            }
            dv.push(vk);
            dw.push(wk);
        }
        let a = DMatrix::from_fn(2 * n0, 2 * n0, |r, c| h * w[r].dot(&v[c]));
        let sv = a.clone().svd(false, false).singular_values;
        let condition = sv.max() / sv.min();
        let c = a.try_inverse().expect("generalized kernel pairing must be invertible");
        Self { h, v, w, dv, dw, c, condition }
    }

    /// Condition number of the pairing between `N_g` and its test functionals.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Basis `[J diamond_j Phi, d_j Phi]` of `N_g`.
    pub fn basis(&self) -> &[DVector<f64>] {
        &self.v
    }

    /// Test functionals `[J^{-1} d_j Phi, diamond_j Phi]`.
    pub fn tests(&self) -> &[DVector<f64>] {
        &self.w
    }

    /// Vectors `q_i` with `P_{N_g} x = sum_i basis_i <q_i, x>`.
    pub fn coefficient_gradients(&self) -> Vec<DVector<f64>> {
        (0..self.v.len()).map(|i| Self::combine(&self.w, &self.c.row(i).transpose())).collect()
    }

    fn coeffs(&self, x: &DVector<f64>) -> DVector<f64> {
        let t = DVector::from_iterator(self.w.len(), self.w.iter().map(|w| self.h * w.dot(x)));
        &self.c * t
    }

    fn combine(vs: &[DVector<f64>], c: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(vs[0].len());
        for (v, a) in vs.iter().zip(c.iter()) {
            out.axpy(*a, v, 1.0);
        }
        out
    }

    /// `P_{N_g} x`.
    pub fn apply_ng(&self, x: &DVector<f64>) -> DVector<f64> {
        Self::combine(&self.v, &self.coeffs(x))
    }

    /// `P x = x - P_{N_g} x`, the projection onto the symplectic complement.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.apply_ng(x)
    }

    /// `P^* y`, adjoint for the real inner product.
    pub fn apply_adjoint(&self, y: &DVector<f64>) -> DVector<f64> {
        let t = DVector::from_iterator(self.v.len(), self.v.iter().map(|v| self.h * v.dot(y)));
        y - Self::combine(&self.w, &(self.c.transpose() * t))
    }

    fn dc(&self, k: usize) -> DMatrix<f64> {
        let m = self.v.len();
        let da = DMatrix::from_fn(m, m, |r, c| self.h * (self.dw[k][r].dot(&self.v[c]) + self.w[r].dot(&self.dv[k][c])));
        -(&self.c * da * &self.c)
    }

    /// `(d P / d p_k) x`.
    pub fn apply_dp(&self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        let t = DVector::from_iterator(self.w.len(), self.w.iter().map(|w| self.h * w.dot(x)));
        let dt = DVector::from_iterator(self.w.len(), self.dw[k].iter().map(|w| self.h * w.dot(x)));
        let c = &self.c * &t;
        let mut out = Self::combine(&self.dv[k], &c);
        out += Self::combine(&self.v, &(self.dc(k) * &t + &self.c * dt));
        -out
    }

    /// `(d P / d p_k)^* y`.
    pub fn apply_dp_adjoint(&self, k: usize, y: &DVector<f64>) -> DVector<f64> {
        let t = DVector::from_iterator(self.v.len(), self.v.iter().map(|v| self.h * v.dot(y)));
        let dt = DVector::from_iterator(self.v.len(), self.dv[k].iter().map(|v| self.h * v.dot(y)));
        let ct = self.c.transpose();
        let mut out = Self::combine(&self.dw[k], &(&ct * &t));
        out += Self::combine(&self.w, &(self.dc(k).transpose() * &t + &ct * dt));
        -out
    }

    /// Dense matrix of `P`.
    pub fn dense(&self) -> DMatrix<f64> {
        let d = self.v[0].len();
        let mut out = DMatrix::identity(d, d);
        for (a, va) in self.v.iter().enumerate() {
            for (b, wb) in self.w.iter().enumerate() {
                let coef = self.c[(a, b)] * self.h;
                if coef != 0.0 {
                    out.ger(-coef, va, wb, 1.0);
                }
            }
        }
        out
    }

    /// Inverse of `P(p) P(p0)` on the range of `P(p)`: the unique `x` in the
    /// range of `P(p0)` with `P(p) x = y`.
    pub fn transfer_from(&self, base: &NgProjection, y: &DVector<f64>) -> Result<DVector<f64>, LinearizeError> {
        let m = self.v.len();
        let a = DMatrix::from_fn(m, m, |r, c| base.h * base.w[r].dot(&self.v[c]));
        let rhs = DVector::from_iterator(m, base.w.iter().map(|w| -base.h * w.dot(y)));
        let c = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| LinearizeError::Singular("transfer pairing".into()))?;
        Ok(y + Self::combine(&self.v, &c))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralOptions {
    /// Eigenvalues with `|Re| <=` this are treated as purely imaginary.
    pub re_tol: f64,
    /// Eigenvalues closer than this are considered repeated.
    pub cluster_tol: f64,
    /// Candidates must satisfy `Im < edge - edge_margin`.
    pub edge_margin: f64,
    /// Maximal mass fraction in `|x| > L/2` for a bound state.
    pub localization: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { re_tol: 1e-6, cluster_tol: 1e-6, edge_margin: 1e-3, localization: 1e-2 }
    }
}

/// One internal mode `H xi = i e xi`, normalized by `Omega(xi, conj xi) = -i`.
#[derive(Clone, Debug)]
pub struct Mode {
    pub e_prime: f64,
    pub sign: i8,
    pub e: f64,
    pub xi: DVector<Complex64>,
    /// Weights with `z = w^T X` for real `X`.
    pub functional: DVector<Complex64>,
}

/// Discrete spectral data at the soliton.
#[derive(Clone, Debug)]
pub struct SpectralFrame {
    pub eigenvalues: Vec<Complex64>,
    pub modes: Vec<Mode>,
    pub edge: f64,
    pub n_j: Vec<usize>,
    pub big_n: usize,
    /// Eigenvalues of `H` restricted to the continuous subspace.
    pub continuum: Vec<Complex64>,
    /// Candidates rejected as box states.
    pub delocalized: Vec<Complex64>,
    pub resonance_margins: Vec<f64>,
    h: f64,
    dim: usize,
}

fn to_complex(v: &DVector<f64>) -> DVector<Complex64> {
    v.map(|x| Complex64::new(x, 0.0))
}

fn complex_j(model: &Model, v: &DVector<Complex64>, inverse: bool) -> DVector<Complex64> {
    let re = v.map(|c| c.re);
    let im = v.map(|c| c.im);
    let (a, b) = if inverse { (model.jinv_vec(&re), model.jinv_vec(&im)) } else { (model.j_vec(&re), model.j_vec(&im)) };
    DVector::from_iterator(v.len(), a.iter().zip(b.iter()).map(|(x, y)| Complex64::new(*x, *y)))
}

/// Bilinear `Omega(a, b) = <J^{-1} a, b>` for complex vectors.
pub fn omega_c(model: &Model, a: &DVector<Complex64>, b: &DVector<Complex64>) -> Complex64 {
    let ja = complex_j(model, a, true);
    ja.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<Complex64>() * model.grid().spacing()
}

fn inverse_iteration(m: &DMatrix<f64>, sigma: Complex64) -> Result<(DVector<Complex64>, Complex64), LinearizeError> {
    let d = m.nrows();
    let mut a = m.map(|x| Complex64::new(x, 0.0));
    let shift = sigma + Complex64::new(0.0, 1e-11 * sigma.norm().max(1.0));
    for i in 0..d {
        a[(i, i)] -= shift;
    }
    let lu = a.lu();
    let mut x = DVector::from_fn(d, |i, _| Complex64::new(1.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()));
    for _ in 0..4 {
        x = lu.solve(&x).ok_or_else(|| LinearizeError::Singular("inverse iteration".into()))?;
        let n = x.norm();
        x /= Complex64::new(n, 0.0);
    }
    let mc = m.map(|v| Complex64::new(v, 0.0));
    let hx = &mc * &x;
    let lam = x.dotc(&hx) / x.dotc(&x);
    Ok((x, lam))
}

fn outer_mass_fraction(model: &Model, v: &DVector<Complex64>) -> f64 {
    let n = model.grid().n_points();
    let l = model.grid().half_width();
    let pts = model.grid().points();
    let mut outer = 0.0;
    let mut total = 0.0;
    for (i, c) in v.iter().enumerate() {
        let w = c.norm_sqr();
        total += w;
        if pts[i % n].abs() > 0.5 * l {
            outer += w;
        }
    }
    outer / total
}

/// Computes the discrete spectral frame of `H`.
pub fn spectral_frame(
    model: &Model,
    op: &LinearizedOperator,
    opts: SpectralOptions,
) -> Result<SpectralFrame, LinearizeError> {
    let edge = model.essential_edge(&op.lambda);
    let eigenvalues: Vec<Complex64> = op.matrix.clone().complex_eigenvalues().iter().copied().collect();
    let kernel_cut = 1e-3;
    for ev in &eigenvalues {
        if ev.norm() > kernel_cut && ev.re.abs() > opts.re_tol * ev.norm().max(1.0) {
            return Err(LinearizeError::Unstable(*ev));
        }
    }
    let mut candidates: Vec<Complex64> = eigenvalues
        .iter()
        .copied()
        .filter(|ev| ev.norm() > kernel_cut && ev.im > 0.0 && ev.im < edge - opts.edge_margin)
        .collect();
    candidates.sort_by(|a, b| a.im.partial_cmp(&b.im).expect("finite"));
    for pair in candidates.windows(2) {
        if (pair[1] - pair[0]).norm() < opts.cluster_tol {
            return Err(LinearizeError::Multiplicity(pair[0], pair[1]));
        }
    }
    let h = model.grid().spacing();
    let mut modes = Vec::new();
    let mut delocalized = Vec::new();
    for (idx, cand) in candidates.iter().enumerate() {
        let (x, lam) = inverse_iteration(&op.matrix, *cand)?;
        if outer_mass_fraction(model, &x) > opts.localization {
            delocalized.push(*cand);
            continue;
        }
        let e_prime = lam.im;
        let c = omega_c(model, &x, &x.map(|v| v.conj()));
        if c.norm() < 1e-12 {
            return Err(LinearizeError::NullMode(idx));
        }
        let sign: i8 = if c.im < 0.0 { 1 } else { -1 };
        let mut xi = &x / Complex64::new(c.norm().sqrt(), 0.0);
        if sign < 0 {
            xi = xi.map(|v| v.conj());
        }
        // deterministic phase: largest entry real and positive
        let (imax, _) = xi
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, v)| if v.norm() > bv + 1e-12 { (i, v.norm()) } else { (bi, bv) });
        let phase = xi[imax].conj() / xi[imax].norm();
        xi *= phase;
        let jxi = complex_j(model, &xi.map(|v| v.conj()), false);
        let functional = jxi * Complex64::new(0.0, h);
        modes.push(Mode { e_prime, sign, e: sign as f64 * e_prime, xi, functional });
    }
    let n_j: Vec<usize> = modes.iter().map(|m| ((edge / m.e_prime).ceil() as usize).saturating_sub(1)).collect();
    let big_n = n_j.iter().copied().max().unwrap_or(0);
    let continuum = eigenvalues
        .iter()
        .copied()
        .filter(|ev| ev.norm() > kernel_cut)
        .filter(|ev| !modes.iter().any(|m| (ev.im.abs() - m.e_prime).abs() < 1e-6 && ev.re.abs() < 1e-6))
        .filter(|ev| !delocalized.iter().any(|d| (ev.im.abs() - d.im).abs() < 1e-9))
        .collect();
    let mut frame = SpectralFrame {
        eigenvalues,
        modes,
        edge,
        n_j,
        big_n,
        continuum,
        delocalized,
        resonance_margins: Vec::new(),
        h,
        dim: op.matrix.nrows(),
    };
    frame.resonance_margins = frame.resonance_margin_list();
    Ok(frame)
}

impl SpectralFrame {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// `e_j` for every mode.
    pub fn frequencies(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.e).collect()
    }

    /// `z_j = i Omega(X, conj xi_j)` for real `X`.
    pub fn z_coordinates(&self, x: &DVector<f64>) -> Vec<Complex64> {
        self.modes
            .iter()
            .map(|m| m.functional.iter().zip(x.iter()).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `sum_j (z_j xi_j + c.c.)`.
    pub fn synthesize(&self, z: &[Complex64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (m, zj) in self.modes.iter().zip(z) {
            for (o, x) in out.iter_mut().zip(m.xi.iter()) {
                *o += 2.0 * (zj * x).re;
            }
        }
        out
    }

    /// Smallest combination margin followed by distances of overtones
    /// `n e'_j` from other modes.
    fn resonance_margin_list(&self) -> Vec<f64> {
        let e: Vec<f64> = self.modes.iter().map(|m| m.e_prime).collect();
        if e.is_empty() {
            return Vec::new();
        }
        let mut out = vec![min_combination(&e, 2 * self.big_n + 3)];
        for (j, ej) in e.iter().enumerate() {
            for n in 2..=self.n_j[j].max(1) + 1 {
                for (i, ei) in e.iter().enumerate() {
                    if i != j {
                        out.push((n as f64 * ej - ei).abs());
                    }
                }
            }
        }
        out
    }

    /// True when all resonance margins exceed `tol`.
    pub fn check_resonances(&self, tol: f64) -> bool {
        self.resonance_margins.iter().all(|m| *m > tol)
    }

    /// Distance from `z` to the spectrum on the continuous subspace.
    pub fn distance_to_continuum(&self, z: Complex64) -> f64 {
        self.continuum.iter().map(|ev| (ev - z).norm()).fold(f64::INFINITY, f64::min)
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }
}

/// Smallest `|mu . e|` over nonzero integer vectors with `|mu|_1 <= order`.
pub fn min_combination(e: &[f64], order: usize) -> f64 {
    if e.is_empty() || order == 0 {
        return f64::INFINITY;
    }
    let bound = order as i64;
    let mut best = f64::INFINITY;
    let mut mu = vec![-bound; e.len()];
    loop {
        let l1: i64 = mu.iter().map(|v| v.abs()).sum();
        if l1 > 0 && l1 <= bound {
            let s: f64 = mu.iter().zip(e).map(|(a, b)| *a as f64 * b).sum();
            best = best.min(s.abs());
        }
        let mut k = 0;
        loop {
            if k == mu.len() {
                return best;
            }
            mu[k] += 1;
            if mu[k] > bound {
                mu[k] = -bound;
                k += 1;
            } else {
                break;
            }
        }
    }
}

/// Projection `P_c` onto the continuous spectral subspace at `p0`.
pub fn continuous_projection(base: &NgProjection, frame: &SpectralFrame) -> DMatrix<f64> {
    let mut pc = base.dense();
    for m in &frame.modes {
        for i in 0..pc.nrows() {
            for j in 0..pc.ncols() {
                pc[(i, j)] -= 2.0 * (m.xi[i] * m.functional[j]).re;
            }
        }
    }
    pc
}

/// Serializable summary of the frame.
#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<[f64; 2]>,
    pub e_prime: Vec<f64>,
    pub signs: Vec<i8>,
    pub gap_edge: f64,
    pub n_j: Vec<usize>,
    pub big_n: usize,
    pub resonance_margins: Vec<f64>,
    pub delocalized: Vec<[f64; 2]>,
}

impl From<&SpectralFrame> for SpectrumSummary {
    fn from(f: &SpectralFrame) -> Self {
        Self {
            eigenvalues: f.eigenvalues.iter().map(|c| [c.re, c.im]).collect(),
            e_prime: f.modes.iter().map(|m| m.e_prime).collect(),
            signs: f.modes.iter().map(|m| m.sign).collect(),
            gap_edge: f.edge,
            n_j: f.n_j.clone(),
            big_n: f.big_n,
            resonance_margins: f.resonance_margins.clone(),
            delocalized: f.delocalized.iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

/// Factorized `(H - z)` on the continuous subspace.
pub struct Resolvent {
    z: Complex64,
    lu: LU<Complex64, Dyn, Dyn>,
    pc: DMatrix<Complex64>,
}

impl Resolvent {
    /// Factorizes `(H - z) P_c + (I - P_c)`; rejects `z` within `margin` of the
    /// spectrum of `H` on the continuous subspace.
    pub fn new(
        op: &LinearizedOperator,
        pc: &DMatrix<f64>,
        frame: &SpectralFrame,
        z: Complex64,
        margin: f64,
    ) -> Result<Self, LinearizeError> {
        let dist = frame.distance_to_continuum(z);
        if dist < margin {
            return Err(LinearizeError::NearSpectrum { z, distance: dist });
        }
        let d = pc.nrows();
        let pcc = pc.map(|x| Complex64::new(x, 0.0));
        let mut a = op.matrix.map(|x| Complex64::new(x, 0.0));
        for i in 0..d {
            a[(i, i)] -= z;
        }
        let mut a = a * &pcc;
        for i in 0..d {
            for j in 0..d {
                let id = if i == j { 1.0 } else { 0.0 };
                a[(i, j)] += Complex64::new(id, 0.0) - pcc[(i, j)];
            }
        }
        Ok(Self { z, lu: a.lu(), pc: pcc })
    }

    pub fn point(&self) -> Complex64 {
        self.z
    }

    /// `R(z)^order P_c g`.
    pub fn apply(&self, g: &DVector<Complex64>, order: u32) -> Result<DVector<Complex64>, LinearizeError> {
        let mut x = &self.pc * g;
        for _ in 0..order {
            x = self.lu.solve(&x).ok_or_else(|| LinearizeError::Singular("resolvent".into()))?;
        }
        Ok(x)
    }
}

/// Complex lift of a real vector.
pub fn complexify(v: &DVector<f64>) -> DVector<Complex64> {
    to_complex(v)
}
