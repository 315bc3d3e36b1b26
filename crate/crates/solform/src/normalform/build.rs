//! Polynomial expansion of the Hamiltonian `K` in the Darboux coordinates
//! `(z, f)` at `Pi = p0`.
//!
//! Scalar coefficients come from sampling `K o Psi` on circles in the `z`-plane,
//! the `f`-linear ones from the `f`-component of the pulled-back Hamiltonian
//! vector field at `f = 0`, and the `f`-quadratic kernels from derivatives of
//! the energy at the soliton.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::darboux::{flow_map, inverse_flow_map, DarbouxState};
use crate::grid::GridFunction;
use crate::modulation::{k_hamiltonian, modulate, Chart};
use crate::ode::OdeOptions;

use super::poly::{Monomial, Poly};
use super::space::PhaseSpace;
use super::NormalFormError;

/// Exact Hamiltonian `K o Psi` with `Psi(z, f) = U` for `R = sum (z xi + c.c.) + f`.
pub struct ExactHamiltonian<'a> {
    chart: &'a Chart,
    space: &'a PhaseSpace,
    ode: OdeOptions,
}

impl<'a> ExactHamiltonian<'a> {
    pub fn new(chart: &'a Chart, space: &'a PhaseSpace, ode: OdeOptions) -> Self {
        Self { chart, space, ode }
    }

    pub fn chart(&self) -> &Chart {
        self.chart
    }

    /// Physical state of `(z, f)` at `tau = 0`, `Pi = p0`.
    pub fn state(&self, z: &[Complex64], f: &DVector<f64>) -> Result<GridFunction, NormalFormError> {
        let x = DarbouxState { tau: vec![0.0; self.chart.n_sym()], pi: self.chart.p0().to_vec(), r: self.space.synthesize(z, f) };
        Ok(flow_map(self.chart, &x, self.ode)?.to_field(self.chart)?)
    }

    pub fn value(&self, z: &[Complex64], f: &DVector<f64>) -> Result<f64, NormalFormError> {
        Ok(k_hamiltonian(self.chart, &self.state(z, f)?))
    }

    /// Darboux coordinates `(tau, Pi, R)` of a physical state.
    pub fn coordinates(&self, u: &GridFunction) -> Result<DarbouxState, NormalFormError> {
        let n0 = self.chart.n_sym();
        let coords = modulate(self.chart, u, Some(&vec![0.0; n0]), Some(self.chart.p0()))?;
        Ok(inverse_flow_map(self.chart, &DarbouxState::from_coords(&coords), self.ode)?)
    }

    /// `X_K = J (grad E - lambda(p0) . diamond U)`.
    pub fn hamiltonian_field(&self, u: &GridFunction) -> DVector<f64> {
        let m = &self.chart.model;
        let uv = u.to_dvector();
        let mut g = m.gradient(u).to_dvector();
        for (j, l) in self.chart.base.lambda.iter().enumerate() {
            g -= m.diamond_vec(j, &uv) * *l;
        }
        m.j_vec(&g)
    }

    /// `df/dt` of the Hamiltonian flow at `(z, f)` by central differences of
    /// the inverse coordinate map along `X_K`.
    pub fn continuous_velocity(&self, z: &[Complex64], f: &DVector<f64>, step: f64) -> Result<DVector<f64>, NormalFormError> {
        let u = self.state(z, f)?;
        let x = self.hamiltonian_field(&u);
        let scale = self.chart.model.dot(&x, &x).sqrt();
        if scale == 0.0 {
            return Ok(DVector::zeros(self.space.dim()));
        }
        let t = step / scale;
        let m = &self.chart.model;
        let uv = u.to_dvector();
        let plus = self.coordinates(&m.field(&(&uv + &x * t)))?;
        let minus = self.coordinates(&m.field(&(&uv - &x * t)))?;
        Ok(self.space.pc() * ((plus.r - minus.r) / (2.0 * t)))
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BuildOptions {
    pub cap: u32,
    /// Angles per circle in the `z`-plane.
    pub angles: usize,
    pub radii: usize,
    /// Largest sampling radius; `None` picks one from the chart size.
    pub max_radius: Option<f64>,
    /// Fitted degrees beyond those retained.
    pub extra_degrees: u32,
    /// Length of the central-difference step along `X_K`.
    pub fd_step: f64,
    pub ode: OdeOptions,
}

impl BuildOptions {
    pub fn with_cap(cap: u32) -> Self {
        Self {
            cap,
            angles: 24,
            radii: 8,
            max_radius: None,
            extra_degrees: 4,
            fd_step: 1e-5,
            ode: OdeOptions { rtol: 1e-12, atol: 1e-14, ..OdeOptions::default() },
        }
    }
}

/// Quantities that must vanish or match the frame, as obtained by the fit.
#[derive(Clone, Debug, Serialize)]
pub struct BuildReport {
    pub radius: f64,
    pub samples: usize,
    /// Fitted `a_{delta_j delta_j}(0)` before it is replaced by `e_j`.
    pub fitted_diagonal: Vec<f64>,
    pub frequencies: Vec<f64>,
    /// Largest fitted scalar coefficient of degree 0 or 1.
    pub low_scalar: f64,
    /// Largest fitted off-diagonal scalar coefficient of degree 2.
    pub off_diagonal: f64,
    /// `L^2` norm of the fitted field at degree 0.
    pub field_degree0: f64,
    /// Largest `L^2` norm of the fitted fields at degree 1.
    pub field_degree1: f64,
    /// Largest relative change of the field between steps `h` and `2h`.
    pub fd_consistency: f64,
    pub psi2: Vec<f64>,
}

/// Largest radius with `rho(sum z xi + c.c.)` below a quarter of the chart's
/// `p`-radius, capped at `0.2`.
pub fn sampling_radius(chart: &Chart, space: &PhaseSpace) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..16 {
        let th = 2.0 * PI * k as f64 / 16.0;
        let r = space.synthesize(&[Complex64::from_polar(1.0, th)], &DVector::zeros(space.dim()));
        for v in chart.invariants_vec(&r) {
            worst = worst.max(v.abs());
        }
    }
    let room = 0.25 * chart.family.radius().iter().cloned().fold(f64::INFINITY, f64::min);
    (room / worst).sqrt().min(0.2)
}

/// `(mu, nu)` with `mu - nu = m` and `mu + nu = d`, one mode.
fn single(m: i64, d: u32, n_sym: usize) -> Monomial {
    let mu = ((d as i64 + m) / 2) as u32;
    let nu = ((d as i64 - m) / 2) as u32;
    Monomial::z(&[mu], &[nu], n_sym)
}

/// Least-squares fit of `c_m(r_i) = sum_d coef_d r_i^d` over the degrees
/// `|m|, |m| + 2, ..., <= top`. Rows of `values` are radii.
fn fit_radial(radii: &[f64], values: &DMatrix<Complex64>, m: i64, top: u32) -> Vec<(u32, DVector<Complex64>)> {
    let degrees: Vec<u32> = (m.unsigned_abs() as u32..=top).step_by(2).collect();
    if degrees.is_empty() {
        return Vec::new();
    }
    let rmax = radii.iter().cloned().fold(0.0, f64::max);
    let v = DMatrix::from_fn(radii.len(), degrees.len(), |i, j| Complex64::new((radii[i] / rmax).powi(degrees[j] as i32), 0.0));
    let svd = v.svd(true, true);
    let coef = svd.solve(values, 1e-14).expect("SVD solve with both factors");
    degrees
        .iter()
        .enumerate()
        .map(|(j, d)| (*d, coef.row(j).transpose() / Complex64::new(rmax.powi(*d as i32), 0.0)))
        .collect()
}

/// Angular Fourier coefficient `1/M sum_k v_k e^{-i m theta_k}` of each column.
fn angular(values: &[Vec<DVector<f64>>], m: i64) -> DMatrix<Complex64> {
    let rows = values.len();
    let cols = values[0][0].len();
    let mut out = DMatrix::zeros(rows, cols);
    for (i, circle) in values.iter().enumerate() {
        let count = circle.len() as f64;
        for (k, v) in circle.iter().enumerate() {
            let w = Complex64::from_polar(1.0 / count, -(m as f64) * 2.0 * PI * k as f64 / count);
            for c in 0..cols {
                out[(i, c)] += w * v[c];
            }
        }
    }
    out
}

fn complex_field(v: &DVector<Complex64>, model: &crate::model::Model) -> (GridFunction, GridFunction) {
    (model.field(&v.map(|c| c.re)), model.field(&v.map(|c| c.im)))
}

/// Matrix of `y -> grad^3 E(Phi)[xi, y]` restricted to `X_c`.
pub fn cubic_kernel(chart: &Chart, space: &PhaseSpace, xi: &DVector<Complex64>) -> DMatrix<Complex64> {
    let m = &chart.model;
    let d = space.dim();
    let phi = &chart.base.phi;
    let (re, im) = complex_field(xi, m);
    let mut t = DMatrix::<Complex64>::zeros(d, d);
    let mut unit = DVector::zeros(d);
    for k in 0..d {
        unit[k] = 1.0;
        let e = m.field(&unit);
        let a = m.third_apply(phi, &re, &e).to_dvector();
        let b = m.third_apply(phi, &im, &e).to_dvector();
        for i in 0..d {
            t[(i, k)] = Complex64::new(a[i], b[i]);
        }
        unit[k] = 0.0;
    }
    let pc = space.pc().map(|x| Complex64::new(x, 0.0));
    pc.transpose() * t * pc
}

/// Cubic scalar coefficients `1/6 grad^3 E(Phi)[R, R, R]`, `R = z xi + c.c.`,
/// by exact sampling of the homogeneous cubic on the unit circle.
pub fn cubic_scalars(chart: &Chart, space: &PhaseSpace) -> Vec<(Monomial, Complex64)> {
    let m = &chart.model;
    let count = 8;
    let zero = DVector::zeros(space.dim());
    let circle: Vec<DVector<f64>> = (0..count)
        .map(|k| {
            let z = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / count as f64);
            let r = m.field(&space.synthesize(&[z], &zero));
            let t = m.third_apply(&chart.base.phi, &r, &r).to_dvector();
            DVector::from_element(1, m.dot(&t, &r.to_dvector()) / 6.0)
        })
        .collect();
    let values = vec![circle];
    [3i64, 1, -1, -3]
        .iter()
        .map(|&k| (single(k, 3, space.n_sym()), angular(&values, k)[(0, 0)]))
        .collect()
}

/// Quadratic `f`-linear covectors `1/2 P_c^T grad^3 E(Phi)[R, R]`.
pub fn cubic_covectors(chart: &Chart, space: &PhaseSpace) -> Vec<(Monomial, DVector<Complex64>)> {
    let m = &chart.model;
    let count = 8;
    let zero = DVector::zeros(space.dim());
    let circle: Vec<DVector<f64>> = (0..count)
        .map(|k| {
            let z = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / count as f64);
            let r = m.field(&space.synthesize(&[z], &zero));
            space.pc().transpose() * m.third_apply(&chart.base.phi, &r, &r).to_dvector() * 0.5
        })
        .collect();
    let values = vec![circle];
    [2i64, 0, -2]
        .iter()
        .map(|&k| (single(k, 2, space.n_sym()), angular(&values, k).row(0).transpose()))
        .collect()
}

/// Builds the expansion of `K o Psi` up to grading weight `cap` for one
/// internal mode.
pub fn build_h1(chart: &Chart, space: &PhaseSpace, opts: &BuildOptions) -> Result<(Poly, BuildReport), NormalFormError> {
    if space.n_modes() != 1 {
        return Err(NormalFormError::Invalid(format!(
            "expansion is implemented for one internal mode, frame has {}",
            space.n_modes()
        )));
    }
    let n_sym = space.n_sym();
    let exact = ExactHamiltonian::new(chart, space, opts.ode);
    let rmax = opts.max_radius.unwrap_or_else(|| sampling_radius(chart, space));
    let radii: Vec<f64> = (0..opts.radii).map(|i| rmax * (0.35 + 0.65 * i as f64 / (opts.radii - 1).max(1) as f64)).collect();
    let zero = DVector::zeros(space.dim());
    let points: Vec<(usize, usize)> = (0..radii.len()).flat_map(|i| (0..opts.angles).map(move |k| (i, k))).collect();
    let sampled: Vec<Result<(f64, DVector<f64>), NormalFormError>> = points
        .par_iter()
        .map(|&(i, k)| {
            let z = [Complex64::from_polar(radii[i], 2.0 * PI * k as f64 / opts.angles as f64)];
            let value = exact.value(&z, &zero)?;
            let g = exact.continuous_velocity(&z, &zero, opts.fd_step)?;
            Ok((value, g))
        })
        .collect();
    let mut scalars = vec![vec![DVector::zeros(1); opts.angles]; radii.len()];
    let mut fields = vec![vec![DVector::zeros(space.dim()); opts.angles]; radii.len()];
    for (&(i, k), s) in points.iter().zip(sampled) {
        let (v, g) = s?;
        scalars[i][k] = DVector::from_element(1, v);
        fields[i][k] = g;
    }

    // step-size consistency on the outer circle
    let z_out = [Complex64::new(rmax, 0.0)];
    let g1 = &fields[radii.len() - 1][0];
    let g2 = exact.continuous_velocity(&z_out, &zero, 2.0 * opts.fd_step)?;
    let fd_consistency = (g1 - &g2).norm() / g1.norm().max(1e-300);
    if fd_consistency > 1e-6 {
        return Err(NormalFormError::Differentiation(format!(
            "field changes by {fd_consistency:.2e} between steps {} and {}",
            opts.fd_step,
            2.0 * opts.fd_step
        )));
    }

    let mut h = Poly::zero(space);
    let e = space.frequencies()[0];
    let top = opts.cap + opts.extra_degrees;
    let mut report = BuildReport {
        radius: rmax,
        samples: points.len(),
        fitted_diagonal: Vec::new(),
        frequencies: space.frequencies().to_vec(),
        low_scalar: 0.0,
        off_diagonal: 0.0,
        field_degree0: 0.0,
        field_degree1: 0.0,
        fd_consistency,
        psi2: Vec::new(),
    };

    for m in 0..=top as i64 {
        let fit = fit_radial(&radii, &angular(&scalars, m), m, top);
        for (d, coef) in fit {
            let c = if m == 0 { Complex64::new(coef[0].re, 0.0) } else { coef[0] };
            if d < 2 {
                report.low_scalar = report.low_scalar.max(c.norm());
                continue;
            }
            if d > opts.cap {
                continue;
            }
            if d == 2 && m == 0 {
                report.fitted_diagonal.push(c.re);
                h.add_scalar(single(0, 2, n_sym), Complex64::new(e, 0.0));
                continue;
            }
            if d == 2 {
                report.off_diagonal = report.off_diagonal.max(c.norm());
            }
            h.add_scalar(single(m, d, n_sym), c);
            if m != 0 {
                h.add_scalar(single(-m, d, n_sym), c.conj());
            }
        }
    }

    let norm = |g: &DVector<Complex64>| (g.norm_squared() * space.spacing()).sqrt();
    for m in 0..top as i64 {
        let fit = fit_radial(&radii, &angular(&fields, m), m, top - 1);
        for (d, coef) in fit {
            let g = if m == 0 { coef.map(|c| Complex64::new(c.re, 0.0)) } else { coef };
            let g = space.pc_apply(&g);
            match d {
                0 => {
                    report.field_degree0 = report.field_degree0.max(norm(&g));
                    continue;
                }
                1 => report.field_degree1 = report.field_degree1.max(norm(&g)),
                _ => {}
            }
            if d + 1 > opts.cap {
                continue;
            }
            let a = space.canonical_covector(&space.jinv_apply(&g));
            if m != 0 {
                h.add_linear(single(-m, d, n_sym), &a.map(|c| c.conj()));
            }
            h.add_linear(single(m, d, n_sym), &a);
        }
    }

    let one = Monomial::one(1, n_sym);
    if opts.cap >= 2 {
        h.add_quadratic(one.clone(), &space.quadratic_kernel());
    }
    if opts.cap >= 3 {
        let b = cubic_kernel(chart, space, &space.frame().modes[0].xi);
        h.add_quadratic(single(-1, 1, n_sym), &b.map(|c| c.conj()));
        h.add_quadratic(single(1, 1, n_sym), &b);
    }
    // psi(rho) = K(Phi_{p0 - rho}) = 1/2 rho^T (d lambda / d p) rho + O(rho^3)
    if opts.cap >= 4 {
        let dl = &chart.base.dlambda;
        for a in 0..n_sym {
            for b in a..n_sym {
                let mut rho = vec![0; n_sym];
                rho[a] += 1;
                rho[b] += 1;
                let c = if a == b { 0.5 * dl[(a, a)] } else { 0.5 * (dl[(a, b)] + dl[(b, a)]) };
                report.psi2.push(c);
                h.add_scalar(Monomial::new(vec![0], vec![0], rho), Complex64::new(c, 0.0));
            }
        }
    }
    Ok((h, report))
}
