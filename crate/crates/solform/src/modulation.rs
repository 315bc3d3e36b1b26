//! Modulation coordinates `U = e^{J tau . diamond} (Phi_p + P(p) R)` with
//! `R` in the fixed reference space `X_0 = range P(p0)`, and the chart that
//! carries all data attached to the reference soliton.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::grid::GridFunction;
use crate::linearize::{
    build_h, continuous_projection, spectral_frame, LinearizeError, LinearizedOperator, NgProjection,
    SpectralFrame, SpectralOptions,
};
use crate::model::Model;
use crate::soliton::{FamilyPoint, SolitonError, SolitonFamily, SolitonPoint, SolverOptions};

#[derive(Debug, Error)]
pub enum ModulationError {
    #[error(transparent)]
    Soliton(#[from] SolitonError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error("modulation newton failed: residual {0:.3e}")]
    NoConvergence(f64),
    #[error("state left the chart: {0}")]
    OutOfChart(String),
}

#[derive(Clone, Copy, Debug)]
pub struct ChartOptions {
    /// Half-width of the `p`-box relative to `|p0|`.
    pub radius_fraction: f64,
    /// Chebyshev nodes per symmetry direction.
    pub nodes: usize,
    pub solver: SolverOptions,
    pub spectral: SpectralOptions,
    pub kernel_tol: f64,
}

impl Default for ChartOptions {
    fn default() -> Self {
        Self {
            radius_fraction: 0.2,
            nodes: 12,
            solver: SolverOptions::default(),
            spectral: SpectralOptions::default(),
            kernel_tol: 1e-8,
        }
    }
}

/// Reference soliton, its `p`-family, projections and spectral frame.
pub struct Chart {
    pub model: Model,
    pub family: SolitonFamily,
    pub base: FamilyPoint,
    pub proj0: NgProjection,
    pub op: LinearizedOperator,
    pub frame: SpectralFrame,
    pub pc: DMatrix<f64>,
}

impl Chart {
    pub fn build(model: &Model, center: &SolitonPoint, opts: ChartOptions) -> Result<Self, ModulationError> {
        let scale = center.p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = vec![opts.radius_fraction * scale; model.n_sym()];
        let family = SolitonFamily::build(model, center, &radius, opts.nodes, opts.solver)?;
        let base = family.evaluate(&center.p)?;
        let proj0 = NgProjection::at(model, &base);
        let op = build_h(model, &base.phi, &base.lambda, opts.kernel_tol)?;
        let frame = spectral_frame(model, &op, opts.spectral)?;
        let pc = continuous_projection(&proj0, &frame);
        Ok(Self { model: model.clone(), family, base, proj0, op, frame, pc })
    }

    pub fn p0(&self) -> &[f64] {
        &self.base.p
    }

    pub fn n_sym(&self) -> usize {
        self.model.n_sym()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Family data and projection at `p`.
    pub fn at(&self, p: &[f64]) -> Result<(FamilyPoint, NgProjection), ModulationError> {
        let fp = self.family.evaluate(p)?;
        let proj = NgProjection::at(&self.model, &fp);
        Ok((fp, proj))
    }

    /// `Pi(v)` of a stacked vector.
    pub fn invariants_vec(&self, v: &DVector<f64>) -> Vec<f64> {
        (0..self.n_sym())
            .map(|j| 0.5 * self.model.dot(&self.model.diamond_vec(j, v), v))
            .collect()
    }

    /// Splits `R` in `X_0` into `(z, f)` with `f` in the continuous subspace.
    pub fn split(&self, r: &DVector<f64>) -> (Vec<Complex64>, DVector<f64>) {
        let z = self.frame.z_coordinates(r);
        let f = r - self.frame.synthesize(&z);
        (z, f)
    }
}

/// Coordinates of a state near the soliton manifold.
#[derive(Clone, Debug)]
pub struct ModulationCoords {
    pub tau: Vec<f64>,
    pub p: Vec<f64>,
    /// `P(p) R`, the remainder seen from the soliton at `p`.
    pub r_tilde: DVector<f64>,
    /// `R` in `X_0`.
    pub r: DVector<f64>,
    /// `Pi(U)`.
    pub pi: Vec<f64>,
    /// `Pi(R)`.
    pub rho: Vec<f64>,
    pub z: Vec<Complex64>,
    pub f: DVector<f64>,
    pub iterations: usize,
}

/// Serializable view of the coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct CoordsSummary {
    pub tau: Vec<f64>,
    pub p: Vec<f64>,
    pub pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub z: Vec<[f64; 2]>,
    pub r_norm: f64,
    pub f_norm: f64,
    pub iterations: usize,
}

impl ModulationCoords {
    pub fn summary(&self, chart: &Chart) -> CoordsSummary {
        let nrm = |v: &DVector<f64>| chart.model.dot(v, v).sqrt();
        CoordsSummary {
            tau: self.tau.clone(),
            p: self.p.clone(),
            pi: self.pi.clone(),
            rho: self.rho.clone(),
            z: self.z.iter().map(|c| [c.re, c.im]).collect(),
            r_norm: nrm(&self.r),
            f_norm: nrm(&self.f),
            iterations: self.iterations,
        }
    }
}

struct Constraint {
    value: DVector<f64>,
    jac: DMatrix<f64>,
    r_tilde: DVector<f64>,
}

fn constraints(chart: &Chart, u: &DVector<f64>, tau: &[f64], fp: &FamilyPoint) -> Constraint {
    let m = &chart.model;
    let n0 = chart.n_sym();
    let neg: Vec<f64> = tau.iter().map(|t| -t).collect();
    let phi = fp.phi.to_dvector();
    let dphi: Vec<DVector<f64>> = fp.dphi.iter().map(|d| d.to_dvector()).collect();
    let rt = m.group_vec(&neg, u) - &phi;
    let jinv_rt = m.jinv_vec(&rt);
    let mut value = DVector::zeros(2 * n0);
    let mut jac = DMatrix::zeros(2 * n0, 2 * n0);
    for j in 0..n0 {
        value[j] = m.dot(&jinv_rt, &dphi[j]);
        value[n0 + j] = -m.dot(&rt, &m.diamond_vec(j, &phi));
        for k in 0..n0 {
            let d2 = fp.d2phi[j][k].to_dvector();
            let dk_dj = m.diamond_vec(k, &dphi[j]);
            jac[(j, k)] = -m.dot(&m.diamond_vec(k, &phi), &dphi[j]) - m.dot(&rt, &dk_dj);
            jac[(j, n0 + k)] = -m.dot(&m.jinv_vec(&dphi[k]), &dphi[j]) + m.dot(&jinv_rt, &d2);
            let jdd = m.j_vec(&m.diamond_vec(k, &m.diamond_vec(j, &phi)));
            jac[(n0 + j, k)] = m.dot(&m.j_vec(&m.diamond_vec(k, &phi)), &m.diamond_vec(j, &phi)) - m.dot(&rt, &jdd);
            jac[(n0 + j, n0 + k)] = m.dot(&dphi[k], &m.diamond_vec(j, &phi)) - m.dot(&rt, &m.diamond_vec(j, &dphi[k]));
        }
    }
    Constraint { value, jac, r_tilde: rt }
}

/// Computes modulation coordinates of `u` by Newton iteration from the seed.
pub fn modulate(
    chart: &Chart,
    u: &GridFunction,
    seed_tau: Option<&[f64]>,
    seed_p: Option<&[f64]>,
) -> Result<ModulationCoords, ModulationError> {
    let n0 = chart.n_sym();
    let uv = u.to_dvector();
    let mut tau = seed_tau.map(|t| t.to_vec()).unwrap_or_else(|| vec![0.0; n0]);
    let mut p = seed_p.map(|p| p.to_vec()).unwrap_or_else(|| chart.p0().to_vec());
    let mut last = f64::INFINITY;
    for it in 0..60 {
        let fp = chart.family.evaluate(&p)?;
        let c = constraints(chart, &uv, &tau, &fp);
        let norm = c.value.amax();
        if norm < 1e-14 || (it > 3 && norm >= 0.5 * last && norm < 1e-12) {
            return finish(chart, &uv, tau, p, c.r_tilde, it);
        }
        last = norm;
        let step = c
            .jac
            .clone()
            .lu()
            .solve(&c.value)
            .ok_or(ModulationError::NoConvergence(norm))?;
        let mut t = 1.0;
        loop {
            let trial_tau: Vec<f64> = (0..n0).map(|k| tau[k] - t * step[k]).collect();
            let trial_p: Vec<f64> = (0..n0).map(|k| p[k] - t * step[n0 + k]).collect();
            if chart.family.contains(&trial_p) {
                tau = trial_tau;
                p = trial_p;
                break;
            }
            t *= 0.5;
            if t < 1e-4 {
                return Err(ModulationError::OutOfChart(format!("p iterate {trial_p:?}")));
            }
        }
    }
    Err(ModulationError::NoConvergence(last))
}

fn finish(
    chart: &Chart,
    u: &DVector<f64>,
    tau: Vec<f64>,
    p: Vec<f64>,
    r_tilde: DVector<f64>,
    iterations: usize,
) -> Result<ModulationCoords, ModulationError> {
    let (_, proj) = chart.at(&p)?;
    let r = proj.transfer_from(&chart.proj0, &r_tilde)?;
    let rho = chart.invariants_vec(&r);
    let (z, f) = chart.split(&r);
    let pi = chart.invariants_vec(u);
    Ok(ModulationCoords { tau, p, r_tilde, r, pi, rho, z, f, iterations })
}

/// `U = e^{J tau . diamond} (Phi_p + P(p) R)`.
pub fn reconstruct(chart: &Chart, tau: &[f64], p: &[f64], r: &DVector<f64>) -> Result<GridFunction, ModulationError> {
    let (fp, proj) = chart.at(p)?;
    let inner = fp.phi.to_dvector() + proj.apply(r);
    Ok(chart.model.field(&chart.model.group_vec(tau, &inner)))
}

/// Linearized coordinates: `(d tau, d p, d R)` for a tangent vector `x` at the state.
pub fn coordinate_derivative(
    chart: &Chart,
    coords: &ModulationCoords,
    x: &DVector<f64>,
) -> Result<(Vec<f64>, Vec<f64>, DVector<f64>), ModulationError> {
    let m = &chart.model;
    let n0 = chart.n_sym();
    let (fp, proj) = chart.at(&coords.p)?;
    let uv = reconstruct(chart, &coords.tau, &coords.p, &coords.r)?.to_dvector();
    let c = constraints(chart, &uv, &coords.tau, &fp);
    let neg: Vec<f64> = coords.tau.iter().map(|t| -t).collect();
    let y = m.group_vec(&neg, x);
    let phi = fp.phi.to_dvector();
    let mut rhs = DVector::zeros(2 * n0);
    for j in 0..n0 {
        rhs[j] = -m.dot(&m.jinv_vec(&y), &fp.dphi[j].to_dvector());
        rhs[n0 + j] = m.dot(&y, &m.diamond_vec(j, &phi));
    }
    let sol = c.jac.lu().solve(&rhs).ok_or_else(|| ModulationError::NoConvergence(f64::NAN))?;
    let dtau: Vec<f64> = (0..n0).map(|k| sol[k]).collect();
    let dp: Vec<f64> = (0..n0).map(|k| sol[n0 + k]).collect();
    let mut w = y.clone();
    for k in 0..n0 {
        w -= m.j_vec(&m.diamond_vec(k, &coords.r_tilde)) * dtau[k];
        w -= proj.apply_dp(k, &coords.r) * dp[k];
    }
    let dr = proj.transfer_from(&chart.proj0, &proj.apply(&w))?;
    Ok((dtau, dp, dr))
}

/// Solves `p = Pi - rho + Pi(R) - Pi(P(p) R)` by fixed-point iteration.
pub fn reduced_p(chart: &Chart, pi: &[f64], rho: &[f64], r: &DVector<f64>) -> Result<Vec<f64>, ModulationError> {
    let n0 = chart.n_sym();
    let pr = chart.invariants_vec(r);
    let mut p: Vec<f64> = (0..n0).map(|k| pi[k] - rho[k]).collect();
    for _ in 0..100 {
        let (_, proj) = chart.at(&p)?;
        let ppr = chart.invariants_vec(&proj.apply(r));
        let next: Vec<f64> = (0..n0).map(|k| pi[k] - rho[k] + pr[k] - ppr[k]).collect();
        let diff = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        if diff < 1e-15 * (1.0 + p.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            return Ok(p);
        }
    }
    Ok(p)
}

/// `K(U) = E(U) - E(Phi_{p0}) - lambda(p0) . (Pi(U) - p0)`.
pub fn k_hamiltonian(chart: &Chart, u: &GridFunction) -> f64 {
    let pi = chart.model.invariants(u);
    let shift: f64 = chart.base.lambda.iter().zip(pi.iter().zip(chart.p0())).map(|(l, (a, b))| l * (a - b)).sum();
    chart.model.energy(u) - chart.model.energy(&chart.base.phi) - shift
}

/// Poisson brackets `{Pi_j, tau_k}` and `{Pi_j, p_k}` assembled from
/// central-difference gradients of the coordinate functions.
pub fn poisson_brackets(chart: &Chart, u: &GridFunction, step: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), ModulationError> {
    let m = &chart.model;
    let n0 = chart.n_sym();
    let base = modulate(chart, u, None, None)?;
    let d = m.dim();
    let h = m.grid().spacing();
    let mut grad_tau = vec![DVector::zeros(d); n0];
    let mut grad_p = vec![DVector::zeros(d); n0];
    let uv = u.to_dvector();
    for i in 0..d {
        let mut plus = uv.clone();
        plus[i] += step;
        let mut minus = uv.clone();
        minus[i] -= step;
        let a = modulate(chart, &m.field(&plus), Some(&base.tau), Some(&base.p))?;
        let b = modulate(chart, &m.field(&minus), Some(&base.tau), Some(&base.p))?;
        for k in 0..n0 {
            grad_tau[k][i] = (a.tau[k] - b.tau[k]) / (2.0 * step * h);
            grad_p[k][i] = (a.p[k] - b.p[k]) / (2.0 * step * h);
        }
    }
    let mut bt = DMatrix::zeros(n0, n0);
    let mut bp = DMatrix::zeros(n0, n0);
    for j in 0..n0 {
        let gpi = m.diamond_vec(j, &uv);
        for k in 0..n0 {
            bt[(j, k)] = m.dot(&gpi, &m.j_vec(&grad_tau[k]));
            bp[(j, k)] = m.dot(&gpi, &m.j_vec(&grad_p[k]));
        }
    }
    Ok((bt, bp))
}
