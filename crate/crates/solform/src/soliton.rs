//! Solitons `grad E(Phi) = lambda . diamond Phi`, their branches and smooth
//! families parametrized by the invariants `p = Pi(Phi)`.
//!
//! The phase and translation freedom is fixed by the orthogonality conditions
//! `<Phi, J diamond_k Phi_ref> = 0` against a reference profile, enforced with
//! bordering multipliers `mu` that vanish at a true solution.

use nalgebra::{DMatrix, DVector, LU, Dyn};
use serde::Serialize;
use thiserror::Error;

use crate::grid::{Grid, GridFunction};
use crate::model::Model;

#[derive(Debug, Error)]
pub enum SolitonError {
    #[error("newton iteration did not converge: residual {residual:.3e} after {iterations} steps")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("iteration collapsed to the zero field")]
    Degenerate,
    #[error("bordered jacobian is singular")]
    Singular,
    #[error("parameter {0:?} lies outside the family chart")]
    OutOfChart(Vec<f64>),
    #[error("invalid request: {0}")]
    Invalid(String),
}

/// What is held fixed while solving.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Fixed Lagrange multipliers.
    Lambda(Vec<f64>),
    /// Fixed invariants `Pi(Phi) = p`; the multipliers become unknowns.
    Invariants(Vec<f64>),
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 60 }
    }
}

/// A converged soliton.
#[derive(Clone, Debug)]
pub struct SolitonPoint {
    pub phi: GridFunction,
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
    /// `||grad E(Phi) - lambda . diamond Phi||`.
    pub residual: f64,
    pub iterations: usize,
}

/// `||grad E(Phi) - lambda . diamond Phi||`.
pub fn soliton_residual(model: &Model, phi: &GridFunction, lambda: &[f64]) -> f64 {
    euler_lagrange(model, phi, lambda).norm()
}

fn euler_lagrange(model: &Model, phi: &GridFunction, lambda: &[f64]) -> GridFunction {
    let mut r = model.gradient(phi);
    for (j, l) in lambda.iter().enumerate() {
        r.axpy(-l, &model.diamond(j, phi));
    }
    r
}

/// Newton system with its layout; unknowns are `(Phi, [lambda], mu)`.
struct Bordered {
    dim: usize,
    n0: usize,
    free_lambda: bool,
}

impl Bordered {
    fn size(&self) -> usize {
        self.dim + self.n0 * if self.free_lambda { 2 } else { 1 }
    }

    fn mu_offset(&self) -> usize {
        self.dim + if self.free_lambda { self.n0 } else { 0 }
    }

    fn jacobian(
        &self,
        model: &Model,
        phi: &GridFunction,
        lambda: &[f64],
        gauge: &[GridFunction],
    ) -> DMatrix<f64> {
        let h = model.grid().spacing();
        let mut m = DMatrix::zeros(self.size(), self.size());
        let mut top = model.hessian_matrix(phi);
        for (j, g) in model.generator_matrices().iter().enumerate() {
            top -= g * lambda[j];
        }
        m.view_mut((0, 0), (self.dim, self.dim)).copy_from(&top);
        if self.free_lambda {
            for j in 0..self.n0 {
                let d = model.diamond(j, phi).to_dvector();
                m.view_mut((0, self.dim + j), (self.dim, 1)).copy_from(&(-&d));
                m.view_mut((self.dim + j, 0), (1, self.dim)).copy_from(&(d.transpose() * h));
            }
        }
        let off = self.mu_offset();
        for (k, g) in gauge.iter().enumerate() {
            let v = g.to_dvector();
            m.view_mut((0, off + k), (self.dim, 1)).copy_from(&v);
            m.view_mut((off + k, 0), (1, self.dim)).copy_from(&(v.transpose() * h));
        }
        m
    }

    fn residual(
        &self,
        model: &Model,
        phi: &GridFunction,
        lambda: &[f64],
        mu: &[f64],
        gauge: &[GridFunction],
        p: Option<&[f64]>,
    ) -> DVector<f64> {
        let mut r = euler_lagrange(model, phi, lambda);
        for (k, g) in gauge.iter().enumerate() {
            r.axpy(mu[k], g);
        }
        let mut out = DVector::zeros(self.size());
        out.rows_mut(0, self.dim).copy_from_slice(r.values());
        if let Some(p) = p {
            for (j, v) in model.invariants(phi).iter().enumerate() {
                out[self.dim + j] = v - p[j];
            }
        }
        let off = self.mu_offset();
        for (k, g) in gauge.iter().enumerate() {
            out[off + k] = phi.inner(g).expect("same shape");
        }
        out
    }
}

/// `J diamond_k Phi_ref`, the directions removed by the gauge conditions.
pub fn gauge_directions(model: &Model, reference: &GridFunction) -> Vec<GridFunction> {
    (0..model.n_sym())
        .map(|k| model.symplectic().apply(&model.diamond(k, reference)))
        .collect()
}

/// Solves for a soliton near `guess`, gauged against the guess itself.
pub fn solve_soliton(
    model: &Model,
    target: &Target,
    guess: &GridFunction,
    opts: SolverOptions,
) -> Result<SolitonPoint, SolitonError> {
    solve_soliton_gauged(model, target, guess, guess, opts)
}

/// Solves for a soliton near `guess` with the gauge fixed by `reference`.
pub fn solve_soliton_gauged(
    model: &Model,
    target: &Target,
    guess: &GridFunction,
    reference: &GridFunction,
    opts: SolverOptions,
) -> Result<SolitonPoint, SolitonError> {
    solve_core(model, target, guess, reference, None, opts)
}

fn solve_core(
    model: &Model,
    target: &Target,
    guess: &GridFunction,
    reference: &GridFunction,
    lambda0: Option<&[f64]>,
    opts: SolverOptions,
) -> Result<SolitonPoint, SolitonError> {
    let n0 = model.n_sym();
    let (mut lambda, p_target, free) = match target {
        Target::Lambda(l) => (l.clone(), None, false),
        Target::Invariants(p) => (
            lambda0.map(|l| l.to_vec()).unwrap_or_else(|| initial_lambda(model, guess)),
            Some(p.clone()),
            true,
        ),
    };
    if lambda.len() != n0 || p_target.as_ref().is_some_and(|p| p.len() != n0) {
        return Err(SolitonError::Invalid(format!("expected {n0} parameters")));
    }
    if reference.norm() < 1e-12 {
        return Err(SolitonError::Degenerate);
    }
    let gauge = gauge_directions(model, reference);
    let sys = Bordered { dim: model.dim(), n0, free_lambda: free };
    let mut phi = guess.clone();
    let mut mu = vec![0.0; n0];
    let merit = |r: &DVector<f64>| r.norm();
    let mut res = sys.residual(model, &phi, &lambda, &mu, &gauge, p_target.as_deref());
    for it in 0..opts.max_iter {
        let pde = soliton_residual(model, &phi, &lambda);
        let side = res.rows(sys.dim, sys.size() - sys.dim).amax();
        if pde <= opts.tol && side <= opts.tol && it > 0 {
            return finish(model, phi, lambda, pde, it);
        }
        let jac = sys.jacobian(model, &phi, &lambda, &gauge);
        let step = jac.lu().solve(&res).ok_or(SolitonError::Singular)?;
        let mut t = 1.0;
        loop {
            let (trial_phi, trial_lambda, trial_mu) = apply_step(&sys, &phi, &lambda, &mu, &step, t);
            let trial = sys.residual(model, &trial_phi, &trial_lambda, &trial_mu, &gauge, p_target.as_deref());
            if merit(&trial) < merit(&res) * (1.0 - 1e-4 * t) || t < 1e-3 || merit(&res) < 1e-9 {
                phi = trial_phi;
                lambda = trial_lambda;
                mu = trial_mu;
                res = trial;
                break;
            }
            t *= 0.5;
        }
        if phi.norm() < 1e-8 {
            return Err(SolitonError::Degenerate);
        }
    }
    let pde = soliton_residual(model, &phi, &lambda);
    if pde <= opts.tol {
        return finish(model, phi, lambda, pde, opts.max_iter);
    }
    Err(SolitonError::NoConvergence { residual: pde, iterations: opts.max_iter })
}

fn apply_step(
    sys: &Bordered,
    phi: &GridFunction,
    lambda: &[f64],
    mu: &[f64],
    step: &DVector<f64>,
    t: f64,
) -> (GridFunction, Vec<f64>, Vec<f64>) {
    let mut new_phi = phi.clone();
    for (v, s) in new_phi.values_mut().iter_mut().zip(step.rows(0, sys.dim).iter()) {
        *v -= t * s;
    }
    let mut new_lambda = lambda.to_vec();
    if sys.free_lambda {
        for j in 0..sys.n0 {
            new_lambda[j] -= t * step[sys.dim + j];
        }
    }
    let off = sys.mu_offset();
    let new_mu = (0..sys.n0).map(|k| mu[k] - t * step[off + k]).collect();
    (new_phi, new_lambda, new_mu)
}

fn finish(
    model: &Model,
    phi: GridFunction,
    lambda: Vec<f64>,
    residual: f64,
    iterations: usize,
) -> Result<SolitonPoint, SolitonError> {
    if phi.norm() < 1e-8 {
        return Err(SolitonError::Degenerate);
    }
    let p = model.invariants(&phi);
    Ok(SolitonPoint { phi, lambda, p, residual, iterations })
}

/// Rayleigh-quotient estimate of the multipliers from a profile.
fn initial_lambda(model: &Model, phi: &GridFunction) -> Vec<f64> {
    let n0 = model.n_sym();
    let g = model.gradient(phi);
    let d: Vec<GridFunction> = (0..n0).map(|j| model.diamond(j, phi)).collect();
    let gram = DMatrix::from_fn(n0, n0, |a, b| d[a].inner(&d[b]).unwrap());
    let rhs = DVector::from_fn(n0, |a, _| d[a].inner(&g).unwrap());
    gram.lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .unwrap_or_else(|| vec![0.0; n0])
}

/// Exact soliton of the cubic model for multipliers `(lambda_0, lambda_1)`:
/// `e^{-i lambda_1 x / 2} sqrt(w) sech(sqrt(w) x)` with `w = -lambda_0 - lambda_1^2/4`.
pub fn cubic_exact(grid: &Grid, lambda: &[f64]) -> GridFunction {
    let l1 = lambda.get(1).copied().unwrap_or(0.0);
    let w = -lambda[0] - 0.25 * l1 * l1;
    let a = w.sqrt();
    let c = -0.5 * l1;
    GridFunction::from_fn(grid, 2, |comp, x| {
        let amp = a / (a * x).cosh();
        if comp == 0 {
            amp * (c * x).cos()
        } else {
            amp * (c * x).sin()
        }
    })
}

/// Initial profile for the potential-well model.
pub fn potential_guess(grid: &Grid, amplitude: f64) -> GridFunction {
    GridFunction::from_fn(grid, 2, |comp, x| {
        if comp == 0 {
            amplitude / x.cosh().powi(2)
        } else {
            0.0
        }
    })
}

/// A sequence of solitons along one multiplier direction.
#[derive(Clone, Debug)]
pub struct SolitonBranch {
    pub direction: usize,
    pub points: Vec<SolitonPoint>,
    /// Set when continuation stopped early.
    pub diagnostic: Option<String>,
}

/// One row of the branch table.
#[derive(Clone, Debug, Serialize)]
pub struct BranchRow {
    pub lambda: Vec<f64>,
    pub p: Vec<f64>,
    pub residual: f64,
    pub peak: f64,
}

impl SolitonBranch {
    pub fn rows(&self) -> Vec<BranchRow> {
        self.points
            .iter()
            .map(|pt| BranchRow {
                lambda: pt.lambda.clone(),
                p: pt.p.clone(),
                residual: pt.residual,
                peak: peak_modulus(&pt.phi),
            })
            .collect()
    }
}

/// `max_x |Phi(x)|`.
pub fn peak_modulus(phi: &GridFunction) -> f64 {
    phi.pointwise_dot(phi).iter().fold(0.0f64, |a, &s| a.max(s.sqrt()))
}

/// Continues a branch from `seed` by moving `lambda[direction]` to `end` in
/// `steps` equal steps, using secant prediction.
pub fn continue_branch(
    model: &Model,
    seed: &SolitonPoint,
    direction: usize,
    end: f64,
    steps: usize,
    opts: SolverOptions,
) -> Result<SolitonBranch, SolitonError> {
    if direction >= model.n_sym() || steps == 0 {
        return Err(SolitonError::Invalid("bad continuation request".into()));
    }
    let start = seed.lambda[direction];
    let mut points = vec![seed.clone()];
    let mut diagnostic = None;
    for s in 1..=steps {
        let mut lambda = seed.lambda.clone();
        lambda[direction] = start + (end - start) * s as f64 / steps as f64;
        let guess = match points.len() {
            1 => points[0].phi.clone(),
            k => {
                let (a, b) = (&points[k - 2], &points[k - 1]);
                let mut g = b.phi.scaled(2.0);
                g.axpy(-1.0, &a.phi);
                g
            }
        };
        let reference = points.last().expect("non-empty").phi.clone();
        match solve_soliton_gauged(model, &Target::Lambda(lambda), &guess, &reference, opts) {
            Ok(pt) => {
                if let Some(prev) = points.last() {
                    let rel = pt.phi.sub(&prev.phi).norm() / prev.phi.norm();
                    if rel > 0.5 {
                        diagnostic = Some(format!("branch jump of relative size {rel:.2e} at step {s}"));
                        break;
                    }
                }
                points.push(pt);
            }
            Err(e) => {
                diagnostic = Some(format!("continuation stopped at step {s}: {e}"));
                break;
            }
        }
        if points.len() >= 3 {
            let k = points.len();
            let d1 = points[k - 1].p[direction] - points[k - 2].p[direction];
            let d0 = points[k - 2].p[direction] - points[k - 3].p[direction];
            if d1 * d0 < 0.0 {
                diagnostic = Some(format!("fold in p_{direction} near step {s}"));
                break;
            }
        }
    }
    Ok(SolitonBranch { direction, points, diagnostic })
}

/// Central-difference derivatives `(d Phi / d lambda, d p / d lambda)` along
/// the branch direction at interior point `i`.
pub fn branch_derivative(branch: &SolitonBranch, i: usize) -> Result<(GridFunction, Vec<f64>), SolitonError> {
    if i == 0 || i + 1 >= branch.points.len() {
        return Err(SolitonError::Invalid("branch derivative needs an interior point".into()));
    }
    let (a, b) = (&branch.points[i - 1], &branch.points[i + 1]);
    let dl = b.lambda[branch.direction] - a.lambda[branch.direction];
    let dphi = b.phi.sub(&a.phi).scaled(1.0 / dl);
    let dp = a.p.iter().zip(&b.p).map(|(x, y)| (y - x) / dl).collect();
    Ok((dphi, dp))
}

/// Exact multiplier-to-invariant Jacobian `d p_k / d lambda_j` at a soliton,
/// from linear solves with the bordered fixed-multiplier Jacobian.
pub fn invariant_jacobian(model: &Model, point: &SolitonPoint) -> Result<DMatrix<f64>, SolitonError> {
    let n0 = model.n_sym();
    let gauge = gauge_directions(model, &point.phi);
    let sys = Bordered { dim: model.dim(), n0, free_lambda: false };
    let lu = sys.jacobian(model, &point.phi, &point.lambda, &gauge).lu();
    let mut out = DMatrix::zeros(n0, n0);
    for j in 0..n0 {
        let mut rhs = DVector::zeros(sys.size());
        rhs.rows_mut(0, sys.dim).copy_from_slice(model.diamond(j, &point.phi).values());
        let x = lu.solve(&rhs).ok_or(SolitonError::Singular)?;
        let dphi = model.field(&x.rows(0, sys.dim).into_owned());
        for k in 0..n0 {
            out[(k, j)] = model.diamond(k, &point.phi).inner(&dphi).unwrap();
        }
    }
    Ok(out)
}

/// Result of the non-degeneracy check on `d lambda / d p`.
#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub min_singular_value: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Checks that every supplied `d p / d lambda` table is uniformly invertible,
/// i.e. that `d lambda / d p` has full rank.
pub fn check_nondegeneracy(tables: &[DMatrix<f64>], threshold: f64) -> RankReport {
    let min_sv = tables
        .iter()
        .map(|t| t.clone().svd(false, false).singular_values.min())
        .fold(f64::INFINITY, f64::min);
    RankReport { min_singular_value: min_sv, threshold, passed: min_sv.is_finite() && min_sv > threshold }
}

/// Everything the later stages need about the soliton at one `p`.
#[derive(Clone, Debug)]
pub struct FamilyPoint {
    pub p: Vec<f64>,
    pub phi: GridFunction,
    /// `d Phi / d p_k`.
    pub dphi: Vec<GridFunction>,
    /// `d^2 Phi / d p_k d p_l`, stored as a full symmetric table.
    pub d2phi: Vec<Vec<GridFunction>>,
    pub lambda: Vec<f64>,
    /// `d lambda_j / d p_k` at index `(j, k)`.
    pub dlambda: DMatrix<f64>,
}

/// Solitons on a box `|p_k - p0_k| <= radius_k`, interpolated in Chebyshev form
/// from exact values and exact `p`-derivatives at the nodes.
#[derive(Clone, Debug)]
pub struct SolitonFamily {
    center: Vec<f64>,
    radius: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// Node data in row-major tensor order.
    samples: Vec<FamilyPoint>,
    reference: GridFunction,
}

struct NodeSolve {
    phi: GridFunction,
    lambda: Vec<f64>,
}

impl SolitonFamily {
    /// Builds the family around the soliton `center` (which also fixes the gauge).
    pub fn build(
        model: &Model,
        center: &SolitonPoint,
        radius: &[f64],
        nodes_per_dim: usize,
        opts: SolverOptions,
    ) -> Result<Self, SolitonError> {
        let n0 = model.n_sym();
        if radius.len() != n0 || nodes_per_dim < 2 {
            return Err(SolitonError::Invalid("family box does not match the symmetry count".into()));
        }
        let m = nodes_per_dim;
        let nodes: Vec<f64> = (0..m)
            .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / m as f64).cos())
            .collect();
        let weights: Vec<f64> = (0..m)
            .map(|i| {
                let th = std::f64::consts::PI * (i as f64 + 0.5) / m as f64;
                let s = th.sin();
                if i % 2 == 0 { s } else { -s }
            })
            .collect();
        let reference = center.phi.clone();
        let total = m.pow(n0 as u32);
        let mut samples = Vec::with_capacity(total);
        let mut last = NodeSolve { phi: center.phi.clone(), lambda: center.lambda.clone() };
        for flat in 0..total {
            let idx = unflatten(flat, m, n0);
            let p: Vec<f64> = (0..n0).map(|k| center.p[k] + radius[k] * nodes[idx[k]]).collect();
            let guess = if n0 > 1 && idx[n0 - 1] == 0 && flat > 0 {
                // start a new row from the row above to stay on the branch
                let mut above = idx.clone();
                above[n0 - 2] -= 1;
                let s: &FamilyPoint = &samples[flatten(&above, m)];
                NodeSolve { phi: s.phi.clone(), lambda: s.lambda.clone() }
            } else {
                last
            };
            let pt = solve_at(model, &p, &guess, &reference, opts)?;
            let fp = node_derivatives(model, &pt, &reference)?;
            last = NodeSolve { phi: fp.phi.clone(), lambda: fp.lambda.clone() };
            samples.push(fp);
        }
        Ok(Self { center: center.p.clone(), radius: radius.to_vec(), nodes, weights, samples, reference })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn reference(&self) -> &GridFunction {
        &self.reference
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(&self.center)
            .zip(&self.radius)
            .all(|((x, c), r)| (x - c).abs() <= r * (1.0 + 1e-12))
    }

    /// Interpolated family data at `p`.
    pub fn evaluate(&self, p: &[f64]) -> Result<FamilyPoint, SolitonError> {
        if !self.contains(p) || p.iter().any(|v| !v.is_finite()) {
            return Err(SolitonError::OutOfChart(p.to_vec()));
        }
        let n0 = self.center.len();
        let m = self.nodes.len();
        let per_dim: Vec<Vec<f64>> = (0..n0)
            .map(|k| barycentric(&self.nodes, &self.weights, (p[k] - self.center[k]) / self.radius[k]))
            .collect();
        let first = &self.samples[0];
        let mut phi = GridFunction::zeros(first.phi.grid(), first.phi.components());
        let mut dphi = vec![phi.clone(); n0];
        let mut d2phi = vec![vec![phi.clone(); n0]; n0];
        let mut lambda = vec![0.0; n0];
        let mut dlambda = DMatrix::zeros(n0, n0);
        for (flat, s) in self.samples.iter().enumerate() {
            let idx = unflatten(flat, m, n0);
            let w: f64 = (0..n0).map(|k| per_dim[k][idx[k]]).product();
            if w == 0.0 {
                continue;
            }
            phi.axpy(w, &s.phi);
            for a in 0..n0 {
                dphi[a].axpy(w, &s.dphi[a]);
                lambda[a] += w * s.lambda[a];
                for b in 0..n0 {
                    d2phi[a][b].axpy(w, &s.d2phi[a][b]);
                    dlambda[(a, b)] += w * s.dlambda[(a, b)];
                }
            }
        }
        Ok(FamilyPoint { p: p.to_vec(), phi, dphi, d2phi, lambda, dlambda })
    }
}

fn unflatten(mut flat: usize, m: usize, n0: usize) -> Vec<usize> {
    let mut idx = vec![0; n0];
    for k in (0..n0).rev() {
        idx[k] = flat % m;
        flat /= m;
    }
    idx
}

fn flatten(idx: &[usize], m: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * m + i)
}

/// Barycentric Lagrange weights of the node set at `t`.
fn barycentric(nodes: &[f64], weights: &[f64], t: f64) -> Vec<f64> {
    if let Some(i) = nodes.iter().position(|&x| (x - t).abs() < 1e-15) {
        let mut out = vec![0.0; nodes.len()];
        out[i] = 1.0;
        return out;
    }
    let terms: Vec<f64> = nodes.iter().zip(weights).map(|(x, w)| w / (t - x)).collect();
    let total: f64 = terms.iter().sum();
    terms.iter().map(|v| v / total).collect()
}

fn solve_at(
    model: &Model,
    p: &[f64],
    guess: &NodeSolve,
    reference: &GridFunction,
    opts: SolverOptions,
) -> Result<SolitonPoint, SolitonError> {
    let tight = SolverOptions { tol: opts.tol.min(1e-11), ..opts };
    solve_core(model, &Target::Invariants(p.to_vec()), &guess.phi, reference, Some(&guess.lambda), tight)
}

/// Exact first and second `p`-derivatives at a converged fixed-`p` soliton.
fn node_derivatives(model: &Model, pt: &SolitonPoint, reference: &GridFunction) -> Result<FamilyPoint, SolitonError> {
    let n0 = model.n_sym();
    let gauge = gauge_directions(model, reference);
    let sys = Bordered { dim: model.dim(), n0, free_lambda: true };
    let lu: LU<f64, Dyn, Dyn> = sys.jacobian(model, &pt.phi, &pt.lambda, &gauge).lu();
    let mut dphi = Vec::with_capacity(n0);
    let mut dlambda = DMatrix::zeros(n0, n0);
    for k in 0..n0 {
        let mut rhs = DVector::zeros(sys.size());
        rhs[sys.dim + k] = 1.0;
        let x = lu.solve(&rhs).ok_or(SolitonError::Singular)?;
        dphi.push(model.field(&x.rows(0, sys.dim).into_owned()));
        for j in 0..n0 {
            dlambda[(j, k)] = x[sys.dim + j];
        }
    }
    let mut d2phi = vec![vec![model.zeros(); n0]; n0];
    for k in 0..n0 {
        for l in k..n0 {
            let mut top = model.third_apply(&pt.phi, &dphi[k], &dphi[l]);
            for j in 0..n0 {
                top.axpy(-dlambda[(j, k)], &model.diamond(j, &dphi[l]));
                top.axpy(-dlambda[(j, l)], &model.diamond(j, &dphi[k]));
            }
            let mut rhs = DVector::zeros(sys.size());
            for (r, v) in rhs.rows_mut(0, sys.dim).iter_mut().zip(top.values()) {
                *r = -v;
            }
            for j in 0..n0 {
                rhs[sys.dim + j] = -model.diamond(j, &dphi[k]).inner(&dphi[l]).unwrap();
            }
            let x = lu.solve(&rhs).ok_or(SolitonError::Singular)?;
            let f = model.field(&x.rows(0, sys.dim).into_owned());
            d2phi[k][l] = f.clone();
            d2phi[l][k] = f;
        }
    }
    Ok(FamilyPoint {
        p: pt.p.clone(),
        phi: pt.phi.clone(),
        dphi,
        d2phi,
        lambda: pt.lambda.clone(),
        dlambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn barycentric_weights_reproduce_quadratics() {
        let m = 6;
        let nodes: Vec<f64> = (0..m).map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / m as f64).cos()).collect();
        let weights: Vec<f64> = (0..m)
            .map(|i| {
                let s = (std::f64::consts::PI * (i as f64 + 0.5) / m as f64).sin();
                if i % 2 == 0 { s } else { -s }
            })
            .collect();
        let w = barycentric(&nodes, &weights, 0.3);
        let v: f64 = w.iter().zip(&nodes).map(|(a, x)| a * (x * x - 2.0 * x)).sum();
        assert!((v - (0.09 - 0.6)).abs() < 1e-14);
    }

    #[test]
    fn flatten_roundtrip() {
        for flat in 0..27 {
            assert_eq!(flatten(&unflatten(flat, 3, 3), 3), flat);
        }
    }
}
