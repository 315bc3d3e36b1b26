//! Moser deformation in modulation coordinates `(tau, Pi, R)`: the one-form
//! `alpha` with `d alpha = Omega - Omega_0`, the field `X^t` solving
//! `i_{X^t} Omega_t = -alpha` for `Omega_t = Omega_0 + t (Omega - Omega_0)`,
//! its flow and a pullback audit.
//!
//! `Omega - Omega_0` has finite rank in these coordinates, so the field is
//! obtained from a small dense system over the functionals spanning it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::grid::GridFunction;
use crate::model::random_smooth_field;
use crate::modulation::{reconstruct, reduced_p, Chart, ModulationCoords, ModulationError};
use crate::ode::{dopri5, OdeFailure, OdeOptions, OdeStats};

#[derive(Debug, Error)]
pub enum DarbouxError {
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error("chart degeneracy: momentum denominator {0:.3e}")]
    Degenerate(f64),
    #[error("finite-rank system singular at t = {0}; shrink the chart")]
    Singular(f64),
    #[error("flow left the chart at t = {time}: {reason}")]
    Escape { time: f64, reason: String },
    #[error("invalid request: {0}")]
    Invalid(String),
}

/// Point `(tau, Pi, R)` with `R` in the reference space `X_0`.
#[derive(Clone, Debug)]
pub struct DarbouxState {
    pub tau: Vec<f64>,
    pub pi: Vec<f64>,
    pub r: DVector<f64>,
}

impl DarbouxState {
    pub fn from_coords(c: &ModulationCoords) -> Self {
        Self { tau: c.tau.clone(), pi: c.pi.clone(), r: c.r.clone() }
    }

    pub fn rho(&self, chart: &Chart) -> Vec<f64> {
        chart.invariants_vec(&self.r)
    }

    pub fn to_field(&self, chart: &Chart) -> Result<GridFunction, DarbouxError> {
        let p = reduced_p(chart, &self.pi, &self.rho(chart), &self.r)?;
        Ok(reconstruct(chart, &self.tau, &p, &self.r)?)
    }

    /// `self + s v` in coordinates.
    pub fn displaced(&self, v: &Tangent, s: f64) -> Self {
        Self {
            tau: self.tau.iter().zip(&v.tau).map(|(a, b)| a + s * b).collect(),
            pi: self.pi.iter().zip(&v.pi).map(|(a, b)| a + s * b).collect(),
            r: &self.r + &v.r * s,
        }
    }
}

/// Tangent vector `(d tau, d Pi, d R)` with `d R` in `X_0`.
#[derive(Clone, Debug)]
pub struct Tangent {
    pub tau: Vec<f64>,
    pub pi: Vec<f64>,
    pub r: DVector<f64>,
}

impl Tangent {
    pub fn zeros(n0: usize, dim: usize) -> Self {
        Self { tau: vec![0.0; n0], pi: vec![0.0; n0], r: DVector::zeros(dim) }
    }

    /// Random direction with unit-size components and `d R` projected to `X_0`.
    pub fn random(chart: &Chart, rng: &mut ChaCha8Rng) -> Self {
        let n0 = chart.n_sym();
        let tau = (0..n0).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pi = (0..n0).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = chart.proj0.apply(&random_smooth_field(&chart.model, rng).to_dvector());
        let r = &r / chart.model.dot(&r, &r).sqrt();
        Self { tau, pi, r }
    }

    pub fn norm(&self, chart: &Chart) -> f64 {
        let a: f64 = self.tau.iter().chain(&self.pi).map(|v| v * v).sum();
        (a + chart.model.dot(&self.r, &self.r)).sqrt()
    }

    fn axpy(&mut self, s: f64, other: &Tangent) {
        for (a, b) in self.tau.iter_mut().zip(&other.tau) {
            *a += s * b;
        }
        for (a, b) in self.pi.iter_mut().zip(&other.pi) {
            *a += s * b;
        }
        self.r.axpy(s, &other.r, 1.0);
    }

    /// Difference quotient `(b - a) / step` of two states.
    pub fn between(a: &DarbouxState, b: &DarbouxState, step: f64) -> Self {
        Self {
            tau: a.tau.iter().zip(&b.tau).map(|(x, y)| (y - x) / step).collect(),
            pi: a.pi.iter().zip(&b.pi).map(|(x, y)| (y - x) / step).collect(),
            r: (&b.r - &a.r) / step,
        }
    }
}

/// Linear functional `a . d tau + b . d Pi + <q, d R>`; `kappa_k` is the
/// coefficient of `diamond_k R` contained in `q`.
#[derive(Clone, Debug)]
struct Linear {
    a: Vec<f64>,
    b: Vec<f64>,
    q: DVector<f64>,
    kappa: Vec<f64>,
}

impl Linear {
    fn zero(n0: usize, dim: usize) -> Self {
        Self { a: vec![0.0; n0], b: vec![0.0; n0], q: DVector::zeros(dim), kappa: vec![0.0; n0] }
    }

    fn eval(&self, chart: &Chart, v: &Tangent) -> f64 {
        let s: f64 = self.a.iter().zip(&v.tau).chain(self.b.iter().zip(&v.pi)).map(|(x, y)| x * y).sum();
        s + chart.model.dot(&self.q, &v.r)
    }

    fn negated(&self) -> Self {
        Self {
            a: self.a.iter().map(|v| -v).collect(),
            b: self.b.iter().map(|v| -v).collect(),
            q: -&self.q,
            kappa: self.kappa.iter().map(|v| -v).collect(),
        }
    }
}

/// Field `X^t` split as `(X^t)_R = A_j J diamond_j R + D`.
#[derive(Clone, Debug)]
pub struct DarbouxField {
    pub t: f64,
    pub tau: Vec<f64>,
    pub pi: Vec<f64>,
    pub r: DVector<f64>,
    pub a: Vec<f64>,
    pub d: DVector<f64>,
    /// Number of functionals spanning `Omega - Omega_0`.
    pub rank: usize,
}

impl DarbouxField {
    pub fn tangent(&self) -> Tangent {
        Tangent { tau: self.tau.clone(), pi: self.pi.clone(), r: self.r.clone() }
    }
}

/// `alpha`, `Omega` and `Omega - Omega_0` at a point, with `rho` entering
/// only through `p = p(Pi, rho, R)`.
pub struct LocalForms {
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
    /// `delta_jk + <diamond_j P R, d_k P R>`.
    pub denominator: DMatrix<f64>,
    /// `Gamma(p) R`.
    pub gamma_r: DVector<f64>,
    r: DVector<f64>,
    ell: Vec<Linear>,
    g: Vec<DVector<f64>>,
    funcs: Vec<Linear>,
    c: DMatrix<f64>,
    alpha: Linear,
}

impl LocalForms {
    pub fn at(chart: &Chart, pi: &[f64], rho: &[f64], r: &DVector<f64>) -> Result<Self, DarbouxError> {
        let m = &chart.model;
        let n0 = chart.n_sym();
        let d = chart.dim();
        let p = reduced_p(chart, pi, rho, r)?;
        let (fp, proj) = chart.at(&p)?;
        let pr = proj.apply(r);
        let dpr: Vec<DVector<f64>> = (0..n0).map(|k| proj.apply_dp(k, r)).collect();
        let s: Vec<DVector<f64>> = (0..n0).map(|j| proj.apply_adjoint(&m.diamond_vec(j, &pr))).collect();
        let mut den = DMatrix::identity(n0, n0);
        for j in 0..n0 {
            let dj = m.diamond_vec(j, &pr);
            for k in 0..n0 {
                den[(j, k)] += m.dot(&dj, &dpr[k]);
            }
        }
        let smin = den.clone().svd(false, false).singular_values.min();
        if smin < 1e-6 {
            return Err(DarbouxError::Degenerate(smin));
        }
        let minv = den.clone().try_inverse().ok_or(DarbouxError::Degenerate(0.0))?;
        let pj = proj.apply_adjoint(&m.jinv_vec(r));
        // alpha carries +<P^* J^{-1} R, d_k P R> / 2 dp_k, so beta = half . M^{-1} with half of opposite sign
        let half: Vec<f64> = (0..n0).map(|k| -0.5 * m.dot(&pj, &dpr[k])).collect();
        let beta: Vec<f64> = (0..n0).map(|j| (0..n0).map(|k| half[k] * minv[(k, j)]).sum()).collect();
        let gamma_r = m.jinv_vec(&(&pr - r)) * 0.5;

        let mut alpha = Linear::zero(n0, d);
        alpha.q = gamma_r.clone();
        for j in 0..n0 {
            alpha.b[j] = -beta[j];
            alpha.q.axpy(beta[j], &s[j], 1.0);
            alpha.kappa[j] = beta[j];
        }

        // dU = d R + sum_a g_a ell_a
        let phi = fp.phi.to_dvector();
        let inner = &phi + &pr;
        let mut ell = Vec::with_capacity(4 * n0);
        let mut g = Vec::with_capacity(4 * n0);
        for k in 0..n0 {
            let mut l = Linear::zero(n0, d);
            l.a[k] = 1.0;
            ell.push(l);
            g.push(m.j_vec(&m.diamond_vec(k, &inner)));
        }
        for k in 0..n0 {
            let mut l = Linear::zero(n0, d);
            for j in 0..n0 {
                l.b[j] = minv[(k, j)];
                l.q.axpy(-minv[(k, j)], &s[j], 1.0);
                l.kappa[j] = -minv[(k, j)];
            }
            ell.push(l);
            g.push(&fp.dphi[k].to_dvector() + &dpr[k]);
        }
        for (qi, vi) in proj.coefficient_gradients().into_iter().zip(proj.basis()) {
            let mut l = Linear::zero(n0, d);
            l.q = qi;
            ell.push(l);
            g.push(-vi);
        }
        let nl = ell.len();
        let jg: Vec<DVector<f64>> = g.iter().map(|v| m.jinv_vec(v)).collect();
        let mut funcs = ell.clone();
        for (a, q) in jg.iter().enumerate() {
            let mut l = Linear::zero(n0, d);
            l.q = q.clone();
            if a < n0 {
                l.kappa[a] = 1.0;
            }
            funcs.push(l);
        }
        for k in 0..n0 {
            let mut l = Linear::zero(n0, d);
            l.b[k] = 1.0;
            funcs.push(l);
        }
        let nf = funcs.len();
        let mut c = DMatrix::zeros(nf, nf);
        for a in 0..nl {
            for b in 0..nl {
                c[(a, b)] = m.dot(&jg[a], &g[b]);
            }
            c[(a, nl + a)] = 1.0;
            c[(nl + a, a)] = -1.0;
        }
        for k in 0..n0 {
            c[(k, 2 * nl + k)] -= 1.0;
            c[(2 * nl + k, k)] += 1.0;
        }
        Ok(Self { p, beta, denominator: den, gamma_r, r: r.clone(), ell, g, funcs, c, alpha })
    }

    /// Forms at a state with `rho = Pi(R)`.
    pub fn at_state(chart: &Chart, x: &DarbouxState) -> Result<Self, DarbouxError> {
        Self::at(chart, &x.pi, &x.rho(chart), &x.r)
    }

    pub fn rank(&self) -> usize {
        self.funcs.len()
    }

    /// `alpha(v)`.
    pub fn alpha(&self, chart: &Chart, v: &Tangent) -> f64 {
        self.alpha.eval(chart, v)
    }

    /// Differential of the state map `(tau, Pi, R) -> U`, without the group factor.
    pub fn state_differential(&self, chart: &Chart, v: &Tangent) -> DVector<f64> {
        let mut out = v.r.clone();
        for (l, g) in self.ell.iter().zip(&self.g) {
            out.axpy(l.eval(chart, v), g, 1.0);
        }
        out
    }

    /// `Omega(v, w) = <J^{-1} dU v, dU w>`.
    pub fn omega(&self, chart: &Chart, v: &Tangent, w: &Tangent) -> f64 {
        let m = &chart.model;
        m.dot(&m.jinv_vec(&self.state_differential(chart, v)), &self.state_differential(chart, w))
    }

    /// `Omega - Omega_0` from the finite-rank representation.
    pub fn omega_difference(&self, chart: &Chart, v: &Tangent, w: &Tangent) -> f64 {
        let uv = DVector::from_iterator(self.funcs.len(), self.funcs.iter().map(|f| f.eval(chart, v)));
        let uw = DVector::from_iterator(self.funcs.len(), self.funcs.iter().map(|f| f.eval(chart, w)));
        uv.dot(&(&self.c * uw))
    }

    /// Tangent `Y` with `Omega_0(Y, .) = u`.
    fn dual(&self, chart: &Chart, u: &Linear) -> Tangent {
        let jq = chart.model.j_vec(&u.q);
        Tangent { tau: u.b.clone(), pi: u.a.iter().map(|v| -v).collect(), r: chart.proj0.apply(&jq) }
    }

    /// Solves `i_X Omega_t = -alpha`.
    pub fn field(&self, chart: &Chart, t: f64) -> Result<DarbouxField, DarbouxError> {
        let m = &chart.model;
        let n0 = chart.n_sym();
        let neg = self.alpha.negated();
        let y0 = self.dual(chart, &neg);
        let ys: Vec<Tangent> = self.funcs.iter().map(|f| self.dual(chart, f)).collect();
        let nf = self.funcs.len();
        let q = DMatrix::from_fn(nf, nf, |c, b| self.funcs[c].eval(chart, &ys[b]));
        let rhs = DVector::from_iterator(nf, self.funcs.iter().map(|f| f.eval(chart, &y0)));
        let sys = DMatrix::identity(nf, nf) + &q * self.c.transpose() * t;
        let smin = sys.clone().svd(false, false).singular_values.min();
        if smin < 1e-8 {
            return Err(DarbouxError::Singular(t));
        }
        let x = sys.lu().solve(&rhs).ok_or(DarbouxError::Singular(t))?;
        let s = self.c.transpose() * x;
        let mut out = y0;
        let mut a = neg.kappa.clone();
        for (b, y) in ys.iter().enumerate() {
            out.axpy(-t * s[b], y);
            for k in 0..n0 {
                a[k] -= t * s[b] * self.funcs[b].kappa[k];
            }
        }
        let mut d = out.r.clone();
        for (k, ak) in a.iter().enumerate() {
            d.axpy(-ak, &m.j_vec(&m.diamond_vec(k, &self.r)), 1.0);
        }
        Ok(DarbouxField { t, tau: out.tau.clone(), pi: out.pi.clone(), r: out.r, a, d, rank: nf })
    }
}

/// `Omega_0(v, w) = d tau ^ d Pi + <J^{-1} d R, d R>`.
pub fn omega0(chart: &Chart, v: &Tangent, w: &Tangent) -> f64 {
    let m = &chart.model;
    let s: f64 = (0..chart.n_sym()).map(|j| v.tau[j] * w.pi[j] - v.pi[j] * w.tau[j]).sum();
    s + m.dot(&m.jinv_vec(&v.r), &w.r)
}

/// `|i_{X^t} Omega_t (v) + alpha(v)| / |v|`, maximized over probes.
pub fn defining_residual(chart: &Chart, x: &DarbouxState, t: f64, probes: &[Tangent]) -> Result<f64, DarbouxError> {
    let forms = LocalForms::at_state(chart, x)?;
    let field = forms.field(chart, t)?.tangent();
    let mut worst = 0.0f64;
    for v in probes {
        let o0 = omega0(chart, &field, v);
        let o = forms.omega(chart, &field, v);
        let lhs = o0 + t * (o - o0);
        worst = worst.max((lhs + forms.alpha(chart, v)).abs() / v.norm(chart));
    }
    Ok(worst)
}

/// Flow of `X^t` in the factorized variables `R = e^{J q . diamond} S`.
#[derive(Clone, Debug)]
pub struct FlowResult {
    pub tau: Vec<f64>,
    pub pi: Vec<f64>,
    pub r: DVector<f64>,
    pub q: Vec<f64>,
    /// `S(t) - R(0)`.
    pub s_correction: DVector<f64>,
    /// `rho` integrated as an independent variable.
    pub rho: Vec<f64>,
    pub stats: OdeStats,
}

impl FlowResult {
    pub fn state(&self) -> DarbouxState {
        DarbouxState { tau: self.tau.clone(), pi: self.pi.clone(), r: self.r.clone() }
    }
}

fn escape(f: OdeFailure<DarbouxError>) -> DarbouxError {
    match f {
        OdeFailure::Field { time, error } => match error {
            DarbouxError::Modulation(e) => DarbouxError::Escape { time, reason: e.to_string() },
            other => other,
        },
        OdeFailure::StepUnderflow(t) => DarbouxError::Escape { time: t, reason: "step size underflow".into() },
        OdeFailure::MaxSteps(t) => DarbouxError::Escape { time: t, reason: "step budget exhausted".into() },
    }
}

fn check_time(t_final: f64) -> Result<(), DarbouxError> {
    if !t_final.is_finite() || t_final.abs() > 2.0 {
        return Err(DarbouxError::Invalid(format!("flow time {t_final} outside [-2, 2]")));
    }
    Ok(())
}

/// Integrates `(tau, q, rho, S)` from `t = 0` to `t_final`.
pub fn integrate_flow(
    chart: &Chart,
    x: &DarbouxState,
    t_final: f64,
    opts: OdeOptions,
) -> Result<FlowResult, DarbouxError> {
    integrate_flow_span(chart, x, 0.0, t_final, opts)
}

/// Integrates the factorized system from `t0` to `t1`; `(t0, t1) = (1, 0)`
/// inverts the time-one map.
pub fn integrate_flow_span(
    chart: &Chart,
    x: &DarbouxState,
    t0: f64,
    t1: f64,
    opts: OdeOptions,
) -> Result<FlowResult, DarbouxError> {
    check_time(t0)?;
    check_time(t1)?;
    let m = &chart.model;
    let n0 = chart.n_sym();
    let d = chart.dim();
    let mut y0 = DVector::zeros(3 * n0 + d);
    let rho0 = x.rho(chart);
    for k in 0..n0 {
        y0[k] = x.tau[k];
        y0[2 * n0 + k] = rho0[k];
    }
    y0.rows_mut(3 * n0, d).copy_from(&x.r);
    let rhs = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>, DarbouxError> {
        let q: Vec<f64> = (0..n0).map(|k| y[n0 + k]).collect();
        let rho: Vec<f64> = (0..n0).map(|k| y[2 * n0 + k]).collect();
        let s = y.rows(3 * n0, d).into_owned();
        let r = m.group_vec(&q, &s);
        let forms = LocalForms::at(chart, &x.pi, &rho, &r)?;
        let f = forms.field(chart, t)?;
        let mut out = DVector::zeros(y.len());
        for k in 0..n0 {
            out[k] = f.tau[k];
            out[n0 + k] = f.a[k];
            out[2 * n0 + k] = m.dot(&m.diamond_vec(k, &r), &f.d);
        }
        let neg: Vec<f64> = q.iter().map(|v| -v).collect();
        out.rows_mut(3 * n0, d).copy_from(&m.group_vec(&neg, &f.d));
        Ok(out)
    };
    let (y, stats) = dopri5(rhs, t0, t1, &y0, opts).map_err(escape)?;
    let q: Vec<f64> = (0..n0).map(|k| y[n0 + k]).collect();
    let s = y.rows(3 * n0, d).into_owned();
    Ok(FlowResult {
        tau: (0..n0).map(|k| y[k]).collect(),
        pi: x.pi.clone(),
        r: m.group_vec(&q, &s),
        q,
        s_correction: &s - &x.r,
        rho: (0..n0).map(|k| y[2 * n0 + k]).collect(),
        stats,
    })
}

/// Solves `S' = D(t, Pi(R_0), S)` with `S(0) = R_0`, freezing `rho`.
pub fn integrate_frozen(
    chart: &Chart,
    x: &DarbouxState,
    t_final: f64,
    opts: OdeOptions,
) -> Result<DVector<f64>, DarbouxError> {
    check_time(t_final)?;
    let rho0 = x.rho(chart);
    let rhs = |t: f64, s: &DVector<f64>| -> Result<DVector<f64>, DarbouxError> {
        let forms = LocalForms::at(chart, &x.pi, &rho0, s)?;
        Ok(forms.field(chart, t)?.d)
    };
    let (s, _) = dopri5(rhs, 0.0, t_final, &x.r, opts).map_err(escape)?;
    Ok(s)
}

/// The time-one map in coordinates.
pub fn flow_map(chart: &Chart, x: &DarbouxState, opts: OdeOptions) -> Result<DarbouxState, DarbouxError> {
    Ok(integrate_flow(chart, x, 1.0, opts)?.state())
}

/// Inverse of [`flow_map`].
pub fn inverse_flow_map(chart: &Chart, x: &DarbouxState, opts: OdeOptions) -> Result<DarbouxState, DarbouxError> {
    Ok(integrate_flow_span(chart, x, 1.0, 0.0, opts)?.state())
}

#[derive(Clone, Copy, Debug)]
pub struct AuditOptions {
    /// Central-difference step for the Jacobian of the time-one map.
    pub step: f64,
    pub tolerance: f64,
    pub ode: OdeOptions,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { step: 1e-4, tolerance: 1e-5, ode: OdeOptions { rtol: 1e-12, atol: 1e-14, ..OdeOptions::default() } }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub samples: usize,
    /// Largest `|F^* Omega - Omega_0| / |Omega_0|` over tangent pairs.
    pub max_deviation: f64,
    /// Same quantity for the identity map.
    pub control_deviation: f64,
    /// Largest relative change of the pushforward between steps `h` and `2h`.
    pub fd_consistency: f64,
    pub rank: usize,
    pub step: f64,
    pub passed: bool,
}

fn pushforward(
    chart: &Chart,
    x: &DarbouxState,
    v: &Tangent,
    h: f64,
    opts: OdeOptions,
) -> Result<Tangent, DarbouxError> {
    let a = flow_map(chart, &x.displaced(v, -h), opts)?;
    let b = flow_map(chart, &x.displaced(v, h), opts)?;
    Ok(Tangent::between(&a, &b, 2.0 * h))
}

/// Checks `F^{1*} Omega = Omega_0` on random tangent pairs with a
/// finite-difference Jacobian of the time-one map.
pub fn verify_darboux(
    chart: &Chart,
    states: &[DarbouxState],
    pairs: usize,
    rng: &mut ChaCha8Rng,
    opts: AuditOptions,
) -> Result<AuditReport, DarbouxError> {
    if states.is_empty() || pairs == 0 {
        return Err(DarbouxError::Invalid("audit needs at least one state and one pair".into()));
    }
    let mut max_dev = 0.0f64;
    let mut control = 0.0f64;
    let mut consistency = 0.0f64;
    let mut rank = 0;
    for x in states {
        let image = flow_map(chart, x, opts.ode)?;
        let at_image = LocalForms::at_state(chart, &image)?;
        let at_source = LocalForms::at_state(chart, x)?;
        rank = at_source.rank();
        for _ in 0..pairs {
            let v = Tangent::random(chart, rng);
            let mut w = Tangent::random(chart, rng);
            w.r += chart.proj0.apply(&chart.model.j_vec(&v.r));
            let o0 = omega0(chart, &v, &w);
            let fv = pushforward(chart, x, &v, opts.step, opts.ode)?;
            let fw = pushforward(chart, x, &w, opts.step, opts.ode)?;
            let fv2 = pushforward(chart, x, &v, 2.0 * opts.step, opts.ode)?;
            let mut diff = fv2.clone();
            diff.axpy(-1.0, &fv);
            consistency = consistency.max(diff.norm(chart) / fv.norm(chart));
            let pulled = at_image.omega(chart, &fv, &fw);
            max_dev = max_dev.max((pulled - o0).abs() / o0.abs());
            control = control.max((at_source.omega(chart, &v, &w) - o0).abs() / o0.abs());
        }
    }
    Ok(AuditReport {
        samples: states.len() * pairs,
        max_deviation: max_dev,
        control_deviation: control,
        fd_consistency: consistency,
        rank,
        step: opts.step,
        passed: max_dev <= opts.tolerance && max_dev < control,
    })
}
