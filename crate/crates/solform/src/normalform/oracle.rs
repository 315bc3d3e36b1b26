//! Brute-force check of the truncated pullbacks: the exact Hamiltonian composed
//! with numerically integrated generator flows against the normal form.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ode::{dopri5, OdeFailure, OdeOptions};

use super::poly::Poly;
use super::space::PhaseSpace;
use super::NormalFormError;

#[derive(Clone, Debug, Serialize)]
pub struct OracleOptions {
    pub eps: Vec<f64>,
    /// Scale `A` of samples `(A eps z, (A eps)^2 f)`.
    pub amplitude: f64,
    pub samples: usize,
    pub ode: OdeOptions,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            eps: vec![1e-2, 5e-3, 2.5e-3],
            amplitude: 8.0,
            samples: 4,
            ode: OdeOptions { rtol: 1e-13, atol: 1e-18, ..OdeOptions::default() },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub eps: Vec<f64>,
    /// Largest `|H_exact(phi(x)) - H_final(x)|` over the samples at each `eps`.
    pub errors: Vec<f64>,
    pub slope: f64,
    pub required: f64,
    pub passed: bool,
    pub samples: usize,
}

/// Time-one map of the Hamiltonian flow of a real polynomial on `(z, f)`.
pub fn generator_flow(
    space: &PhaseSpace,
    chi: &Poly,
    z: &[Complex64],
    f: &DVector<f64>,
    ode: OdeOptions,
) -> Result<(Vec<Complex64>, DVector<f64>), NormalFormError> {
    if chi.is_empty() {
        return Ok((z.to_vec(), f.clone()));
    }
    let n = z.len();
    let d = f.len();
    let mut y0 = DVector::zeros(2 * n + d);
    for (j, zj) in z.iter().enumerate() {
        y0[j] = zj.re;
        y0[n + j] = zj.im;
    }
    y0.rows_mut(2 * n, d).copy_from(f);
    let rhs = |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>, NormalFormError> {
        let zz: Vec<Complex64> = (0..n).map(|j| Complex64::new(y[j], y[n + j])).collect();
        let ff = y.rows(2 * n, d).into_owned();
        let (dz, df) = chi.vector_field(space, &zz, &ff);
        let mut out = DVector::zeros(y.len());
        for (j, v) in dz.iter().enumerate() {
            out[j] = v.re;
            out[n + j] = v.im;
        }
        out.rows_mut(2 * n, d).copy_from(&df);
        Ok(out)
    };
    let (y, _) = dopri5(rhs, 0.0, 1.0, &y0, ode).map_err(|e| match e {
        OdeFailure::Field { error, .. } => error,
        OdeFailure::StepUnderflow(t) => NormalFormError::Oracle(format!("step underflow at t = {t}")),
        OdeFailure::MaxSteps(t) => NormalFormError::Oracle(format!("step budget exhausted at t = {t}")),
    })?;
    let zz = (0..n).map(|j| Complex64::new(y[j], y[n + j])).collect();
    Ok((zz, y.rows(2 * n, d).into_owned()))
}

/// `phi_1 o ... o phi_L (x)`: the last generator acts first.
pub fn compose_flows(
    space: &PhaseSpace,
    generators: &[Poly],
    z: &[Complex64],
    f: &DVector<f64>,
    ode: OdeOptions,
) -> Result<(Vec<Complex64>, DVector<f64>), NormalFormError> {
    let mut state = (z.to_vec(), f.clone());
    for chi in generators.iter().rev() {
        state = generator_flow(space, chi, &state.0, &state.1, ode)?;
    }
    Ok(state)
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Compares `exact(phi(x))` with `h_final(x)` on random samples of size `eps`
/// and fits the order of the discrepancy.
pub fn finite_dim_oracle<E>(
    space: &PhaseSpace,
    exact: E,
    generators: &[Poly],
    h_final: &Poly,
    cap: u32,
    opts: &OracleOptions,
    rng: &mut ChaCha8Rng,
) -> Result<OracleReport, NormalFormError>
where
    E: Fn(&[Complex64], &DVector<f64>) -> Result<f64, NormalFormError>,
{
    let n = space.n_modes();
    let d = space.dim();
    let h = space.spacing();
    let mut directions = Vec::with_capacity(opts.samples);
    for _ in 0..opts.samples {
        let z: Vec<Complex64> = (0..n)
            .map(|_| Complex64::from_polar(rng.gen_range(0.5..1.0), rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        let raw = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
        let smooth = smooth_field(space, &raw);
        let f = space.pc() * smooth;
        let norm = (f.norm_squared() * h).sqrt();
        directions.push((z, f / norm));
    }
    let mut errors = Vec::with_capacity(opts.eps.len());
    for &eps in &opts.eps {
        let s = opts.amplitude * eps;
        let mut worst = 0.0f64;
        for (zhat, fhat) in &directions {
            let z: Vec<Complex64> = zhat.iter().map(|v| v * s).collect();
            let f = fhat * (s * s);
            let (zy, fy) = compose_flows(space, generators, &z, &f, opts.ode)?;
            let lhs = exact(&zy, &fy)?;
            let rhs = h_final.evaluate(space, &z, &f);
            worst = worst.max((lhs - rhs).abs());
        }
        errors.push(worst);
    }
    let slope = loglog_slope(&opts.eps, &errors);
    let required = cap as f64 + 1.0 - 0.3;
    Ok(OracleReport { eps: opts.eps.clone(), errors, slope, required, passed: slope >= required, samples: opts.samples })
}

/// Damps high grid frequencies of a random vector by a three-point average
/// applied a few times on each component.
fn smooth_field(space: &PhaseSpace, raw: &DVector<f64>) -> DVector<f64> {
    let comps = space.n_components();
    let points = raw.len() / comps;
    let mut v = raw.clone();
    for _ in 0..6 {
        let prev = v.clone();
        for c in 0..comps {
            for m in 0..points {
                let l = prev[c * points + (m + points - 1) % points];
                let r = prev[c * points + (m + 1) % points];
                v[c * points + m] = 0.25 * l + 0.5 * prev[c * points + m] + 0.25 * r;
            }
        }
    }
    v
}
