//! Iterated normalization: step `l` removes scalar terms of `z`-degree `l + 1`
//! and `f`-linear terms of `z`-degree `l` that are not in normal form.

use num_complex::Complex64;
use serde::Serialize;

use super::bracket::poisson_bracket;
use super::homological::{classify, h2, max_size, solve_homological_modified};
use super::lie::{lie_pullback, lie_pullback_small};
use super::poly::{Monomial, Poly, TermClass};
use super::space::PhaseSpace;
use super::NormalFormError;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BirkhoffOptions {
    /// Number of steps; `None` runs `2N + 1`.
    pub steps: Option<u32>,
    pub cap: u32,
    /// Bound on removable coefficients after each step.
    pub tolerance: f64,
    /// Stopping threshold of the iterated homological solve.
    pub update_tol: f64,
    pub max_iter: usize,
}

impl BirkhoffOptions {
    /// Cap `2N + 3` for the frame's `N`.
    pub fn for_space(space: &PhaseSpace) -> Self {
        Self {
            steps: None,
            cap: 2 * space.big_n() as u32 + 3,
            tolerance: 1e-8,
            update_tol: 1e-10,
            max_iter: 20,
        }
    }

    pub fn step_count(&self, space: &PhaseSpace) -> u32 {
        self.steps.unwrap_or(2 * space.big_n() as u32 + 1)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub step: u32,
    pub iterations: usize,
    pub updates: Vec<f64>,
    pub generator_terms: usize,
    pub generator_weight: Option<u32>,
    pub max_removable: f64,
    pub worst_monomial: Option<Monomial>,
    /// `Re a_{delta_j delta_j}(0)` after the step.
    pub diagonal: Vec<f64>,
    pub diagonal_drift: f64,
    pub reality_defect: f64,
    pub terms: usize,
    pub tags: usize,
}

#[derive(Clone, Debug)]
pub struct BirkhoffResult {
    pub generators: Vec<Poly>,
    /// `H^(l)` after each step; the input is not repeated.
    pub hamiltonians: Vec<Poly>,
    pub reports: Vec<StepReport>,
}

impl BirkhoffResult {
    pub fn final_hamiltonian(&self) -> Option<&Poly> {
        self.hamiltonians.last()
    }
}

/// Removable terms with scalar `z`-degree `l + 1` or `f`-linear `z`-degree `l`.
pub fn step_targets(space: &PhaseSpace, h: &Poly, step: u32) -> Poly {
    let mut t = Poly::zero(space);
    for (m, c) in &h.scalar {
        if m.z_degree() == step + 1 && classify(space, m, 0) == TermClass::Removable {
            t.scalar.insert(m.clone(), *c);
        }
    }
    for (m, a) in &h.linear {
        if m.z_degree() == step && classify(space, m, 1) == TermClass::Removable {
            t.linear.insert(m.clone(), a.clone());
        }
    }
    t
}

/// Largest removable coefficient with scalar `z`-degree at most `l + 1` or
/// `f`-linear `z`-degree at most `l`.
pub fn max_removable(space: &PhaseSpace, h: &Poly, step: u32) -> (f64, Option<Monomial>) {
    let mut t = Poly::zero(space);
    for s in 0..=step {
        t.axpy(Complex64::new(1.0, 0.0), &step_targets(space, h, s));
    }
    max_size(space, &t)
}

/// `Re a_{delta_j delta_j}` at `rho = 0`.
pub fn diagonal(space: &PhaseSpace, h: &Poly) -> Vec<f64> {
    let n = space.n_modes();
    (0..n)
        .map(|j| {
            let mut d = vec![0; n];
            d[j] = 1;
            h.scalar.get(&Monomial::z(&d, &d, space.n_sym())).map(|c| c.re).unwrap_or(0.0)
        })
        .collect()
}

fn pullback(space: &PhaseSpace, h: &Poly, chi: &Poly, cap: u32) -> Result<Poly, NormalFormError> {
    match chi.min_weight() {
        Some(w) if w < 3 => lie_pullback_small(space, h, chi, cap, 1e-18, 40),
        _ => lie_pullback(space, h, chi, cap),
    }
}

/// One normalization step with the iterated homological solve.
pub fn normalize_step(
    space: &PhaseSpace,
    h: &Poly,
    step: u32,
    opts: &BirkhoffOptions,
) -> Result<(Poly, Poly, usize, Vec<f64>), NormalFormError> {
    let k = step_targets(space, h, step);
    if k.is_empty() {
        return Ok((Poly::zero(space), h.clone(), 0, Vec::new()));
    }
    let quad = h2(space);
    let correction = |chi: &Poly| -> Result<Poly, NormalFormError> {
        let mut d = pullback(space, h, chi, opts.cap)?;
        d.axpy(Complex64::new(-1.0, 0.0), &poisson_bracket(space, &quad, chi, opts.cap));
        let mut c = step_targets(space, &d, step);
        c.axpy(Complex64::new(-1.0, 0.0), &k);
        Ok(c)
    };
    let solved = solve_homological_modified(space, &k, correction, opts.update_tol, opts.max_iter)?;
    let hn = pullback(space, h, &solved.chi, opts.cap)?;
    Ok((solved.chi, hn, solved.iterations, solved.updates))
}

/// Runs steps `1..=L` and checks the post-step properties.
pub fn birkhoff_normalize(space: &PhaseSpace, h1: &Poly, opts: &BirkhoffOptions) -> Result<BirkhoffResult, NormalFormError> {
    let start = diagonal(space, h1);
    let mut h = h1.clone();
    let mut result = BirkhoffResult { generators: Vec::new(), hamiltonians: Vec::new(), reports: Vec::new() };
    for step in 1..=opts.step_count(space) {
        let (chi, hn, iterations, updates) = normalize_step(space, &h, step, opts)?;
        let (worst, mono) = max_removable(space, &hn, step);
        let diag = diagonal(space, &hn);
        let drift = diag.iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        result.reports.push(StepReport {
            step,
            iterations,
            updates,
            generator_terms: chi.len(),
            generator_weight: chi.min_weight(),
            max_removable: worst,
            worst_monomial: mono.clone(),
            diagonal: diag,
            diagonal_drift: drift,
            reality_defect: hn.reality_defect(),
            terms: hn.len(),
            tags: hn.tags.len(),
        });
        if worst > opts.tolerance {
            return Err(NormalFormError::Postcondition { step, mono: mono.expect("nonzero size has a monomial"), size: worst });
        }
        result.generators.push(chi);
        result.hamiltonians.push(hn.clone());
        h = hn;
    }
    Ok(result)
}
