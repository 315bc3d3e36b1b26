//! Pullback `H o phi = sum_k ad_chi^k H / k!` by the time-one flow of `chi`,
//! with `ad_chi H = {H, chi}`.

use num_complex::Complex64;

use super::bracket::poisson_bracket;
use super::poly::Poly;
use super::space::PhaseSpace;
use super::NormalFormError;

/// Lie series truncated at weight `cap`. Every bracket with a generator of
/// weight at least 3 raises the weight, so the sum is finite.
pub fn lie_pullback(space: &PhaseSpace, h: &Poly, chi: &Poly, cap: u32) -> Result<Poly, NormalFormError> {
    let Some(w) = chi.min_weight() else {
        return Ok(h.clone());
    };
    if w < 3 {
        return Err(NormalFormError::Grading(w));
    }
    let mut out = h.clone();
    out.truncate(cap);
    let mut term = out.clone();
    let mut k = 1.0;
    while !term.is_empty() {
        term = poisson_bracket(space, &term, chi, cap).scaled(Complex64::new(1.0 / k, 0.0));
        out.axpy(Complex64::new(1.0, 0.0), &term);
        k += 1.0;
    }
    Ok(out)
}

/// Lie series for a small generator of weight two, which leaves the weight
/// unchanged; summed until a term's largest coefficient falls below `tol`.
pub fn lie_pullback_small(
    space: &PhaseSpace,
    h: &Poly,
    chi: &Poly,
    cap: u32,
    tol: f64,
    max_terms: usize,
) -> Result<Poly, NormalFormError> {
    if chi.is_empty() {
        return Ok(h.clone());
    }
    let mut out = h.clone();
    out.truncate(cap);
    let mut term = out.clone();
    for k in 1..=max_terms {
        term = poisson_bracket(space, &term, chi, cap).scaled(Complex64::new(1.0 / k as f64, 0.0));
        out.axpy(Complex64::new(1.0, 0.0), &term);
        let size = largest(&term);
        if size < tol {
            return Ok(out);
        }
    }
    Err(NormalFormError::NoConvergence { iterations: max_terms, update: largest(&term) })
}

fn largest(p: &Poly) -> f64 {
    let s = p.scalar.values().map(|c| c.norm());
    let l = p.linear.values().map(|a| a.camax());
    let q = p.quadratic.values().map(|b| b.camax());
    s.chain(l).chain(q).fold(0.0, f64::max)
}
