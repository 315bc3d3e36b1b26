//! Classification of terms and the homological equation `{H_2, chi} + K = Z`.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use super::bracket::poisson_bracket;
use super::poly::{Monomial, Poly, TermClass};
use super::space::PhaseSpace;
use super::NormalFormError;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `H_2 = sum e_j |z_j|^2 + 1/2 <S f, f>`.
pub fn h2(space: &PhaseSpace) -> Poly {
    let mut p = Poly::zero(space);
    let n = space.n_modes();
    for (j, e) in space.frequencies().iter().enumerate() {
        let mut d = vec![0; n];
        d[j] = 1;
        p.add_scalar(Monomial::z(&d, &d, space.n_sym()), Complex64::new(*e, 0.0));
    }
    p.add_quadratic(Monomial::one(n, space.n_sym()), &space.quadratic_kernel());
    p
}

/// Class of a term with the given `f`-degree.
pub fn classify(space: &PhaseSpace, m: &Monomial, f_degree: u32) -> TermClass {
    classify_with(space.frequencies(), space.edge(), space.resonance_tol(), m, f_degree)
}

/// Class of a term for explicit frequencies, continuum edge and resonance tolerance.
pub fn classify_with(e: &[f64], edge: f64, tol: f64, m: &Monomial, f_degree: u32) -> TermClass {
    let omega = m.frequency(e);
    match f_degree {
        0 if omega.abs() < tol => TermClass::Z0,
        1 if omega.abs() >= edge => TermClass::Z1,
        0 | 1 => TermClass::Removable,
        _ => TermClass::Quadratic,
    }
}

/// Coefficient `b = k / (i omega)` of a scalar generator term.
pub fn scalar_solution(k: Complex64, omega: f64) -> Complex64 {
    k / (I * omega)
}

/// `L^2` norm of the field `G = J a` of a covector.
pub fn field_norm(space: &PhaseSpace, a: &DVector<Complex64>) -> f64 {
    (space.j_apply(a).norm_squared() * space.spacing()).sqrt()
}

/// Solves `{H_2, chi} + K = 0` term by term. `K` must consist of removable
/// scalar and `f`-linear terms.
pub fn solve_homological(space: &PhaseSpace, k: &Poly) -> Result<Poly, NormalFormError> {
    if !k.quadratic.is_empty() {
        return Err(NormalFormError::Invalid("homological right-hand side has f-quadratic terms".into()));
    }
    let e = space.frequencies();
    let mut chi = Poly::zero(space);
    for (m, c) in &k.scalar {
        if classify(space, m, 0) != TermClass::Removable {
            return Err(NormalFormError::Invalid(format!("scalar term {m:?} is in normal form")));
        }
        chi.add_scalar(m.clone(), scalar_solution(*c, m.frequency(e)));
    }
    let solved: Vec<Result<(Monomial, DVector<Complex64>), NormalFormError>> = k
        .linear
        .par_iter()
        .map(|(m, a)| {
            let omega = m.frequency(e);
            if classify(space, m, 1) != TermClass::Removable {
                return Err(NormalFormError::Invalid(format!("f-linear term {m:?} is in normal form")));
            }
            let g = space.pc_apply(&space.j_apply(a));
            let big_g = -space.resolvent_apply(omega, &g).map_err(|err| match err {
                NormalFormError::Resolvent { .. } => {
                    NormalFormError::Resonance { mu: m.mu.clone(), nu: m.nu.clone(), frequency: omega }
                }
                other => other,
            })?;
            let big_g = space.pc_apply(&big_g);
            Ok((m.clone(), space.canonical_covector(&space.jinv_apply(&big_g))))
        })
        .collect();
    for r in solved {
        let (m, a) = r?;
        chi.linear.insert(m, a);
    }
    Ok(chi)
}

/// Largest residual of `{H_2, chi} + K` over scalar and `f`-linear monomials.
pub fn homological_residual(space: &PhaseSpace, chi: &Poly, k: &Poly) -> f64 {
    let cap = chi.max_weight().unwrap_or(0).max(k.max_weight().unwrap_or(0));
    let mut r = poisson_bracket(space, &h2(space), chi, cap);
    r.quadratic.clear();
    r.axpy(Complex64::new(1.0, 0.0), k);
    max_size(space, &r).0
}

/// Largest coefficient of a polynomial's scalar and `f`-linear parts with
/// the monomial where it occurs; `f`-linear sizes use [`field_norm`].
pub fn max_size(space: &PhaseSpace, p: &Poly) -> (f64, Option<Monomial>) {
    let mut best = (0.0, None);
    for (m, c) in &p.scalar {
        if c.norm() > best.0 {
            best = (c.norm(), Some(m.clone()));
        }
    }
    for (m, a) in &p.linear {
        let s = field_norm(space, a);
        if s > best.0 {
            best = (s, Some(m.clone()));
        }
    }
    best
}

/// Outcome of the iterated homological solve.
#[derive(Clone, Debug)]
pub struct ModifiedSolve {
    pub chi: Poly,
    pub iterations: usize,
    pub updates: Vec<f64>,
}

/// Solves `{H_2, chi} + K + C(chi) = 0` by iterating
/// `chi <- solve(K + C(chi))` until the update drops below `tol`.
pub fn solve_homological_modified<F>(
    space: &PhaseSpace,
    k: &Poly,
    mut correction: F,
    tol: f64,
    max_iter: usize,
) -> Result<ModifiedSolve, NormalFormError>
where
    F: FnMut(&Poly) -> Result<Poly, NormalFormError>,
{
    let mut chi = solve_homological(space, k)?;
    let mut updates = Vec::new();
    for it in 1..=max_iter {
        let mut rhs = k.clone();
        rhs.axpy(Complex64::new(1.0, 0.0), &correction(&chi)?);
        rhs.tags.clear();
        let next = solve_homological(space, &rhs)?;
        let mut diff = next.clone();
        diff.axpy(Complex64::new(-1.0, 0.0), &chi);
        let update = max_size(space, &diff).0;
        updates.push(update);
        chi = next;
        if update < tol {
            return Ok(ModifiedSolve { chi, iterations: it, updates });
        }
    }
    Err(NormalFormError::NoConvergence { iterations: max_iter, update: *updates.last().unwrap_or(&f64::NAN) })
}
