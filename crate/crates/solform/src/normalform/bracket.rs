//! Poisson bracket `{F, G} = i sum_j (dF/dz_j dG/dconj z_j - dF/dconj z_j dG/dz_j)
//! + <grad_f F, K grad_f G>` on truncated polynomials.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::poly::{Monomial, Part, Poly, Tag};
use super::space::PhaseSpace;

const I: Complex64 = Complex64::new(0.0, 1.0);

fn outer_sym(h: f64, a: &DVector<Complex64>, b: &DVector<Complex64>) -> DMatrix<Complex64> {
    let ab = a * b.transpose();
    (&ab + ab.transpose()) * Complex64::new(h, 0.0)
}

/// Product of two `f`-parts, `None` when the result has `f`-degree above two.
fn product(h: f64, a: &Part, b: &Part) -> Option<Part> {
    match (a, b) {
        (Part::Scalar(x), other) | (other, Part::Scalar(x)) => Some(other.clone().scaled(*x)),
        (Part::Linear(u), Part::Linear(v)) => Some(Part::Quadratic(outer_sym(h, u, v))),
        _ => None,
    }
}

/// `v` or `c M f`.
enum Vector<'a> {
    Const(&'a DVector<Complex64>),
    Mat(Complex64, &'a DMatrix<Complex64>),
}

/// One summand `z^mu conj(z)^nu rho^r * [<a, f>] * vector` of `grad_f`.
struct Piece<'a> {
    mono: Monomial,
    scale: Complex64,
    prefactor: Option<&'a DVector<Complex64>>,
    vector: Vector<'a>,
}

impl Piece<'_> {
    fn degree(&self) -> u32 {
        self.prefactor.is_some() as u32 + matches!(self.vector, Vector::Mat(..)) as u32
    }
}

fn pieces<'a>(space: &'a PhaseSpace, p: &'a Poly, tags: &mut Vec<Tag>) -> Vec<Piece<'a>> {
    let mut out = Vec::new();
    let one = Complex64::new(1.0, 0.0);
    let from_rho = |m: &Monomial, scale: Complex64, prefactor: Option<&'a DVector<Complex64>>, out: &mut Vec<Piece<'a>>| {
        for j in 0..m.rho.len() {
            if let Some((k, dm)) = m.rho_derivative(j) {
                out.push(Piece {
                    mono: dm,
                    scale: scale * k,
                    prefactor,
                    vector: Vector::Mat(one, &space.diamonds()[j]),
                });
            }
        }
    };
    for (m, c) in &p.scalar {
        from_rho(m, *c, None, &mut out);
    }
    for (m, a) in &p.linear {
        from_rho(m, one, Some(a), &mut out);
        out.push(Piece { mono: m.clone(), scale: one, prefactor: None, vector: Vector::Const(a) });
    }
    for (m, b) in &p.quadratic {
        if m.rho_degree() > 0 {
            // gradient has f-degree three and every pairing exceeds the explicit range
            tags.push((m.weight() + 2, 3));
        }
        out.push(Piece { mono: m.clone(), scale: one, prefactor: None, vector: Vector::Mat(one, b) });
    }
    out
}

/// `<v_p, K v_q>` times the prefactors of both pieces.
fn pair(space: &PhaseSpace, p: &Piece, q: &Piece) -> Part {
    let h = space.spacing();
    let core = match (&p.vector, &q.vector) {
        (Vector::Const(u), Vector::Const(v)) => Part::Scalar((space.kt() * *u).dot(*v) * h),
        (Vector::Const(u), Vector::Mat(c, m)) => Part::Linear(m.transpose() * (space.kt() * *u) * *c),
        (Vector::Mat(c, m), Vector::Const(v)) => Part::Linear(m.transpose() * (space.k() * *v) * *c),
        (Vector::Mat(c1, m1), Vector::Mat(c2, m2)) => {
            let x = m1.transpose() * (space.k() * *m2);
            Part::Quadratic((&x + x.transpose()) * (c1 * c2))
        }
    };
    let mut part = core.scaled(p.scale * q.scale);
    for a in [p.prefactor, q.prefactor].into_iter().flatten() {
        part = product(h, &part, &Part::Linear(a.clone())).expect("degree checked before pairing");
    }
    part
}

fn terms(p: &Poly) -> Vec<(&Monomial, Part)> {
    let mut out: Vec<(&Monomial, Part)> = Vec::with_capacity(p.len());
    out.extend(p.scalar.iter().map(|(m, c)| (m, Part::Scalar(*c))));
    out.extend(p.linear.iter().map(|(m, a)| (m, Part::Linear(a.clone()))));
    out.extend(p.quadratic.iter().map(|(m, b)| (m, Part::Quadratic(b.clone()))));
    out
}

/// `{F, G}` truncated at grading weight `cap`; dropped content is tagged.
pub fn poisson_bracket(space: &PhaseSpace, f: &Poly, g: &Poly, cap: u32) -> Poly {
    let h = space.spacing();
    let mut out = Poly::zero(space);
    let mut tags: Vec<Tag> = Vec::new();
    out.tags.extend(f.tags.iter().chain(&g.tags).copied());

    // z-part
    let tf = terms(f);
    let tg = terms(g);
    let contributions: Vec<(Vec<(Monomial, Part)>, Vec<Tag>)> = tf
        .par_iter()
        .map(|(mf, pf)| {
            let mut acc = Vec::new();
            let mut dropped = Vec::new();
            for (mg, pg) in &tg {
                for j in 0..space.n_modes() {
                    for (sign, cf, cg) in [(1.0, false, true), (-1.0, true, false)] {
                        let (Some((kf, df)), Some((kg, dg))) = (mf.z_derivative(j, cf), mg.z_derivative(j, cg)) else {
                            continue;
                        };
                        let mono = df.times(&dg);
                        let deg = pf.degree() + pg.degree();
                        let weight = mono.weight() + deg;
                        if deg > 2 || weight > cap {
                            dropped.push((weight, deg));
                            continue;
                        }
                        let part = product(h, pf, pg).expect("degree checked");
                        acc.push((mono, part.scaled(I * (sign * kf * kg))));
                    }
                }
            }
            (acc, dropped)
        })
        .collect();
    for (acc, dropped) in contributions {
        for (m, p) in acc {
            out.add_part(m, p);
        }
        tags.extend(dropped);
    }

    // f-part
    let pf = pieces(space, f, &mut tags);
    let pg = pieces(space, g, &mut tags);
    let contributions: Vec<(Vec<(Monomial, Part)>, Vec<Tag>)> = pf
        .par_iter()
        .map(|p| {
            let mut acc = Vec::new();
            let mut dropped = Vec::new();
            for q in &pg {
                let mono = p.mono.times(&q.mono);
                let deg = p.degree() + q.degree();
                let weight = mono.weight() + deg;
                if deg > 2 || weight > cap {
                    dropped.push((weight, deg));
                    continue;
                }
                acc.push((mono, pair(space, p, q)));
            }
            (acc, dropped)
        })
        .collect();
    for (acc, dropped) in contributions {
        for (m, p) in acc {
            out.add_part(m, p);
        }
        tags.extend(dropped);
    }
    // covectors only act on X_c; keep the canonical representative
    for a in out.linear.values_mut() {
        *a = space.canonical_covector(a);
    }
    out.tags.extend(tags);
    out
}
