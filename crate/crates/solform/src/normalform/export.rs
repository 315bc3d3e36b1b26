//! Coefficient tables (CSV) and the effective-Hamiltonian bundle (JSON with
//! raw little-endian field files).
//!
//! Floats are written with 17 significant digits and all collections are
//! iterated in monomial order, so identical inputs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::grid::{Grid, GridFunction};

use super::homological::classify;
use super::poly::{Monomial, Poly};
use super::space::PhaseSpace;
use super::NormalFormError;

/// Sobolev order of the `Sigma_k` norm reported for field coefficients.
pub const SIGMA_ORDER: u32 = 1;

/// One row of a coefficient table. Scalar rows carry `re`/`im`, `f`-linear
/// rows carry the norm of their field `G = J a`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientRow {
    pub degree: u32,
    pub mu: String,
    pub nu: String,
    pub rho_order: u32,
    pub re: Option<f64>,
    pub im: Option<f64>,
    pub g_norm: Option<f64>,
    pub class: &'static str,
}

fn index_string(v: &[u32]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// `G = J a` as real and imaginary grid functions.
pub fn field_parts(space: &PhaseSpace, grid: &Grid, a: &DVector<Complex64>) -> (GridFunction, GridFunction) {
    let g = space.j_apply(a);
    let comps = space.n_components();
    let re = GridFunction::from_dvector(grid, comps, &g.map(|c| c.re));
    let im = GridFunction::from_dvector(grid, comps, &g.map(|c| c.im));
    (re, im)
}

/// `||G||_{Sigma_k}` of the complex field of a covector.
pub fn field_sigma_norm(space: &PhaseSpace, grid: &Grid, a: &DVector<Complex64>) -> f64 {
    let (re, im) = field_parts(space, grid, a);
    re.sigma_norm(SIGMA_ORDER).hypot(im.sigma_norm(SIGMA_ORDER))
}

/// Scalar and `f`-linear terms of `h`, scalars first, each in monomial order.
pub fn coefficient_rows(space: &PhaseSpace, grid: &Grid, h: &Poly) -> Vec<CoefficientRow> {
    let mut rows = Vec::with_capacity(h.scalar.len() + h.linear.len());
    for (m, c) in &h.scalar {
        rows.push(CoefficientRow {
            degree: m.z_degree(),
            mu: index_string(&m.mu),
            nu: index_string(&m.nu),
            rho_order: m.rho_degree(),
            re: Some(c.re),
            im: Some(c.im),
            g_norm: None,
            class: classify(space, m, 0).label(),
        });
    }
    for (m, a) in &h.linear {
        rows.push(CoefficientRow {
            degree: m.z_degree(),
            mu: index_string(&m.mu),
            nu: index_string(&m.nu),
            rho_order: m.rho_degree(),
            re: None,
            im: None,
            g_norm: Some(field_sigma_norm(space, grid, a)),
            class: classify(space, m, 1).label(),
        });
    }
    rows
}

/// Writes `|mu+nu|, mu, nu, rho_order, re_a, im_a, g_sigma_norm, class`.
pub fn write_coefficient_csv(path: &Path, rows: &[CoefficientRow]) -> Result<(), NormalFormError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["degree", "mu", "nu", "rho_order", "re_a", "im_a", "g_sigma_norm", "class"])?;
    let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.degree.to_string(),
            r.mu.clone(),
            r.nu.clone(),
            r.rho_order.to_string(),
            opt(r.re),
            opt(r.im),
            opt(r.g_norm),
            r.class.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalarEntry {
    pub mu: Vec<u32>,
    pub nu: Vec<u32>,
    pub rho: Vec<u32>,
    pub re: String,
    pub im: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct FieldEntry {
    pub mu: Vec<u32>,
    pub nu: Vec<u32>,
    pub rho: Vec<u32>,
    pub class: &'static str,
    pub sigma_norm: String,
    /// Raw files of `Re G` and `Im G`, relative to the bundle directory.
    pub re_file: String,
    pub im_file: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelEntry {
    pub mu: Vec<u32>,
    pub nu: Vec<u32>,
    pub rho: Vec<u32>,
    /// Row-major interleaved `(re, im)` little-endian doubles.
    pub file: String,
    pub dim: usize,
}

/// JSON index of the effective Hamiltonian.
#[derive(Clone, Debug, Serialize)]
pub struct Bundle {
    pub n_modes: usize,
    pub n_sym: usize,
    pub dim: usize,
    pub n_points: usize,
    pub half_width: f64,
    pub components: usize,
    pub edge: String,
    pub big_n: usize,
    pub cap: u32,
    pub sigma_order: u32,
    /// Coefficients of `rho`-only scalar monomials.
    pub psi: Vec<ScalarEntry>,
    /// Diagonal frequencies `e_j` of the quadratic part.
    pub h2: Vec<String>,
    pub z0: Vec<ScalarEntry>,
    pub z1: Vec<FieldEntry>,
    /// Removable terms above the normalized degrees, kept as remainder.
    pub residual_terms: usize,
    pub quadratic: Vec<KernelEntry>,
    pub tags: Vec<(u32, u32)>,
}

fn mono_name(prefix: &str, m: &Monomial) -> String {
    format!("{prefix}_{}_{}_{}", index_string(&m.mu), index_string(&m.nu), index_string(&m.rho)).replace(';', "-")
}

fn scalar_entry(m: &Monomial, c: Complex64) -> ScalarEntry {
    ScalarEntry { mu: m.mu.clone(), nu: m.nu.clone(), rho: m.rho.clone(), re: fmt(c.re), im: fmt(c.im) }
}

fn write_kernel(path: &Path, b: &DMatrix<Complex64>) -> Result<(), NormalFormError> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            w.write_all(&b[(i, j)].re.to_le_bytes())?;
            w.write_all(&b[(i, j)].im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `bundle.json`, the `Z1` field files and the `f`-quadratic kernels
/// of `h` into `dir`, which must exist.
pub fn write_bundle(dir: &Path, space: &PhaseSpace, grid: &Grid, h: &Poly, cap: u32) -> Result<Bundle, NormalFormError> {
    let mut psi = Vec::new();
    let mut z0 = Vec::new();
    let mut residual_terms = 0;
    for (m, c) in &h.scalar {
        if m.z_degree() == 0 {
            psi.push(scalar_entry(m, *c));
            continue;
        }
        match classify(space, m, 0).label() {
            "Z0" => z0.push(scalar_entry(m, *c)),
            _ => residual_terms += 1,
        }
    }
    let mut z1 = Vec::new();
    for (m, a) in &h.linear {
        if classify(space, m, 1).label() != "Z1" {
            residual_terms += 1;
            continue;
        }
        let name = mono_name("g", m);
        let (re, im) = field_parts(space, grid, a);
        let re_file = format!("{name}.re.bin");
        let im_file = format!("{name}.im.bin");
        re.write_raw(&dir.join(&re_file)).map_err(|e| NormalFormError::Invalid(e.to_string()))?;
        im.write_raw(&dir.join(&im_file)).map_err(|e| NormalFormError::Invalid(e.to_string()))?;
        z1.push(FieldEntry {
            mu: m.mu.clone(),
            nu: m.nu.clone(),
            rho: m.rho.clone(),
            class: "Z1",
            sigma_norm: fmt(field_sigma_norm(space, grid, a)),
            re_file,
            im_file,
        });
    }
    let mut quadratic = Vec::new();
    for (m, b) in &h.quadratic {
        let file = format!("{}.bin", mono_name("b", m));
        write_kernel(&dir.join(&file), b)?;
        quadratic.push(KernelEntry { mu: m.mu.clone(), nu: m.nu.clone(), rho: m.rho.clone(), file, dim: b.nrows() });
    }
    let bundle = Bundle {
        n_modes: space.n_modes(),
        n_sym: space.n_sym(),
        dim: space.dim(),
        n_points: grid.n_points(),
        half_width: grid.half_width(),
        components: space.n_components(),
        edge: fmt(space.edge()),
        big_n: space.big_n(),
        cap,
        sigma_order: SIGMA_ORDER,
        psi,
        h2: space.frequencies().iter().map(|e| fmt(*e)).collect(),
        z0,
        z1,
        residual_terms,
        quadratic,
        tags: h.tags.iter().copied().collect(),
    };
    std::fs::write(dir.join("bundle.json"), serde_json::to_string_pretty(&bundle)?)?;
    Ok(bundle)
}
