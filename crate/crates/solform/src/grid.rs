//! Periodic grids, multi-component real fields and the constant symplectic
//! structure acting on them.
//!
//! A [`GridFunction`] stores `components` real fields sampled on the same
//! periodic grid, laid out component-major: entry `c * n + m` is component `c`
//! at point `x_m = -L + m h`. The real inner product is
//! `<u, v> = h * sum_c sum_m u_c(x_m) v_c(x_m)`.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("incompatible shapes: {0}")]
    IncompatibleShape(String),
    #[error("symplectic matrix rejected: {0}")]
    BadSymplectic(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed sidecar: {0}")]
    Sidecar(String),
}

struct GridInner {
    half_width: f64,
    n_points: usize,
    spacing: f64,
    points: Vec<f64>,
    wavenumbers: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform periodic grid on `[-L, L)` with FFT plans attached.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("half_width", &self.inner.half_width)
            .field("n_points", &self.inner.n_points)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.inner.n_points == other.inner.n_points
            && self.inner.half_width == other.inner.half_width
    }
}

impl Grid {
    pub fn new(half_width: f64, n_points: usize) -> Result<Self, GridError> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(GridError::InvalidGrid(format!(
                "half-width must be positive, got {half_width}"
            )));
        }
        if n_points < 4 || n_points % 2 != 0 {
            return Err(GridError::InvalidGrid(format!(
                "point count must be even and at least 4, got {n_points}"
            )));
        }
        let spacing = 2.0 * half_width / n_points as f64;
        let points = (0..n_points)
            .map(|m| -half_width + m as f64 * spacing)
            .collect();
        let base = std::f64::consts::PI / half_width;
        let half = (n_points / 2) as i64;
        let wavenumbers = (0..n_points as i64)
            .map(|m| if m < half { m } else { m - n_points as i64 })
            .map(|m| base * m as f64)
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_points);
        let inverse = planner.plan_fft_inverse(n_points);
        Ok(Self {
            inner: Arc::new(GridInner {
                half_width,
                n_points,
                spacing,
                points,
                wavenumbers,
                forward,
                inverse,
            }),
        })
    }

    pub fn half_width(&self) -> f64 {
        self.inner.half_width
    }

    pub fn n_points(&self) -> usize {
        self.inner.n_points
    }

    pub fn spacing(&self) -> f64 {
        self.inner.spacing
    }

    pub fn points(&self) -> &[f64] {
        &self.inner.points
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.inner.wavenumbers
    }

    fn nyquist(&self) -> usize {
        self.inner.n_points / 2
    }

    /// Applies the Fourier multiplier `symbol(k, is_nyquist)` to one real slice.
    pub fn apply_symbol<F>(&self, data: &[f64], symbol: F) -> Vec<f64>
    where
        F: Fn(f64, bool) -> Complex64,
    {
        let n = self.inner.n_points;
        assert_eq!(data.len(), n, "slice length must match grid");
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.inner.forward.process(&mut buf);
        let nyq = self.nyquist();
        for (m, c) in buf.iter_mut().enumerate() {
            *c *= symbol(self.inner.wavenumbers[m], m == nyq);
        }
        self.inner.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// Spectral derivative of the given order; odd orders drop the Nyquist mode.
    pub fn derivative(&self, data: &[f64], order: u32) -> Vec<f64> {
        if order == 0 {
            return data.to_vec();
        }
        self.apply_symbol(data, |k, nyq| {
            if nyq && order % 2 == 1 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k).powu(order)
            }
        })
    }

    /// Trigonometric-interpolant translation `u(x) -> u(x + shift)`.
    pub fn translate(&self, data: &[f64], shift: f64) -> Vec<f64> {
        self.apply_symbol(data, |k, nyq| {
            if nyq {
                Complex64::new((k * shift).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, k * shift)
            }
        })
    }

    /// Dense matrix of the spectral derivative of the given order on one component.
    pub fn derivative_matrix(&self, order: u32) -> DMatrix<f64> {
        let n = self.inner.n_points;
        let mut mat = DMatrix::zeros(n, n);
        let mut unit = vec![0.0; n];
        for j in 0..n {
            unit[j] = 1.0;
            let col = self.derivative(&unit, order);
            mat.set_column(j, &DVector::from_vec(col));
            unit[j] = 0.0;
        }
        mat
    }
}

/// A multi-component real field sampled on a [`Grid`].
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Grid,
    components: usize,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &Grid, components: usize) -> Self {
        Self {
            grid: grid.clone(),
            components,
            values: vec![0.0; components * grid.n_points()],
        }
    }

    pub fn from_values(grid: &Grid, components: usize, values: Vec<f64>) -> Result<Self, GridError> {
        if components == 0 || values.len() != components * grid.n_points() {
            return Err(GridError::IncompatibleShape(format!(
                "{} values for {} components on {} points",
                values.len(),
                components,
                grid.n_points()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            components,
            values,
        })
    }

    /// Builds a field from `f(component, x)`.
    pub fn from_fn<F: Fn(usize, f64) -> f64>(grid: &Grid, components: usize, f: F) -> Self {
        let mut values = Vec::with_capacity(components * grid.n_points());
        for c in 0..components {
            values.extend(grid.points().iter().map(|&x| f(c, x)));
        }
        Self {
            grid: grid.clone(),
            components,
            values,
        }
    }

    pub fn from_dvector(grid: &Grid, components: usize, v: &DVector<f64>) -> Self {
        Self::from_values(grid, components, v.as_slice().to_vec())
            .expect("vector length must match grid and components")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.n_points();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.n_points();
        &mut self.values[c * n..(c + 1) * n]
    }

    fn check_same(&self, other: &Self) -> Result<(), GridError> {
        if self.grid != other.grid || self.components != other.components {
            return Err(GridError::IncompatibleShape(
                "fields live on different grids or component counts".into(),
            ));
        }
        Ok(())
    }

    /// Real inner product `h * sum u v`.
    pub fn inner(&self, other: &Self) -> Result<f64, GridError> {
        self.check_same(other)?;
        Ok(self.grid.spacing() * dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        (self.grid.spacing() * dot(&self.values, &self.values)).sqrt()
    }

    /// Weighted Sobolev norm `||u||^2 + sum_{a=1..k} (||x^a u||^2 + ||d^a u||^2)`,
    /// with `x` the sawtooth grid coordinate.
    pub fn sigma_norm(&self, k: u32) -> f64 {
        let h = self.grid.spacing();
        let mut total = h * dot(&self.values, &self.values);
        let xs = self.grid.points();
        for a in 1..=k {
            for c in 0..self.components {
                let comp = self.component(c);
                let weighted: f64 = comp
                    .iter()
                    .zip(xs)
                    .map(|(u, x)| (x.powi(a as i32) * u).powi(2))
                    .sum();
                let d = self.grid.derivative(comp, a);
                total += h * (weighted + dot(&d, &d));
            }
        }
        total.sqrt()
    }

    /// Lower estimate of the dual norm `||u||_{Sigma_{-k}}`:
    /// `max_w |<u, w>| / ||w||_{Sigma_k}` over the probe fields `w`.
    pub fn dual_sigma_quotient(&self, k: u32, probes: &[GridFunction]) -> Result<f64, GridError> {
        let mut best = 0.0f64;
        for w in probes {
            let n = w.sigma_norm(k);
            if n > 0.0 {
                best = best.max(self.inner(w)?.abs() / n);
            }
        }
        Ok(best)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        assert_eq!(self.values.len(), x.values.len(), "axpy shape mismatch");
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Componentwise spectral derivative.
    pub fn derivative(&self, order: u32) -> Self {
        let mut out = self.clone();
        for c in 0..self.components {
            let d = self.grid.derivative(self.component(c), order);
            out.component_mut(c).copy_from_slice(&d);
        }
        out
    }

    pub fn translate(&self, shift: f64) -> Self {
        let mut out = self.clone();
        for c in 0..self.components {
            let d = self.grid.translate(self.component(c), shift);
            out.component_mut(c).copy_from_slice(&d);
        }
        out
    }

    /// Pointwise Euclidean product `sum_c u_c v_c` at each grid point.
    pub fn pointwise_dot(&self, other: &Self) -> Vec<f64> {
        let n = self.grid.n_points();
        let mut out = vec![0.0; n];
        for c in 0..self.components {
            for (o, (a, b)) in out.iter_mut().zip(self.component(c).iter().zip(other.component(c))) {
                *o += a * b;
            }
        }
        out
    }

    /// Writes raw little-endian values plus a JSON sidecar `<path>.json`.
    pub fn write_raw(&self, path: &Path) -> Result<(), GridError> {
        let mut w = BufWriter::new(File::create(path)?);
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        let side = Sidecar {
            n_points: self.grid.n_points(),
            half_width: self.grid.half_width(),
            components: self.components,
        };
        let text = serde_json::to_string_pretty(&side).map_err(|e| GridError::Sidecar(e.to_string()))?;
        std::fs::write(sidecar_path(path), text)?;
        Ok(())
    }

    /// Reads a field written by [`GridFunction::write_raw`].
    pub fn read_raw(path: &Path) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(sidecar_path(path))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| GridError::Sidecar(e.to_string()))?;
        let grid = Grid::new(side.half_width, side.n_points)?;
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * side.components * side.n_points {
            return Err(GridError::Sidecar("payload length disagrees with sidecar".into()));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_values(&grid, side.components, values)
    }

    /// Writes `x, c0, c1, ...` rows.
    pub fn write_csv(&self, path: &Path) -> Result<(), GridError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| GridError::Sidecar(e.to_string()))?;
        let mut header = vec!["x".to_string()];
        header.extend((0..self.components).map(|c| format!("c{c}")));
        w.write_record(&header).map_err(|e| GridError::Sidecar(e.to_string()))?;
        for (m, x) in self.grid.points().iter().enumerate() {
            let mut row = vec![format!("{x:.17e}")];
            row.extend((0..self.components).map(|c| format!("{:.17e}", self.component(c)[m])));
            w.write_record(&row).map_err(|e| GridError::Sidecar(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n_points: usize,
    #[serde(rename = "L")]
    half_width: f64,
    components: usize,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constant invertible antisymmetric matrix acting pointwise on the components.
#[derive(Clone, Debug)]
pub struct Symplectic {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl Symplectic {
    /// The standard structure on `R^{2N}` ordered as `(Re_1..Re_N, Im_1..Im_N)`,
    /// i.e. multiplication by `-i`.
    pub fn standard(pairs: usize) -> Self {
        let d = 2 * pairs;
        let mut m = DMatrix::zeros(d, d);
        for a in 0..pairs {
            m[(a, pairs + a)] = 1.0;
            m[(pairs + a, a)] = -1.0;
        }
        Self::new(m).expect("standard structure is valid")
    }

    pub fn new(matrix: DMatrix<f64>) -> Result<Self, GridError> {
        if !matrix.is_square() || matrix.nrows() % 2 != 0 {
            return Err(GridError::BadSymplectic("matrix must be square of even size".into()));
        }
        if (&matrix + matrix.transpose()).amax() > 1e-14 {
            return Err(GridError::BadSymplectic("matrix is not antisymmetric".into()));
        }
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| GridError::BadSymplectic("matrix is singular".into()))?;
        Ok(Self { matrix, inverse })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// True when `J^2 = -I`, which the momentum generator requires.
    pub fn is_complex_structure(&self) -> bool {
        let sq = &self.matrix * &self.matrix;
        (sq + DMatrix::identity(self.dim(), self.dim())).amax() < 1e-14
    }

    fn apply_pointwise(&self, m: &DMatrix<f64>, u: &GridFunction) -> GridFunction {
        assert_eq!(u.components(), self.dim(), "component count must match J");
        let mut out = GridFunction::zeros(u.grid(), u.components());
        for r in 0..self.dim() {
            for c in 0..self.dim() {
                let a = m[(r, c)];
                if a != 0.0 {
                    let src = u.component(c).to_vec();
                    for (o, s) in out.component_mut(r).iter_mut().zip(src) {
                        *o += a * s;
                    }
                }
            }
        }
        out
    }

    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        self.apply_pointwise(&self.matrix, u)
    }

    pub fn apply_inverse(&self, u: &GridFunction) -> GridFunction {
        self.apply_pointwise(&self.inverse, u)
    }

    /// Dense `(d n) x (d n)` matrix of pointwise multiplication by `m`.
    pub fn lift(m: &DMatrix<f64>, n_points: usize) -> DMatrix<f64> {
        let d = m.nrows();
        let mut out = DMatrix::zeros(d * n_points, d * n_points);
        for r in 0..d {
            for c in 0..d {
                let a = m[(r, c)];
                if a != 0.0 {
                    for k in 0..n_points {
                        out[(r * n_points + k, c * n_points + k)] = a;
                    }
                }
            }
        }
        out
    }

    pub fn dense(&self, n_points: usize) -> DMatrix<f64> {
        Self::lift(&self.matrix, n_points)
    }

    pub fn dense_inverse(&self, n_points: usize) -> DMatrix<f64> {
        Self::lift(&self.inverse, n_points)
    }
}

/// Symplectic pairing `Omega(u, v) = <J^{-1} u, v>`.
pub fn omega(j: &Symplectic, u: &GridFunction, v: &GridFunction) -> Result<f64, GridError> {
    j.apply_inverse(u).inner(v)
}

/// Infinitesimal generators of the symmetry group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    /// Identity generator; conserved quantity is the charge `1/2 ||u||^2`.
    Charge,
    /// `-J d/dx`; its group is spatial translation.
    Momentum,
}

impl Generator {
    /// `u -> diamond u`.
    pub fn apply(&self, j: &Symplectic, u: &GridFunction) -> GridFunction {
        match self {
            Generator::Charge => u.clone(),
            Generator::Momentum => j.apply(&u.derivative(1)).scaled(-1.0),
        }
    }

    /// Group action `e^{J tau diamond} u`.
    pub fn group_action(&self, j: &Symplectic, tau: f64, u: &GridFunction) -> GridFunction {
        match self {
            Generator::Charge => {
                let e = (j.matrix() * tau).exp();
                let mut out = GridFunction::zeros(u.grid(), u.components());
                for r in 0..j.dim() {
                    for c in 0..j.dim() {
                        let a = e[(r, c)];
                        if a != 0.0 {
                            let src = u.component(c).to_vec();
                            for (o, s) in out.component_mut(r).iter_mut().zip(src) {
                                *o += a * s;
                            }
                        }
                    }
                }
                out
            }
            Generator::Momentum => u.translate(tau),
        }
    }

    /// Dense matrix of the generator on stacked values.
    pub fn dense(&self, j: &Symplectic, grid: &Grid) -> DMatrix<f64> {
        let n = grid.n_points();
        let d = j.dim();
        match self {
            Generator::Charge => DMatrix::identity(d * n, d * n),
            Generator::Momentum => {
                let dx = grid.derivative_matrix(1);
                let mut out = DMatrix::zeros(d * n, d * n);
                for r in 0..d {
                    for c in 0..d {
                        let a = -j.matrix()[(r, c)];
                        if a != 0.0 {
                            out.view_mut((r * n, c * n), (n, n)).copy_from(&(&dx * a));
                        }
                    }
                }
                out
            }
        }
    }

    /// Conserved quantity `1/2 <diamond u, u>`.
    pub fn invariant(&self, j: &Symplectic, u: &GridFunction) -> f64 {
        0.5 * self.apply(j, u).inner(u).expect("same shape")
    }
}

/// Complex bilinear inner product `h * sum a b` (no conjugation).
pub fn complex_inner(h: f64, a: &DVector<Complex64>, b: &DVector<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<Complex64>() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_and_tiny_grids() {
        assert!(Grid::new(10.0, 7).is_err());
        assert!(Grid::new(10.0, 2).is_err());
        assert!(Grid::new(-1.0, 8).is_err());
    }

    #[test]
    fn derivative_of_sine_is_cosine() {
        let g = Grid::new(std::f64::consts::PI, 32).unwrap();
        let u = GridFunction::from_fn(&g, 1, |_, x| (3.0 * x).sin());
        let d = u.derivative(1);
        for (v, x) in d.values().iter().zip(g.points()) {
            assert!((v - 3.0 * (3.0 * x).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_structure_squares_to_minus_identity() {
        let j = Symplectic::standard(2);
        assert!(j.is_complex_structure());
        assert!((j.inverse_matrix() + j.matrix()).amax() < 1e-15);
    }
}
