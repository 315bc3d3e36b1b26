//! Birkhoff normal form of the Hamiltonian in the spectral coordinates
//! `(z, f)` of the remainder.

pub mod birkhoff;
pub mod bracket;
pub mod build;
pub mod export;
pub mod homological;
pub mod lie;
pub mod oracle;
pub mod poly;
pub mod space;

use thiserror::Error;

pub use birkhoff::{birkhoff_normalize, BirkhoffOptions, BirkhoffResult, StepReport};
pub use bracket::poisson_bracket;
pub use homological::{classify, classify_with, homological_residual, scalar_solution, solve_homological, solve_homological_modified};
pub use lie::lie_pullback;
pub use poly::{Monomial, Part, Poly, TermClass};
pub use space::PhaseSpace;

#[derive(Debug, Error)]
pub enum NormalFormError {
    #[error("near resonance at mu = {mu:?}, nu = {nu:?}: |e.(mu - nu)| = {frequency:.3e}")]
    Resonance { mu: Vec<u32>, nu: Vec<u32>, frequency: f64 },
    #[error("resolvent at i{omega} failed: {reason}")]
    Resolvent { omega: f64, reason: String },
    #[error("generator has grading weight {0}; at least 3 is required")]
    Grading(u32),
    #[error("iteration did not converge after {iterations} steps (last update {update:.3e})")]
    NoConvergence { iterations: usize, update: f64 },
    #[error("step {step}: removable coefficient {size:.3e} at {mono:?} exceeds tolerance")]
    Postcondition { step: u32, mono: Monomial, size: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("darboux map: {0}")]
    Darboux(#[from] crate::darboux::DarbouxError),
    #[error("modulation: {0}")]
    Modulation(#[from] crate::modulation::ModulationError),
    #[error("differentiation: {0}")]
    Differentiation(String),
    #[error("oracle integration failed: {0}")]
    Oracle(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
