//! Numerical toolkit for solitons of Hamiltonian Schrödinger-type systems:
//! soliton families, their linearization, modulation coordinates, a Darboux
//! correction of the symplectic form and Birkhoff normal forms around the
//! soliton manifold.

pub mod grid;
pub mod model;
pub mod soliton;
pub mod linearize;
pub mod modulation;
pub mod ode;
pub mod darboux;
pub mod normalform;

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
