//! Linearized semi-implicit Euler / P1 Galerkin solver for the
//! time-dependent Joule heating system
//!
//! ```text
//! u_t - Δu = σ(u) |∇φ|²,   -∇·(σ(u) ∇φ) = 0,
//! ```
//!
//! with `u = 0` and `φ = g` on the boundary, plus manufactured-solution
//! cases and the error analysis used to measure convergence rates.

pub mod analysis;
pub mod fem;
pub mod field;
pub mod linalg;
pub mod mesh;
pub mod mms;
pub mod quadrature;
pub mod scheme;

pub use fem::{FeFunction, FemError};
pub use field::{ScalarField, SigmaModel};
pub use linalg::{CgOptions, LinalgError, Preconditioner, SolveReport, SparseMatrix};
pub use mesh::{Mesh, MeshError};
