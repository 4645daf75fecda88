//! Monotone finite-difference schemes for fully nonlinear uniformly elliptic
//! Dirichlet problems `F(D²u, x) = f(x)` in `U`, `u = g` on `∂U`, together with
//! the regularization and paraboloid-touching machinery used to measure how far
//! discrete solutions are from viscosity solutions.
//!
//! Module map:
//!
//! - [`mesh`]: domains, the lattice `U ∩ hZⁿ` and its interior/boundary split.
//! - [`operators`]: symmetric matrices, closed-form fields and the continuum
//!   nonlinearities (linear, Pucci, finite-control Isaacs) plus their
//!   inf/sup perturbations.
//! - [`scheme`]: stencils, directional second differences, nonnegative
//!   decompositions and the assembled monotone operator with its validators.
//! - [`solver`]: Howard policy iteration and monotone relaxation for the
//!   discrete Dirichlet problem, comparison and Hölder diagnostics.
//! - [`regularize`]: inf- and sup-convolutions of mesh functions.
//! - [`viscosity`]: paraboloids, δ-solution checks, sliding paraboloids,
//!   concave envelopes and the doubling-variables diagnostic.
//! - [`harness`]: problem configs and the rate/verification experiments.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod operators;
pub mod par;
pub mod regularize;
pub mod scheme;
pub mod solver;
pub mod viscosity;

pub use error::{Error, Result};
pub use mesh::{Domain, Mesh, MeshFunction};
pub use operators::{Nonlinearity, Rhs, ScalarField, SymMat};
pub use scheme::{DiscreteOperator, Stencil};
