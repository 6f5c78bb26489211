//! Hybridized local discontinuous Galerkin (LDG-H) discretizations of the
//! 2D semilinear Hodge wave equation
//!
//! ```text
//!     u_tt + (curl rot - grad div) u + f(u) = 0,
//! ```
//!
//! written as a first-order system in the proxy fields σ = -rot u,
//! ρ = -div u and p = u_t.
//!
//! Two spatial schemes are provided:
//!
//! * the multisymplectic method ([`assembly::ConstraintSystems`]), where σ, ρ
//!   and the facet traces are recovered from `u` through two global
//!   constraint solves, and
//! * the dissipative mixed method ([`assembly::MixedOperator`]), where σ, ρ
//!   and `p` evolve directly and the traces are eliminated facet by facet.
//!
//! Time integration lives in [`timeloop`] (implicit midpoint, Yoshida's
//! sixth-order composition, Störmer/Verlet and a generic partitioned
//! Runge–Kutta engine); conserved and monitored quantities are in
//! [`diagnostics`].
//!
//! Everything numerical is generic over [`Real`]; the `*64` aliases below fix
//! the scalar to `f64`, which is what the solver is tuned for.

pub mod assembly;
pub mod calculus;
pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod fespace;
pub mod linalg;
pub mod mesh;
pub mod scalar;
pub mod timeloop;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Mesh64 = mesh::Mesh<f64>;
pub type FeSpace64 = fespace::FeSpace<f64>;
pub type FieldState64 = calculus::FieldState<f64>;
pub type TraceState64 = calculus::TraceState<f64>;
pub type Penalties64 = calculus::Penalties<f64>;
pub type ConstraintSystems64 = assembly::ConstraintSystems<f64>;
pub type MixedOperator64 = assembly::MixedOperator<f64>;
pub type CsrMatrix64 = linalg::CsrMatrix<f64>;
pub type ExactSolution64 = exact::ExactSolution<f64>;
