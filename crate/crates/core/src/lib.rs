//! Numerical toolkit for checking a convex-duality principle in nonlinear
//! (Saint Venant–Kirchhoff) elasticity on structured box grids.
//!
//! The crate evaluates the primal stored-energy functional, builds the
//! concave dual functional obtained from a stability split of the stress,
//! optimizes both over their feasible sets, and verifies weak duality,
//! conjugacy identities, and vanishing duality gap at manufactured critical
//! points.

pub mod config;
pub mod conjugate;
pub mod dual;
pub mod error;
pub mod feasibility;
pub mod grid;
pub mod optimality;
pub mod primal;
pub mod report;
pub mod runner;
pub mod tensor;

pub use error::{Error, Result};
