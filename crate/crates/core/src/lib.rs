//! Immersed-boundary fluid-structure interaction on a periodic MAC grid.
//!
//! The fluid is advanced with a direction-split pseudo-compressible scheme
//! whose implicit work reduces to batches of one-dimensional periodic
//! tridiagonal systems, solved either serially or across subdomains with a
//! Schur-complement decomposition.  Elastic fibers are coupled to the fluid
//! through a regularized delta kernel (force spreading / velocity
//! interpolation) and integrated explicitly.
//!
//! Crate layout follows the solver stages:
//!
//! * [`mac_grid`] - staggered fields and finite-difference operators
//! * [`ib`] - Lagrangian points, delta kernel, spreading/interpolation
//! * [`tridiag`] - Thomas, cyclic, and Schur-complement tridiagonal solvers
//! * [`runtime`] - domain partitioning, halo exchange, point migration
//! * [`gm`] - the pseudo-compressible (Guermond-Minev) fluid stepper
//! * [`projection`] - a spectral pressure-projection reference solver
//! * [`harness`] - canonical problems, diagnostics, and the run loop

pub mod error;
pub mod gm;
pub mod harness;
pub mod ib;
pub mod mac_grid;
pub mod projection;
pub mod runtime;
pub mod tridiag;

pub use error::{Error, Result};
pub use mac_grid::{GridSpec, MacField, ScalarField, StaggerLocation};
