//! Boundary-element solver for time-harmonic Maxwell transmission problems
//! over several homogeneous dielectric scatterers.
//!
//! The crate covers the whole pipeline: triangulated surfaces and their
//! barycentric refinements, RWG and Buffa-Christiansen spaces, singular and
//! regular Galerkin quadrature, the electric (`S`) and magnetic (`C`)
//! boundary operators in dense or hierarchical storage, the multi-particle
//! PMCHWT system with block-diagonal Calderon preconditioners, and restarted
//! GMRES with exact operator-application accounting.

pub mod error;
pub mod geometry;
pub mod hmatrix;
pub mod operators;
pub mod pmchwt;
pub mod quadrature;
pub mod solver;
pub mod spaces;

pub use error::{BemError, Result};
pub use num_complex::Complex64;

/// Complex scalar used throughout the discretisation.
pub type C64 = Complex64;
