//! Proximal Galerkin solver for Kirchhoff plates under an exact isometry
//! constraint at cell barycenters.
//!
//! The deformation is discretized with discontinuous P2 elements and an
//! interior penalty bending form; each outer step solves a small
//! saddle-point system whose middle equation ties the barycentric gradient
//! to a Stiefel-manifold exponential step.

pub mod dgspace;
pub mod forms;
pub mod mesh;
pub mod solver;
pub mod sparse;
pub mod stiefel;
pub mod stiefel_checks;
