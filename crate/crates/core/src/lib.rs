//! Nonlocal optimal design of scalar diffusion.
//!
//! The crate assembles the two-point nonlocal gradient/divergence calculus on
//! uniform Cartesian meshes, solves the nonlocal Dirichlet (primal) and
//! Kelvin (dual, mixed) state problems, optimizes the conductivity design
//! under a volume constraint, and runs the horizon-to-zero convergence
//! studies against a local finite-difference reference.
//!
//! Entry points:
//! - [`geometry::build_mesh`] / [`geometry::build_pairs`] set up the
//!   discretization for a kernel from [`kernel`];
//! - [`state_solvers::solve_primal`] / [`state_solvers::solve_kelvin`] solve
//!   the state problems at a fixed [`material::DesignField`];
//! - [`design_opt::optimize_design`] and
//!   [`local_ref::optimize_local_design`] produce the nonlocal and local
//!   optimal design values;
//! - [`experiments::delta_sweep`] drives the per-horizon study;
//! - [`cli_io::dispatch`] backs the `nlkelvin` binary.

pub mod cli_io;
pub mod dense;
pub mod design_opt;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod kernel;
pub mod linalg;
pub mod local_ref;
pub mod material;
pub mod operators;
pub mod state_solvers;

pub use error::{Error, Result};
