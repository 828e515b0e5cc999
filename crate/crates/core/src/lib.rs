//! Nonsmooth (time-implicit) DEM toolkit for depth-graded granular beds.
//!
//! The crate builds settled particle beds whose particle diameter grows with
//! depth by a configurable gradient, steps them with a projected Gauss-Seidel
//! MCP solver, and runs the two bench experiments used to quantify the
//! accuracy/cost trade-off of graded beds against uniform ones: a box triaxial
//! test with Mohr-Coulomb fitting, and a combined pressure-sinkage /
//! shear-displacement plate test.
//!
//! Module map:
//! - [`model`]: particles, materials, rigid tools, walls, the stepped world.
//! - [`planner`]: the d(z) refinement profile, discrete layer schedules and
//!   the solver cost model (contact-network length, iteration count, timestep).
//! - [`contact`]: spatial-hash broadphase and sphere/box/plane narrowphase
//!   with persistent warm-start caching.
//! - [`solver`]: per-step MCP assembly, projected Gauss-Seidel, impact pass,
//!   and the integrator.
//! - [`bed`]: layered gravity deposition, relaxation, trimming and density
//!   auditing.
//! - [`experiments`]: triaxial and plate protocols plus metric extraction.
//! - [`analysis`]: config loading, run persistence, normalized error reports,
//!   batch orchestration and cost accounting.

pub mod analysis;
pub mod bed;
pub mod contact;
pub mod error;
pub mod experiments;
pub mod math;
pub mod model;
pub mod planner;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Material, Particle, RigidTool, SimWorld, SolverConfig};
