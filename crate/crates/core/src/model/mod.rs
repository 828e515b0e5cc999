//! Domain types: materials, particles, rigid tools, static walls, and the
//! stepped simulation world.

mod config;
mod material;
mod particle;
mod tool;
mod world;

pub use config::{RollingRadiusRule, SolverConfig};
pub use material::{
    effective_contact_params, particle_mass_inertia, ContactParams, Material, MaterialId,
};
pub use particle::Particle;
pub use tool::{AxisMode, BoxPart, RigidTool, ToolShape};
pub use world::{LayerBand, SimWorld, Wall};
