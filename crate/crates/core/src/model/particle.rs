use serde::{Deserialize, Serialize};

use crate::math::{Quat, Vec3};
use crate::model::{particle_mass_inertia, Material, MaterialId};

/// A spherical particle: the unit of simulation.
///
/// Mass and inertia are derived from diameter and material density
/// (solid-sphere formulas), never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub id: u64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
    #[serde(default = "Quat::identity")]
    pub orientation: Quat,
    pub diameter: f64,
    /// Layer this particle was emitted into (0 = finest / surface layer).
    pub layer_index: u32,
    pub material: MaterialId,
}

impl Particle {
    pub fn new(id: u64, position: Vec3, diameter: f64, layer_index: u32, material: MaterialId) -> Self {
        Particle {
            id,
            position,
            velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            orientation: Quat::identity(),
            diameter,
            layer_index,
            material,
        }
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.diameter
    }

    pub fn mass_inertia(&self, material: &Material) -> (f64, f64) {
        particle_mass_inertia(self.diameter, material)
            .expect("particle diameter and material density are validated at construction")
    }
}
