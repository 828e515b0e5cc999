use serde::{Deserialize, Serialize};

use crate::contact::ContactCache;
use crate::math::Vec3;
use crate::model::{Material, MaterialId, Particle, RigidTool, SolverConfig};

/// A static frictional plane bounding the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    /// Unit normal pointing into the domain (toward the particles).
    pub normal: Vec3,
    /// Plane offset: points x on the surface satisfy normal·x = offset.
    pub offset: f64,
    pub material: MaterialId,
    /// (μ_t, μ_r) for particle-wall contacts. Bed generation leaves these at
    /// zero; experiments override where their protocol says so.
    pub friction: (f64, f64),
}

impl Wall {
    pub fn new(normal: Vec3, point: Vec3, material: MaterialId) -> Self {
        let normal = normal.normalize();
        Wall { normal, offset: normal.dot(&point), material, friction: (0.0, 0.0) }
    }

    /// Signed distance of a point above the plane surface.
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Extent [lo, hi) a bed layer was emitted into along the gradient axis, in
/// bed coordinates. Kept on the world so audits can measure layer mixing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerBand {
    pub layer_index: u32,
    pub lo: f64,
    pub hi: f64,
    pub diameter: f64,
    /// Axis the band extents refer to (z for vertical beds, x for rotated
    /// horizontal-gradient beds).
    #[serde(default)]
    pub axis: crate::planner::GradientAxis,
}

/// The stepped state: particles, static walls, rigid tools, gravity and
/// solver configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimWorld {
    pub materials: Vec<Material>,
    pub particles: Vec<Particle>,
    pub tools: Vec<RigidTool>,
    pub walls: Vec<Wall>,
    pub gravity: Vec3,
    pub time: f64,
    pub config: SolverConfig,
    pub rng_seed: u64,
    /// Layer bands of the generating bed spec (empty for ad-hoc worlds).
    #[serde(default)]
    pub layer_bands: Vec<LayerBand>,
    /// Warm-start multiplier cache, rebuilt every step. Not part of the
    /// persisted state.
    #[serde(skip)]
    pub(crate) contact_cache: ContactCache,
    /// Next particle id to hand out.
    #[serde(default)]
    pub next_particle_id: u64,
}

impl SimWorld {
    pub fn new(config: SolverConfig) -> Self {
        SimWorld {
            materials: vec![Material::dry_sand()],
            particles: Vec::new(),
            tools: Vec::new(),
            walls: Vec::new(),
            gravity: Vec3::new(0.0, 0.0, -9.81),
            time: 0.0,
            config,
            rng_seed: 0,
            layer_bands: Vec::new(),
            contact_cache: ContactCache::default(),
            next_particle_id: 0,
        }
    }

    pub fn add_material(&mut self, material: Material) -> MaterialId {
        self.materials.push(material);
        MaterialId(self.materials.len() as u32 - 1)
    }

    pub fn material(&self, id: MaterialId) -> &Material {
        &self.materials[id.0 as usize]
    }

    pub fn add_particle(&mut self, position: Vec3, diameter: f64, layer: u32, material: MaterialId) -> u64 {
        let id = self.next_particle_id;
        self.next_particle_id += 1;
        self.particles.push(Particle::new(id, position, diameter, layer, material));
        id
    }

    pub fn add_tool(&mut self, tool: RigidTool) -> usize {
        self.tools.push(tool);
        self.tools.len() - 1
    }

    /// Largest particle diameter currently in the world (0 when empty).
    pub fn max_diameter(&self) -> f64 {
        self.particles.iter().fold(0.0, |m, p| m.max(p.diameter))
    }

    /// Total kinetic energy (translational + rotational) of the particles.
    pub fn kinetic_energy(&self) -> f64 {
        self.particles
            .iter()
            .map(|p| {
                let (m, i) = p.mass_inertia(self.material(p.material));
                0.5 * m * p.velocity.norm_squared() + 0.5 * i * p.angular_velocity.norm_squared()
            })
            .sum()
    }

    /// Mean kinetic energy per particle (0 for an empty world).
    pub fn mean_kinetic_energy(&self) -> f64 {
        if self.particles.is_empty() {
            0.0
        } else {
            self.kinetic_energy() / self.particles.len() as f64
        }
    }

    pub fn max_particle_speed(&self) -> f64 {
        self.particles.iter().fold(0.0, |m, p| m.max(p.velocity.norm()))
    }

    /// Drop the warm-start cache (used after structural edits such as
    /// trimming particles, where stale pair keys could alias).
    pub fn clear_contact_cache(&mut self) {
        self.contact_cache.clear();
    }
}
