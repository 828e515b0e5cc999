use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into [`crate::model::SimWorld::materials`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaterialId(pub u32);

/// Bulk material parameters for particles, tools and walls. SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Specific mass density (kg/m³).
    pub density: f64,
    /// Young's elasticity modulus (Pa).
    pub youngs_modulus: f64,
    /// Poisson ratio (dimensionless, in [0, 0.5)).
    pub poisson_ratio: f64,
    /// Coulomb friction coefficient μ_t.
    pub friction: f64,
    /// Rolling resistance coefficient μ_r.
    pub rolling_resistance: f64,
    /// Cohesion (Pa). Dry sand: 0.
    pub cohesion: f64,
    /// Newton restitution coefficient e, in [0, 1]. Dry sand: 0.
    pub restitution: f64,
}

impl Material {
    /// Dry sand parametrization: ρ = 2200 kg/m³, E = 1 GPa, ν = 0.15,
    /// μ_t = 0.3, μ_r = 0.02, zero cohesion and restitution.
    pub fn dry_sand() -> Self {
        Material {
            density: 2200.0,
            youngs_modulus: 1e9,
            poisson_ratio: 0.15,
            friction: 0.3,
            rolling_resistance: 0.02,
            cohesion: 0.0,
            restitution: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0) {
            return Err(Error::invalid(format!("density must be > 0, got {}", self.density)));
        }
        if !(self.youngs_modulus > 0.0) {
            return Err(Error::invalid(format!(
                "youngs_modulus must be > 0, got {}",
                self.youngs_modulus
            )));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::invalid(format!(
                "poisson_ratio must be in [0, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        if self.friction < 0.0 || self.rolling_resistance < 0.0 {
            return Err(Error::invalid("friction coefficients must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(Error::invalid(format!(
                "restitution must be in [0, 1], got {}",
                self.restitution
            )));
        }
        Ok(())
    }
}

/// Solid-sphere mass and scalar moment of inertia:
/// m = ρπd³/6, I = md²/10.
pub fn particle_mass_inertia(diameter: f64, material: &Material) -> Result<(f64, f64)> {
    if !(diameter > 0.0) {
        return Err(Error::invalid(format!("diameter must be > 0, got {diameter}")));
    }
    if !(material.density > 0.0) {
        return Err(Error::invalid(format!(
            "density must be > 0, got {}",
            material.density
        )));
    }
    let mass = material.density * std::f64::consts::PI * diameter.powi(3) / 6.0;
    let inertia = mass * diameter * diameter / 10.0;
    Ok((mass, inertia))
}

/// Derived per-contact material parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Effective Young's modulus E* (Pa).
    pub e_star: f64,
    /// Effective diameter d* (m).
    pub d_star: f64,
    /// Stiffness coefficient k_n = E*·√(d*)/3.
    pub stiffness: f64,
    /// Contact compliance ε_n = e_H / k_n.
    pub compliance: f64,
}

/// Effective contact parameters for a sphere of diameter `d_a` against a
/// second sphere of diameter `d_b`, or against a tool/wall surface
/// (`d_b = None`, the infinite-diameter limit where d* = d_a).
///
/// E* = [(1−ν_a²)/E_a + (1−ν_b²)/E_b]⁻¹, d* = (d_a⁻¹ + d_b⁻¹)⁻¹,
/// k_n = E*√(d*)/3, ε_n = e_H/k_n.
pub fn effective_contact_params(
    d_a: f64,
    mat_a: &Material,
    d_b: Option<f64>,
    mat_b: &Material,
    hertz_exponent: f64,
) -> ContactParams {
    let inv_e = (1.0 - mat_a.poisson_ratio.powi(2)) / mat_a.youngs_modulus
        + (1.0 - mat_b.poisson_ratio.powi(2)) / mat_b.youngs_modulus;
    let e_star = 1.0 / inv_e;
    let d_star = match d_b {
        Some(d_b) => 1.0 / (1.0 / d_a + 1.0 / d_b),
        None => d_a,
    };
    let stiffness = e_star * d_star.sqrt() / 3.0;
    ContactParams {
        e_star,
        d_star,
        stiffness,
        compliance: hertz_exponent / stiffness,
    }
}
