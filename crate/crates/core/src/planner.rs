//! Refinement profiles d(z), discrete layer schedules, and the solver cost
//! model: contact-network length, PGS iteration count, timestep, and expected
//! particle counts.
//!
//! The profile is the linear law
//!
//! ```text
//! d(z) = d_min + γz   for 0 ≤ z < z_max,      d(z) = d_max  for z ≥ z_max,
//! z_max = (d_max − d_min)/γ
//! ```
//!
//! realized as discrete layers n = 0, 1, 2, … of diameter d_n = r·d_{n−1} and
//! thickness η·d_n, giving the discrete scaling aggressiveness
//! γ(r, η) = (r−1)/(rη).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default error tolerance ε. Reverse-engineered from the bench timestep
/// table: reproduces all four reference Δt values within 10%.
pub const DEFAULT_EPSILON: f64 = 0.02;

/// Default packing fraction φ = bulk density / grain density = 1400/2200.
pub const DEFAULT_PACKING_FRACTION: f64 = 1400.0 / 2200.0;

/// Default half-width of the per-particle uniform size randomization.
pub const DEFAULT_SIZE_JITTER: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientAxis {
    #[default]
    VerticalZ,
    HorizontalX,
}

/// The continuous refinement law d(z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementProfile {
    pub d_min: f64,
    pub d_max: f64,
    /// Scaling aggressiveness γ = dd/dz. Zero means a uniform bed
    /// (requires d_min = d_max).
    pub gamma: f64,
    #[serde(default)]
    pub axis: GradientAxis,
}

impl RefinementProfile {
    pub fn new(d_min: f64, d_max: f64, gamma: f64, axis: GradientAxis) -> Result<Self> {
        if !(d_min > 0.0) || d_max < d_min {
            return Err(Error::invalid(format!(
                "need 0 < d_min <= d_max, got d_min={d_min}, d_max={d_max}"
            )));
        }
        if gamma < 0.0 {
            return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        if gamma == 0.0 && d_max != d_min {
            return Err(Error::invalid("gamma = 0 requires d_min = d_max (uniform bed)"));
        }
        Ok(RefinementProfile { d_min, d_max, gamma, axis })
    }

    /// Depth where the profile reaches d_max (0 for uniform beds).
    pub fn z_max(&self) -> f64 {
        if self.gamma == 0.0 {
            0.0
        } else {
            (self.d_max - self.d_min) / self.gamma
        }
    }

    /// Diameter at depth z: d_min + γz, clamped at d_max.
    pub fn eval(&self, depth: f64) -> Result<f64> {
        if depth < 0.0 {
            return Err(Error::invalid(format!("depth must be >= 0, got {depth}")));
        }
        Ok((self.d_min + self.gamma * depth).min(self.d_max))
    }
}

/// One discrete layer: diameter, depth of its bottom (`top_depth`, measured
/// from the surface downward, so layer n spans depths [z_{n−1}, z_n)), and
/// thickness η·d_n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub index: u32,
    pub diameter: f64,
    /// Cumulative depth z_n = Σ_{i≤n} η·d_i at the bottom of this layer.
    pub top_depth: f64,
    pub thickness: f64,
}

/// The discrete realization of a refinement profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSchedule {
    /// Layers ordered surface-first: index 0 has diameter d_min.
    pub layers: Vec<Layer>,
    /// Diameter ratio r between consecutive layers (1 for uniform beds).
    pub ratio: f64,
    /// Layer thickness factor η (thickness = η·d_n).
    pub thickness_factor: f64,
    /// Implied scaling aggressiveness γ(r, η) = (r−1)/(rη).
    pub gamma: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl LayerSchedule {
    /// A single semantic layer of constant diameter (γ = 0). The layer is
    /// given unbounded thickness so it fills any bed.
    pub fn uniform(diameter: f64) -> Result<Self> {
        if !(diameter > 0.0) {
            return Err(Error::invalid(format!("diameter must be > 0, got {diameter}")));
        }
        Ok(LayerSchedule {
            layers: vec![Layer { index: 0, diameter, top_depth: f64::INFINITY, thickness: f64::INFINITY }],
            ratio: 1.0,
            thickness_factor: 1.0,
            gamma: 0.0,
            d_min: diameter,
            d_max: diameter,
        })
    }

    pub fn is_uniform(&self) -> bool {
        self.gamma == 0.0
    }

    /// Build the discrete schedule for diameters growing from d_min by ratio
    /// r per layer until d_max, the final layer clamped to exactly d_max.
    pub fn build(d_min: f64, d_max: f64, ratio: f64, eta: f64) -> Result<Self> {
        if !(d_min > 0.0) || d_max < d_min {
            return Err(Error::invalid(format!(
                "need 0 < d_min <= d_max, got d_min={d_min}, d_max={d_max}"
            )));
        }
        if eta < 1.0 {
            return Err(Error::invalid(format!("eta must be >= 1, got {eta}")));
        }
        if ratio < 1.0 {
            return Err(Error::invalid(format!("ratio must be >= 1, got {ratio}")));
        }
        if ratio == 1.0 {
            if d_max != d_min {
                return Err(Error::invalid("ratio = 1 requires d_min = d_max"));
            }
            return LayerSchedule::uniform(d_min);
        }

        let gamma = (ratio - 1.0) / (ratio * eta);
        let mut layers = Vec::new();
        let mut diameter = d_min;
        let mut depth = 0.0;
        let mut index = 0u32;
        loop {
            // geometric growth would overshoot: clamp the final layer
            let d_n = if diameter > d_max * (1.0 - 1e-12) { d_max } else { diameter };
            let thickness = eta * d_n;
            depth += thickness;
            layers.push(Layer { index, diameter: d_n, top_depth: depth, thickness });
            if d_n >= d_max {
                break;
            }
            diameter *= ratio;
            index += 1;
        }
        Ok(LayerSchedule {
            layers,
            ratio,
            thickness_factor: eta,
            gamma,
            d_min,
            d_max,
        })
    }

    /// Build from a target γ with η fixed, solving r = 1/(1 − γη).
    pub fn from_gamma(d_min: f64, d_max: f64, gamma: f64, eta: f64) -> Result<Self> {
        if gamma == 0.0 {
            if d_max != d_min {
                return Err(Error::invalid("gamma = 0 requires d_min = d_max"));
            }
            return LayerSchedule::uniform(d_min);
        }
        if gamma < 0.0 {
            return Err(Error::invalid(format!("gamma must be >= 0, got {gamma}")));
        }
        if gamma * eta >= 1.0 {
            return Err(Error::invalid(format!(
                "gamma*eta must be < 1 for a layer realization, got {}",
                gamma * eta
            )));
        }
        LayerSchedule::build(d_min, d_max, 1.0 / (1.0 - gamma * eta), eta)
    }

    /// Total depth covered by the discrete layers (z of the final layer).
    pub fn total_depth(&self) -> f64 {
        self.layers.last().map(|l| l.top_depth).unwrap_or(0.0)
    }

    pub fn profile(&self, axis: GradientAxis) -> Result<RefinementProfile> {
        RefinementProfile::new(self.d_min, self.d_max, self.gamma, axis)
    }
}

/// Contact-network length n_d: the particle count spanning the dominant
/// stress direction of a bed of height `h`.
///
/// Uniform beds: n_d = h/d. Refined beds:
/// n_d = η·ln(d_max/d_min)/ln r + (h − z_max)/d_max.
/// For h < z_max the bottom term is dropped and the refined term is truncated
/// at depth h (continuous form η·ln(d(h)/d_min)/ln r), which matches the full
/// expression at h = z_max.
pub fn contact_network_length(d_min: f64, d_max: f64, ratio: f64, eta: f64, h: f64) -> Result<f64> {
    if !(h >= 0.0) {
        return Err(Error::invalid(format!("bed height must be >= 0, got {h}")));
    }
    if d_max == d_min {
        return Ok(h / d_max);
    }
    if ratio <= 1.0 {
        return Err(Error::invalid(format!(
            "ratio must be > 1 when d_max > d_min (got r={ratio})"
        )));
    }
    if eta < 1.0 {
        return Err(Error::invalid(format!("eta must be >= 1, got {eta}")));
    }
    let gamma = (ratio - 1.0) / (ratio * eta);
    let z_max = (d_max - d_min) / gamma;
    if h >= z_max {
        Ok(eta * (d_max / d_min).ln() / ratio.ln() + (h - z_max) / d_max)
    } else {
        let d_h = d_min + gamma * h;
        Ok(eta * (d_h / d_min).ln() / ratio.ln())
    }
}

/// PGS iteration guideline N_it = ceil(0.1·n_d/ε), floored at 1.
pub fn solver_iterations(n_d: f64, epsilon: f64) -> Result<u32> {
    if !(n_d > 0.0) {
        return Err(Error::invalid(format!("n_d must be > 0, got {n_d}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(((0.1 * n_d / epsilon).ceil() as u32).max(1))
}

/// Timestep guideline Δt = ½√(εd/a) with the largest per-particle
/// acceleration estimated as a ≈ 3σ/(2ρd), which reduces to
/// Δt = d·√(ερ/6σ). For refined beds pass d = d_min.
pub fn planned_timestep(d: f64, epsilon: f64, density: f64, stress: f64) -> Result<f64> {
    if !(d > 0.0 && epsilon > 0.0 && density > 0.0 && stress > 0.0) {
        return Err(Error::invalid(
            "planned_timestep requires positive d, epsilon, density, stress",
        ));
    }
    Ok(d * (epsilon * density / (6.0 * stress)).sqrt())
}

/// Mean particle volume of a layer with diameter `d` and uniform size
/// randomization on [(1−j)d, (1+j)d]: (π/6)d³·E[u³].
pub fn mean_particle_volume(d: f64, jitter: f64) -> f64 {
    let third_moment = if jitter > 0.0 {
        ((1.0 + jitter).powi(4) - (1.0 - jitter).powi(4)) / (8.0 * jitter)
    } else {
        1.0
    };
    std::f64::consts::PI / 6.0 * d.powi(3) * third_moment
}

/// Expected count in one layer slab by mass balance: N = φ·V_slab/V_mean.
fn layer_count(area: f64, slab_height: f64, d: f64, phi: f64, jitter: f64) -> f64 {
    phi * area * slab_height / mean_particle_volume(d, jitter)
}

/// Planner cost summary for one bed configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    /// Contact-network length n_d along the gradient axis.
    pub contact_network_length: f64,
    /// Iteration guideline from n_d (directly overridable in run configs).
    pub iterations: u32,
    /// Timestep guideline from d_min.
    pub timestep: f64,
    /// Expected particle count per layer, surface layer first. The bottom
    /// uniform region is accounted to the final (d_max) layer.
    pub per_layer_counts: Vec<f64>,
    pub total_count: f64,
    /// ref_count / count against the uniform d_min bed of the same volume.
    pub reduction_factor: f64,
    /// Set when the schedule is deeper than the bed and was truncated.
    pub truncated: bool,
}

/// Expected particle counts for a bed of `dims = [length, width, height]`
/// filled by `schedule`, by per-layer mass balance, plus the solver cost
/// guidelines evaluated for `density`/`stress`.
pub fn expected_particle_count(
    dims: [f64; 3],
    schedule: &LayerSchedule,
    packing_fraction: f64,
    jitter: f64,
    epsilon: f64,
    density: f64,
    stress: f64,
) -> Result<CostEstimate> {
    if dims.iter().any(|&d| d < 0.0) {
        return Err(Error::invalid("bed dimensions must be >= 0"));
    }
    if !(packing_fraction > 0.0 && packing_fraction <= 0.74) {
        return Err(Error::invalid(format!(
            "packing fraction must be in (0, 0.74], got {packing_fraction}"
        )));
    }
    if !(0.0..=0.2).contains(&jitter) {
        return Err(Error::invalid(format!("jitter must be in [0, 0.2], got {jitter}")));
    }
    let [length, width, height] = dims;
    let area = length * width;
    let h = height;

    let mut per_layer = Vec::with_capacity(schedule.layers.len());
    let mut truncated = false;
    let mut prev_depth = 0.0;
    for layer in &schedule.layers {
        let top = layer.top_depth.min(h);
        if layer.top_depth > h {
            truncated = !schedule.is_uniform();
        }
        let slab = (top - prev_depth).max(0.0);
        per_layer.push(layer_count(area, slab, layer.diameter, packing_fraction, jitter));
        prev_depth = top;
    }
    // uniform bottom region below the schedule, at d_max
    if prev_depth < h {
        let extra = layer_count(area, h - prev_depth, schedule.d_max, packing_fraction, jitter);
        if let Some(last) = per_layer.last_mut() {
            *last += extra;
        } else {
            per_layer.push(extra);
        }
    }
    let total: f64 = per_layer.iter().sum();

    let fine_count = layer_count(area, h, schedule.d_min, packing_fraction, jitter);
    let reduction = if total > 0.0 { fine_count / total } else { 1.0 };

    let n_d = contact_network_length(
        schedule.d_min,
        schedule.d_max,
        schedule.ratio,
        schedule.thickness_factor,
        h,
    )?;
    let (iterations, timestep) = if h > 0.0 {
        (
            solver_iterations(n_d, epsilon)?,
            planned_timestep(schedule.d_min, epsilon, density, stress)?,
        )
    } else {
        (1, planned_timestep(schedule.d_min, epsilon, density, stress)?)
    };

    Ok(CostEstimate {
        contact_network_length: n_d,
        iterations,
        timestep,
        per_layer_counts: per_layer,
        total_count: total,
        reduction_factor: reduction,
        truncated,
    })
}
