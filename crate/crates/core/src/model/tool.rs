use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::model::MaterialId;

/// Per-axis degree-of-freedom mode of a rigid tool.
///
/// Locked axes never move (the solver treats them as infinitely massive).
/// Force-driven axes receive the given external force and move freely under
/// contacts. Velocity-driven axes carry a motor constraint that tracks the
/// target speed exactly while the motor force stays inside
/// `[min_force, max_force]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AxisMode {
    Locked,
    Force(f64),
    Velocity {
        target: f64,
        min_force: f64,
        max_force: f64,
    },
}

impl AxisMode {
    pub fn velocity_unbounded(target: f64) -> Self {
        AxisMode::Velocity {
            target,
            min_force: f64::NEG_INFINITY,
            max_force: f64::INFINITY,
        }
    }
}

/// An axis-aligned box, offset from the tool reference position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPart {
    /// Box center relative to the tool position.
    pub offset: Vec3,
    pub half_extents: Vec3,
}

/// Tool collision geometry. Tools never rotate, so boxes stay axis-aligned
/// and planes keep their normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ToolShape {
    /// Half-space through the tool position with the given outward normal
    /// (pointing toward the particles).
    Plane { normal: Vec3 },
    /// Union of axis-aligned boxes (e.g. plate base plus grouser teeth).
    Boxes(Vec<BoxPart>),
}

/// A rigid tool: triaxial wall, plate, or container actuator.
///
/// Tools are driven by their axis modes only; gravity is not applied to them
/// (applied loads are explicit, so a force-driven axis carries exactly the
/// configured load).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidTool {
    pub id: u64,
    pub shape: ToolShape,
    pub position: Vec3,
    pub velocity: Vec3,
    pub mass: f64,
    pub axes: [AxisMode; 3],
    pub material: MaterialId,
    /// Overrides (μ_t, μ_r) for particle-tool contacts; `None` uses the
    /// pair's material coefficients.
    pub friction_override: Option<(f64, f64)>,
}

impl RigidTool {
    pub fn new(id: u64, shape: ToolShape, position: Vec3, mass: f64, material: MaterialId) -> Self {
        RigidTool {
            id,
            shape,
            position,
            velocity: Vec3::zeros(),
            mass,
            axes: [AxisMode::Locked; 3],
            material,
            friction_override: None,
        }
    }

    /// World-space AABB of the collision shape (planes return a huge box).
    pub fn aabb(&self) -> (Vec3, Vec3) {
        match &self.shape {
            ToolShape::Plane { .. } => {
                let big = 1e30;
                (Vec3::new(-big, -big, -big), Vec3::new(big, big, big))
            }
            ToolShape::Boxes(parts) => {
                let mut lo = Vec3::new(f64::MAX, f64::MAX, f64::MAX);
                let mut hi = Vec3::new(f64::MIN, f64::MIN, f64::MIN);
                for p in parts {
                    let c = self.position + p.offset;
                    lo = lo.inf(&(c - p.half_extents));
                    hi = hi.sup(&(c + p.half_extents));
                }
                (lo, hi)
            }
        }
    }
}
