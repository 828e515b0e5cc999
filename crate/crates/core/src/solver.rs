//! The time-implicit stepper: per-step constraint assembly, projected
//! Gauss-Seidel over the mixed complementarity problem, the Newton impact
//! pass, and symplectic integration.
//!
//! Contacts map to one normal row (compliance ε_n from the Hertz parameters,
//! damping γ_n = 4.5Δt), a tangential pair bounded by the friction cone
//! μ_t·λ_n, and a rolling triple acting on the full relative angular
//! velocity of the pair, bounded by μ_r·(d/2)·λ_n (the triple includes the
//! normal component, so spin about the contact normal is dissipated too).
//! Velocity-driven tool axes contribute motor rows with force range limits.
//! The discretization follows the first-order variational stepper for
//! regularized constraints: with compliance ε and damping time τ the
//! diagonal perturbation is Σ = 4ε/(Δt²(1+4τ/Δt)) and the position
//! stabilization term is (4/(Δt(1+4τ/Δt)))·g, with g = δ^{e_H}.

use std::time::Instant;

use crate::contact::{broadphase, narrowphase, refresh_cache, Contact, ContactPartner};
use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::model::{AxisMode, SimWorld};

/// Per-step solve summary.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    /// PGS sweeps actually performed (early exit may stop below N_it).
    pub iterations_used: u32,
    /// Largest multiplier update of the final sweep, in force units (N).
    pub residual_max: f64,
    /// L2 norm of the final sweep's multiplier updates (N).
    pub residual_norm: f64,
    pub contact_count: usize,
    /// 1 when the Newton impact pass ran this step.
    pub impact_passes: u32,
    pub degenerate_contacts: u32,
    pub wall_clock_s: f64,
    /// Total contact force exerted by the particles on each tool (N).
    pub tool_contact_forces: Vec<Vec3>,
    /// Motor constraint force on each tool per axis (N); zero on axes
    /// without a motor.
    pub tool_motor_forces: Vec<Vec3>,
    /// Total contact force exerted by the particles on each static wall (N).
    pub wall_contact_forces: Vec<Vec3>,
}

/// Flat solve-state: particles first, then tools. Locked tool axes carry
/// zero inverse mass; tools have no angular degrees of freedom.
#[derive(Debug, Clone)]
pub struct Bodies {
    pub n_particles: usize,
    pub inv_mass: Vec<Vec3>,
    pub inv_inertia: Vec<f64>,
    pub vel: Vec<Vec3>,
    pub ang: Vec<Vec3>,
}

impl Bodies {
    pub fn gather(world: &SimWorld) -> Bodies {
        let np = world.particles.len();
        let nt = world.tools.len();
        let mut inv_mass = Vec::with_capacity(np + nt);
        let mut inv_inertia = Vec::with_capacity(np + nt);
        let mut vel = Vec::with_capacity(np + nt);
        let mut ang = Vec::with_capacity(np + nt);
        for p in &world.particles {
            let (m, i) = p.mass_inertia(world.material(p.material));
            inv_mass.push(Vec3::repeat(1.0 / m));
            inv_inertia.push(1.0 / i);
            vel.push(p.velocity);
            ang.push(p.angular_velocity);
        }
        for t in &world.tools {
            let mut im = Vec3::zeros();
            for k in 0..3 {
                if !matches!(t.axes[k], AxisMode::Locked) {
                    im[k] = 1.0 / t.mass;
                }
            }
            inv_mass.push(im);
            inv_inertia.push(0.0);
            let mut v = t.velocity;
            for k in 0..3 {
                if matches!(t.axes[k], AxisMode::Locked) {
                    v[k] = 0.0;
                }
            }
            vel.push(v);
            ang.push(Vec3::zeros());
        }
        Bodies { n_particles: np, inv_mass, inv_inertia, vel, ang }
    }

    /// Integrate external forces: gravity on particles, configured axis
    /// forces on tools.
    pub fn apply_external_forces(&mut self, world: &SimWorld, dt: f64) {
        for v in self.vel.iter_mut().take(self.n_particles) {
            *v += world.gravity * dt;
        }
        for (ti, tool) in world.tools.iter().enumerate() {
            let b = self.n_particles + ti;
            for k in 0..3 {
                if let AxisMode::Force(f) = tool.axes[k] {
                    self.vel[b][k] += dt * f * self.inv_mass[b][k];
                }
            }
        }
    }
}

const STATIC_BODY: u32 = u32::MAX;

/// One contact's constraint rows: the normal row plus the tangential and
/// rolling pairs, with precomputed effective masses.
#[derive(Debug, Clone)]
pub struct ContactBlock {
    pub a: u32,
    pub b: u32,
    n: Vec3,
    t1: Vec3,
    t2: Vec3,
    // r × direction terms for both bodies
    axn_a: Vec3,
    axt1_a: Vec3,
    axt2_a: Vec3,
    axn_b: Vec3,
    axt1_b: Vec3,
    axt2_b: Vec3,
    /// Diagonal regularization of the normal row.
    pub sigma_n: f64,
    /// Normal row right-hand side (stabilization, or restitution target in
    /// the impact pass).
    pub rhs_n: f64,
    dinv_n: f64,
    // inverse of the 2x2 tangential effective mass
    t_i11: f64,
    t_i12: f64,
    t_i22: f64,
    /// Inverse of the (isotropic) rolling effective mass.
    r_inv: f64,
    pub mu_t: f64,
    /// μ_r·(d/2): rolling bound per unit normal multiplier.
    pub roll_bound: f64,
    pub lambda_n: f64,
    pub lambda_t: [f64; 2],
    /// Rolling multiplier in the (t1, t2, n) angular basis.
    pub lambda_r: [f64; 3],
    /// Index into the narrowphase contact list.
    pub contact_idx: u32,
}

#[derive(Debug, Clone)]
pub struct MotorRow {
    /// Body index (tool) in the solve arrays.
    pub body: u32,
    pub axis: usize,
    /// Target speed u(t).
    pub target: f64,
    /// Impulse bounds (force limits × Δt).
    pub lo: f64,
    pub hi: f64,
    dinv: f64,
    pub lambda: f64,
}

/// The assembled per-step MCP.
#[derive(Debug, Clone, Default)]
pub struct Assembled {
    pub contacts: Vec<ContactBlock>,
    pub motors: Vec<MotorRow>,
}

fn body_index(partner: ContactPartner, n_particles: usize) -> u32 {
    match partner {
        ContactPartner::Particle(i) => i,
        ContactPartner::Tool { tool, .. } => (n_particles + tool as usize) as u32,
        ContactPartner::Wall(_) => STATIC_BODY,
    }
}

#[inline]
fn invert_2x2(d11: f64, d12: f64, d22: f64) -> (f64, f64, f64) {
    let det = d11 * d22 - d12 * d12;
    if det.abs() < 1e-300 {
        // rank-deficient block: fall back to the diagonal
        let i11 = if d11 > 0.0 { 1.0 / d11 } else { 0.0 };
        let i22 = if d22 > 0.0 { 1.0 / d22 } else { 0.0 };
        return (i11, 0.0, i22);
    }
    (d22 / det, -d12 / det, d11 / det)
}

/// Build the solvable blocks for one step. `stabilization` enables the
/// position term and compliance (the main velocity solve); the impact pass
/// assembles with `stabilization = false` and restitution targets instead.
fn assemble_blocks(
    world: &SimWorld,
    contacts: &[Contact],
    bodies: &Bodies,
    stabilization: bool,
    restitution_targets: Option<&[f64]>,
) -> Assembled {
    let dt = world.config.timestep;
    let tau = world.config.damping_time();
    let denom = 1.0 + 4.0 * tau / dt;
    let np = bodies.n_particles;

    let mut blocks = Vec::with_capacity(contacts.len());
    for (ci, c) in contacts.iter().enumerate() {
        if c.degenerate {
            continue;
        }
        let a = c.a;
        let b = body_index(c.b, np);
        let pa = &world.particles[a as usize];
        let r_a = c.point - pa.position;
        let r_b = match c.b {
            ContactPartner::Particle(i) => c.point - world.particles[i as usize].position,
            ContactPartner::Tool { tool, .. } => c.point - world.tools[tool as usize].position,
            ContactPartner::Wall(_) => Vec3::zeros(),
        };

        let axn_a = r_a.cross(&c.normal);
        let axt1_a = r_a.cross(&c.t1);
        let axt2_a = r_a.cross(&c.t2);
        let axn_b = r_b.cross(&c.normal);
        let axt1_b = r_b.cross(&c.t1);
        let axt2_b = r_b.cross(&c.t2);

        let ima = bodies.inv_mass[a as usize];
        let iia = bodies.inv_inertia[a as usize];
        let (imb, iib) = if b == STATIC_BODY {
            (Vec3::zeros(), 0.0)
        } else {
            (bodies.inv_mass[b as usize], bodies.inv_inertia[b as usize])
        };

        let dir_mass = |dir: &Vec3, ax_a: &Vec3, ax_b: &Vec3| -> f64 {
            dir.x * dir.x * (ima.x + imb.x)
                + dir.y * dir.y * (ima.y + imb.y)
                + dir.z * dir.z * (ima.z + imb.z)
                + iia * ax_a.norm_squared()
                + iib * ax_b.norm_squared()
        };
        let dir_cross_mass = |u: &Vec3, v: &Vec3, axu_a: &Vec3, axv_a: &Vec3, axu_b: &Vec3, axv_b: &Vec3| -> f64 {
            u.x * v.x * (ima.x + imb.x)
                + u.y * v.y * (ima.y + imb.y)
                + u.z * v.z * (ima.z + imb.z)
                + iia * axu_a.dot(axv_a)
                + iib * axu_b.dot(axv_b)
        };

        let (sigma_n, rhs_n) = if stabilization {
            let g_n = c.overlap.powf(world.config.hertz_exponent);
            (
                4.0 * c.params.compliance / (dt * dt * denom),
                4.0 * g_n / (dt * denom),
            )
        } else {
            let target = restitution_targets.map(|t| t[ci]).unwrap_or(0.0);
            (0.0, target)
        };

        let d_n = dir_mass(&c.normal, &axn_a, &axn_b) + sigma_n;

        let t_d11 = dir_mass(&c.t1, &axt1_a, &axt1_b);
        let t_d22 = dir_mass(&c.t2, &axt2_a, &axt2_b);
        let t_d12 = dir_cross_mass(&c.t1, &c.t2, &axt1_a, &axt2_a, &axt1_b, &axt2_b);
        let (t_i11, t_i12, t_i22) = invert_2x2(t_d11, t_d12, t_d22);

        // rolling acts on the full relative angular velocity of the pair
        let r_d = iia + iib;
        let r_inv = if r_d > 0.0 { 1.0 / r_d } else { 0.0 };

        let (lambda_n, lambda_t, lambda_r) = if stabilization {
            (c.warm_normal, c.warm_tangent, c.warm_rolling)
        } else {
            (0.0, [0.0; 2], [0.0; 3])
        };

        blocks.push(ContactBlock {
            a,
            b,
            n: c.normal,
            t1: c.t1,
            t2: c.t2,
            axn_a,
            axt1_a,
            axt2_a,
            axn_b,
            axt1_b,
            axt2_b,
            sigma_n,
            rhs_n,
            dinv_n: 1.0 / d_n,
            t_i11,
            t_i12,
            t_i22,
            r_inv,
            mu_t: c.mu_t,
            roll_bound: c.mu_r * 0.5 * c.rolling_diameter,
            lambda_n,
            lambda_t,
            lambda_r,
            contact_idx: ci as u32,
        });
    }

    let mut motors = Vec::new();
    for (ti, tool) in world.tools.iter().enumerate() {
        let b = (np + ti) as u32;
        for (axis, mode) in tool.axes.iter().enumerate() {
            if let AxisMode::Velocity { target, min_force, max_force } = *mode {
                let inv_m = bodies.inv_mass[b as usize][axis];
                motors.push(MotorRow {
                    body: b,
                    axis,
                    target,
                    lo: min_force * dt,
                    hi: max_force * dt,
                    dinv: 1.0 / inv_m,
                    lambda: 0.0,
                });
            }
        }
    }

    Assembled { contacts: blocks, motors }
}

/// Assemble the step's constraint blocks from detected contacts (the main,
/// stabilized velocity problem with warm-started multipliers).
pub fn assemble(world: &SimWorld, contacts: &[Contact], bodies: &Bodies) -> Assembled {
    assemble_blocks(world, contacts, bodies, true, None)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveStats {
    pub sweeps: u32,
    pub residual_max: f64,
    pub residual_norm: f64,
}

#[inline]
fn apply_contact_impulse(
    bodies: &mut Bodies,
    block: &ContactBlock,
    dir: &Vec3,
    ax_a: &Vec3,
    ax_b: &Vec3,
    d_lambda: f64,
) {
    let a = block.a as usize;
    let im = bodies.inv_mass[a];
    bodies.vel[a] -= Vec3::new(dir.x * im.x, dir.y * im.y, dir.z * im.z) * d_lambda;
    bodies.ang[a] -= ax_a * (bodies.inv_inertia[a] * d_lambda);
    if block.b != STATIC_BODY {
        let b = block.b as usize;
        let im = bodies.inv_mass[b];
        bodies.vel[b] += Vec3::new(dir.x * im.x, dir.y * im.y, dir.z * im.z) * d_lambda;
        bodies.ang[b] += ax_b * (bodies.inv_inertia[b] * d_lambda);
    }
}

#[inline]
fn apply_rolling_impulse(bodies: &mut Bodies, block: &ContactBlock, dir: &Vec3, d_lambda: f64) {
    let a = block.a as usize;
    bodies.ang[a] += dir * (bodies.inv_inertia[a] * d_lambda);
    if block.b != STATIC_BODY {
        let b = block.b as usize;
        bodies.ang[b] -= dir * (bodies.inv_inertia[b] * d_lambda);
    }
}

#[inline]
fn rel_velocity_along(
    bodies: &Bodies,
    block: &ContactBlock,
    dir: &Vec3,
    ax_a: &Vec3,
    ax_b: &Vec3,
) -> f64 {
    let a = block.a as usize;
    let mut s = -dir.dot(&bodies.vel[a]) - ax_a.dot(&bodies.ang[a]);
    if block.b != STATIC_BODY {
        let b = block.b as usize;
        s += dir.dot(&bodies.vel[b]) + ax_b.dot(&bodies.ang[b]);
    }
    s
}

/// Apply the warm-start impulses so the velocities are consistent with the
/// cached multipliers before the first sweep.
fn apply_warm_start(bodies: &mut Bodies, assembled: &Assembled) {
    for block in &assembled.contacts {
        if block.lambda_n != 0.0 {
            apply_contact_impulse(bodies, block, &block.n, &block.axn_a, &block.axn_b, block.lambda_n);
        }
        if block.lambda_t != [0.0; 2] {
            apply_contact_impulse(bodies, block, &block.t1, &block.axt1_a, &block.axt1_b, block.lambda_t[0]);
            apply_contact_impulse(bodies, block, &block.t2, &block.axt2_a, &block.axt2_b, block.lambda_t[1]);
        }
        if block.lambda_r != [0.0; 3] {
            apply_rolling_impulse(bodies, block, &block.t1, block.lambda_r[0]);
            apply_rolling_impulse(bodies, block, &block.t2, block.lambda_r[1]);
            apply_rolling_impulse(bodies, block, &block.n, block.lambda_r[2]);
        }
    }
}

/// Projected Gauss-Seidel over the assembled blocks. Sweeps in fixed order:
/// contacts sorted by pair key (normal, then friction, then rolling per
/// contact), then motor rows, so exact motor tracking survives the sweep.
/// Early exit once the largest multiplier update falls below
/// `residual_exit` (N).
pub fn pgs_solve(
    bodies: &mut Bodies,
    assembled: &mut Assembled,
    iterations: u32,
    residual_exit: Option<f64>,
    dt: f64,
) -> Result<SolveStats> {
    let mut stats = SolveStats::default();
    let exit_impulse = residual_exit.map(|r| r * dt);

    for sweep in 0..iterations.max(1) {
        let mut max_d = 0.0f64;
        let mut norm_sq = 0.0f64;

        for (bi, block) in assembled.contacts.iter_mut().enumerate() {
            // normal row
            let w = rel_velocity_along(bodies, block, &block.n, &block.axn_a, &block.axn_b)
                + block.sigma_n * block.lambda_n
                - block.rhs_n;
            let mut d_lambda = -w * block.dinv_n;
            if !d_lambda.is_finite() {
                return Err(Error::SolverDiverged { row: bi });
            }
            let new_n = (block.lambda_n + d_lambda).max(0.0);
            d_lambda = new_n - block.lambda_n;
            if d_lambda != 0.0 {
                apply_contact_impulse(bodies, block, &block.n, &block.axn_a, &block.axn_b, d_lambda);
                block.lambda_n = new_n;
            }
            max_d = max_d.max(d_lambda.abs());
            norm_sq += d_lambda * d_lambda;

            // friction pair: joint 2D solve, then scale to the cone radius
            if block.mu_t > 0.0 || block.lambda_t != [0.0; 2] {
                let w1 = rel_velocity_along(bodies, block, &block.t1, &block.axt1_a, &block.axt1_b);
                let w2 = rel_velocity_along(bodies, block, &block.t2, &block.axt2_a, &block.axt2_b);
                let d1 = -(block.t_i11 * w1 + block.t_i12 * w2);
                let d2 = -(block.t_i12 * w1 + block.t_i22 * w2);
                if !(d1.is_finite() && d2.is_finite()) {
                    return Err(Error::SolverDiverged { row: bi });
                }
                let mut l1 = block.lambda_t[0] + d1;
                let mut l2 = block.lambda_t[1] + d2;
                let bound = block.mu_t * block.lambda_n;
                let mag = (l1 * l1 + l2 * l2).sqrt();
                if mag > bound {
                    let s = if mag > 0.0 { bound / mag } else { 0.0 };
                    l1 *= s;
                    l2 *= s;
                }
                let a1 = l1 - block.lambda_t[0];
                let a2 = l2 - block.lambda_t[1];
                if a1 != 0.0 || a2 != 0.0 {
                    apply_contact_impulse(bodies, block, &block.t1, &block.axt1_a, &block.axt1_b, a1);
                    apply_contact_impulse(bodies, block, &block.t2, &block.axt2_a, &block.axt2_b, a2);
                    block.lambda_t = [l1, l2];
                }
                max_d = max_d.max(a1.abs()).max(a2.abs());
                norm_sq += a1 * a1 + a2 * a2;
            }

            // rolling triple on the relative angular velocity of the pair
            if (block.roll_bound > 0.0 || block.lambda_r != [0.0; 3]) && block.r_inv > 0.0 {
                let a = block.a as usize;
                let mut w_rel = bodies.ang[a];
                if block.b != STATIC_BODY {
                    w_rel -= bodies.ang[block.b as usize];
                }
                let w = [block.t1.dot(&w_rel), block.t2.dot(&w_rel), block.n.dot(&w_rel)];
                let mut l = [0.0f64; 3];
                let mut ok = true;
                for k in 0..3 {
                    let d = -w[k] * block.r_inv;
                    ok &= d.is_finite();
                    l[k] = block.lambda_r[k] + d;
                }
                if !ok {
                    return Err(Error::SolverDiverged { row: bi });
                }
                let bound = block.roll_bound * block.lambda_n;
                let mag = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
                if mag > bound {
                    let s = if mag > 0.0 { bound / mag } else { 0.0 };
                    for lk in &mut l {
                        *lk *= s;
                    }
                }
                let applied = [
                    l[0] - block.lambda_r[0],
                    l[1] - block.lambda_r[1],
                    l[2] - block.lambda_r[2],
                ];
                if applied != [0.0; 3] {
                    apply_rolling_impulse(bodies, block, &block.t1, applied[0]);
                    apply_rolling_impulse(bodies, block, &block.t2, applied[1]);
                    apply_rolling_impulse(bodies, block, &block.n, applied[2]);
                    block.lambda_r = l;
                }
                for ak in applied {
                    max_d = max_d.max(ak.abs());
                    norm_sq += ak * ak;
                }
            }
        }

        for (mi, motor) in assembled.motors.iter_mut().enumerate() {
            let b = motor.body as usize;
            let w = bodies.vel[b][motor.axis] - motor.target;
            let d = -w * motor.dinv;
            if !d.is_finite() {
                return Err(Error::SolverDiverged { row: assembled.contacts.len() + mi });
            }
            let new_l = (motor.lambda + d).clamp(motor.lo, motor.hi);
            let applied = new_l - motor.lambda;
            if applied != 0.0 {
                bodies.vel[b][motor.axis] += applied * bodies.inv_mass[b][motor.axis];
                motor.lambda = new_l;
            }
            max_d = max_d.max(applied.abs());
            norm_sq += applied * applied;
        }

        stats.sweeps = sweep + 1;
        stats.residual_max = max_d / dt;
        stats.residual_norm = norm_sq.sqrt() / dt;
        if let Some(exit) = exit_impulse {
            if max_d < exit {
                break;
            }
        }
    }
    Ok(stats)
}

/// Newton impact pass: when any contact approaches faster than `threshold`,
/// solve an impulse-space problem whose impacting normal rows target
/// −e·(approach speed) while all other rows keep zero bias (motors keep
/// their kinematic targets). Returns whether the pass ran.
pub fn impact_resolve(
    world: &SimWorld,
    contacts: &[Contact],
    bodies: &mut Bodies,
    threshold: f64,
) -> Result<bool> {
    let np = bodies.n_particles;
    let mut any = false;
    let mut targets = vec![0.0; contacts.len()];
    for (ci, c) in contacts.iter().enumerate() {
        if c.degenerate {
            continue;
        }
        let b = body_index(c.b, np);
        let a = c.a as usize;
        let pa_pos = world.particles[a].position;
        let r_a = c.point - pa_pos;
        let mut s = -c.normal.dot(&bodies.vel[a]) - r_a.cross(&c.normal).dot(&bodies.ang[a]);
        if b != STATIC_BODY {
            let bodyb = b as usize;
            let r_b = match c.b {
                ContactPartner::Particle(i) => c.point - world.particles[i as usize].position,
                ContactPartner::Tool { tool, .. } => c.point - world.tools[tool as usize].position,
                ContactPartner::Wall(_) => Vec3::zeros(),
            };
            s += c.normal.dot(&bodies.vel[bodyb]) + r_b.cross(&c.normal).dot(&bodies.ang[bodyb]);
        }
        if s < -threshold {
            any = true;
            targets[ci] = -c.restitution * s;
        }
    }
    if !any {
        return Ok(false);
    }
    let mut assembled = assemble_blocks(world, contacts, bodies, false, Some(&targets));
    pgs_solve(
        bodies,
        &mut assembled,
        world.config.iterations,
        world.config.residual_exit,
        world.config.timestep,
    )?;
    Ok(true)
}

/// Advance the world one timestep: detect → impact pass (if triggered) →
/// assemble → PGS → symplectic position update. On error the world is left
/// unchanged.
pub fn step(world: &mut SimWorld) -> Result<StepReport> {
    let t0 = Instant::now();
    let dt = world.config.timestep;
    world.config.validate()?;

    let candidates = broadphase(world);
    let (mut contacts, degenerate) = narrowphase(world, &candidates, &world.contact_cache);

    let mut bodies = Bodies::gather(world);

    let impact_fired = impact_resolve(
        world,
        &contacts,
        &mut bodies,
        world.config.impact_velocity_threshold,
    )?;

    bodies.apply_external_forces(world, dt);

    let mut assembled = assemble(world, &contacts, &bodies);
    apply_warm_start(&mut bodies, &assembled);
    let stats = pgs_solve(
        &mut bodies,
        &mut assembled,
        world.config.iterations,
        world.config.residual_exit,
        dt,
    )?;

    // write multipliers back for the cache and the force accounting
    let mut report = StepReport {
        iterations_used: stats.sweeps,
        residual_max: stats.residual_max,
        residual_norm: stats.residual_norm,
        contact_count: contacts.len(),
        impact_passes: impact_fired as u32,
        degenerate_contacts: degenerate,
        wall_clock_s: 0.0,
        tool_contact_forces: vec![Vec3::zeros(); world.tools.len()],
        tool_motor_forces: vec![Vec3::zeros(); world.tools.len()],
        wall_contact_forces: vec![Vec3::zeros(); world.walls.len()],
    };
    for block in &assembled.contacts {
        let c = &mut contacts[block.contact_idx as usize];
        c.warm_normal = block.lambda_n;
        c.warm_tangent = block.lambda_t;
        c.warm_rolling = block.lambda_r;
        let force = (block.n * block.lambda_n
            + block.t1 * block.lambda_t[0]
            + block.t2 * block.lambda_t[1])
            / dt;
        match c.b {
            ContactPartner::Tool { tool, .. } => report.tool_contact_forces[tool as usize] += force,
            ContactPartner::Wall(w) => report.wall_contact_forces[w as usize] += force,
            ContactPartner::Particle(_) => {}
        }
    }
    for motor in &assembled.motors {
        let ti = motor.body as usize - bodies.n_particles;
        report.tool_motor_forces[ti][motor.axis] += motor.lambda / dt;
    }

    // integrate
    let np = bodies.n_particles;
    for (i, p) in world.particles.iter_mut().enumerate() {
        p.velocity = bodies.vel[i];
        p.angular_velocity = bodies.ang[i];
        p.position += p.velocity * dt;
        let w = p.angular_velocity;
        if w.norm_squared() > 0.0 {
            let dq = Quat::from_scaled_axis(w * dt);
            p.orientation = dq * p.orientation;
        }
    }
    for (ti, tool) in world.tools.iter_mut().enumerate() {
        let mut v = bodies.vel[np + ti];
        for k in 0..3 {
            if matches!(tool.axes[k], AxisMode::Locked) {
                v[k] = 0.0;
            }
        }
        tool.velocity = v;
        tool.position += v * dt;
    }
    world.time += dt;
    refresh_cache(&mut world.contact_cache, &contacts);

    report.wall_clock_s = t0.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::GRAVITY;
    use crate::model::{Material, MaterialId, RigidTool, SolverConfig, ToolShape, Wall};
    use approx::assert_relative_eq;

    fn floor_world(dt: f64) -> SimWorld {
        let mut w = SimWorld::new(SolverConfig::with_timestep(dt, 100));
        w.walls.push(Wall::new(Vec3::z(), Vec3::zeros(), MaterialId(0)));
        w
    }

    /// Unit-mass material: a 1 m sphere weighs 1 kg.
    fn unit_material() -> Material {
        let mut m = Material::dry_sand();
        m.density = 6.0 / std::f64::consts::PI;
        m
    }

    #[test]
    fn free_fall_matches_parabola_to_first_order() {
        let dt = 1e-3;
        let mut w = SimWorld::new(SolverConfig::with_timestep(dt, 10));
        w.add_particle(Vec3::new(0.0, 0.0, 10.0), 0.01, 0, MaterialId(0));
        let t_end = 1.0;
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            step(&mut w).unwrap();
        }
        let z_exact = 10.0 - 0.5 * GRAVITY * t_end * t_end;
        let z_sim = w.particles[0].position.z;
        // symplectic Euler: global error ~ 0.5·g·Δt·t
        assert!((z_sim - z_exact).abs() < GRAVITY * dt * t_end);
        assert_relative_eq!(w.particles[0].velocity.z, -GRAVITY * t_end, max_relative = 1e-9);
    }

    #[test]
    fn zero_contacts_velocity_advances_exactly() {
        let dt = 1e-3;
        let mut w = SimWorld::new(SolverConfig::with_timestep(dt, 10));
        w.add_particle(Vec3::new(0.0, 0.0, 10.0), 0.01, 0, MaterialId(0));
        step(&mut w).unwrap();
        assert_relative_eq!(w.particles[0].velocity.z, -GRAVITY * dt, epsilon = 1e-15);
    }

    #[test]
    fn resting_particle_carries_exact_weight() {
        let dt = 1e-4;
        let mut w = floor_world(dt);
        w.materials[0] = unit_material();
        let id = w.add_particle(Vec3::new(0.0, 0.0, 0.5), 1.0, 0, MaterialId(0));
        assert_eq!(id, 0);
        // drop a hair above the floor and let it settle
        w.particles[0].position.z = 0.5 - 1e-6;
        let mut last = StepReport::default();
        for _ in 0..200 {
            last = step(&mut w).unwrap();
        }
        assert_eq!(last.contact_count, 1);
        // particle presses down on the floor with its weight
        let weight = -last.wall_contact_forces[0].z;
        assert_relative_eq!(weight, GRAVITY, max_relative = 0.01);
        // position still creeping toward the equilibrium overlap, but slowly
        assert!(w.particles[0].velocity.norm() < 5e-5);
    }

    #[test]
    fn stacked_pair_bottom_contact_carries_double_weight() {
        let dt = 1e-4;
        let mut w = floor_world(dt);
        w.materials[0] = unit_material();
        w.add_particle(Vec3::new(0.0, 0.0, 0.5 - 1e-7), 1.0, 0, MaterialId(0));
        w.add_particle(Vec3::new(0.0, 0.0, 1.5 - 2e-7), 1.0, 0, MaterialId(0));
        for _ in 0..400 {
            step(&mut w).unwrap();
        }
        let report = step(&mut w).unwrap();
        assert_relative_eq!(-report.wall_contact_forces[0].z, 2.0 * GRAVITY, max_relative = 0.01);
    }

    #[test]
    fn hertz_violation_hand_value() {
        // δ = 1 mm at e_H = 5/4 maps to g_n = δ^1.25 = 1.778e-4
        let g: f64 = 1e-3f64.powf(1.25);
        assert_relative_eq!(g, 1.778e-4, max_relative = 1e-3);
    }

    #[test]
    fn critically_damped_contact_kills_normal_velocity_within_five_steps() {
        let dt = 1e-4;
        let mut cfg = SolverConfig::with_timestep(dt, 100);
        cfg.impact_velocity_threshold = f64::INFINITY; // exercise the damped row
        let mut w = SimWorld::new(cfg);
        w.walls.push(Wall::new(Vec3::z(), Vec3::zeros(), MaterialId(0)));
        w.add_particle(Vec3::new(0.0, 0.0, 0.00425 - 1e-9), 0.0085, 0, MaterialId(0));
        let impact = 0.1;
        w.particles[0].velocity.z = -impact;
        for _ in 0..5 {
            step(&mut w).unwrap();
        }
        assert!(
            w.particles[0].velocity.z.abs() < 0.01 * impact,
            "normal velocity {} not damped below 1% of {}",
            w.particles[0].velocity.z,
            impact
        );
    }

    #[test]
    fn head_on_inelastic_impact_shares_velocity_and_conserves_momentum() {
        let dt = 1e-4;
        let mut w = SimWorld::new(SolverConfig::with_timestep(dt, 50));
        w.materials[0] = unit_material();
        w.materials[0].friction = 0.0;
        w.materials[0].rolling_resistance = 0.0;
        w.add_particle(Vec3::new(-0.5 + 1e-7, 0.0, 0.0), 1.0, 0, MaterialId(0));
        w.add_particle(Vec3::new(0.5, 0.0, 0.0), 1.0, 0, MaterialId(0));
        w.particles[0].velocity.x = 1.0;
        w.gravity = Vec3::zeros();
        step(&mut w).unwrap();
        let p = &w.particles;
        let momentum = p[0].velocity.x + p[1].velocity.x;
        assert_relative_eq!(momentum, 1.0, epsilon = 1e-12);
        // the position-stabilization term adds a ~µm/s separation on top
        assert_relative_eq!(p[0].velocity.x, 0.5, max_relative = 1e-4);
        assert_relative_eq!(p[1].velocity.x, 0.5, max_relative = 1e-4);
    }

    #[test]
    fn elastic_impact_exchanges_velocities() {
        let dt = 1e-4;
        let mut w = SimWorld::new(SolverConfig::with_timestep(dt, 50));
        w.materials[0] = unit_material();
        w.materials[0].friction = 0.0;
        w.materials[0].rolling_resistance = 0.0;
        w.materials[0].restitution = 1.0;
        w.add_particle(Vec3::new(-0.5 + 1e-7, 0.0, 0.0), 1.0, 0, MaterialId(0));
        w.add_particle(Vec3::new(0.5, 0.0, 0.0), 1.0, 0, MaterialId(0));
        w.particles[0].velocity.x = 1.0;
        w.gravity = Vec3::zeros();
        let report = step(&mut w).unwrap();
        assert_eq!(report.impact_passes, 1);
        let p = &w.particles;
        assert_relative_eq!(p[0].velocity.x + p[1].velocity.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p[1].velocity.x, 1.0, max_relative = 1e-6);
        assert!(p[0].velocity.x.abs() < 1e-6);
    }

    #[test]
    fn velocity_driven_tool_tracks_target_exactly() {
        let dt = 1e-3;
        let mut w = SimWorld::new(SolverConfig::with_timestep(dt, 20));
        let mut tool = RigidTool::new(
            0,
            ToolShape::Boxes(vec![crate::model::BoxPart {
                offset: Vec3::zeros(),
                half_extents: Vec3::new(0.05, 0.05, 0.01),
            }]),
            Vec3::new(0.0, 0.0, 0.5),
            2.0,
            MaterialId(0),
        );
        tool.axes[0] = AxisMode::velocity_unbounded(0.1);
        w.add_tool(tool);
        for _ in 0..10 {
            step(&mut w).unwrap();
        }
        assert_relative_eq!(w.tools[0].position.x, 0.1 * dt * 10.0, epsilon = 1e-12);
        assert_relative_eq!(w.tools[0].position.z, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn motor_force_limit_releases_tracking() {
        let dt = 1e-3;
        let mut w = SimWorld::new(SolverConfig::with_timestep(dt, 20));
        let mut tool = RigidTool::new(
            0,
            ToolShape::Plane { normal: Vec3::z() },
            Vec3::zeros(),
            2.0,
            MaterialId(0),
        );
        // target 1 m/s from rest needs |F| = m·v/Δt = 2000 N; cap at 10 N
        tool.axes[0] = AxisMode::Velocity { target: 1.0, min_force: -10.0, max_force: 10.0 };
        w.add_tool(tool);
        step(&mut w).unwrap();
        let dv = 10.0 * dt / 2.0;
        assert_relative_eq!(w.tools[0].velocity.x, dv, epsilon = 1e-12);
    }

    #[test]
    fn locked_axes_never_move() {
        let dt = 1e-3;
        let mut w = SimWorld::new(SolverConfig::with_timestep(dt, 20));
        let mut tool = RigidTool::new(
            0,
            ToolShape::Plane { normal: Vec3::z() },
            Vec3::new(1.0, 2.0, 3.0),
            2.0,
            MaterialId(0),
        );
        tool.axes[2] = AxisMode::Force(-50.0);
        tool.velocity = Vec3::new(9.0, 9.0, 0.0); // locked axes ignore preset velocity
        w.add_tool(tool);
        for _ in 0..5 {
            step(&mut w).unwrap();
        }
        assert_eq!(w.tools[0].position.x, 1.0);
        assert_eq!(w.tools[0].position.y, 2.0);
        assert!(w.tools[0].position.z < 3.0);
    }

    #[test]
    fn frictionless_contact_emits_zero_tangential_multiplier() {
        let dt = 1e-4;
        let mut w = floor_world(dt);
        w.materials[0].friction = 0.0;
        w.add_particle(Vec3::new(0.0, 0.0, 0.00424), 0.0085, 0, MaterialId(0));
        w.particles[0].velocity.x = 0.5;
        let candidates = broadphase(&w);
        let (contacts, _) = narrowphase(&w, &candidates, &w.contact_cache);
        let mut bodies = Bodies::gather(&w);
        bodies.apply_external_forces(&w, dt);
        let mut assembled = assemble(&w, &contacts, &bodies);
        pgs_solve(&mut bodies, &mut assembled, 50, None, dt).unwrap();
        assert_eq!(assembled.contacts[0].lambda_t, [0.0; 2]);
        assert!(assembled.contacts[0].lambda_n > 0.0);
    }

    #[test]
    fn warm_start_preserves_converged_fixed_point() {
        // settled single contact: solving again from cache or from zero
        // must land on the same multipliers
        let dt = 1e-4;
        let mut w = floor_world(dt);
        w.materials[0] = unit_material();
        w.add_particle(Vec3::new(0.0, 0.0, 0.5 - 1e-7), 1.0, 0, MaterialId(0));
        for _ in 0..100 {
            step(&mut w).unwrap();
        }
        let candidates = broadphase(&w);
        let (contacts, _) = narrowphase(&w, &candidates, &w.contact_cache);
        assert_eq!(contacts.len(), 1);
        let solve = |warm: bool| -> f64 {
            let mut contacts = contacts.clone();
            if !warm {
                for c in &mut contacts {
                    c.warm_normal = 0.0;
                    c.warm_tangent = [0.0; 2];
                    c.warm_rolling = [0.0; 3];
                }
            }
            let mut bodies = Bodies::gather(&w);
            bodies.apply_external_forces(&w, dt);
            let mut assembled = assemble(&w, &contacts, &bodies);
            apply_warm_start(&mut bodies, &assembled);
            pgs_solve(&mut bodies, &mut assembled, 2000, None, dt).unwrap();
            assembled.contacts[0].lambda_n
        };
        let with_warm = solve(true);
        let without = solve(false);
        assert!((with_warm - without).abs() < 1e-6 * with_warm.max(1.0));
    }

    #[test]
    fn more_sweeps_never_increase_residual() {
        let dt = 1e-4;
        let mut w = floor_world(dt);
        let mut rng_z = 0.0042;
        for i in 0..6 {
            w.add_particle(
                Vec3::new(0.002 * i as f64, 0.0005 * i as f64, rng_z),
                0.0085,
                0,
                MaterialId(0),
            );
            rng_z += 0.008;
        }
        let candidates = broadphase(&w);
        let (contacts, _) = narrowphase(&w, &candidates, &w.contact_cache);
        let mut prev = f64::INFINITY;
        for sweeps in [2u32, 4, 8, 16, 32, 64] {
            let mut bodies = Bodies::gather(&w);
            bodies.apply_external_forces(&w, dt);
            let mut assembled = assemble(&w, &contacts, &bodies);
            let stats = pgs_solve(&mut bodies, &mut assembled, sweeps, None, dt).unwrap();
            assert!(
                stats.residual_max <= prev * (1.0 + 1e-9),
                "residual increased: {} -> {}",
                prev,
                stats.residual_max
            );
            prev = stats.residual_max;
        }
    }

    #[test]
    fn cone_conditions_hold_after_solve() {
        let dt = 1e-4;
        let mut w = floor_world(dt);
        // sliding cluster on the floor with friction
        for i in 0..4 {
            let mut id_pos = Vec3::new(0.006 * i as f64, 0.0, 0.00424);
            if i % 2 == 1 {
                id_pos.z += 0.0078;
            }
            let id = w.add_particle(id_pos, 0.0085, 0, MaterialId(0));
            w.particles[id as usize].velocity = Vec3::new(0.3, -0.1, 0.0);
        }
        w.walls[0].friction = (0.3, 0.02);
        let candidates = broadphase(&w);
        let (contacts, _) = narrowphase(&w, &candidates, &w.contact_cache);
        let mut bodies = Bodies::gather(&w);
        bodies.apply_external_forces(&w, dt);
        let mut assembled = assemble(&w, &contacts, &bodies);
        pgs_solve(&mut bodies, &mut assembled, 200, None, dt).unwrap();
        for b in &assembled.contacts {
            assert!(b.lambda_n >= 0.0);
            let lt = (b.lambda_t[0].powi(2) + b.lambda_t[1].powi(2)).sqrt();
            assert!(lt <= b.mu_t * b.lambda_n + 1e-9);
            let lr = (b.lambda_r[0].powi(2) + b.lambda_r[1].powi(2) + b.lambda_r[2].powi(2)).sqrt();
            assert!(lr <= b.roll_bound * b.lambda_n + 1e-9);
        }
    }

    #[test]
    fn single_contact_matches_closed_form_lcp() {
        // one normal row: λ* = max(0, rhs−ṡ₀)/(GM⁻¹Gᵀ+Σ); PGS must land on it
        // in one sweep.
        let dt = 1e-4;
        let mut w = floor_world(dt);
        w.materials[0].friction = 0.0;
        w.add_particle(Vec3::new(0.0, 0.0, 0.00425 - 5e-8), 0.0085, 0, MaterialId(0));
        w.particles[0].velocity.z = -0.001;
        let candidates = broadphase(&w);
        let (contacts, _) = narrowphase(&w, &candidates, &w.contact_cache);
        let mut bodies = Bodies::gather(&w);
        bodies.apply_external_forces(&w, dt);
        let c = &contacts[0];
        let (m, _) = w.particles[0].mass_inertia(&w.materials[0]);
        let tau = w.config.damping_time();
        let denom = 1.0 + 4.0 * tau / dt;
        let sigma = 4.0 * c.params.compliance / (dt * dt * denom);
        let rhs = 4.0 * c.overlap.powf(1.25) / (dt * denom);
        let s0 = -c.normal.dot(&bodies.vel[0]); // wall is static
        let expected = ((rhs - s0) / (1.0 / m + sigma)).max(0.0);
        let mut assembled = assemble(&w, &contacts, &bodies);
        pgs_solve(&mut bodies, &mut assembled, 1, None, dt).unwrap();
        assert_relative_eq!(assembled.contacts[0].lambda_n, expected, max_relative = 1e-10);
    }

    #[test]
    fn step_is_atomic_on_divergence() {
        let dt = 1e-4;
        let mut w = floor_world(dt);
        w.add_particle(Vec3::new(0.0, 0.0, 0.004), 0.0085, 0, MaterialId(0));
        w.config.timestep = f64::NAN;
        let before = w.particles[0].clone();
        assert!(step(&mut w).is_err());
        assert_eq!(w.particles[0], before);
    }
}
