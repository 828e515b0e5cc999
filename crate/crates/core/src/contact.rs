//! Collision detection: uniform spatial-hash broadphase over the particles
//! plus sphere-sphere, sphere-plane and sphere-box narrowphase. Contacts keep
//! a stable pair key so multipliers from the previous step warm-start the
//! solver, and tangent bases are continued frame to frame.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::math::{continued_basis, Vec3};
use crate::model::{
    effective_contact_params, ContactParams, RollingRadiusRule, SimWorld, ToolShape,
};

/// Stable identity of a contact across steps. Particle entries use particle
/// ids (not indices), so the key survives deletions elsewhere in the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey(u64, u64);

const TAG_PARTICLE: u64 = 0;
const TAG_TOOL: u64 = 1 << 60;
const TAG_WALL: u64 = 2 << 60;

impl PairKey {
    pub fn particle_particle(id_a: u64, id_b: u64) -> Self {
        let (lo, hi) = if id_a <= id_b { (id_a, id_b) } else { (id_b, id_a) };
        PairKey(TAG_PARTICLE | lo, TAG_PARTICLE | hi)
    }

    pub fn particle_tool(id: u64, tool: u32, part: u32) -> Self {
        PairKey(TAG_PARTICLE | id, TAG_TOOL | ((tool as u64) << 32) | part as u64)
    }

    pub fn particle_wall(id: u64, wall: u32) -> Self {
        PairKey(TAG_PARTICLE | id, TAG_WALL | wall as u64)
    }
}

/// The body a particle is in contact with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactPartner {
    /// Index into `world.particles`.
    Particle(u32),
    /// Tool index and box-part index (0 for planes).
    Tool { tool: u32, part: u32 },
    Wall(u32),
}

/// A detected overlap with everything the solver needs.
#[derive(Debug, Clone)]
pub struct Contact {
    pub key: PairKey,
    /// Index of the first particle in `world.particles`.
    pub a: u32,
    pub b: ContactPartner,
    /// Unit normal pointing from body a toward body b.
    pub normal: Vec3,
    /// Overlap δ ≥ 0 (m).
    pub overlap: f64,
    pub point: Vec3,
    /// Orthonormal tangent basis, continued from the previous step.
    pub t1: Vec3,
    pub t2: Vec3,
    pub params: ContactParams,
    /// Diameter feeding the rolling bound μ_r·(d/2)·λ_n.
    pub rolling_diameter: f64,
    /// Pair friction and rolling-resistance coefficients.
    pub mu_t: f64,
    pub mu_r: f64,
    /// Pair restitution for the impact pass.
    pub restitution: f64,
    /// Cached multipliers from the previous step (impulse units).
    pub warm_normal: f64,
    pub warm_tangent: [f64; 2],
    pub warm_rolling: [f64; 3],
    /// Coincident centers: normal undefined, solver skips the contact.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CacheEntry {
    pub normal: f64,
    pub tangent: [f64; 2],
    pub rolling: [f64; 3],
    pub t1: Vec3,
}

/// Warm-start store: multipliers of the previous step keyed by pair.
#[derive(Debug, Clone, Default)]
pub struct ContactCache {
    pub(crate) map: HashMap<PairKey, CacheEntry>,
}

impl ContactCache {
    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Candidate pair from the broadphase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidatePair {
    Particles(u32, u32),
    ParticleTool { particle: u32, tool: u32 },
    ParticleWall { particle: u32, wall: u32 },
}

#[inline]
fn cell_of(p: &Vec3, inv_cell: f64) -> (i32, i32, i32) {
    (
        (p.x * inv_cell).floor() as i32,
        (p.y * inv_cell).floor() as i32,
        (p.z * inv_cell).floor() as i32,
    )
}

/// Uniform spatial-hash broadphase. Cell edge tracks the largest particle in
/// the world, so any overlapping pair shares a cell or sits in adjacent
/// cells. Emits exactly the overlapping particle pairs (center distance <
/// sum of radii), plus particle-tool and particle-wall candidates by AABB and
/// plane distance. Output is sorted by pair key.
pub fn broadphase(world: &SimWorld) -> Vec<CandidatePair> {
    let mut out = Vec::new();
    let n = world.particles.len();
    if n > 0 {
        let cell = world.max_diameter();
        let inv_cell = 1.0 / cell;
        let mut grid: HashMap<(i32, i32, i32), Vec<u32>> = HashMap::with_capacity(n);
        for (i, p) in world.particles.iter().enumerate() {
            grid.entry(cell_of(&p.position, inv_cell)).or_default().push(i as u32);
        }
        let mut keys: Vec<_> = grid.keys().copied().collect();
        keys.sort_unstable();

        // own cell plus the 13 forward neighbors covers each cell pair once
        const NEIGHBORS: [(i32, i32, i32); 13] = [
            (1, 0, 0),
            (-1, 1, 0),
            (0, 1, 0),
            (1, 1, 0),
            (-1, -1, 1),
            (0, -1, 1),
            (1, -1, 1),
            (-1, 0, 1),
            (0, 0, 1),
            (1, 0, 1),
            (-1, 1, 1),
            (0, 1, 1),
            (1, 1, 1),
        ];
        let mut pp: Vec<(u32, u32)> = Vec::new();
        for key in &keys {
            let list = &grid[key];
            for (ii, &i) in list.iter().enumerate() {
                let pi = &world.particles[i as usize];
                for &j in &list[ii + 1..] {
                    let pj = &world.particles[j as usize];
                    let r = 0.5 * (pi.diameter + pj.diameter);
                    if (pj.position - pi.position).norm_squared() < r * r {
                        pp.push((i.min(j), i.max(j)));
                    }
                }
                for d in NEIGHBORS {
                    let nk = (key.0 + d.0, key.1 + d.1, key.2 + d.2);
                    if let Some(other) = grid.get(&nk) {
                        for &j in other {
                            let pj = &world.particles[j as usize];
                            let r = 0.5 * (pi.diameter + pj.diameter);
                            if (pj.position - pi.position).norm_squared() < r * r {
                                pp.push((i.min(j), i.max(j)));
                            }
                        }
                    }
                }
            }
        }
        pp.sort_unstable();
        pp.dedup();
        out.extend(pp.into_iter().map(|(a, b)| CandidatePair::Particles(a, b)));
    }

    for (ti, tool) in world.tools.iter().enumerate() {
        let (lo, hi) = tool.aabb();
        for (pi, p) in world.particles.iter().enumerate() {
            let r = p.radius();
            let x = &p.position;
            if x.x + r > lo.x
                && x.x - r < hi.x
                && x.y + r > lo.y
                && x.y - r < hi.y
                && x.z + r > lo.z
                && x.z - r < hi.z
            {
                out.push(CandidatePair::ParticleTool { particle: pi as u32, tool: ti as u32 });
            }
        }
    }
    for (wi, wall) in world.walls.iter().enumerate() {
        for (pi, p) in world.particles.iter().enumerate() {
            if wall.distance(&p.position) < p.radius() {
                out.push(CandidatePair::ParticleWall { particle: pi as u32, wall: wi as u32 });
            }
        }
    }
    out
}

/// Closest point on an axis-aligned box (given by center and half extents)
/// to `p`, together with the outward normal at that point. Points inside the
/// box map to the nearest face.
pub fn closest_point_on_box(center: &Vec3, half: &Vec3, p: &Vec3) -> (Vec3, Vec3) {
    let local = p - center;
    let clamped = Vec3::new(
        local.x.clamp(-half.x, half.x),
        local.y.clamp(-half.y, half.y),
        local.z.clamp(-half.z, half.z),
    );
    if clamped != local {
        let diff = local - clamped;
        return (center + clamped, diff.normalize());
    }
    // interior: push out through the nearest face
    let dists = [
        (half.x - local.x.abs(), Vec3::new(local.x.signum(), 0.0, 0.0), 0),
        (half.y - local.y.abs(), Vec3::new(0.0, local.y.signum(), 0.0), 1),
        (half.z - local.z.abs(), Vec3::new(0.0, 0.0, local.z.signum()), 2),
    ];
    let &(_, axis_normal, axis) = dists
        .iter()
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.2.cmp(&b.2)))
        .unwrap();
    let mut surface = clamped;
    surface[axis] = half[axis] * local[axis].signum();
    (center + surface, axis_normal)
}

fn pair_friction(mu_a: (f64, f64), mu_b: (f64, f64)) -> (f64, f64) {
    (mu_a.0.min(mu_b.0), mu_a.1.min(mu_b.1))
}

/// Narrowphase: turn candidates into contacts with gap, normal, continued
/// tangent basis, effective material parameters and warm-start multipliers.
/// Returns the contacts sorted by pair key plus the degenerate count.
pub fn narrowphase(
    world: &SimWorld,
    candidates: &[CandidatePair],
    cache: &ContactCache,
) -> (Vec<Contact>, u32) {
    let mut contacts = Vec::with_capacity(candidates.len());
    let mut degenerate = 0u32;
    let e_h = world.config.hertz_exponent;
    let rolling_rule = world.config.rolling_radius_rule;

    let push = |key: PairKey,
                    a: u32,
                    b: ContactPartner,
                    normal: Vec3,
                    overlap: f64,
                    point: Vec3,
                    params: ContactParams,
                    rolling_diameter: f64,
                    mu: (f64, f64),
                    restitution: f64,
                    contacts: &mut Vec<Contact>| {
        let (warm, t_basis) = match cache.map.get(&key) {
            Some(entry) => (
                (entry.normal, entry.tangent, entry.rolling),
                continued_basis(&normal, &entry.t1),
            ),
            None => ((0.0, [0.0; 2], [0.0; 3]), crate::math::orthonormal_basis(&normal)),
        };
        contacts.push(Contact {
            key,
            a,
            b,
            normal,
            overlap,
            point,
            t1: t_basis.0,
            t2: t_basis.1,
            params,
            rolling_diameter,
            mu_t: mu.0,
            mu_r: mu.1,
            restitution,
            warm_normal: warm.0,
            warm_tangent: warm.1,
            warm_rolling: warm.2,
            degenerate: false,
        });
    };

    for cand in candidates {
        match *cand {
            CandidatePair::Particles(ia, ib) => {
                let pa = &world.particles[ia as usize];
                let pb = &world.particles[ib as usize];
                let delta = pb.position - pa.position;
                let dist = delta.norm();
                let overlap = pa.radius() + pb.radius() - dist;
                if overlap <= 0.0 {
                    continue;
                }
                let key = PairKey::particle_particle(pa.id, pb.id);
                if dist < 1e-12 {
                    degenerate += 1;
                    contacts.push(Contact {
                        key,
                        a: ia,
                        b: ContactPartner::Particle(ib),
                        normal: Vec3::z(),
                        overlap,
                        point: pa.position,
                        t1: Vec3::x(),
                        t2: Vec3::y(),
                        params: effective_contact_params(
                            pa.diameter,
                            world.material(pa.material),
                            Some(pb.diameter),
                            world.material(pb.material),
                            e_h,
                        ),
                        rolling_diameter: pa.diameter.min(pb.diameter),
                        mu_t: 0.0,
                        mu_r: 0.0,
                        restitution: 0.0,
                        warm_normal: 0.0,
                        warm_tangent: [0.0; 2],
                        warm_rolling: [0.0; 3],
                        degenerate: true,
                    });
                    continue;
                }
                let normal = delta / dist;
                let mat_a = world.material(pa.material);
                let mat_b = world.material(pb.material);
                let params =
                    effective_contact_params(pa.diameter, mat_a, Some(pb.diameter), mat_b, e_h);
                let rolling_diameter = match rolling_rule {
                    RollingRadiusRule::Effective => params.d_star,
                    RollingRadiusRule::Min => pa.diameter.min(pb.diameter),
                    RollingRadiusRule::Mean => 0.5 * (pa.diameter + pb.diameter),
                };
                let point = pa.position + normal * (pa.radius() - 0.5 * overlap);
                let mu = pair_friction(
                    (mat_a.friction, mat_a.rolling_resistance),
                    (mat_b.friction, mat_b.rolling_resistance),
                );
                let restitution = mat_a.restitution.max(mat_b.restitution);
                push(
                    key,
                    ia,
                    ContactPartner::Particle(ib),
                    normal,
                    overlap,
                    point,
                    params,
                    rolling_diameter,
                    mu,
                    restitution,
                    &mut contacts,
                );
            }
            CandidatePair::ParticleTool { particle, tool } => {
                let p = &world.particles[particle as usize];
                let t = &world.tools[tool as usize];
                let mat_a = world.material(p.material);
                let mat_b = world.material(t.material);
                let mu = match t.friction_override {
                    Some(ov) => ov,
                    None => pair_friction(
                        (mat_a.friction, mat_a.rolling_resistance),
                        (mat_b.friction, mat_b.rolling_resistance),
                    ),
                };
                let restitution = mat_a.restitution.max(mat_b.restitution);
                let params = effective_contact_params(p.diameter, mat_a, None, mat_b, e_h);
                let rolling_diameter = p.diameter;
                match &t.shape {
                    ToolShape::Plane { normal: plane_n } => {
                        let dist = plane_n.dot(&(p.position - t.position));
                        let overlap = p.radius() - dist;
                        if overlap <= 0.0 {
                            continue;
                        }
                        // normal points from the particle toward the tool
                        let normal = -plane_n;
                        let point = p.position - plane_n * dist;
                        push(
                            PairKey::particle_tool(p.id, tool, 0),
                            particle,
                            ContactPartner::Tool { tool, part: 0 },
                            normal,
                            overlap,
                            point,
                            params,
                            rolling_diameter,
                            mu,
                            restitution,
                            &mut contacts,
                        );
                    }
                    ToolShape::Boxes(parts) => {
                        for (part_idx, part) in parts.iter().enumerate() {
                            let center = t.position + part.offset;
                            let (surface, outward) =
                                closest_point_on_box(&center, &part.half_extents, &p.position);
                            let to_center = p.position - surface;
                            let inside = to_center.dot(&outward) < 0.0;
                            let dist = to_center.norm() * if inside { -1.0 } else { 1.0 };
                            let overlap = p.radius() - dist;
                            if overlap <= 0.0 {
                                continue;
                            }
                            let normal = -outward;
                            push(
                                PairKey::particle_tool(p.id, tool, part_idx as u32),
                                particle,
                                ContactPartner::Tool { tool, part: part_idx as u32 },
                                normal,
                                overlap,
                                surface,
                                params,
                                rolling_diameter,
                                mu,
                                restitution,
                                &mut contacts,
                            );
                        }
                    }
                }
            }
            CandidatePair::ParticleWall { particle, wall } => {
                let p = &world.particles[particle as usize];
                let w = &world.walls[wall as usize];
                let dist = w.distance(&p.position);
                let overlap = p.radius() - dist;
                if overlap <= 0.0 {
                    continue;
                }
                let mat_a = world.material(p.material);
                let mat_b = world.material(w.material);
                let params = effective_contact_params(p.diameter, mat_a, None, mat_b, e_h);
                push(
                    PairKey::particle_wall(p.id, wall),
                    particle,
                    ContactPartner::Wall(wall),
                    -w.normal,
                    overlap,
                    p.position - w.normal * dist,
                    params,
                    p.diameter,
                    w.friction,
                    mat_a.restitution,
                    &mut contacts,
                );
            }
        }
    }
    contacts.sort_by_key(|c| c.key);
    (contacts, degenerate)
}

/// Store this step's multipliers for the next step's warm start. Pairs that
/// vanished are dropped.
pub(crate) fn refresh_cache(cache: &mut ContactCache, contacts: &[Contact]) {
    cache.map.clear();
    for c in contacts {
        if c.degenerate {
            continue;
        }
        cache.map.insert(
            c.key,
            CacheEntry {
                normal: c.warm_normal,
                tangent: c.warm_tangent,
                rolling: c.warm_rolling,
                t1: c.t1,
            },
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SimWorld, SolverConfig, Wall};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn world_with(positions: &[(Vec3, f64)]) -> SimWorld {
        let mut w = SimWorld::new(SolverConfig::default());
        for &(pos, d) in positions {
            w.add_particle(pos, d, 0, crate::model::MaterialId(0));
        }
        w
    }

    #[test]
    fn empty_world_no_pairs() {
        let w = SimWorld::new(SolverConfig::default());
        assert!(broadphase(&w).is_empty());
    }

    #[test]
    fn touching_pair_detected() {
        let w = world_with(&[
            (Vec3::zeros(), 0.01),
            (Vec3::new(0.009, 0.0, 0.0), 0.01),
        ]);
        let pairs = broadphase(&w);
        assert_eq!(pairs, vec![CandidatePair::Particles(0, 1)]);
        let (contacts, _) = narrowphase(&w, &pairs, &ContactCache::default());
        assert_eq!(contacts.len(), 1);
        assert_relative_eq!(contacts[0].overlap, 0.001, epsilon = 1e-12);
        assert_relative_eq!(contacts[0].normal.x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn broadphase_matches_all_pairs_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let n = 200 + trial * 100;
            let mut spheres = Vec::new();
            for _ in 0..n {
                let pos = Vec3::new(
                    rng.gen_range(0.0..0.3),
                    rng.gen_range(0.0..0.3),
                    rng.gen_range(0.0..0.3),
                );
                let d = rng.gen_range(0.008..0.030);
                spheres.push((pos, d));
            }
            let w = world_with(&spheres);
            let pairs: Vec<(u32, u32)> = broadphase(&w)
                .into_iter()
                .map(|c| match c {
                    CandidatePair::Particles(a, b) => (a, b),
                    _ => unreachable!(),
                })
                .collect();
            let mut oracle = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    let r = 0.5 * (spheres[i].1 + spheres[j].1);
                    if (spheres[j].0 - spheres[i].0).norm_squared() < r * r {
                        oracle.push((i as u32, j as u32));
                    }
                }
            }
            assert_eq!(pairs, oracle, "trial {trial}");
        }
    }

    #[test]
    fn sphere_against_plane_wall() {
        let mut w = world_with(&[(Vec3::new(0.0, 0.0, 0.004), 0.01)]);
        w.walls.push(Wall::new(Vec3::z(), Vec3::zeros(), crate::model::MaterialId(0)));
        let pairs = broadphase(&w);
        let (contacts, _) = narrowphase(&w, &pairs, &ContactCache::default());
        assert_eq!(contacts.len(), 1);
        assert_relative_eq!(contacts[0].overlap, 0.001, epsilon = 1e-12);
        assert_relative_eq!(contacts[0].normal.z, -1.0, epsilon = 1e-12);
        assert_relative_eq!(contacts[0].point.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sphere_box_corner_against_sampling_oracle() {
        // sphere near a box corner: validate closest point against dense
        // sampling of the box surface
        let center = Vec3::new(0.0, 0.0, 0.0);
        let half = Vec3::new(0.02, 0.01, 0.015);
        let p = Vec3::new(0.027, 0.016, 0.022);
        let (surface, _) = closest_point_on_box(&center, &half, &p);

        let mut best = f64::MAX;
        let steps = 400;
        for face in 0..6 {
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let (u, v) = match axis {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for i in 0..=steps {
                for j in 0..=steps {
                    let mut q = Vec3::zeros();
                    q[axis] = sign * half[axis];
                    q[u] = -half[u] + 2.0 * half[u] * i as f64 / steps as f64;
                    q[v] = -half[v] + 2.0 * half[v] * j as f64 / steps as f64;
                    best = best.min((center + q - p).norm());
                }
            }
        }
        assert_relative_eq!((surface - p).norm(), best, max_relative = 1e-2);
        // the true closest point is the corner itself here
        assert_relative_eq!(surface.x, half.x, epsilon = 1e-12);
        assert_relative_eq!(surface.y, half.y, epsilon = 1e-12);
        assert_relative_eq!(surface.z, half.z, epsilon = 1e-12);
    }

    #[test]
    fn interior_point_maps_to_nearest_face() {
        let center = Vec3::zeros();
        let half = Vec3::new(0.05, 0.05, 0.01);
        let p = Vec3::new(0.0, 0.0, 0.002);
        let (surface, outward) = closest_point_on_box(&center, &half, &p);
        assert_relative_eq!(surface.z, 0.01, epsilon = 1e-12);
        assert_relative_eq!(outward.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_coincident_centers_flagged() {
        let w = world_with(&[(Vec3::zeros(), 0.01), (Vec3::zeros(), 0.01)]);
        let pairs = broadphase(&w);
        let (contacts, degenerate) = narrowphase(&w, &pairs, &ContactCache::default());
        assert_eq!(degenerate, 1);
        assert!(contacts[0].degenerate);
    }

    #[test]
    fn cache_preserves_multipliers_across_steps() {
        let w = world_with(&[
            (Vec3::zeros(), 0.01),
            (Vec3::new(0.009, 0.0, 0.0), 0.01),
        ]);
        let pairs = broadphase(&w);
        let mut cache = ContactCache::default();
        let (mut contacts, _) = narrowphase(&w, &pairs, &cache);
        contacts[0].warm_normal = 3.5;
        contacts[0].warm_tangent = [0.1, -0.2];
        refresh_cache(&mut cache, &contacts);
        let (contacts2, _) = narrowphase(&w, &pairs, &cache);
        assert_eq!(contacts2[0].warm_normal, 3.5);
        assert_eq!(contacts2[0].warm_tangent, [0.1, -0.2]);
    }

    #[test]
    fn pair_key_ordering_is_canonical() {
        assert_eq!(PairKey::particle_particle(5, 9), PairKey::particle_particle(9, 5));
        assert_ne!(PairKey::particle_tool(5, 0, 0), PairKey::particle_tool(5, 0, 1));
        assert_ne!(PairKey::particle_wall(5, 0), PairKey::particle_tool(5, 0, 0));
    }
}
