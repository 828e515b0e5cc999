//! Small vector helpers shared across the crate. Strict SI units throughout.

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Quat = nalgebra::UnitQuaternion<f64>;

pub const GRAVITY: f64 = 9.81;

/// Build an orthonormal tangent basis (t1, t2) for a unit normal.
///
/// Deterministic: picks the world axis least aligned with `n` as the seed.
pub fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    let seed = if n.x.abs() <= n.y.abs() && n.x.abs() <= n.z.abs() {
        Vec3::x()
    } else if n.y.abs() <= n.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let t1 = (seed - n * seed.dot(n)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Project `prev_t1` into the plane orthogonal to `n`, falling back to a
/// fresh basis when the projection is degenerate. Keeps tangent directions
/// (and therefore cached tangential multipliers) continuous across steps.
pub fn continued_basis(n: &Vec3, prev_t1: &Vec3) -> (Vec3, Vec3) {
    let proj = prev_t1 - n * prev_t1.dot(n);
    let len = proj.norm();
    if len > 1e-9 {
        let t1 = proj / len;
        (t1, n.cross(&t1))
    } else {
        orthonormal_basis(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn basis_is_orthonormal() {
        for n in [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(1.0, -2.0, 3.0).normalize(),
            Vec3::new(-0.3, 0.1, 0.05).normalize(),
        ] {
            let (t1, t2) = orthonormal_basis(&n);
            assert_relative_eq!(t1.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(t2.norm(), 1.0, epsilon = 1e-12);
            assert!(t1.dot(&n).abs() < 1e-12);
            assert!(t2.dot(&n).abs() < 1e-12);
            assert!(t1.dot(&t2).abs() < 1e-12);
        }
    }

    #[test]
    fn continued_basis_tracks_previous_tangent() {
        let n = Vec3::new(0.0, 0.0, 1.0);
        let prev = Vec3::new(0.8, 0.6, 0.0);
        let (t1, _) = continued_basis(&n, &prev);
        assert_relative_eq!(t1.dot(&prev.normalize()), 1.0, epsilon = 1e-12);

        // normal tilted slightly: projected tangent stays close to previous
        let n2 = Vec3::new(0.01, 0.0, 1.0).normalize();
        let (t1b, t2b) = continued_basis(&n2, &prev);
        assert!(t1b.dot(&prev.normalize()) > 0.99);
        assert!(t1b.dot(&n2).abs() < 1e-12);
        assert!(t2b.dot(&n2).abs() < 1e-12);
    }
}
