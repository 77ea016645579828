use nalgebra::Vector3;

use super::kinematics::Kinematics;
use crate::model::RobotModel;

/// A capsule placed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldCapsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl WorldCapsule {
    /// The capsule attached to `link`, if it has one.
    pub fn of_link(model: &RobotModel, kin: &Kinematics, link: usize) -> Option<Self> {
        model.links[link].capsule.as_ref().map(|c| WorldCapsule {
            a: kin.point(link, &c.a),
            b: kin.point(link, &c.b),
            radius: c.radius,
        })
    }
}

/// Minimum distance between the two capsule axes. The surfaces are
/// separated iff this exceeds the sum of the radii.
pub fn capsule_distance(c1: &WorldCapsule, c2: &WorldCapsule) -> f64 {
    segment_distance(&c1.a, &c1.b, &c2.a, &c2.b)
}

/// Closest distance between segments `p1-q1` and `p2-q2`.
pub fn segment_distance(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> f64 {
    let (s, t) = closest_parameters(p1, q1, p2, q2);
    let c1 = p1 + (q1 - p1) * s;
    let c2 = p2 + (q2 - p2) * t;
    (c1 - c2).norm()
}

/// Parameters `(s, t)` in `[0, 1]^2` of the closest points.
pub fn closest_parameters(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (f64, f64) {
    const EPS: f64 = 1e-14;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);

    if a <= EPS && e <= EPS {
        return (0.0, 0.0);
    }
    if a <= EPS {
        return (0.0, (f / e).clamp(0.0, 1.0));
    }
    let c = d1.dot(&r);
    if e <= EPS {
        return ((-c / a).clamp(0.0, 1.0), 0.0);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > EPS * a * e {
        ((b * f - c * e) / denom).clamp(0.0, 1.0)
    } else {
        // Parallel: any s works, pick the start.
        0.0
    };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (s, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cap(a: [f64; 3], b: [f64; 3]) -> WorldCapsule {
        WorldCapsule {
            a: Vector3::from(a),
            b: Vector3::from(b),
            radius: 0.05,
        }
    }

    #[test]
    fn parallel_offset() {
        let d = capsule_distance(&cap([0., 0., 0.], [1., 0., 0.]), &cap([0., 0.3, 0.], [1., 0.3, 0.]));
        assert!((d - 0.3).abs() < 1e-15);
    }

    #[test]
    fn identical_segments() {
        let c = cap([0.1, 0.2, 0.3], [0.4, -0.2, 0.9]);
        assert_eq!(capsule_distance(&c, &c), 0.0);
    }

    #[test]
    fn crossing_segments() {
        let d = capsule_distance(&cap([-1., 0., 0.], [1., 0., 0.]), &cap([0., -1., 0.5], [0., 1., 0.5]));
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn endpoint_to_interior() {
        // Second segment ends short of the first's line.
        let d = capsule_distance(&cap([0., 0., 0.], [0., 0., 1.]), &cap([2., 0., 0.5], [3., 0., 0.5]));
        assert!((d - 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_points() {
        let d = capsule_distance(&cap([0., 0., 0.], [0., 0., 0.]), &cap([0., 3., 4.], [0., 3., 4.]));
        assert!((d - 5.0).abs() < 1e-15);
    }
}
