//! Rigid-body poses and axis-aligned boxes.
//!
//! Poses are stored as position plus roll/pitch/yaw (meters and radians) and
//! converted to `nalgebra` isometries for composition.

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// A pose in the robot frame: `[x, y, z, roll, pitch, yaw]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct Pose {
    pub position: [f64; 3],
    pub rpy: [f64; 3],
}

impl From<[f64; 6]> for Pose {
    fn from(v: [f64; 6]) -> Self {
        Pose { position: [v[0], v[1], v[2]], rpy: [v[3], v[4], v[5]] }
    }
}

impl From<Pose> for [f64; 6] {
    fn from(p: Pose) -> Self {
        p.to_array()
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { position: [0.0; 3], rpy: [0.0; 3] };

    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Pose { position: [x, y, z], rpy: [roll, pitch, yaw] }
    }

    pub fn from_position(position: [f64; 3]) -> Self {
        Pose { position, rpy: [0.0; 3] }
    }

    pub fn to_array(self) -> [f64; 6] {
        let [x, y, z] = self.position;
        let [r, p, w] = self.rpy;
        [x, y, z, r, p, w]
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2])
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [x, y, z] = self.position;
        Isometry3::from_parts(Translation3::new(x, y, z), self.rotation())
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        let (r, p, y) = iso.rotation.euler_angles();
        Pose { position: [t.x, t.y, t.z], rpy: [r, p, y] }
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    pub fn inverse(&self) -> Pose {
        Pose::from_isometry(&self.to_isometry().inverse())
    }

    /// Component-wise closeness over all six coordinates.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.to_array().iter().zip(other.to_array()).all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn position_approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.position.iter().zip(other.position).all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn translated(&self, delta: [f64; 3]) -> Pose {
        Pose {
            position: [self.position[0] + delta[0], self.position[1] + delta[1], self.position[2] + delta[2]],
            rpy: self.rpy,
        }
    }

    /// Angle between the body z-axis and world up.
    pub fn tilt(&self) -> f64 {
        let up = self.rotation() * Vector3::z();
        up.z.clamp(-1.0, 1.0).acos()
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        let d: f64 = self.position.iter().zip(other.position).map(|(a, b)| (a - b).powi(2)).sum();
        d.sqrt()
    }
}

/// Rotation of `pose` by `angle` about the line through `pivot` along `axis`.
pub fn rotate_about(pose: &Pose, pivot: [f64; 3], axis: [f64; 3], angle: f64) -> Pose {
    if angle == 0.0 {
        return *pose;
    }
    let axis = Unit::new_normalize(Vector3::from(axis));
    let rot = UnitQuaternion::from_axis_angle(&axis, angle);
    let pivot = Vector3::from(pivot);
    let about = Isometry3::from_parts(Translation3::from(pivot), rot)
        * Isometry3::from_parts(Translation3::from(-pivot), UnitQuaternion::identity());
    Pose::from_isometry(&(about * pose.to_isometry()))
}

/// Translation of `pose` by `distance` along unit `axis`.
pub fn slide_along(pose: &Pose, axis: [f64; 3], distance: f64) -> Pose {
    if distance == 0.0 {
        return *pose;
    }
    let axis = Vector3::from(axis).normalize() * distance;
    pose.translated([axis.x, axis.y, axis.z])
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// World-frame box enclosing a body of full extents `dims` at `pose`.
    pub fn of_body(pose: &Pose, dims: [f64; 3]) -> Aabb {
        if pose.rpy == [0.0; 3] {
            let mut min = [0.0; 3];
            let mut max = [0.0; 3];
            for i in 0..3 {
                min[i] = pose.position[i] - dims[i] / 2.0;
                max[i] = pose.position[i] + dims[i] / 2.0;
            }
            return Aabb { min, max };
        }
        let iso = pose.to_isometry();
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for corner in 0..8 {
            let local = nalgebra::Point3::new(
                if corner & 1 == 0 { -dims[0] / 2.0 } else { dims[0] / 2.0 },
                if corner & 2 == 0 { -dims[1] / 2.0 } else { dims[1] / 2.0 },
                if corner & 4 == 0 { -dims[2] / 2.0 } else { dims[2] / 2.0 },
            );
            let p = iso * local;
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        Aabb { min, max }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    pub fn contains_xy(&self, p: [f64; 3]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    /// Whether the open segment `a → b` passes through the box interior
    /// (slab test against a box shrunk by `eps`).
    pub fn intersects_segment(&self, a: [f64; 3], b: [f64; 3], eps: f64) -> bool {
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for i in 0..3 {
            let lo = self.min[i] + eps;
            let hi = self.max[i] - eps;
            if lo >= hi {
                return false;
            }
            let d = b[i] - a[i];
            if d == 0.0 {
                if a[i] <= lo || a[i] >= hi {
                    return false;
                }
                continue;
            }
            let (mut ta, mut tb) = ((lo - a[i]) / d, (hi - a[i]) / d);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Pose::new(0.3, -0.2, 0.4, 0.1, -0.2, 0.7);
        let back = p.compose(&p.inverse());
        assert!(back.approx_eq(&Pose::IDENTITY, 1e-12));
    }

    #[test]
    fn quarter_turn_about_vertical_axis() {
        let p = Pose::from_position([1.0, 0.0, 0.0]);
        let r = rotate_about(&p, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        assert!(r.position_approx_eq(&Pose::from_position([0.0, 1.0, 0.0]), 1e-12));
        assert!((r.rpy[2] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn zero_rotation_keeps_pose_bitwise() {
        let p = Pose::new(0.54, -0.07, 0.12, 0.0, 0.0, 0.0);
        assert_eq!(rotate_about(&p, [0.56, 0.1, 0.0], [0.0, 0.0, 1.0], 0.0), p);
    }

    #[test]
    fn segment_box_intersection() {
        let b = Aabb { min: [0.0, 0.0, 0.0], max: [1.0, 1.0, 1.0] };
        assert!(b.intersects_segment([-1.0, 0.5, 0.5], [2.0, 0.5, 0.5], 1e-9));
        assert!(!b.intersects_segment([-1.0, 1.5, 0.5], [2.0, 1.5, 0.5], 1e-9));
        // grazing a face does not count
        assert!(!b.intersects_segment([-1.0, 1.0, 0.5], [2.0, 1.0, 0.5], 1e-9));
        assert!(!b.intersects_segment([-1.0, 0.5, 0.5], [-0.5, 0.5, 0.5], 1e-9));
    }

    #[test]
    fn rotated_box_grows_its_aabb() {
        let p = Pose::new(0.0, 0.0, 0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_4);
        let b = Aabb::of_body(&p, [1.0, 0.0, 0.0]);
        let half = 0.5 * std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.max[0] - half).abs() < 1e-12);
        assert!((b.max[1] - half).abs() < 1e-12);
    }

    #[test]
    fn tilt_of_rolled_pose() {
        let p = Pose::new(0.0, 0.0, 0.0, 1.2, 0.0, 0.0);
        assert!((p.tilt() - 1.2).abs() < 1e-12);
    }
}
