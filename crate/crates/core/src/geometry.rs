//! Rigid-body and projective primitives.
//!
//! Every frame chain in the toolkit is expressed with [`RigidTransform`]:
//! `a.compose(&b)` maps points of frame `b`'s child into frame `a`'s parent,
//! i.e. `T_AC = T_AB.compose(&T_BC)`. Lengths are millimeters, angles radians.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used by [`RigidTransform::is_valid`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a proper rotation (orthonormality residual {residual:e}, det {det})")]
    NotARotation { residual: f64, det: f64 },
    #[error("axis must be a finite nonzero vector")]
    InvalidAxis,
    #[error("homogeneous point has all components zero")]
    ZeroHomogeneous,
}

/// An element of SE(3): `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform without checking the rotation.
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a transform, rejecting matrices that are not proper rotations.
    pub fn try_new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let t = Self::new(rotation, translation);
        let residual = orthonormality_residual(&rotation);
        let det = rotation.determinant();
        if residual < ROTATION_TOLERANCE && (det - 1.0).abs() < ROTATION_TOLERANCE {
            Ok(t)
        } else {
            Err(GeometryError::NotARotation { residual, det })
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(Mat3::identity(), translation)
    }

    pub fn from_rotation(rotation: Mat3) -> Self {
        Self::new(rotation, Vec3::zeros())
    }

    pub fn is_valid(&self) -> bool {
        orthonormality_residual(&self.rotation) < ROTATION_TOLERANCE
            && (self.rotation.determinant() - 1.0).abs() < ROTATION_TOLERANCE
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// `self * other` as homogeneous matrices.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Rotation angle and translation distance between two transforms.
    pub fn distance_to(&self, other: &RigidTransform) -> (f64, f64) {
        (
            rotation_between(&self.rotation, &other.rotation),
            (self.translation - other.translation).norm(),
        )
    }

    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<&RigidTransform> for &RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: &RigidTransform) -> RigidTransform {
        self.compose(rhs)
    }
}

/// JSON form: row-major rotation (9) and translation (3).
#[derive(Serialize, Deserialize)]
struct RigidTransformRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let r = &self.rotation;
        RigidTransformRecord {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = RigidTransformRecord::deserialize(deserializer)?;
        let rotation = Mat3::from_row_slice(&rec.rotation);
        let translation = Vec3::from_column_slice(&rec.translation);
        // JSON round-off is tolerated up to a looser bound; such input is
        // re-projected so the stored value satisfies the strict invariant.
        let residual = orthonormality_residual(&rotation);
        let det = rotation.determinant();
        if residual > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(serde::de::Error::custom(GeometryError::NotARotation {
                residual,
                det,
            }));
        }
        let rotation = if residual <= ROTATION_TOLERANCE && (det - 1.0).abs() <= ROTATION_TOLERANCE {
            rotation
        } else {
            nearest_rotation(&rotation)
        };
        Ok(RigidTransform::new(rotation, translation))
    }
}

/// `‖RᵀR − I‖_F`.
pub fn orthonormality_residual(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

/// Geodesic angle between two rotations, in `[0, π]`.
pub fn rotation_between(a: &Mat3, b: &Mat3) -> f64 {
    let m = a.transpose() * b;
    let c = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Closest proper rotation in the Frobenius sense (polar factor with the
/// determinant sign corrected on the weakest singular direction).
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    // nalgebra sorts singular values in decreasing order
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d));
    u * fix * v_t
}

/// Unit axis and angle in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAngle {
    axis: Vec3,
    angle: f64,
}

impl AxisAngle {
    /// Normalizes `axis`; a negative angle flips the axis so the stored angle
    /// is non-negative. Angles above π are wrapped.
    pub fn new(axis: Vec3, angle: f64) -> Result<Self, GeometryError> {
        let n = axis.norm();
        if !(n.is_finite() && n > 0.0) || !angle.is_finite() {
            return Err(GeometryError::InvalidAxis);
        }
        Ok(Self::from_rotation_vector(&(axis / n * angle)))
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// `axis * angle`.
    pub fn rotation_vector(&self) -> Vec3 {
        self.axis * self.angle
    }

    /// Zero vectors map to the identity with the z axis as placeholder.
    pub fn from_rotation_vector(w: &Vec3) -> Self {
        let theta = w.norm();
        if theta == 0.0 {
            return Self {
                axis: Vec3::z(),
                angle: 0.0,
            };
        }
        let axis = w / theta;
        // wrap into [0, π]
        let two_pi = std::f64::consts::TAU;
        let mut a = theta.rem_euclid(two_pi);
        let mut ax = axis;
        if a > std::f64::consts::PI {
            a = two_pi - a;
            ax = -ax;
        }
        Self { axis: ax, angle: a }
    }

    /// Rodrigues formula.
    pub fn to_rotation(&self) -> Mat3 {
        rotation_from_vector(&self.rotation_vector())
    }

    /// Inverse Rodrigues map. At exactly π the axis sign is not determined by
    /// the matrix; either sign is returned.
    pub fn from_rotation(r: &Mat3) -> Self {
        let w = Vec3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        let sin2 = w.norm(); // 2 sin θ
        let cos2 = r.trace() - 1.0; // 2 cos θ
        let angle = sin2.atan2(cos2);
        if angle < 1e-300 {
            return Self {
                axis: Vec3::z(),
                angle: 0.0,
            };
        }
        if angle < std::f64::consts::PI - 1e-4 {
            return Self {
                axis: w / sin2,
                angle,
            };
        }
        // Near π: recover the axis from the symmetric part R + Rᵀ = 2cosθ I + 2(1−cosθ) aaᵀ.
        let c = angle.cos();
        let b = (r + r.transpose()) * 0.5 - Mat3::identity() * c;
        let k = (0..3)
            .max_by(|&i, &j| b[(i, i)].partial_cmp(&b[(j, j)]).unwrap())
            .unwrap();
        let mut axis: Vec3 = b.column(k).into();
        axis /= axis.norm();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        Self { axis, angle }
    }
}

/// Exponential map from a rotation vector to a rotation matrix.
pub fn rotation_from_vector(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = skew(w);
    let (a, b) = if theta < 1e-8 {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Mat3::identity() + k * a + k * k * b
}

/// Rotation vector (`axis * angle`) of a rotation matrix.
pub fn rotation_vector(r: &Mat3) -> Vec3 {
    AxisAngle::from_rotation(r).rotation_vector()
}

/// Partial derivatives `∂R/∂w_i` of [`rotation_from_vector`] at `w`.
pub fn rotation_vector_jacobian(w: &Vec3) -> [Mat3; 3] {
    let theta2 = w.norm_squared();
    let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
    if theta2 < 1e-20 {
        return basis.map(|e| skew(&e));
    }
    let r = rotation_from_vector(w);
    let wx = skew(w);
    let i_minus_r = Mat3::identity() - r;
    basis.map(|e| {
        let wi = w.dot(&e);
        let v = w.cross(&(i_minus_r * e));
        (wx * wi + skew(&v)) * r / theta2
    })
}

/// A point of the projective plane, `(x, y, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct HomogeneousPoint2(Vec3);

impl HomogeneousPoint2 {
    pub fn new(x: f64, y: f64, w: f64) -> Result<Self, GeometryError> {
        if x == 0.0 && y == 0.0 && w == 0.0 {
            Err(GeometryError::ZeroHomogeneous)
        } else {
            Ok(Self(Vec3::new(x, y, w)))
        }
    }

    /// `(x, y, 1)`.
    pub fn from_cartesian(x: f64, y: f64) -> Self {
        Self(Vec3::new(x, y, 1.0))
    }

    pub fn coords(&self) -> &Vec3 {
        &self.0
    }

    pub fn w(&self) -> f64 {
        self.0.z
    }

    /// `(x/w, y/w)`, `None` at infinity.
    pub fn to_cartesian(&self) -> Option<(f64, f64)> {
        if self.0.z == 0.0 {
            None
        } else {
            Some((self.0.x / self.0.z, self.0.y / self.0.z))
        }
    }
}

impl TryFrom<[f64; 3]> for HomogeneousPoint2 {
    type Error = GeometryError;
    fn try_from(v: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<HomogeneousPoint2> for [f64; 3] {
    fn from(p: HomogeneousPoint2) -> Self {
        [p.0.x, p.0.y, p.0.z]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn arb_rotation() -> impl Strategy<Value = Mat3> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            0.0f64..PI,
        )
            .prop_filter("nonzero axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z, a)| {
                AxisAngle::new(Vec3::new(x, y, z), a).unwrap().to_rotation()
            })
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            arb_rotation(),
            -500.0f64..500.0,
            -500.0f64..500.0,
            -500.0f64..500.0,
        )
            .prop_map(|(r, x, y, z)| RigidTransform::new(r, Vec3::new(x, y, z)))
    }

    fn assert_transform_eq(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        assert!(
            (a.rotation - b.rotation).norm() < tol,
            "rotation {} vs {}",
            a.rotation,
            b.rotation
        );
        assert!((a.translation - b.translation).norm() < tol * 1e3);
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = RigidTransform::new(rot_x(0.3) * rot_z(1.1), Vec3::new(4.0, -2.0, 9.0));
        assert_eq!(RigidTransform::identity().compose(&t), t);
        let i = t.compose(&t.inverse());
        assert!((i.rotation - Mat3::identity()).norm() < 1e-12);
        assert!(i.translation.norm() < 1e-12);
    }

    #[test]
    fn compose_quarter_turns() {
        let a = RigidTransform::new(rot_z(FRAC_PI_2), Vec3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::new(rot_z(-FRAC_PI_2), Vec3::zeros());
        let c = a.compose(&b);
        assert!((c.rotation - Mat3::identity()).norm() < 1e-15);
        assert_relative_eq!(c.translation, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn invert_cases() {
        let id = RigidTransform::identity();
        assert_eq!(id.inverse(), id);
        let t = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(t.inverse().translation, Vec3::new(-1.0, -2.0, -3.0));
        let g = RigidTransform::new(rot_y(2.0) * rot_x(-0.7), Vec3::new(10.0, 0.5, -3.0));
        assert_transform_eq(&g.inverse().inverse(), &g, 1e-12);
    }

    #[test]
    fn transform_point_cases() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::identity().transform_point(&p), p);
        let q = RigidTransform::from_rotation(rot_z(FRAC_PI_2)).transform_point(&Vec3::x());
        assert_relative_eq!(q, Vec3::y(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_between_cases() {
        let r = rot_x(0.4) * rot_y(-1.0);
        assert_eq!(rotation_between(&r, &r), 0.0);
        assert_relative_eq!(
            rotation_between(&Mat3::identity(), &rot_z(FRAC_PI_2)),
            FRAC_PI_2,
            epsilon = 1e-15
        );
        let a = rot_x(0.3);
        let b = rot_x(0.3) * rot_y(1e-4);
        assert!((rotation_between(&a, &b) - 1e-4).abs() < 1e-8);
    }

    #[test]
    fn axis_angle_basics() {
        let zero = AxisAngle::new(Vec3::z(), 0.0).unwrap();
        assert_eq!(zero.to_rotation(), Mat3::identity());
        let q = AxisAngle::new(Vec3::z(), FRAC_PI_2).unwrap().to_rotation();
        assert!((q - rot_z(FRAC_PI_2)).norm() < 1e-15);
        assert!(AxisAngle::new(Vec3::zeros(), 1.0).is_err());
    }

    #[test]
    fn axis_angle_at_pi_accepts_either_sign() {
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        let r = AxisAngle::new(axis, PI).unwrap().to_rotation();
        let back = AxisAngle::from_rotation(&r);
        assert!((back.angle() - PI).abs() < 1e-12);
        assert!((back.axis() - axis).norm() < 1e-9 || (back.axis() + axis).norm() < 1e-9);
        assert!((back.to_rotation() - r).norm() < 1e-12);
    }

    #[test]
    fn axis_angle_near_pi_round_trip() {
        let axis = Vec3::new(0.3, -0.2, 0.9).normalize();
        for angle in [PI - 1e-3, PI - 1e-5, PI - 1e-7] {
            let r = AxisAngle::new(axis, angle).unwrap().to_rotation();
            let back = AxisAngle::from_rotation(&r);
            assert!((back.angle() - angle).abs() < 1e-10, "{angle}");
            assert!((back.axis() - axis).norm() < 1e-7);
        }
    }

    #[test]
    fn rotation_vector_jacobian_matches_finite_differences() {
        for w in [
            Vec3::new(0.3, -1.2, 0.8),
            Vec3::new(1e-12, 0.0, 0.0),
            Vec3::new(2.5, 0.1, -0.4),
        ] {
            let jac = rotation_vector_jacobian(&w);
            for (i, d) in jac.iter().enumerate() {
                let mut e = Vec3::zeros();
                e[i] = 1e-6;
                let fd = (rotation_from_vector(&(w + e)) - rotation_from_vector(&(w - e))) / 2e-6;
                assert!((fd - d).norm() < 1e-8, "component {i} at {w}");
            }
        }
    }

    #[test]
    fn nearest_rotation_fixes_reflection_and_noise() {
        let r = rot_x(0.2) * rot_z(-0.9);
        let noisy = r + Mat3::new(1e-3, -2e-3, 0.0, 0.0, 1e-3, 5e-4, 0.0, 0.0, -1e-3);
        let p = nearest_rotation(&noisy);
        assert!(orthonormality_residual(&p) < 1e-12);
        assert!((p.determinant() - 1.0).abs() < 1e-12);
        let reflected = -r;
        assert!((nearest_rotation(&reflected).determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_layout_is_row_major() {
        let t = RigidTransform::new(rot_z(FRAC_PI_2), Vec3::new(1.0, 2.0, 3.0));
        let v: serde_json::Value = serde_json::to_value(t).unwrap();
        let rot: Vec<f64> = serde_json::from_value(v["rotation"].clone()).unwrap();
        assert!((rot[1] + 1.0).abs() < 1e-15, "row 0 col 1 of Rz(90°) is -1");
        let back: RigidTransform = serde_json::from_value(v).unwrap();
        assert!((back.rotation - t.rotation).norm() < 1e-15);
        let bad = serde_json::json!({"rotation": [2.0,0,0, 0,1,0, 0,0,1], "translation": [0,0,0]});
        assert!(serde_json::from_value::<RigidTransform>(bad).is_err());
    }

    #[test]
    fn homogeneous_point_rejects_zero() {
        assert!(HomogeneousPoint2::new(0.0, 0.0, 0.0).is_err());
        assert_eq!(
            HomogeneousPoint2::new(2.0, 4.0, 2.0).unwrap().to_cartesian(),
            Some((1.0, 2.0))
        );
        assert!(serde_json::from_str::<HomogeneousPoint2>("[0,0,0]").is_err());
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!((l.rotation - r.rotation).norm() < 1e-12);
            prop_assert!((l.translation - r.translation).norm() < 1e-12 * 1e3);
        }

        #[test]
        fn compose_acts_like_function_composition(a in arb_transform(), b in arb_transform(),
                                                   x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let p = Vec3::new(x, y, 0.5 * x - y);
            let l = a.compose(&b).transform_point(&p);
            let r = a.transform_point(&b.transform_point(&p));
            prop_assert!((l - r).norm() < 1e-12 * 1e3);
        }

        #[test]
        fn inverse_cancels(t in arb_transform()) {
            let i = t.compose(&t.inverse());
            prop_assert!((i.rotation - Mat3::identity()).norm() < 1e-12);
            prop_assert!(i.translation.norm() < 1e-12 * 1e3);
            prop_assert!(t.is_valid());
        }

        #[test]
        fn axis_angle_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
                                 angle in 1e-6f64..(PI - 1e-6)) {
            prop_assume!(x * x + y * y + z * z > 1e-3);
            let aa = AxisAngle::new(Vec3::new(x, y, z), angle).unwrap();
            let back = AxisAngle::from_rotation(&aa.to_rotation());
            prop_assert!((back.angle() - aa.angle()).abs() < 1e-10);
            prop_assert!((back.axis() - aa.axis()).norm() < 1e-10 / angle.min(PI - angle).max(1e-3).min(1.0) );
            prop_assert!((back.to_rotation() - aa.to_rotation()).norm() < 1e-10);
        }
    }
}
