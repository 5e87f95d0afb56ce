//! Serial 6R arm described by standard Denavit-Hartenberg parameters.

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{Mat3, RigidTransform, Vec3};

pub type Joints = [f64; 6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhJoint {
    /// Link length along the new x axis, mm.
    pub a: f64,
    /// Link twist about the new x axis, rad.
    pub alpha: f64,
    /// Link offset along the previous z axis, mm.
    pub d: f64,
    pub theta_offset: f64,
    /// `[low, high]` in rad.
    pub limits: [f64; 2],
}

impl DhJoint {
    /// `Rz(θ) · Tz(d) · Tx(a) · Rx(α)`.
    pub fn transform(&self, q: f64) -> RigidTransform {
        let (st, ct) = (q + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        RigidTransform::new(
            Mat3::new(ct, -st * ca, st * sa, st, ct * ca, -ct * sa, 0.0, sa, ca),
            Vec3::new(self.a * ct, self.a * st, self.d),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub joints: [DhJoint; 6],
}

impl ArmModel {
    /// Generic 6R table with UR5-like proportions.
    pub fn generic_6r() -> Self {
        use std::f64::consts::{FRAC_PI_2, TAU};
        let lim = [-TAU, TAU];
        let j = |a, alpha, d| DhJoint {
            a,
            alpha,
            d,
            theta_offset: 0.0,
            limits: lim,
        };
        Self {
            joints: [
                j(0.0, FRAC_PI_2, 89.159),
                j(-425.0, 0.0, 0.0),
                j(-392.25, 0.0, 0.0),
                j(0.0, FRAC_PI_2, 109.15),
                j(0.0, -FRAC_PI_2, 94.65),
                j(0.0, 0.0, 82.3),
            ],
        }
    }

    pub fn within_limits(&self, q: &Joints) -> Result<(), SimError> {
        for (i, (j, v)) in self.joints.iter().zip(q).enumerate() {
            if !(v.is_finite() && *v >= j.limits[0] && *v <= j.limits[1]) {
                return Err(SimError::JointLimit { joint: i, value: *v });
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.limits[0] < j.limits[1]) {
                return Err(SimError::InvalidConfig(format!(
                    "joint {i} limits are not increasing"
                )));
            }
        }
        Ok(())
    }

    /// Base-to-end-effector transform `T_BE`.
    pub fn forward_kinematics(&self, q: &Joints) -> Result<RigidTransform, SimError> {
        self.within_limits(q)?;
        Ok(self.fk_unchecked(q))
    }

    pub fn fk_unchecked(&self, q: &Joints) -> RigidTransform {
        self.joints
            .iter()
            .zip(q)
            .fold(RigidTransform::identity(), |t, (j, &v)| t.compose(&j.transform(v)))
    }

    /// `T_B0 … T_B6`; entry `i` is the frame whose z axis is joint `i+1`'s axis.
    pub fn frames(&self, q: &Joints) -> [RigidTransform; 7] {
        let mut out = [RigidTransform::identity(); 7];
        for i in 0..6 {
            out[i + 1] = out[i].compose(&self.joints[i].transform(q[i]));
        }
        out
    }

    /// Geometric Jacobian (rows: linear velocity of the end-effector origin,
    /// then angular velocity), base frame.
    pub fn jacobian(&self, q: &Joints) -> nalgebra::Matrix6<f64> {
        let frames = self.frames(q);
        let p_e = frames[6].translation;
        let mut jac = nalgebra::Matrix6::zeros();
        for i in 0..6 {
            let z: Vec3 = frames[i].rotation.column(2).into();
            let lin = z.cross(&(p_e - frames[i].translation));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        jac
    }

    /// Polyline through the joint origins, including the elbow point of each
    /// link between its `d` and `a` offsets. Each vertex is tagged with the
    /// number of joints proximal to it.
    pub fn skeleton(&self, q: &Joints) -> Vec<(Vec3, usize)> {
        let frames = self.frames(q);
        let mut pts = vec![(frames[0].translation, 0)];
        for i in 0..6 {
            let z: Vec3 = frames[i].rotation.column(2).into();
            let elbow = frames[i].translation + z * self.joints[i].d;
            pts.push((elbow, i + 1));
            pts.push((frames[i + 1].translation, i + 1));
        }
        pts
    }

    /// Upper bound on `Σ link lengths` distal to joint `i`, used to bound how
    /// far any point moves per radian of that joint.
    pub fn distal_length(&self, i: usize) -> f64 {
        self.joints[i..]
            .iter()
            .map(|j| j.a.abs() + j.d.abs())
            .sum()
    }
}
