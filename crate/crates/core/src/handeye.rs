//! Hand-eye calibration: solve `A X = X B` for the end-effector to camera
//! transform with the Kronecker-product formulation.

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nearest_rotation, rotation_between, AxisAngle, Mat3, RigidTransform, Vec3};

/// Rotation axes whose spread stays below this are treated as parallel.
pub const PARALLEL_AXIS_TOLERANCE: f64 = 1e-6;

/// Relative motions smaller than this angle carry no axis information.
const MIN_ROTATION_ANGLE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandEyeError {
    #[error("robot and marker pose sequences differ in length ({robot} vs {marker})")]
    LengthMismatch { robot: usize, marker: usize },
    #[error("at least 3 poses are required, got {0}")]
    TooFewPoses(usize),
    #[error("at least 2 motion pairs are required, got {0}")]
    TooFewPairs(usize),
    #[error("relative rotation axes are all parallel; the solution is not observable")]
    DegenerateMotion,
    #[error("no motion pairs given")]
    EmptyPairs,
}

/// One relative motion: `a` of the end-effector, `b` of the camera-observed marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPair {
    pub a: RigidTransform,
    pub b: RigidTransform,
}

impl MotionPair {
    /// From two captures `i`, `j`: `A = T_BEi⁻¹ T_BEj`, `B = T_CTi T_CTj⁻¹`.
    pub fn from_captures(
        robot_i: &RigidTransform,
        robot_j: &RigidTransform,
        marker_i: &RigidTransform,
        marker_j: &RigidTransform,
    ) -> Self {
        Self {
            a: robot_i.inverse().compose(robot_j),
            b: marker_i.compose(&marker_j.inverse()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStrategy {
    /// `(i, i+1)` for consecutive captures.
    #[default]
    Consecutive,
    /// Every `(i, j)` with `i < j`.
    AllPairs,
}

fn check_sequences(
    robot_poses: &[RigidTransform],
    marker_poses: &[RigidTransform],
) -> Result<(), HandEyeError> {
    if robot_poses.len() != marker_poses.len() {
        return Err(HandEyeError::LengthMismatch {
            robot: robot_poses.len(),
            marker: marker_poses.len(),
        });
    }
    if robot_poses.len() < 3 {
        return Err(HandEyeError::TooFewPoses(robot_poses.len()));
    }
    Ok(())
}

/// Consecutive motion pairs; `N` poses give `N − 1` pairs.
pub fn build_motion_pairs(
    robot_poses: &[RigidTransform],
    marker_poses: &[RigidTransform],
) -> Result<Vec<MotionPair>, HandEyeError> {
    build_motion_pairs_with(robot_poses, marker_poses, PairStrategy::Consecutive)
}

pub fn build_motion_pairs_with(
    robot_poses: &[RigidTransform],
    marker_poses: &[RigidTransform],
    strategy: PairStrategy,
) -> Result<Vec<MotionPair>, HandEyeError> {
    check_sequences(robot_poses, marker_poses)?;
    let n = robot_poses.len();
    let index_pairs: Vec<(usize, usize)> = match strategy {
        PairStrategy::Consecutive => (0..n - 1).map(|i| (i, i + 1)).collect(),
        PairStrategy::AllPairs => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect(),
    };
    Ok(index_pairs
        .into_iter()
        .map(|(i, j)| {
            MotionPair::from_captures(
                &robot_poses[i],
                &robot_poses[j],
                &marker_poses[i],
                &marker_poses[j],
            )
        })
        .collect())
}

/// Largest `‖aᵢ × aⱼ‖` over the rotation axes of the `A` motions; zero when
/// every motion is a pure translation.
pub fn axis_spread(pairs: &[MotionPair]) -> f64 {
    let axes: Vec<Vec3> = pairs
        .iter()
        .map(|p| AxisAngle::from_rotation(&p.a.rotation))
        .filter(|aa| aa.angle() > MIN_ROTATION_ANGLE)
        .map(|aa| aa.axis())
        .collect();
    let mut spread: f64 = 0.0;
    for (i, a) in axes.iter().enumerate() {
        for b in &axes[i + 1..] {
            spread = spread.max(a.cross(b).norm());
        }
    }
    spread
}

/// Kronecker-product solution of `A X = X B`.
///
/// The rotation comes from the null vector of the stacked
/// `(I ⊗ R_A − R_Bᵀ ⊗ I)` blocks (column-major `vec`), rescaled to unit
/// determinant and projected onto SO(3). The translation is the least-squares
/// solution of `(R_A − I) t_X = R_X t_B − t_A` over all pairs.
pub fn solve_ax_xb(pairs: &[MotionPair]) -> Result<RigidTransform, HandEyeError> {
    if pairs.len() < 2 {
        return Err(HandEyeError::TooFewPairs(pairs.len()));
    }
    if axis_spread(pairs) < PARALLEL_AXIS_TOLERANCE {
        return Err(HandEyeError::DegenerateMotion);
    }

    // Accumulating KᵀK keeps the eigenproblem at 9×9 regardless of N.
    let mut normal = SMatrix::<f64, 9, 9>::zeros();
    for p in pairs {
        let k = rotation_block(&p.a.rotation, &p.b.rotation);
        normal += k.transpose() * k;
    }
    let eig = normal.symmetric_eigen();
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let v = eig.eigenvectors.column(imin);
    let m = Mat3::from_column_slice(v.as_slice());
    let det = m.determinant();
    let scaled = m * (det.signum() / det.abs().cbrt());
    let rx = nearest_rotation(&scaled);

    let mut lhs = DMatrix::<f64>::zeros(3 * pairs.len(), 3);
    let mut rhs = DVector::<f64>::zeros(3 * pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        lhs.fixed_view_mut::<3, 3>(3 * i, 0)
            .copy_from(&(p.a.rotation - Mat3::identity()));
        rhs.fixed_rows_mut::<3>(3 * i)
            .copy_from(&(rx * p.b.translation - p.a.translation));
    }
    let tx = lhs
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|_| HandEyeError::DegenerateMotion)?;
    Ok(RigidTransform::new(rx, Vec3::new(tx[0], tx[1], tx[2])))
}

/// `I₃ ⊗ R_A − R_Bᵀ ⊗ I₃`.
fn rotation_block(ra: &Mat3, rb: &Mat3) -> SMatrix<f64, 9, 9> {
    let mut k = SMatrix::<f64, 9, 9>::zeros();
    for blk in 0..3 {
        k.fixed_view_mut::<3, 3>(3 * blk, 3 * blk).copy_from(ra);
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = rb[(j, i)];
            for d in 0..3 {
                k[(3 * i + d, 3 * j + d)] -= c;
            }
        }
    }
    k
}

/// RMS misfit of `A X` against `X B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandEyeResidual {
    /// radians
    pub rms_rotation: f64,
    /// millimeters
    pub rms_translation: f64,
}

pub fn handeye_residual(
    pairs: &[MotionPair],
    x: &RigidTransform,
) -> Result<HandEyeResidual, HandEyeError> {
    if pairs.is_empty() {
        return Err(HandEyeError::EmptyPairs);
    }
    let (mut rot, mut trans) = (0.0, 0.0);
    for p in pairs {
        let ax = p.a.compose(x);
        let xb = x.compose(&p.b);
        rot += rotation_between(&ax.rotation, &xb.rotation).powi(2);
        trans += (ax.translation - xb.translation).norm_squared();
    }
    let n = pairs.len() as f64;
    Ok(HandEyeResidual {
        rms_rotation: (rot / n).sqrt(),
        rms_translation: (trans / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_x, rot_y, rot_z};

    fn truth() -> RigidTransform {
        RigidTransform::new(rot_z(0.4) * rot_x(-0.2), Vec3::new(60.0, -15.0, 45.0))
    }

    fn robot_poses() -> Vec<RigidTransform> {
        vec![
            RigidTransform::new(rot_x(3.0), Vec3::new(400.0, 0.0, 300.0)),
            RigidTransform::new(rot_x(3.0) * rot_y(0.3), Vec3::new(420.0, 30.0, 310.0)),
            RigidTransform::new(rot_x(2.8) * rot_z(0.5), Vec3::new(380.0, -20.0, 290.0)),
            RigidTransform::new(rot_x(3.1) * rot_y(-0.25) * rot_z(-0.3), Vec3::new(410.0, 10.0, 330.0)),
        ]
    }

    fn marker_poses(x: &RigidTransform, robot: &[RigidTransform]) -> Vec<RigidTransform> {
        let base_marker = RigidTransform::new(rot_z(0.1), Vec3::new(450.0, 20.0, 0.0));
        robot
            .iter()
            .map(|be| x.inverse().compose(&be.inverse()).compose(&base_marker))
            .collect()
    }

    #[test]
    fn identical_poses_give_identity_pair() {
        let p = robot_poses()[0];
        let pairs = build_motion_pairs(&[p, p, p], &[p, p, p]).unwrap();
        assert_eq!(pairs.len(), 2);
        for pair in pairs {
            assert!((pair.a.rotation - Mat3::identity()).norm() < 1e-12);
            assert!(pair.a.translation.norm() < 1e-12);
            assert!((pair.b.rotation - Mat3::identity()).norm() < 1e-12);
            assert!(pair.b.translation.norm() < 1e-12);
        }
    }

    #[test]
    fn pair_construction_errors() {
        let r = robot_poses();
        assert_eq!(
            build_motion_pairs(&r, &r[..3]),
            Err(HandEyeError::LengthMismatch { robot: 4, marker: 3 })
        );
        assert_eq!(
            build_motion_pairs(&r[..2], &r[..2]),
            Err(HandEyeError::TooFewPoses(2))
        );
        let all = build_motion_pairs_with(&r, &r, PairStrategy::AllPairs).unwrap();
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn synthetic_pairs_satisfy_ax_eq_xb() {
        let x = truth();
        let robot = robot_poses();
        let pairs = build_motion_pairs(&robot, &marker_poses(&x, &robot)).unwrap();
        for p in &pairs {
            let ax = p.a.compose(&x);
            let xb = x.compose(&p.b);
            assert!((ax.rotation - xb.rotation).norm() < 1e-12);
            assert!((ax.translation - xb.translation).norm() < 1e-12 * 1e3);
        }
    }

    #[test]
    fn recovers_ground_truth_without_noise() {
        let x = truth();
        let robot = robot_poses();
        let pairs = build_motion_pairs(&robot, &marker_poses(&x, &robot)).unwrap();
        let est = solve_ax_xb(&pairs).unwrap();
        let (rot, trans) = est.distance_to(&x);
        assert!(rot < 1e-9, "rotation error {rot}");
        assert!(trans < 1e-9, "translation error {trans}");
        let res = handeye_residual(&pairs, &est).unwrap();
        assert!(res.rms_rotation < 1e-9 && res.rms_translation < 1e-9);
    }

    #[test]
    fn pure_translations_are_degenerate() {
        let a = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let b = RigidTransform::from_translation(Vec3::new(-1.0, 0.0, 2.0));
        let pairs = vec![MotionPair { a, b }, MotionPair { a: b, b: a }];
        assert_eq!(solve_ax_xb(&pairs), Err(HandEyeError::DegenerateMotion));
    }

    #[test]
    fn parallel_axes_are_degenerate() {
        let x = truth();
        let robot: Vec<_> = [0.0, 0.4, 0.9, 1.3]
            .iter()
            .map(|&a| RigidTransform::new(rot_z(a), Vec3::new(400.0 + 10.0 * a, 0.0, 300.0)))
            .collect();
        let pairs = build_motion_pairs(&robot, &marker_poses(&x, &robot)).unwrap();
        assert_eq!(solve_ax_xb(&pairs), Err(HandEyeError::DegenerateMotion));
    }

    #[test]
    fn residual_requires_pairs() {
        assert_eq!(
            handeye_residual(&[], &truth()),
            Err(HandEyeError::EmptyPairs)
        );
    }

    #[test]
    fn residual_grows_with_perturbation() {
        let x = truth();
        let robot: Vec<_> = [0.0, 0.4, 0.9, 1.3]
            .iter()
            .map(|&a| RigidTransform::new(rot_z(a), Vec3::new(400.0, 0.0, 300.0)))
            .collect();
        let pairs = build_motion_pairs(&robot, &marker_poses(&x, &robot)).unwrap();
        let mut last = -1.0;
        for deg in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let perturbed = RigidTransform::new(
                x.rotation * rot_z(f64::to_radians(deg)),
                x.translation,
            );
            let r = handeye_residual(&pairs, &perturbed).unwrap().rms_rotation;
            assert!(r > last, "{deg}: {r} <= {last}");
            last = r;
        }
    }

    #[test]
    fn solution_is_order_invariant() {
        let x = truth();
        let mut robot = robot_poses();
        robot.push(RigidTransform::new(rot_x(2.9) * rot_y(0.2), Vec3::new(395.0, 40.0, 305.0)));
        let markers = marker_poses(&x, &robot);
        let pairs = build_motion_pairs(&robot, &markers).unwrap();
        let mut reversed = pairs.clone();
        reversed.reverse();
        let a = solve_ax_xb(&pairs).unwrap();
        let b = solve_ax_xb(&reversed).unwrap();
        let (rot, trans) = a.distance_to(&b);
        assert!(rot < 1e-10 && trans < 1e-8);
    }
}
