//! Mammogram to robot registration through the compression plate.
//!
//! Four markers on the plate are seen both by the camera (as poses in the
//! robot base frame) and in the X-ray (as pixel centers). The plate frame is
//! built from the marker poses, the marker centers are expressed in plate
//! coordinates, and a homography maps mammogram pixels onto the plate plane.
//! A lesion pixel then maps to a base-frame point on the plate.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{HomogeneousPoint2, Mat3, RigidTransform, Vec3};

/// Coplanarity bound used by [`PlatePose::check_coplanar`] unless overridden.
pub const DEFAULT_COPLANARITY_TOLERANCE: f64 = 1e-6;

const DEGENERATE_TOLERANCE: f64 = 1e-9;
/// Smallest triangle area (px²) for three mammogram points to count as
/// non-collinear.
pub const MIN_TRIANGLE_AREA: f64 = 1e-6;
/// Relative gap below which the two smallest singular values are treated as equal.
pub const RANK_GAP_TOLERANCE: f64 = 1e-9;
const MAX_MARKER_TILT_DEG: f64 = 45.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("marker geometry is degenerate: {0}")]
    DegenerateMarkers(&'static str),
    #[error("marker {index} z-axis deviates {angle_deg:.1}° from the mean plate normal")]
    InconsistentMarkers { index: usize, angle_deg: f64 },
    #[error("three mammogram points are collinear (triangle area {0:e} px²)")]
    DegenerateConfiguration(f64),
    #[error("homography is not unique: smallest singular values {0:e} and {1:e}")]
    RankAmbiguity(f64, f64),
    #[error("lesion maps to a point at infinity")]
    PointAtInfinity,
    #[error("marker {index} lies {z:e} mm off the plate plane")]
    NotCoplanar { index: usize, z: f64 },
    #[error("homogeneous point has zero w")]
    ZeroWeight,
}

/// Plate frame in the robot base frame plus the marker centers on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatePose {
    pub t_bp: RigidTransform,
    /// Marker centers in plate coordinates (x, y), mm.
    pub marker_centers_plate: [[f64; 2]; 4],
    /// Out-of-plane coordinate of each marker center, mm.
    pub marker_offsets_z: [f64; 4],
}

impl PlatePose {
    pub fn normal(&self) -> Vec3 {
        self.t_bp.rotation.column(2).into()
    }

    pub fn check_coplanar(&self, tolerance: f64) -> Result<(), RegistrationError> {
        for (index, z) in self.marker_offsets_z.iter().enumerate() {
            if z.abs() > tolerance {
                return Err(RegistrationError::NotCoplanar { index, z: *z });
            }
        }
        Ok(())
    }
}

/// Plate frame from four marker poses `T_BTᵢ` given in the order p1..p4.
///
/// Normal: normalized sum of the marker z-axes. In-plane y: the bounding-box
/// edge direction `(p4 − p1) + (p3 − p2)` with its normal component removed.
/// x completes the frame as `y × z`; the origin is the centroid.
pub fn estimate_plate_pose(markers: &[RigidTransform; 4]) -> Result<PlatePose, RegistrationError> {
    let z_sum: Vec3 = markers.iter().map(|m| Vec3::from(m.rotation.column(2))).sum();
    if z_sum.norm() < DEGENERATE_TOLERANCE {
        return Err(RegistrationError::DegenerateMarkers("marker normals cancel"));
    }
    let n_z = z_sum.normalize();
    for (index, m) in markers.iter().enumerate() {
        let c = Vec3::from(m.rotation.column(2)).dot(&n_z).clamp(-1.0, 1.0);
        let angle_deg = c.acos().to_degrees();
        if angle_deg > MAX_MARKER_TILT_DEG {
            return Err(RegistrationError::InconsistentMarkers { index, angle_deg });
        }
    }
    let p: Vec<Vec3> = markers.iter().map(|m| m.translation).collect();
    let edge = (p[3] - p[0]) + (p[2] - p[1]);
    if edge.norm() < DEGENERATE_TOLERANCE {
        return Err(RegistrationError::DegenerateMarkers(
            "bounding-box edge has zero length",
        ));
    }
    let n_y_prime = edge.normalize();
    let in_plane = n_y_prime - n_z * n_y_prime.dot(&n_z);
    if in_plane.norm() < DEGENERATE_TOLERANCE {
        return Err(RegistrationError::DegenerateMarkers(
            "bounding-box edge is parallel to the normal",
        ));
    }
    let n_y = in_plane.normalize();
    let n_x = n_y.cross(&n_z);
    let origin = p.iter().sum::<Vec3>() / 4.0;
    let t_bp = RigidTransform::new(Mat3::from_columns(&[n_x, n_y, n_z]), origin);

    let inv = t_bp.inverse();
    let mut centers = [[0.0; 2]; 4];
    let mut offsets = [0.0; 4];
    for (k, pk) in p.iter().enumerate() {
        let q = inv.transform_point(pk);
        centers[k] = [q.x, q.y];
        offsets[k] = q.z;
    }
    Ok(PlatePose {
        t_bp,
        marker_centers_plate: centers,
        marker_offsets_z: offsets,
    })
}

/// Plate-plane projection of a base-frame point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateProjection {
    /// `(x, y, 1)` in plate mm.
    pub point: HomogeneousPoint2,
    /// Discarded out-of-plane coordinate, mm.
    pub z_residual: f64,
}

pub fn project_to_plate(pp: &PlatePose, p_base: &Vec3) -> PlateProjection {
    let q = pp.t_bp.inverse().transform_point(p_base);
    PlateProjection {
        point: HomogeneousPoint2::from_cartesian(q.x, q.y),
        z_residual: q.z,
    }
}

/// Plate mm point `plate` and its mammogram pixel `mammogram`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub plate: HomogeneousPoint2,
    pub mammogram: HomogeneousPoint2,
}

impl Correspondence {
    pub fn new(plate: [f64; 2], mammogram: [f64; 2]) -> Self {
        Self {
            plate: HomogeneousPoint2::from_cartesian(plate[0], plate[1]),
            mammogram: HomogeneousPoint2::from_cartesian(mammogram[0], mammogram[1]),
        }
    }
}

/// Maps mammogram pixels to plate millimeters: `plate ≅ h · mammogram`.
/// Unit Frobenius norm with `h[2][2] ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    pub h: Mat3,
}

impl Homography {
    /// Normalizes to unit Frobenius norm and fixes the sign.
    pub fn normalized(h: Mat3) -> Self {
        let mut h = h / h.norm();
        let pivot = if h[(2, 2)].abs() > 1e-14 {
            h[(2, 2)]
        } else {
            // fall back to the largest entry so the sign is still well defined
            *h.iter()
                .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
                .unwrap()
        };
        if pivot < 0.0 {
            h = -h;
        }
        Self { h }
    }

    pub fn apply(&self, p: &HomogeneousPoint2) -> Vec3 {
        self.h * p.coords()
    }

    /// Dehomogenized image of `p`, `None` when `|w| ≤ 1e-12`.
    pub fn map_point(&self, p: &HomogeneousPoint2) -> Option<[f64; 2]> {
        let q = self.apply(p);
        if q.z.abs() <= 1e-12 {
            None
        } else {
            Some([q.x / q.z, q.y / q.z])
        }
    }

    /// Whether the last row is `(0, 0, ·)` within `tol` relative to the norm.
    pub fn is_affine(&self, tol: f64) -> bool {
        self.h[(2, 0)].abs() < tol && self.h[(2, 1)].abs() < tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DltOptions {
    /// Centroid-centering and √2 mean-distance scaling of both point sets.
    pub normalize: bool,
}

impl Default for DltOptions {
    fn default() -> Self {
        Self { normalize: true }
    }
}

/// The two DLT constraint rows of one correspondence, with mammogram point
/// `m` and plate point `(x, y, w)`: `[0ᵀ, w mᵀ, −y mᵀ]` and `[−w mᵀ, 0ᵀ, x mᵀ]`.
pub fn dlt_rows(c: &Correspondence) -> [[f64; 9]; 2] {
    let m = c.mammogram.coords();
    let p = c.plate.coords();
    let (x, y, w) = (p.x, p.y, p.z);
    [
        [
            0.0,
            0.0,
            0.0,
            w * m.x,
            w * m.y,
            w * m.z,
            -y * m.x,
            -y * m.y,
            -y * m.z,
        ],
        [
            -w * m.x,
            -w * m.y,
            -w * m.z,
            0.0,
            0.0,
            0.0,
            x * m.x,
            x * m.y,
            x * m.z,
        ],
    ]
}

/// Stacked 8×9 DLT matrix for four correspondences.
pub fn dlt_matrix(corrs: &[Correspondence; 4]) -> SMatrix<f64, 8, 9> {
    let mut a = SMatrix::<f64, 8, 9>::zeros();
    for (i, c) in corrs.iter().enumerate() {
        let rows = dlt_rows(c);
        for r in 0..2 {
            for k in 0..9 {
                a[(2 * i + r, k)] = rows[r][k];
            }
        }
    }
    a
}

fn triangle_area(a: &(f64, f64), b: &(f64, f64), c: &(f64, f64)) -> f64 {
    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs()
}

/// Centroid-centering similarity with mean distance √2.
fn similarity_normalizer(points: &[(f64, f64); 4]) -> Mat3 {
    let cx = points.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let cy = points.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let mean_dist = points
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / 4.0;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Mat3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn cartesian(p: &HomogeneousPoint2) -> Result<(f64, f64), RegistrationError> {
    p.to_cartesian().ok_or(RegistrationError::ZeroWeight)
}

/// Homography from four correspondences via the DLT null vector.
///
/// The null vector is taken from the SVD of the (optionally normalized)
/// constraint matrix padded to 9×9, so the smallest right singular vector is
/// always available.
pub fn estimate_homography_dlt(
    corrs: &[Correspondence; 4],
    opts: &DltOptions,
) -> Result<Homography, RegistrationError> {
    let mam: [(f64, f64); 4] = [
        cartesian(&corrs[0].mammogram)?,
        cartesian(&corrs[1].mammogram)?,
        cartesian(&corrs[2].mammogram)?,
        cartesian(&corrs[3].mammogram)?,
    ];
    let plate: [(f64, f64); 4] = [
        cartesian(&corrs[0].plate)?,
        cartesian(&corrs[1].plate)?,
        cartesian(&corrs[2].plate)?,
        cartesian(&corrs[3].plate)?,
    ];
    for i in 0..4 {
        for j in i + 1..4 {
            for k in j + 1..4 {
                let area = triangle_area(&mam[i], &mam[j], &mam[k]);
                if area < MIN_TRIANGLE_AREA {
                    return Err(RegistrationError::DegenerateConfiguration(area));
                }
            }
        }
    }

    let (t_m, t_p) = if opts.normalize {
        (similarity_normalizer(&mam), similarity_normalizer(&plate))
    } else {
        (Mat3::identity(), Mat3::identity())
    };
    let work: [Correspondence; 4] = std::array::from_fn(|i| {
        let m = t_m * Vec3::new(mam[i].0, mam[i].1, 1.0);
        let p = t_p * Vec3::new(plate[i].0, plate[i].1, 1.0);
        Correspondence::new([p.x / p.z, p.y / p.z], [m.x / m.z, m.y / m.z])
    });
    let a8 = dlt_matrix(&work);
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    a.fixed_view_mut::<8, 9>(0, 0).copy_from(&a8);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| sv[i].partial_cmp(&sv[j]).unwrap());
    let (s_min, s_next) = (sv[order[0]], sv[order[1]]);
    if s_next - s_min <= RANK_GAP_TOLERANCE * sv[order[8]] {
        return Err(RegistrationError::RankAmbiguity(s_min, s_next));
    }
    let h: SVector<f64, 9> = v_t.row(order[0]).transpose();
    let hn = Mat3::from_row_slice(h.as_slice());
    let t_p_inv = t_p
        .try_inverse()
        .ok_or(RegistrationError::DegenerateMarkers("plate normalizer singular"))?;
    Ok(Homography::normalized(t_p_inv * hn * t_m))
}

/// Base-frame point on the plate for a lesion pixel. The mapped point is
/// divided by its homogeneous weight before the first two components are
/// placed on the plate plane.
pub fn map_lesion(
    pp: &PlatePose,
    h: &Homography,
    lesion_px: &HomogeneousPoint2,
) -> Result<Vec3, RegistrationError> {
    let [x, y] = h
        .map_point(lesion_px)
        .ok_or(RegistrationError::PointAtInfinity)?;
    Ok(pp.t_bp.transform_point(&Vec3::new(x, y, 0.0)))
}

/// Correspondences from a plate pose and the four marker pixel centers.
pub fn marker_correspondences(pp: &PlatePose, markers_px: &[[f64; 2]; 4]) -> [Correspondence; 4] {
    std::array::from_fn(|i| Correspondence::new(pp.marker_centers_plate[i], markers_px[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_x, rot_y, rot_z};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square_markers(frame: &RigidTransform) -> [RigidTransform; 4] {
        let corners = [(-10.0, -10.0), (-10.0, 10.0), (10.0, 10.0), (10.0, -10.0)];
        corners.map(|(x, y)| frame.compose(&RigidTransform::from_translation(Vec3::new(x, y, 0.0))))
    }

    #[test]
    fn axis_aligned_square() {
        let pp = estimate_plate_pose(&square_markers(&RigidTransform::identity())).unwrap();
        // (p4−p1)+(p3−p2) = (40,0,0) ⇒ n_y = x̂ and n_x = x̂ × ẑ = −ŷ
        assert!(pp.t_bp.translation.norm() < 1e-15);
        let r = pp.t_bp.rotation;
        assert!((Vec3::from(r.column(0)) - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
        assert!((Vec3::from(r.column(1)) - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((Vec3::from(r.column(2)) - Vec3::z()).norm() < 1e-15);
        assert!(pp.t_bp.is_valid());
        pp.check_coplanar(1e-9).unwrap();
    }

    #[test]
    fn identical_markers_are_degenerate() {
        let t = RigidTransform::new(rot_x(0.2), Vec3::new(5.0, 6.0, 7.0));
        assert!(matches!(
            estimate_plate_pose(&[t; 4]),
            Err(RegistrationError::DegenerateMarkers(_))
        ));
    }

    #[test]
    fn flipped_marker_is_rejected() {
        let mut m = square_markers(&RigidTransform::identity());
        m[2] = m[2].compose(&RigidTransform::from_rotation(rot_x(std::f64::consts::PI)));
        assert!(matches!(
            estimate_plate_pose(&m),
            Err(RegistrationError::InconsistentMarkers { index: 2, .. })
        ));
    }

    #[test]
    fn tilted_plate_normal() {
        let frame = RigidTransform::new(rot_y(10f64.to_radians()), Vec3::new(400.0, 20.0, 30.0));
        let pp = estimate_plate_pose(&square_markers(&frame)).unwrap();
        let expected: Vec3 = frame.rotation.column(2).into();
        assert!((pp.normal() - expected).norm() < 1e-9);
        let r = pp.t_bp.rotation;
        assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
        assert!(Vec3::from(r.column(1)).dot(&Vec3::from(r.column(2))).abs() < 1e-12);
    }

    #[test]
    fn gram_schmidt_removes_normal_component() {
        // markers with slightly differing normals and a non-planar corner
        let base = RigidTransform::new(rot_z(0.3), Vec3::new(100.0, 0.0, 0.0));
        let mut m = square_markers(&base);
        m[0].rotation = m[0].rotation * rot_x(0.02);
        m[3].translation.z += 0.7;
        let pp = estimate_plate_pose(&m).unwrap();
        let r = pp.t_bp.rotation;
        assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
        assert!(Vec3::from(r.column(1)).dot(&Vec3::from(r.column(2))).abs() < 1e-12);
        assert!(pp.check_coplanar(1e-6).is_err());
    }

    #[test]
    fn projection_cases() {
        let frame = RigidTransform::new(rot_x(0.1) * rot_z(0.4), Vec3::new(300.0, -50.0, 20.0));
        let pp = estimate_plate_pose(&square_markers(&frame)).unwrap();
        let o = project_to_plate(&pp, &pp.t_bp.translation);
        assert_eq!(o.point.to_cartesian().map(|(x, y)| (x.abs() < 1e-12, y.abs() < 1e-12)), Some((true, true)));
        assert!(o.z_residual.abs() < 1e-12);
        for (k, m) in square_markers(&frame).iter().enumerate() {
            let pr = project_to_plate(&pp, &m.translation);
            let (x, y) = pr.point.to_cartesian().unwrap();
            assert!((x - pp.marker_centers_plate[k][0]).abs() < 1e-12);
            assert!((y - pp.marker_centers_plate[k][1]).abs() < 1e-12);
            assert!(pr.z_residual.abs() < 1e-9);
        }
        let foot = pp.t_bp.transform_point(&Vec3::new(3.0, -4.0, 0.0));
        let above = foot + pp.normal() * 5.0;
        let a = project_to_plate(&pp, &foot);
        let b = project_to_plate(&pp, &above);
        assert!((a.point.coords() - b.point.coords()).norm() < 1e-12);
        assert!((b.z_residual - 5.0).abs() < 1e-12);
    }

    fn corrs_from(h_true: &Mat3, mam: [[f64; 2]; 4]) -> [Correspondence; 4] {
        mam.map(|m| {
            let q = h_true * Vec3::new(m[0], m[1], 1.0);
            Correspondence::new([q.x / q.z, q.y / q.z], m)
        })
    }

    #[test]
    fn identity_homography() {
        let pts = [[0.0, 0.0], [100.0, 0.0], [100.0, 80.0], [0.0, 80.0]];
        let corrs = pts.map(|p| Correspondence::new(p, p));
        for normalize in [true, false] {
            let h = estimate_homography_dlt(&corrs, &DltOptions { normalize }).unwrap();
            let expect = Mat3::identity() / 3f64.sqrt();
            assert!((h.h - expect).norm() < 1e-12, "{}", h.h);
        }
    }

    #[test]
    fn pure_scale_homography() {
        let plate = [[0.0, 0.0], [50.0, 0.0], [50.0, 40.0], [0.0, 40.0]];
        let corrs = plate.map(|p| Correspondence::new(p, [2.0 * p[0], 2.0 * p[1]]));
        let h = estimate_homography_dlt(&corrs, &DltOptions::default()).unwrap();
        let expect = Homography::normalized(Mat3::from_diagonal(&Vec3::new(0.5, 0.5, 1.0)));
        assert!((h.h - expect.h).norm() < 1e-12);
    }

    #[test]
    fn collinear_points_rejected() {
        let pts = [[0.0, 0.0], [10.0, 10.0], [20.0, 20.0], [0.0, 30.0]];
        let corrs = pts.map(|p| Correspondence::new(p, p));
        assert!(matches!(
            estimate_homography_dlt(&corrs, &DltOptions::default()),
            Err(RegistrationError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn exact_data_reprojects_and_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let h_true = Mat3::new(
                rng.random_range(0.05..0.2),
                rng.random_range(-0.05..0.05),
                rng.random_range(-50.0..50.0),
                rng.random_range(-0.05..0.05),
                rng.random_range(0.05..0.2),
                rng.random_range(-50.0..50.0),
                rng.random_range(-1e-4..1e-4),
                rng.random_range(-1e-4..1e-4),
                1.0,
            );
            let mam = [
                [rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)],
                [rng.random_range(700.0..1000.0), rng.random_range(0.0..300.0)],
                [rng.random_range(700.0..1000.0), rng.random_range(700.0..1000.0)],
                [rng.random_range(0.0..300.0), rng.random_range(700.0..1000.0)],
            ];
            let corrs = corrs_from(&h_true, mam);
            let h = estimate_homography_dlt(&corrs, &DltOptions::default()).unwrap();
            assert!((h.h - Homography::normalized(h_true).h).norm() < 1e-9);
            for c in &corrs {
                let p = h.map_point(&c.mammogram).unwrap();
                let (x, y) = c.plate.to_cartesian().unwrap();
                assert!((p[0] - x).abs() < 1e-9 && (p[1] - y).abs() < 1e-9);
            }
            let shuffled = [corrs[2], corrs[0], corrs[3], corrs[1]];
            let h2 = estimate_homography_dlt(&shuffled, &DltOptions::default()).unwrap();
            assert!((h.h - h2.h).norm() < 1e-9);
        }
    }

    #[test]
    fn identity_scene_lesion_mapping() {
        let pp = PlatePose {
            t_bp: RigidTransform::identity(),
            marker_centers_plate: [[0.0; 2]; 4],
            marker_offsets_z: [0.0; 4],
        };
        let h = Homography::normalized(Mat3::identity());
        let p = map_lesion(&pp, &h, &HomogeneousPoint2::from_cartesian(12.5, -3.0)).unwrap();
        assert!((p - Vec3::new(12.5, -3.0, 0.0)).norm() < 1e-12);
        let singular = Homography {
            h: Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0),
        };
        assert_eq!(
            map_lesion(&pp, &singular, &HomogeneousPoint2::from_cartesian(1.0, 1.0)),
            Err(RegistrationError::PointAtInfinity)
        );
    }

    #[test]
    fn row_layout_matches_cross_product_constraint() {
        // rows vanish exactly when plate ≅ h·mammogram
        let h = Mat3::new(0.1, 0.02, 5.0, -0.01, 0.12, -3.0, 1e-5, 2e-5, 1.0);
        let m = Vec3::new(340.0, 125.0, 1.0);
        let q = h * m;
        let c = Correspondence::new([q.x / q.z, q.y / q.z], [m.x, m.y]);
        let hv: Vec<f64> = h.transpose().iter().copied().collect(); // row-major
        for row in dlt_rows(&c) {
            let r: f64 = row.iter().zip(&hv).map(|(a, b)| a * b).sum();
            assert!(r.abs() < 1e-12);
        }
    }
}
