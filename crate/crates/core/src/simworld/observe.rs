//! Sensor models: camera marker poses, top-view X-ray, cross-wire and RF
//! ultrasound frames, gravity load on the wrist sensor, and the calibration
//! capture sequences built from them.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scenario::{ScenarioConfig, XrayConfig};
use super::SimError;
use crate::forcecalib::Wrench;
use crate::geometry::{rot_x, rotation_from_vector, Mat3, RigidTransform, Vec3};
use crate::imaging::RfFrame;
use crate::uscalib::BxpSample;

pub const GRAVITY: f64 = 9.81;

/// Largest allowed angle between the X-ray rays and the plate normal, rad.
pub const MAX_PROJECTION_TILT: f64 = std::f64::consts::PI / 6.0;

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        sigma * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Random rotation about a uniformly distributed axis with angle `N(0, σ)`.
pub fn random_small_rotation<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Mat3 {
    if sigma <= 0.0 {
        return Mat3::identity();
    }
    rotation_from_vector(&(unit_vector(rng) * gaussian(rng, sigma)))
}

/// Rotation about a uniform axis by an angle uniform in `[0, max_angle]`.
pub fn random_rotation_within<R: Rng + ?Sized>(rng: &mut R, max_angle: f64) -> Mat3 {
    let angle = rng.random_range(0.0..=max_angle.max(0.0));
    rotation_from_vector(&(unit_vector(rng) * angle))
}

/// Applies camera-frame pose noise to a relative pose.
pub fn perturb_pose<R: Rng + ?Sized>(
    t: &RigidTransform,
    rot_sigma: f64,
    trans_sigma: f64,
    rng: &mut R,
) -> RigidTransform {
    let dr = random_small_rotation(rng, rot_sigma);
    let dt = Vec3::new(
        gaussian(rng, trans_sigma),
        gaussian(rng, trans_sigma),
        gaussian(rng, trans_sigma),
    );
    RigidTransform::new(dr * t.rotation, t.translation + dt)
}

/// Camera pose of the given target with observation noise; errors if the
/// target lies behind the camera.
pub fn observe_target<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    t_be: &RigidTransform,
    t_bt: &RigidTransform,
    index: usize,
    rng: &mut R,
) -> Result<RigidTransform, SimError> {
    let t_bc = t_be.compose(&scenario.truth.t_ec);
    let t_ct = t_bc.inverse().compose(t_bt);
    if t_ct.translation.z <= 0.0 {
        return Err(SimError::MarkerBehindCamera(index));
    }
    let n = &scenario.noise;
    Ok(perturb_pose(
        &t_ct,
        n.marker_rot_deg.to_radians(),
        n.marker_trans,
        rng,
    ))
}

/// `T_CT_i` for the four plate markers seen from end-effector pose `t_be`.
pub fn observe_markers<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    t_be: &RigidTransform,
    rng: &mut R,
) -> Result<[RigidTransform; 4], SimError> {
    let poses = scenario.plate.marker_poses();
    let mut out = [RigidTransform::identity(); 4];
    for (i, t_bt) in poses.iter().enumerate() {
        out[i] = observe_target(scenario, t_be, t_bt, i, rng)?;
    }
    Ok(out)
}

/// End-effector pose that puts the camera `distance` mm above the plate
/// center, looking down its normal.
pub fn plate_viewing_pose(scenario: &ScenarioConfig, distance: f64) -> RigidTransform {
    let t_bp = &scenario.plate.t_bp;
    let t_pc = RigidTransform::new(rot_x(std::f64::consts::PI), Vec3::new(0.0, 0.0, distance));
    t_bp.compose(&t_pc).compose(&scenario.truth.t_ec.inverse())
}

// ---------------------------------------------------------------------------
// X-ray

#[derive(Debug, Clone, PartialEq)]
pub struct Mammogram {
    pub pixel_size: f64,
    /// (column, row) of each marker center.
    pub marker_px: [[f64; 2]; 4],
    pub lesion_px: Vec<[f64; 2]>,
    /// Rows × columns intensity raster.
    pub image: Array2<f64>,
}

impl XrayConfig {
    /// Plate (x, y) mm to pixel (column, row).
    pub fn plate_to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        let dx = p[0] - self.origin_plate[0];
        let dy = p[1] - self.origin_plate[1];
        let (s, c) = self.rotation.sin_cos();
        let u = (c * dx + s * dy) / self.pixel_size;
        let mut v = (-s * dx + c * dy) / self.pixel_size;
        if self.flip_y {
            v = (self.height as f64 - 1.0) - v;
        }
        [u, v]
    }

    pub fn pixel_to_plate(&self, px: [f64; 2]) -> [f64; 2] {
        let u = px[0] * self.pixel_size;
        let v = if self.flip_y {
            (self.height as f64 - 1.0) - px[1]
        } else {
            px[1]
        } * self.pixel_size;
        let (s, c) = self.rotation.sin_cos();
        [
            c * u - s * v + self.origin_plate[0],
            s * u + c * v + self.origin_plate[1],
        ]
    }
}

/// Plate coordinates where the X-ray ray through `p_base` meets the plate.
pub fn project_along_rays(scenario: &ScenarioConfig, p_base: &Vec3) -> Result<[f64; 2], SimError> {
    let t_bp = &scenario.plate.t_bp;
    let n = scenario.plate.normal();
    let axis = scenario
        .xray
        .projection_axis
        .map(|a| Vec3::from(a).normalize())
        .unwrap_or(n);
    let cos = axis.dot(&n).abs();
    if !(cos >= MAX_PROJECTION_TILT.cos()) {
        return Err(SimError::InvalidConfig(
            "projection axis more than 30° from the plate normal".into(),
        ));
    }
    let height = (p_base - t_bp.translation).dot(&n);
    let foot = p_base - axis * (height / axis.dot(&n));
    let q = t_bp.inverse().transform_point(&foot);
    Ok([q.x, q.y])
}

/// Orthographic top view of the plate: exact marker and lesion pixel centers
/// plus a rendered raster (markers as bright squares, lesions as faint disks
/// on Gaussian background).
pub fn xray_project<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    rng: &mut R,
) -> Result<Mammogram, SimError> {
    let xr = &scenario.xray;
    let marker_px = scenario
        .plate
        .marker_centers
        .map(|c| xr.plate_to_pixel(c));
    let mut lesion_plate = Vec::new();
    for i in 0..scenario.lesions.len() {
        let p = scenario.lesion_base(i).expect("index in range");
        lesion_plate.push(project_along_rays(scenario, &p)?);
    }
    let lesion_px = lesion_plate.iter().map(|p| xr.plate_to_pixel(*p)).collect();

    let half = scenario.plate.marker_size / 2.0;
    let mut image = Array2::zeros((xr.height, xr.width));
    for ((row, col), v) in image.indexed_iter_mut() {
        let [x, y] = xr.pixel_to_plate([col as f64, row as f64]);
        let mut value = xr.background_mean + gaussian(rng, xr.background_sigma);
        for c in &scenario.plate.marker_centers {
            if (x - c[0]).abs() <= half && (y - c[1]).abs() <= half {
                value = xr.marker_intensity;
            }
        }
        for (l, p) in scenario.lesions.iter().zip(&lesion_plate) {
            if (x - p[0]).powi(2) + (y - p[1]).powi(2) <= l.radius.powi(2) {
                value += l.xray_contrast * xr.background_sigma;
            }
        }
        *v = value;
    }
    Ok(Mammogram {
        pixel_size: xr.pixel_size,
        marker_px,
        lesion_px,
        image,
    })
}

/// Pixel centers as picked by an annotator: exact centers plus Gaussian
/// noise with the scenario's marker and lesion annotation σ.
pub fn annotate<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    mammo: &Mammogram,
    rng: &mut R,
) -> ([[f64; 2]; 4], Vec<[f64; 2]>) {
    let n = &scenario.noise;
    let mut jitter = |p: [f64; 2], s: f64| [p[0] + gaussian(rng, s), p[1] + gaussian(rng, s)];
    let markers = mammo.marker_px.map(|p| jitter(p, n.xray_marker_px));
    let lesions = mammo
        .lesion_px
        .iter()
        .map(|p| jitter(*p, n.lesion_px))
        .collect();
    (markers, lesions)
}

// ---------------------------------------------------------------------------
// Ultrasound

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossWireFiducial {
    pub point: Vec3,
    pub visibility_halfwidth: f64,
}

/// Image coordinates of the cross-wire if it lies inside the imaging slab.
pub fn us_observe_crosswire<R: Rng + ?Sized>(
    t_bu: &RigidTransform,
    fid: &CrossWireFiducial,
    scale: [f64; 2],
    sigma_px: f64,
    rng: &mut R,
) -> Option<[f64; 2]> {
    let q = t_bu.inverse().transform_point(&fid.point);
    if q.z.abs() > fid.visibility_halfwidth {
        return None;
    }
    Some([
        q.x / scale[0] + gaussian(rng, sigma_px),
        q.y / scale[1] + gaussian(rng, sigma_px),
    ])
}

/// Column index of image lateral coordinate 0.
pub fn center_line(lines: usize) -> f64 {
    (lines as f64 - 1.0) / 2.0
}

/// Indices within `reach` of `center`, clipped to `0..len`.
fn window(center: f64, reach: f64, len: usize) -> std::ops::Range<usize> {
    let lo = (center - reach).floor().max(0.0);
    let hi = (center + reach).ceil().min(len as f64 - 1.0);
    if hi < lo {
        0..0
    } else {
        lo as usize..hi as usize + 1
    }
}

/// One RF frame from image pose `t_bu` (true calibration). Lesions appear as
/// Gaussian-windowed carrier bursts whose amplitude decays with distance
/// from the slice (σ = slice half-width).
pub fn synth_rf_frame<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    t_bu: &RigidTransform,
    rng: &mut R,
) -> RfFrame {
    let im = &scenario.imaging;
    let [s_lat, s_ax] = scenario.truth.us_scale;
    let hw = scenario.noise.visibility_halfwidth;
    let c0 = center_line(im.lines);
    let mut samples = Array2::zeros((im.samples, im.lines));
    if scenario.noise.rf > 0.0 {
        let n = Normal::new(0.0, scenario.noise.rf).expect("finite sigma");
        samples.mapv_inplace(|_: f64| n.sample(rng));
    }
    let inv = t_bu.inverse();
    for (i, l) in scenario.lesions.iter().enumerate() {
        let q = inv.transform_point(&scenario.lesion_base(i).expect("index in range"));
        let elevation = (-0.5 * (q.z / hw).powi(2)).exp();
        if elevation < 1e-12 {
            continue;
        }
        let sigma = (l.radius / 2.0).max(1e-3);
        let u0 = q.x / s_lat + c0;
        let v0 = q.y / s_ax;
        let cols = window(u0, 4.0 * sigma / s_lat, im.lines);
        let rows = window(v0, 4.0 * sigma / s_ax, im.samples);
        for c in cols {
            let dx = (c as f64 - u0) * s_lat;
            let lat = (-0.5 * (dx / sigma).powi(2)).exp();
            for r in rows.clone() {
                let dv = r as f64 - v0;
                let ax = (-0.5 * (dv * s_ax / sigma).powi(2)).exp();
                let carrier = (std::f64::consts::TAU * dv / im.carrier_period).cos();
                samples[(r, c)] += l.us_amplitude * elevation * lat * ax * carrier;
            }
        }
    }
    RfFrame::new(samples, s_ax, s_lat).expect("scenario validated")
}

// ---------------------------------------------------------------------------
// Force sensor

/// Unloaded wrist reading: tool weight expressed in the sensor frame, its
/// moment about the sensor origin, and a constant offset.
pub fn gravity_wrench(mass: f64, com: &Vec3, r_base_sensor: &Mat3, bias: &Wrench) -> Wrench {
    let f = r_base_sensor.transpose() * Vec3::new(0.0, 0.0, -GRAVITY * mass);
    Wrench::new(f, com.cross(&f)) + *bias
}

// ---------------------------------------------------------------------------
// Calibration captures

/// Hand-eye capture: end-effector poses and noisy target observations. The
/// camera looks at the fixed target from `distance` mm with random tilt.
pub fn handeye_dataset<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    poses: usize,
    rng: &mut R,
) -> Result<(Vec<RigidTransform>, Vec<RigidTransform>), SimError> {
    let target = scenario.truth.handeye_target;
    let t_ce = scenario.truth.t_ec.inverse();
    let mut robot = Vec::with_capacity(poses);
    let mut obs = Vec::with_capacity(poses);
    for i in 0..poses {
        let distance = rng.random_range(300.0..450.0);
        let tilt = random_rotation_within(rng, 35f64.to_radians());
        let look = rot_x(std::f64::consts::PI);
        // camera z toward the target, from a point above it
        let r_tc = tilt * look;
        let offset = tilt * Vec3::new(0.0, 0.0, distance);
        let t_tc = RigidTransform::new(r_tc, offset);
        let t_bc = target.compose(&t_tc);
        let t_be = t_bc.compose(&t_ce);
        obs.push(observe_target(scenario, &t_be, &target, i, rng)?);
        robot.push(t_be);
    }
    Ok((robot, obs))
}

/// Ultrasound calibration capture: probe poses that bring the cross-wire into
/// the slice at random image positions and orientations.
pub fn us_dataset<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<BxpSample>, SimError> {
    let truth = &scenario.truth;
    let fid = CrossWireFiducial {
        point: Vec3::from(truth.crosswire),
        visibility_halfwidth: scenario.noise.visibility_halfwidth,
    };
    let im = &scenario.imaging;
    let half_lines = center_line(im.lines) * 0.85;
    let base_rot = scenario.probe_rotation(&Mat3::identity());
    let t_ue = truth.t_eu.inverse();
    let mut out = Vec::with_capacity(samples);
    let mut attempts = 0;
    while out.len() < samples {
        attempts += 1;
        if attempts > samples * 100 {
            return Err(SimError::InsufficientData(format!(
                "{} of {samples} cross-wire captures visible",
                out.len()
            )));
        }
        let u = rng.random_range(-half_lines..half_lines);
        let v = rng.random_range(0.15 * im.samples as f64..0.9 * im.samples as f64);
        let jitter = scenario.noise.us_plane_jitter;
        let z = if jitter > 0.0 {
            rng.random_range(-jitter..=jitter)
        } else {
            0.0
        };
        let r_bu = base_rot * random_rotation_within(rng, 30f64.to_radians());
        let local = Vec3::new(u * truth.us_scale[0], v * truth.us_scale[1], z);
        let t_bu = RigidTransform::new(r_bu, fid.point - r_bu * local);
        let Some(p_img) = us_observe_crosswire(&t_bu, &fid, truth.us_scale, scenario.noise.us_px, rng)
        else {
            continue;
        };
        out.push(BxpSample {
            b: t_bu.compose(&t_ue),
            p_img,
        });
    }
    Ok(out)
}

/// Orientation the force model is parametrized against (probe pointing
/// into a level plate).
pub fn force_reference_rotation(scenario: &ScenarioConfig) -> Mat3 {
    scenario.probe_rotation(&Mat3::identity()) * scenario.truth.t_eu.rotation.transpose()
}

/// Unloaded sensor readings at random end-effector poses within the
/// configured orientation cone.
pub fn force_dataset<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    samples: usize,
    rng: &mut R,
) -> Vec<(RigidTransform, Wrench)> {
    let truth = &scenario.truth;
    let reference = force_reference_rotation(scenario);
    let center = scenario.plate.t_bp.translation + Vec3::new(0.0, 0.0, 250.0);
    let cone = scenario.calibration.force_cone_deg.to_radians();
    let sigma = scenario.noise.force;
    let com = Vec3::from(truth.tool_com);
    let bias = truth.bias();
    (0..samples)
        .map(|_| {
            let r = reference * random_rotation_within(rng, cone);
            let t = center
                + Vec3::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-60.0..60.0),
                );
            let pose = RigidTransform::new(r, t);
            let clean = gravity_wrench(truth.tool_mass, &com, &r, &bias);
            let noise = Wrench::from_array(std::array::from_fn(|k| {
                // torque channels see the force noise through a 10 mm lever
                gaussian(rng, if k < 3 { sigma } else { 10.0 * sigma })
            }));
            (pose, clean + noise)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::rng_for;

    fn quiet() -> ScenarioConfig {
        ScenarioConfig::default().zero_noise()
    }

    #[test]
    fn marker_loop_closes_at_zero_noise() {
        let s = quiet();
        let t_be = plate_viewing_pose(&s, 300.0);
        let obs = observe_markers(&s, &t_be, &mut rng_for(1, 0)).unwrap();
        for (o, truth) in obs.iter().zip(s.plate.marker_poses()) {
            let chain = t_be.compose(&s.truth.t_ec).compose(o);
            assert!((chain.rotation - truth.rotation).norm() < 1e-12);
            assert!((chain.translation - truth.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn marker_translation_noise_magnitude() {
        let mut s = ScenarioConfig::default();
        s.noise.marker_rot_deg = 0.0;
        let t_be = plate_viewing_pose(&s, 300.0);
        let exact = observe_markers(&quiet(), &t_be, &mut rng_for(0, 0)).unwrap()[0];
        let mut rng = rng_for(9, 0);
        let draws = 1000;
        let mean: f64 = (0..draws)
            .map(|_| {
                let o = observe_markers(&s, &t_be, &mut rng).unwrap()[0];
                (o.translation - exact.translation).norm()
            })
            .sum::<f64>()
            / draws as f64;
        // mean of a chi distribution with 3 dof: σ·2√(2/π) ≈ 0.798
        let expect = 0.5 * 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - expect).abs() < 0.05 * expect, "{mean}");
    }

    #[test]
    fn marker_behind_camera() {
        let s = quiet();
        let t_be = plate_viewing_pose(&s, 300.0);
        // flip the camera to face away from the plate
        let away = t_be.compose(&s.truth.t_ec)
            .compose(&RigidTransform::from_rotation(rot_x(std::f64::consts::PI)))
            .compose(&s.truth.t_ec.inverse());
        assert!(matches!(
            observe_markers(&s, &away, &mut rng_for(1, 0)),
            Err(SimError::MarkerBehindCamera(_))
        ));
    }

    #[test]
    fn pixel_mapping() {
        let mut xr = XrayConfig {
            pixel_size: 0.1,
            origin_plate: [0.0, 0.0],
            ..Default::default()
        };
        assert_eq!(xr.plate_to_pixel([0.0, 0.0]), [0.0, 0.0]);
        let p = xr.plate_to_pixel([10.0, 0.0]);
        assert!((p[0] - 100.0).abs() < 1e-9 && p[1].abs() < 1e-12);
        xr.rotation = 0.4;
        xr.flip_y = true;
        let q = xr.pixel_to_plate(xr.plate_to_pixel([3.0, -7.0]));
        assert!((q[0] - 3.0).abs() < 1e-12 && (q[1] + 7.0).abs() < 1e-12);
    }

    #[test]
    fn xray_lesion_cnr_matches_contrast() {
        use crate::imaging::{cnr, Roi};
        let mut s = ScenarioConfig::default();
        s.lesions = vec![crate::simworld::LesionConfig {
            position_plate: [0.0, 0.0, -10.0],
            radius: 12.0,
            xray_contrast: 0.46,
            ..Default::default()
        }];
        let m = xray_project(&s, &mut rng_for(3, 0)).unwrap();
        let [u, v] = m.lesion_px[0];
        let (u, v) = (u.round() as usize, v.round() as usize);
        // square inside the disk vs. a background patch clear of markers
        let target = Roi::new(v - 40, u - 40, 80, 80);
        let background = Roi::new(v - 40, u + 80, 80, 80);
        let c = cnr(&m.image, &target, &background).unwrap();
        assert!((c - 0.46).abs() < 0.05, "{c}");
    }

    #[test]
    fn crosswire_visibility() {
        let fid = CrossWireFiducial {
            point: Vec3::zeros(),
            visibility_halfwidth: 0.5,
        };
        let mut rng = rng_for(0, 0);
        let p = us_observe_crosswire(&RigidTransform::identity(), &fid, [0.3, 0.05], 0.0, &mut rng);
        assert_eq!(p, Some([0.0, 0.0]));
        let off = RigidTransform::from_translation(Vec3::new(0.0, 0.0, -1.0));
        assert_eq!(us_observe_crosswire(&off, &fid, [0.3, 0.05], 0.0, &mut rng), None);
    }

    #[test]
    fn gravity_cases() {
        let bias = Wrench::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(gravity_wrench(0.0, &Vec3::new(1.0, 2.0, 3.0), &Mat3::identity(), &bias), bias);
        let w = gravity_wrench(1.0, &Vec3::zeros(), &Mat3::identity(), &Wrench::zero());
        assert!((w.force - Vec3::new(0.0, 0.0, -9.81)).norm() < 1e-15);
        let r = rotation_from_vector(&Vec3::new(0.3, -1.1, 0.7));
        let w = gravity_wrench(0.7, &Vec3::new(1.0, 0.0, 50.0), &r, &bias);
        assert!(((w.force - bias.force).norm() - 0.7 * 9.81).abs() < 1e-12);
    }

    #[test]
    fn rf_peak_sits_on_the_lesion() {
        let s = quiet();
        let lesion = s.lesion_base(0).unwrap();
        let r_bu = s.probe_rotation(&s.plate.t_bp.rotation);
        let depth_mm = 15.0;
        let t_bu = RigidTransform::new(r_bu, lesion - r_bu * Vec3::new(0.0, depth_mm, 0.0));
        let frame = synth_rf_frame(&s, &t_bu, &mut rng_for(0, 0));
        let (r, c) = frame
            .samples
            .indexed_iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(c as f64, center_line(s.imaging.lines));
        assert_eq!(r, (depth_mm / s.truth.us_scale[1]).round() as usize);
    }

    #[test]
    fn us_dataset_is_consistent_at_zero_noise() {
        use crate::uscalib::{bxp_cost, bxp_point};
        let s = quiet();
        let data = us_dataset(&s, 30, &mut rng_for(5, 0)).unwrap();
        let calib = s.truth.us_calibration();
        assert!(bxp_cost(&data, &calib).unwrap() < 1e-18);
        let p = bxp_point(&data[0], &calib);
        assert!((p - Vec3::from(s.truth.crosswire)).norm() < 1e-9);
    }

    #[test]
    fn handeye_dataset_loop_closes() {
        let s = quiet();
        let (robot, obs) = handeye_dataset(&s, 5, &mut rng_for(2, 0)).unwrap();
        for (b, c) in robot.iter().zip(&obs) {
            let chain = b.compose(&s.truth.t_ec).compose(c);
            let t = s.truth.handeye_target;
            assert!((chain.rotation - t.rotation).norm() < 1e-12);
            assert!((chain.translation - t.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn seeded_runs_are_identical() {
        let s = ScenarioConfig::default();
        let a = force_dataset(&s, 20, &mut rng_for(4, 2));
        let b = force_dataset(&s, 20, &mut rng_for(4, 2));
        assert_eq!(a, b);
    }
}
