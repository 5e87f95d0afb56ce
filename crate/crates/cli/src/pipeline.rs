//! End-to-end procedures on the synthetic world: calibrations, lesion
//! navigation, contact, force-regulated scan and volume acquisition.

use mammobot_core::forcecalib::{
    compensate, fit_bias_model, pose_vector, wrench_rms, BasisDegrees, BiasModel, ForceCalibError,
    PoseVector, Wrench,
};
use mammobot_core::geometry::{rotation_from_vector, Mat3, RigidTransform, Vec3};
use mammobot_core::handeye::{
    build_motion_pairs, handeye_residual, solve_ax_xb, HandEyeError, HandEyeResidual,
};
use mammobot_core::imaging::{
    assemble_volume, bmode_volume_normalized, locate_peak, ImagingError, Peak, RfFrame, UsVolume,
};
use mammobot_core::motion::{
    descend_until_contact, ik_solve, run_scan, standoff_target, DescentEvent, IkOptions,
    MotionError, Planner, ScanCommand, ScanLog,
};
use mammobot_core::registration::{
    estimate_homography_dlt, estimate_plate_pose, map_lesion, marker_correspondences, DltOptions,
    Homography, PlatePose, RegistrationError,
};
use mammobot_core::simworld::{
    annotate, center_line, force_dataset, force_reference_rotation, gravity_wrench,
    handeye_dataset, observe_markers, plate_viewing_pose, synth_rf_frame, us_dataset,
    xray_project, ContactPlant, Joints, Mammogram, ScenarioConfig, SimError,
};
use mammobot_core::uscalib::{
    calibration_error, perturb, solve_bxp, CalibrationError, SolveOptions, SolveReport,
    UsCalibError, UsCalibration,
};
use mammobot_core::HomogeneousPoint2;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("hand-eye: {0}")]
    HandEye(#[from] HandEyeError),
    #[error("ultrasound calibration: {0}")]
    UsCalib(#[from] UsCalibError),
    #[error("force calibration: {0}")]
    ForceCalib(#[from] ForceCalibError),
    #[error("registration: {0}")]
    Registration(#[from] RegistrationError),
    #[error("motion: {0}")]
    Motion(#[from] MotionError),
    #[error("imaging: {0}")]
    Imaging(#[from] ImagingError),
    #[error("world: {0}")]
    Sim(#[from] SimError),
    #[error("lesion {0} does not exist")]
    NoSuchLesion(usize),
}

impl PipelineError {
    /// Short machine-readable kind used in error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::HandEye(_) => "handeye",
            Self::UsCalib(_) => "us_calibration",
            Self::ForceCalib(_) => "force_calibration",
            Self::Registration(_) => "registration",
            Self::Motion(MotionError::PlanningTimeout(_)) => "planning_timeout",
            Self::Motion(MotionError::Timeout(_)) => "contact_timeout",
            Self::Motion(_) => "motion",
            Self::Imaging(_) => "imaging",
            Self::Sim(_) => "scenario",
            Self::NoSuchLesion(_) => "no_such_lesion",
        }
    }
}

/// Camera distance above the plate when reading the markers, mm.
pub const MARKER_VIEW_DISTANCE: f64 = 300.0;

// ---------------------------------------------------------------------------
// Calibrations

#[derive(Debug, Clone, Serialize)]
pub struct HandEyeOutcome {
    pub t_ec: RigidTransform,
    pub residual: HandEyeResidual,
    pub pairs: usize,
    pub rotation_error_rad: f64,
    pub translation_error_mm: f64,
}

pub fn calibrate_handeye<R: Rng + ?Sized>(
    s: &ScenarioConfig,
    rng: &mut R,
) -> Result<HandEyeOutcome, PipelineError> {
    let (robot, marker) = handeye_dataset(s, s.calibration.handeye_poses, rng)?;
    let pairs = build_motion_pairs(&robot, &marker)?;
    let x = solve_ax_xb(&pairs)?;
    let residual = handeye_residual(&pairs, &x)?;
    let (rot, trans) = x.distance_to(&s.truth.t_ec);
    Ok(HandEyeOutcome {
        t_ec: x,
        residual,
        pairs: pairs.len(),
        rotation_error_rad: rot,
        translation_error_mm: trans,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UsOutcome {
    pub init: UsCalibration,
    pub report: SolveReport,
    pub error: CalibrationError,
}

/// Truth perturbed by the configured rotation (random axis), translation
/// (random direction) and relative scale offsets.
pub fn perturbed_initial_guess<R: Rng + ?Sized>(s: &ScenarioConfig, rng: &mut R) -> UsCalibration {
    let c = &s.calibration;
    let dir = |rng: &mut R| loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            break v / n;
        }
    };
    let rot = rotation_from_vector(&(dir(rng) * c.us_init_rot_deg.to_radians()));
    let dt = dir(rng) * c.us_init_trans;
    let mut sign = || if rng.random::<bool>() { 1.0 } else { -1.0 };
    let factors = [1.0 + sign() * c.us_init_scale, 1.0 + sign() * c.us_init_scale];
    perturb(&s.truth.us_calibration(), rot, dt, factors)
}

pub fn calibrate_us<R: Rng + ?Sized>(
    s: &ScenarioConfig,
    init: Option<UsCalibration>,
    rng: &mut R,
) -> Result<UsOutcome, PipelineError> {
    let samples = us_dataset(s, s.calibration.us_samples, rng)?;
    let init = init.unwrap_or_else(|| perturbed_initial_guess(s, rng));
    let report = solve_bxp(&samples, &init, &SolveOptions::default())?;
    let error = calibration_error(&report.calibration, &s.truth.us_calibration());
    log::info!(
        "ultrasound calibration: {} iterations, stop {:?}",
        report.iterations,
        report.stop
    );
    Ok(UsOutcome {
        init,
        report,
        error,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ForceOutcome {
    pub model: BiasModel,
    /// Orientation the pose vectors are measured from.
    pub reference: Mat3,
    pub train_samples: usize,
    pub test_samples: usize,
    pub uncompensated_force_rms: f64,
    pub uncompensated_torque_rms: f64,
    pub residual_force_rms: f64,
    pub residual_torque_rms: f64,
}

impl ForceOutcome {
    /// Larger of the force and torque held-out residual ratios.
    pub fn residual_ratio(&self) -> f64 {
        (self.residual_force_rms / self.uncompensated_force_rms)
            .max(self.residual_torque_rms / self.uncompensated_torque_rms)
    }

    pub fn pose(&self, t_be: &RigidTransform) -> PoseVector {
        pose_vector(t_be, &self.reference)
    }
}

/// Fits on the first 80 % of the capture and scores on the rest.
pub fn calibrate_force<R: Rng + ?Sized>(
    s: &ScenarioConfig,
    rng: &mut R,
) -> Result<ForceOutcome, PipelineError> {
    let data = force_dataset(s, s.calibration.force_samples, rng);
    let reference = force_reference_rotation(s);
    let samples: Vec<(PoseVector, Wrench)> = data
        .iter()
        .map(|(t, w)| (pose_vector(t, &reference), *w))
        .collect();
    let split = samples.len() * 4 / 5;
    let (train, test) = samples.split_at(split);
    let degrees = BasisDegrees::auto(s.calibration.force_degree, train.len());
    let model = fit_bias_model(train, degrees)?;
    let raw = wrench_rms(test.iter().map(|(_, w)| w));
    let residuals: Vec<Wrench> = test.iter().map(|(p, w)| compensate(&model, p, w)).collect();
    let res = wrench_rms(&residuals);
    Ok(ForceOutcome {
        model,
        reference,
        train_samples: train.len(),
        test_samples: test.len(),
        uncompensated_force_rms: raw.force,
        uncompensated_torque_rms: raw.torque,
        residual_force_rms: res.force,
        residual_torque_rms: res.torque,
    })
}

/// Estimated quantities the navigation relies on.
#[derive(Debug, Clone)]
pub struct Calibrations {
    pub t_ec: RigidTransform,
    pub us: UsCalibration,
    pub force: ForceOutcome,
}

/// All three calibrations, drawn from one RNG stream in a fixed order.
pub fn calibrate_all<R: Rng + ?Sized>(
    s: &ScenarioConfig,
    rng: &mut R,
) -> Result<Calibrations, PipelineError> {
    let he = calibrate_handeye(s, rng)?;
    let us = calibrate_us(s, None, rng)?;
    let force = calibrate_force(s, rng)?;
    Ok(Calibrations {
        t_ec: he.t_ec,
        us: us.report.calibration,
        force,
    })
}

// ---------------------------------------------------------------------------
// Navigation and scanning

#[derive(Debug, Clone)]
pub struct Registration {
    pub plate: PlatePose,
    pub homography: Homography,
    pub mammogram: Mammogram,
    pub marker_px: [[f64; 2]; 4],
    pub lesion_px: Vec<[f64; 2]>,
}

/// Plate pose from the camera and the mammogram-to-plate homography.
pub fn register<R: Rng + ?Sized>(
    s: &ScenarioConfig,
    calib: &Calibrations,
    rng: &mut R,
) -> Result<Registration, PipelineError> {
    let t_be = plate_viewing_pose(s, MARKER_VIEW_DISTANCE);
    let obs = observe_markers(s, &t_be, rng)?;
    let t_bc = t_be.compose(&calib.t_ec);
    let markers_base = obs.map(|t_ct| t_bc.compose(&t_ct));
    let plate = estimate_plate_pose(&markers_base)?;
    let mammogram = xray_project(s, rng)?;
    let (marker_px, lesion_px) = annotate(s, &mammogram, rng);
    let corrs = marker_correspondences(&plate, &marker_px);
    let homography = estimate_homography_dlt(&corrs, &DltOptions::default())?;
    Ok(Registration {
        plate,
        homography,
        mammogram,
        marker_px,
        lesion_px,
    })
}

/// Random start configuration around the scenario's home joints.
pub fn jittered_start<R: Rng + ?Sized>(s: &ScenarioConfig, rng: &mut R) -> Joints {
    let j = s.start_jitter;
    std::array::from_fn(|i| {
        if j > 0.0 {
            s.home_joints[i] + rng.random_range(-j..=j)
        } else {
            s.home_joints[i]
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxisErrors {
    /// Along the plate x axis, mm.
    pub x: f64,
    /// Along the plate y axis, mm.
    pub y: f64,
    /// Along the plate normal, mm.
    pub z: f64,
}

impl AxisErrors {
    fn in_frame(d: &Vec3, r: &Mat3) -> Self {
        let v = r.transpose() * d;
        Self {
            x: v.x,
            y: v.y,
            z: v.z,
        }
    }

    pub fn in_plane(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub lesion: usize,
    pub start: Joints,
    pub goal: Joints,
    pub path: Vec<Joints>,
    pub ik_iterations: usize,
    pub lesion_estimate: Vec3,
    pub descent: DescentEvent,
    /// Estimated image origin at first contact, base frame.
    pub navigated: Vec3,
    /// Lesion position recovered from the brightest voxel, base frame.
    pub expected: Vec3,
    pub peak: Peak,
    /// `expected − navigated` in the estimated plate frame.
    pub repeatability_error: AxisErrors,
    /// `navigated − true lesion foot point` in the true plate frame.
    pub navigation_error: AxisErrors,
    pub scan: ScanLog,
    pub volume: UsVolume,
    pub center_rf: RfFrame,
    pub registration: Registration,
}

/// Plans to the standoff above the lesion, descends to contact, sweeps a
/// volume through the lesion and finally runs the force-regulated scan.
pub fn run_trial<R: Rng + ?Sized>(
    s: &ScenarioConfig,
    calib: &Calibrations,
    lesion: usize,
    start: Joints,
    rng: &mut R,
) -> Result<TrialOutcome, PipelineError> {
    if lesion >= s.lesions.len() {
        return Err(PipelineError::NoSuchLesion(lesion));
    }
    let reg = register(s, calib, rng)?;
    let px = reg.lesion_px[lesion];
    let lesion_estimate = map_lesion(
        &reg.plate,
        &reg.homography,
        &HomogeneousPoint2::from_cartesian(px[0], px[1]),
    )?;
    let n = reg.plate.normal();
    let goal_point = standoff_target(&lesion_estimate, &n, s.control.k0);
    let r_bu = s.probe_rotation(&reg.plate.t_bp.rotation);
    let t_bu_goal = RigidTransform::new(r_bu, goal_point);
    let t_be_goal = t_bu_goal.compose(&calib.us.x.inverse());

    let ik = ik_solve(&s.arm, &t_be_goal, &start, &IkOptions::default())?;
    let planner = Planner::new(&s.arm, &s.collision, &s.obstacles, s.rrt);
    let path = planner.plan(&start, &ik.joints)?;
    log::debug!("path with {} waypoints to lesion {lesion}", path.len());
    // the arm executes the joint path exactly; the pose is its kinematics
    let t_be = s.arm.forward_kinematics(&ik.joints)?;

    // contact phase: probe tip is the true image origin
    let tip = t_be.compose(&s.truth.t_eu).translation;
    let plate_point = s.plate.t_bp.translation;
    let mut plant = ContactPlant::new(s.plant, plate_point, s.plate.normal(), tip, rng.random());
    plant.sensor_rotation = t_be.rotation;
    plant.bias = gravity_wrench(
        s.truth.tool_mass,
        &Vec3::from(s.truth.tool_com),
        &t_be.rotation,
        &s.truth.bias(),
    );
    let offset = calib.force.model.predict(&calib.force.pose(&t_be));
    let c = &s.control;
    let descent = descend_until_contact(
        &mut plant,
        &n,
        c.v_descend,
        c.f_contact,
        c.dt,
        c.descend_timeout,
        &offset,
    )?;
    let shift = plant.position - tip;
    let t_be_contact = RigidTransform::new(t_be.rotation, t_be.translation + shift);
    let navigated = t_be_contact.compose(&calib.us.x).translation;

    // elevational sweep through the navigated point
    let im = &s.imaging;
    let elev: Vec3 = r_bu.column(2).into();
    let mid = (im.frames as f64 - 1.0) / 2.0;
    let poses: Vec<RigidTransform> = (0..im.frames)
        .map(|k| {
            let d = (k as f64 - mid) * im.frame_spacing;
            RigidTransform::new(t_be_contact.rotation, t_be_contact.translation + elev * d)
        })
        .collect();
    let rf: Vec<RfFrame> = poses
        .iter()
        .map(|t| synth_rf_frame(s, &t.compose(&s.truth.t_eu), rng))
        .collect();
    let images = bmode_volume_normalized(&rf, im.dynamic_range_db)?;
    let volume = assemble_volume(images, im.frame_spacing)?;
    let peak = locate_peak(&volume)?;
    let scale = calib.us.scale;
    let p_img = Vec3::new(
        (peak.col as f64 - center_line(im.lines)) * scale[0],
        peak.row as f64 * scale[1],
        0.0,
    );
    let expected = poses[peak.frame].compose(&calib.us.x).transform_point(&p_img);
    let repeatability_error = AxisErrors::in_frame(&(expected - navigated), &reg.plate.t_bp.rotation);
    let truth_foot = s.lesion_target(lesion).expect("checked above");
    let navigation_error = AxisErrors::in_frame(&(navigated - truth_foot), &s.plate.t_bp.rotation);

    let cmd = ScanCommand {
        tangential_dir: elev,
        plate_normal: n,
        v_t: c.v_t,
        f_target: c.f_target,
        duration: c.scan_duration,
        dt: c.dt,
    };
    let scan = run_scan(&mut plant, &cmd, &c.gains, &offset)?;
    let center_rf = rf[im.frames / 2].clone();

    Ok(TrialOutcome {
        lesion,
        start,
        goal: ik.joints,
        path,
        ik_iterations: ik.iterations,
        lesion_estimate,
        descent,
        navigated,
        expected,
        peak,
        repeatability_error,
        navigation_error,
        scan,
        volume,
        center_rf,
        registration: reg,
    })
}

/// Force-regulated scan alone on the scenario plant, starting from rest on
/// the plate surface after a descent to the contact threshold. Used to
/// characterize the controller independently of navigation.
pub fn force_scan_only<R: Rng + ?Sized>(
    s: &ScenarioConfig,
    rng: &mut R,
) -> Result<(DescentEvent, ScanLog), PipelineError> {
    let n = s.plate.normal();
    let start = s.plate.t_bp.translation + n * 10.0;
    let mut plant = ContactPlant::new(s.plant, s.plate.t_bp.translation, n, start, rng.random());
    let c = &s.control;
    let zero = Wrench::zero();
    let descent = descend_until_contact(
        &mut plant,
        &n,
        c.v_descend,
        c.f_contact,
        c.dt,
        c.descend_timeout,
        &zero,
    )?;
    let cmd = ScanCommand {
        tangential_dir: s.plate.t_bp.rotation.column(1).into(),
        plate_normal: n,
        v_t: c.v_t,
        f_target: c.f_target,
        duration: c.scan_duration,
        dt: c.dt,
    };
    let log = run_scan(&mut plant, &cmd, &c.gains, &zero)?;
    Ok((descent, log))
}
