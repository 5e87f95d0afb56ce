//! Ultrasound probe calibration from a fixed point fiducial.
//!
//! Each sample pairs the robot pose `B = T_BE` with the fiducial's position
//! `p` in the image. With the unknown image-to-end-effector transform `X` and
//! image scales `s`, every sample maps the fiducial to `B X (s∘p)` in the
//! base frame; at the true calibration all of them coincide. The objective is
//! the spread of these mapped points about their mean.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    rotation_from_vector, rotation_vector, rotation_vector_jacobian, Mat3, RigidTransform, Vec3,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UsCalibError {
    #[error("at least {needed} samples are required, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("cost became non-finite at iteration {0}")]
    Diverged(usize),
    #[error("image scales must be positive, got ({0}, {1})")]
    InvalidScale(f64, f64),
}

/// One fiducial capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BxpSample {
    /// `T_BE` at capture time.
    pub b: RigidTransform,
    /// Fiducial position in image units (lateral, axial).
    pub p_img: [f64; 2],
}

/// `T_EU` plus millimeters per image unit along the two image axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsCalibration {
    pub x: RigidTransform,
    pub scale: [f64; 2],
}

impl UsCalibration {
    pub fn new(x: RigidTransform, scale: [f64; 2]) -> Result<Self, UsCalibError> {
        if !(scale[0] > 0.0 && scale[1] > 0.0) {
            return Err(UsCalibError::InvalidScale(scale[0], scale[1]));
        }
        Ok(Self { x, scale })
    }

    /// Image point in the probe image frame, millimeters (z = 0 on the plane).
    pub fn image_point(&self, p_img: [f64; 2]) -> Vec3 {
        Vec3::new(self.scale[0] * p_img[0], self.scale[1] * p_img[1], 0.0)
    }

    fn to_params(self) -> Params {
        let w = rotation_vector(&self.x.rotation);
        Params([
            w.x,
            w.y,
            w.z,
            self.x.translation.x,
            self.x.translation.y,
            self.x.translation.z,
            self.scale[0],
            self.scale[1],
        ])
    }
}

/// Solver coordinates: rotation vector (3), translation mm (3), scale (2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params(pub [f64; 8]);

impl Params {
    fn rotation_vector(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    fn calibration(&self) -> UsCalibration {
        UsCalibration {
            x: RigidTransform::new(
                rotation_from_vector(&self.rotation_vector()),
                Vec3::new(self.0[3], self.0[4], self.0[5]),
            ),
            scale: [self.0[6], self.0[7]],
        }
    }
}

/// The fiducial as seen by one sample, in the base frame: `B X (s∘p)`.
pub fn bxp_point(sample: &BxpSample, calib: &UsCalibration) -> Vec3 {
    sample
        .b
        .transform_point(&calib.x.transform_point(&calib.image_point(sample.p_img)))
}

fn check_count(samples: &[BxpSample], needed: usize) -> Result<(), UsCalibError> {
    if samples.len() < needed {
        Err(UsCalibError::TooFewSamples {
            needed,
            got: samples.len(),
        })
    } else {
        Ok(())
    }
}

fn mapped_with_mean(samples: &[BxpSample], calib: &UsCalibration) -> (Vec<Vec3>, Vec3) {
    let points: Vec<Vec3> = samples.iter().map(|s| bxp_point(s, calib)).collect();
    let mean = points.iter().sum::<Vec3>() / points.len() as f64;
    (points, mean)
}

/// `Σᵢ ‖Bᵢ X pᵢ − mean‖²` in mm².
pub fn bxp_cost(samples: &[BxpSample], calib: &UsCalibration) -> Result<f64, UsCalibError> {
    check_count(samples, 2)?;
    let (points, mean) = mapped_with_mean(samples, calib);
    Ok(points.iter().map(|p| (p - mean).norm_squared()).sum())
}

/// Analytic gradient of [`bxp_cost`] with respect to
/// `[rotation vector (3), translation (3), scale (2)]`.
///
/// Because the residuals sum to zero, the mean's own dependence drops out:
/// `∂cost = 2 Σᵢ rᵢ · ∂qᵢ`.
pub fn bxp_gradient(
    samples: &[BxpSample],
    calib: &UsCalibration,
) -> Result<[f64; 8], UsCalibError> {
    check_count(samples, 2)?;
    Ok(gradient_at(samples, &calib.to_params()).1)
}

fn gradient_at(samples: &[BxpSample], params: &Params) -> (f64, [f64; 8]) {
    let (cost, g, _) = gradient_with_magnitude(samples, params);
    (cost, g)
}

/// Also returns `Σᵢ ‖qᵢ‖`, the magnitude the gradient's round-off scales with.
fn gradient_with_magnitude(samples: &[BxpSample], params: &Params) -> (f64, [f64; 8], f64) {
    let calib = params.calibration();
    let (points, mean) = mapped_with_mean(samples, &calib);
    let magnitude: f64 = points.iter().map(|q| q.norm()).sum();
    let d_rot = rotation_vector_jacobian(&params.rotation_vector());
    let r_x = calib.x.rotation;
    let mut cost = 0.0;
    let mut g = [0.0; 8];
    for (s, q) in samples.iter().zip(&points) {
        let r = q - mean;
        cost += r.norm_squared();
        // residual pulled back into the end-effector frame
        let r_e = s.b.rotation.transpose() * r;
        let x_img = calib.image_point(s.p_img);
        for k in 0..3 {
            g[k] += 2.0 * r_e.dot(&(d_rot[k] * x_img));
            g[3 + k] += 2.0 * r_e[k];
        }
        g[6] += 2.0 * r_e.dot(&(r_x.column(0) * s.p_img[0]));
        g[7] += 2.0 * r_e.dot(&(r_x.column(1) * s.p_img[1]));
    }
    (cost, g, magnitude)
}

fn cost_at(samples: &[BxpSample], params: &Params) -> f64 {
    let (points, mean) = mapped_with_mean(samples, &params.calibration());
    points.iter().map(|p| (p - mean).norm_squared()).sum()
}

/// Central-difference gradient of [`bxp_cost`], same coordinates as
/// [`bxp_gradient`]. Test oracle.
pub fn bxp_gradient_numeric(samples: &[BxpSample], calib: &UsCalibration, step: f64) -> [f64; 8] {
    let base = calib.to_params();
    let mut g = [0.0; 8];
    for (k, gk) in g.iter_mut().enumerate() {
        let mut plus = base;
        let mut minus = base;
        plus.0[k] += step;
        minus.0[k] -= step;
        *gk = (cost_at(samples, &plus) - cost_at(samples, &minus)) / (2.0 * step);
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Hold the image scales at their initial values.
    pub freeze_scale: bool,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Step shrink factor on rejection.
    pub backtrack: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            max_iters: 5000,
            grad_tol: 1e-10,
            freeze_scale: false,
            armijo_c: 1e-4,
            backtrack: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    /// Line search could not decrease the cost further (round-off floor).
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub calibration: UsCalibration,
    pub iterations: usize,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    pub stop: StopReason,
    pub trace: Vec<TraceRow>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::GradientTolerance
    }

    /// `iter,cost,grad_norm,step`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,cost,grad_norm,step")?;
        for row in &self.trace {
            writeln!(
                out,
                "{},{:e},{:e},{:e}",
                row.iter, row.cost, row.grad_norm, row.step
            )?;
        }
        Ok(())
    }
}

/// Per-coordinate scaling of the gradient step. Rotation, translation and
/// scale live on very different numeric ranges, so each block is scaled by
/// its typical lever arm: the descent direction stays a positive multiple of
/// the gradient per block.
fn coordinate_scaling(samples: &[BxpSample], init: &UsCalibration) -> [f64; 8] {
    let n = samples.len() as f64;
    let mean_sq = |k: usize| samples.iter().map(|s| s.p_img[k].powi(2)).sum::<f64>() / n;
    let (u2, v2) = (mean_sq(0), mean_sq(1));
    let arm2 = (init.scale[0].powi(2) * u2 + init.scale[1].powi(2) * v2 + init.x.translation.norm_squared())
        .max(1.0);
    let rot = 1.0 / arm2;
    [
        rot,
        rot,
        rot,
        1.0,
        1.0,
        1.0,
        1.0 / u2.max(1e-12),
        1.0 / v2.max(1e-12),
    ]
}

/// Gradient descent with Armijo backtracking on [`bxp_cost`].
///
/// Each iteration starts from `learning_rate` (relative to the per-block
/// scaling) and halves the step until the sufficient-decrease condition holds,
/// so accepted iterates never increase the cost.
pub fn solve_bxp(
    samples: &[BxpSample],
    init: &UsCalibration,
    opts: &SolveOptions,
) -> Result<SolveReport, UsCalibError> {
    check_count(samples, 6)?;
    UsCalibration::new(init.x, init.scale)?;
    let scaling = coordinate_scaling(samples, init);
    let n = samples.len() as f64;
    let mut params = init.to_params();
    let (mut cost, mut grad, magnitude) = gradient_with_magnitude(samples, &params);
    // grad_tol is compared against the gradient relative to Σ‖qᵢ‖ so the
    // threshold sits above the floating-point floor for any base-frame scale
    let tol = opts.grad_tol * magnitude.max(1.0);
    if opts.freeze_scale {
        grad[6] = 0.0;
        grad[7] = 0.0;
    }
    let mut trace = Vec::new();
    let norm = |g: &[f64; 8]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut grad_norm = norm(&grad);
    trace.push(TraceRow {
        iter: 0,
        cost,
        grad_norm,
        step: 0.0,
    });
    // adaptive growth lets the line search recover from a long run of
    // backtracked steps without changing the acceptance rule
    let mut step = opts.learning_rate;
    let mut iter = 0;
    let mut stop = StopReason::MaxIterations;
    while iter < opts.max_iters {
        if !cost.is_finite() {
            return Err(UsCalibError::Diverged(iter));
        }
        if grad_norm < tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        iter += 1;
        let dir: [f64; 8] = std::array::from_fn(|k| -scaling[k] * grad[k] / n);
        let slope: f64 = (0..8).map(|k| grad[k] * dir[k]).sum();
        let mut t = step;
        let mut accepted = None;
        for _ in 0..80 {
            let mut trial = params;
            for k in 0..8 {
                trial.0[k] += t * dir[k];
            }
            let c = cost_at(samples, &trial);
            if c.is_finite() && c <= cost + opts.armijo_c * t * slope {
                accepted = Some((trial, c));
                break;
            }
            t *= opts.backtrack;
        }
        let Some((trial, _)) = accepted else {
            stop = StopReason::Stalled;
            iter -= 1;
            break;
        };
        params = trial;
        let (c, g) = gradient_at(samples, &params);
        if !c.is_finite() {
            return Err(UsCalibError::Diverged(iter));
        }
        cost = c;
        grad = g;
        if opts.freeze_scale {
            grad[6] = 0.0;
            grad[7] = 0.0;
        }
        grad_norm = norm(&grad);
        trace.push(TraceRow {
            iter,
            cost,
            grad_norm,
            step: t,
        });
        step = if t < step { t } else { (t * 2.0).min(opts.learning_rate * 1e6) };
    }
    if iter == opts.max_iters && grad_norm < tol {
        stop = StopReason::GradientTolerance;
    }
    log::debug!("bxp: {iter} iterations, cost {cost:e}, stop {stop:?}");
    Ok(SolveReport {
        calibration: params.calibration(),
        iterations: iter,
        final_cost: cost,
        final_grad_norm: grad_norm,
        stop,
        trace,
    })
}

/// Errors of an estimate against a reference calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationError {
    pub rotation_rad: f64,
    pub translation_mm: f64,
    /// Largest relative scale error.
    pub scale_rel: f64,
}

pub fn calibration_error(est: &UsCalibration, truth: &UsCalibration) -> CalibrationError {
    let (rotation_rad, translation_mm) = est.x.distance_to(&truth.x);
    let scale_rel = (0..2)
        .map(|k| ((est.scale[k] - truth.scale[k]) / truth.scale[k]).abs())
        .fold(0.0, f64::max);
    CalibrationError {
        rotation_rad,
        translation_mm,
        scale_rel,
    }
}

/// Right-multiplies the rotation by `rot`, offsets the translation and
/// multiplies the scales.
pub fn perturb(calib: &UsCalibration, rot: Mat3, dt: Vec3, scale_factor: [f64; 2]) -> UsCalibration {
    UsCalibration {
        x: RigidTransform::new(calib.x.rotation * rot, calib.x.translation + dt),
        scale: [calib.scale[0] * scale_factor[0], calib.scale[1] * scale_factor[1]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_x, rot_y, rot_z};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth() -> UsCalibration {
        UsCalibration::new(
            RigidTransform::new(rot_x(std::f64::consts::FRAC_PI_2) * rot_z(0.05), Vec3::new(5.0, -3.0, 160.0)),
            [0.2, 0.05],
        )
        .unwrap()
    }

    /// Poses that put a fixed fiducial exactly on the image plane.
    fn dataset(calib: &UsCalibration, n: usize, seed: u64) -> Vec<BxpSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fiducial = Vec3::new(450.0, 30.0, 60.0);
        (0..n)
            .map(|_| {
                let p_img = [rng.random_range(-90.0..90.0), rng.random_range(100.0..700.0)];
                let r_bu = rot_x(rng.random_range(-0.5..0.5))
                    * rot_y(rng.random_range(-0.5..0.5))
                    * rot_z(rng.random_range(-0.6..0.6));
                let t_bu = fiducial - r_bu * calib.image_point(p_img);
                let bu = RigidTransform::new(r_bu, t_bu);
                BxpSample {
                    b: bu.compose(&calib.x.inverse()),
                    p_img,
                }
            })
            .collect()
    }

    #[test]
    fn bxp_point_trivial_cases() {
        let id = UsCalibration::new(RigidTransform::identity(), [1.0, 1.0]).unwrap();
        let s = BxpSample {
            b: RigidTransform::identity(),
            p_img: [0.0, 0.0],
        };
        assert_eq!(bxp_point(&s, &id), Vec3::zeros());
        let scaled = UsCalibration::new(RigidTransform::identity(), [0.1, 0.1]).unwrap();
        let s = BxpSample {
            b: RigidTransform::identity(),
            p_img: [10.0, 20.0],
        };
        assert!((bxp_point(&s, &scaled) - Vec3::new(1.0, 2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn consistent_dataset_maps_to_one_point() {
        let c = truth();
        let data = dataset(&c, 30, 1);
        let p0 = bxp_point(&data[0], &c);
        for s in &data {
            assert!((bxp_point(s, &c) - p0).norm() < 1e-9);
        }
        assert!(bxp_cost(&data, &c).unwrap() < 1e-18);
    }

    #[test]
    fn cost_positive_off_optimum_and_zero_for_duplicates() {
        let c = truth();
        let data = dataset(&c, 10, 2);
        let off = perturb(&c, Mat3::identity(), Vec3::new(1.0, 0.0, 0.0), [1.0, 1.0]);
        assert!(bxp_cost(&data, &off).unwrap() > 0.0);
        let dup = vec![data[3], data[3]];
        assert_eq!(bxp_cost(&dup, &off).unwrap(), 0.0);
        assert_eq!(
            bxp_cost(&data[..1], &c),
            Err(UsCalibError::TooFewSamples { needed: 2, got: 1 })
        );
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let c = truth();
        let data = dataset(&c, 30, 3);
        let g = bxp_gradient(&data, &c).unwrap();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n < 1e-8, "{n}");
    }

    #[test]
    fn identical_poses_leave_directions_unobserved() {
        let c = truth();
        let mut data = dataset(&c, 1, 4);
        data.push(data[0]);
        data.push(data[0]);
        let g = bxp_gradient(&data, &perturb(&c, rot_y(0.1), Vec3::new(2.0, 0.0, 0.0), [1.1, 0.9]))
            .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cost_is_invariant_to_base_frame_change() {
        let c = truth();
        let data = dataset(&c, 12, 5);
        let off = perturb(&c, rot_z(0.05), Vec3::new(1.0, -2.0, 0.5), [1.02, 0.97]);
        let g = RigidTransform::new(rot_y(0.7) * rot_x(-1.1), Vec3::new(-300.0, 1000.0, 20.0));
        let moved: Vec<_> = data
            .iter()
            .map(|s| BxpSample {
                b: g.compose(&s.b),
                p_img: s.p_img,
            })
            .collect();
        let a = bxp_cost(&data, &off).unwrap();
        let b = bxp_cost(&moved, &off).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn solve_from_truth_stops_immediately() {
        let c = truth();
        let data = dataset(&c, 30, 6);
        let rep = solve_bxp(&data, &c, &SolveOptions::default()).unwrap();
        assert!(rep.iterations <= 1, "{}", rep.iterations);
        assert!(rep.final_cost < 1e-18);
    }

    #[test]
    fn solve_rejects_small_datasets() {
        let c = truth();
        let data = dataset(&c, 5, 7);
        assert!(matches!(
            solve_bxp(&data, &c, &SolveOptions::default()),
            Err(UsCalibError::TooFewSamples { needed: 6, got: 5 })
        ));
    }

    #[test]
    fn solve_recovers_perturbed_start() {
        let c = truth();
        let data = dataset(&c, 30, 8);
        let init = perturb(
            &c,
            rot_x(3f64.to_radians()) * rot_y(-4f64.to_radians()),
            Vec3::new(3.0, -4.0, 0.0),
            [1.05, 0.95],
        );
        let rep = solve_bxp(&data, &init, &SolveOptions::default()).unwrap();
        let err = calibration_error(&rep.calibration, &c);
        assert!(err.translation_mm < 0.1, "{err:?} {:?}", rep.stop);
        assert!(err.rotation_rad < 0.1f64.to_radians(), "{err:?}");
        assert!(err.scale_rel < 1e-3, "{err:?}");
        for w in rep.trace.windows(2) {
            assert!(w[1].cost <= w[0].cost);
        }
    }

    #[test]
    fn frozen_scale_is_kept() {
        let c = truth();
        let data = dataset(&c, 30, 9);
        let init = perturb(&c, rot_z(0.02), Vec3::new(1.0, 1.0, 1.0), [1.0, 1.0]);
        let opts = SolveOptions {
            freeze_scale: true,
            ..Default::default()
        };
        let rep = solve_bxp(&data, &init, &opts).unwrap();
        assert_eq!(rep.calibration.scale, c.scale);
        assert!(calibration_error(&rep.calibration, &c).translation_mm < 0.1);
    }

    #[test]
    fn trace_csv_has_header() {
        let c = truth();
        let data = dataset(&c, 8, 10);
        let rep = solve_bxp(&data, &c, &SolveOptions::default()).unwrap();
        let mut buf = Vec::new();
        rep.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,cost,grad_norm,step\n0,"));
    }
}
