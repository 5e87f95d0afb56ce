//! Scenario description: everything the synthetic world needs, loaded from
//! JSON with defaults for every omitted field.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arm::{ArmModel, Joints};
use super::plant::PlantParams;
use super::SimError;
use crate::forcecalib::Wrench;
use crate::geometry::{rot_x, rot_y, rot_z, Mat3, RigidTransform, Vec3};
use crate::motion::{Aabb, CollisionModel, PidGains, RrtOptions};
use crate::uscalib::UsCalibration;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateConfig {
    /// Plate frame in the base frame; z is the outward normal (probe side).
    pub t_bp: RigidTransform,
    /// Marker centers on the plate, in the fixed p1..p4 order.
    pub marker_centers: [[f64; 2]; 4],
    /// Marker edge length, mm.
    pub marker_size: f64,
}

impl Default for PlateConfig {
    fn default() -> Self {
        Self {
            t_bp: RigidTransform::new(
                rot_z(0.15) * rot_x(0.06),
                Vec3::new(-470.0, -110.0, 150.0),
            ),
            marker_centers: [[-40.0, -60.0], [40.0, -60.0], [40.0, 60.0], [-40.0, 60.0]],
            marker_size: 20.0,
        }
    }
}

impl PlateConfig {
    pub fn normal(&self) -> Vec3 {
        self.t_bp.rotation.column(2).into()
    }

    /// Marker poses `T_BT_i`: on the plate surface, axes parallel to the plate.
    pub fn marker_poses(&self) -> [RigidTransform; 4] {
        self.marker_centers.map(|[x, y]| {
            self.t_bp
                .compose(&RigidTransform::from_translation(Vec3::new(x, y, 0.0)))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LesionConfig {
    /// Plate coordinates; negative z lies under the plate.
    pub position_plate: [f64; 3],
    pub radius: f64,
    pub us_amplitude: f64,
    /// Disk contrast in the mammogram, in units of background σ.
    pub xray_contrast: f64,
}

impl Default for LesionConfig {
    fn default() -> Self {
        Self {
            position_plate: [6.0, -8.0, -15.0],
            radius: 1.0,
            us_amplitude: 1.0,
            xray_contrast: 0.46,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XrayConfig {
    /// mm per pixel
    pub pixel_size: f64,
    /// Plate (x, y) that lands on pixel (0, 0).
    pub origin_plate: [f64; 2],
    /// Angle of the image axes relative to the plate axes, rad.
    pub rotation: f64,
    pub flip_y: bool,
    pub width: usize,
    pub height: usize,
    pub background_mean: f64,
    pub background_sigma: f64,
    pub marker_intensity: f64,
    /// Ray direction in the base frame; the plate normal when absent.
    pub projection_axis: Option<[f64; 3]>,
}

impl Default for XrayConfig {
    fn default() -> Self {
        Self {
            pixel_size: 0.2,
            origin_plate: [-60.0, -80.0],
            rotation: 0.0,
            flip_y: false,
            width: 600,
            height: 800,
            background_mean: 100.0,
            background_sigma: 10.0,
            marker_intensity: 400.0,
            projection_axis: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthConfig {
    pub t_ec: RigidTransform,
    pub t_eu: RigidTransform,
    /// mm per image unit: lateral (per line), axial (per sample).
    pub us_scale: [f64; 2],
    /// kg
    pub tool_mass: f64,
    /// Tool center of mass in the sensor frame, mm.
    pub tool_com: [f64; 3],
    pub sensor_bias: [f64; 6],
    /// Fixed calibration target observed during hand-eye capture.
    pub handeye_target: RigidTransform,
    /// Cross-wire intersection in the base frame, mm.
    pub crosswire: [f64; 3],
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            t_ec: RigidTransform::new(rot_z(0.1) * rot_x(0.03), Vec3::new(70.0, 5.0, 40.0)),
            t_eu: RigidTransform::new(
                rot_x(std::f64::consts::FRAC_PI_2) * rot_y(0.02) * rot_z(-0.015),
                Vec3::new(2.0, -3.0, 150.0),
            ),
            us_scale: [0.3, 0.05],
            tool_mass: 0.6,
            tool_com: [2.0, -1.0, 60.0],
            sensor_bias: [0.8, -0.5, 1.2, 15.0, -20.0, 5.0],
            handeye_target: RigidTransform::new(rot_z(0.3), Vec3::new(-450.0, 150.0, 50.0)),
            crosswire: [-350.0, 250.0, 120.0],
        }
    }
}

impl TruthConfig {
    pub fn us_calibration(&self) -> UsCalibration {
        UsCalibration {
            x: self.t_eu,
            scale: self.us_scale,
        }
    }

    pub fn bias(&self) -> Wrench {
        Wrench::from_array(self.sensor_bias)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Marker orientation noise, degrees.
    pub marker_rot_deg: f64,
    /// Marker position noise per axis, mm.
    pub marker_trans: f64,
    /// Cross-wire localization noise, image units.
    pub us_px: f64,
    /// Largest out-of-plane offset of the cross-wire at capture, mm.
    pub us_plane_jitter: f64,
    pub force: f64,
    /// Half thickness of the ultrasound slice, mm.
    pub visibility_halfwidth: f64,
    /// White noise on RF samples, relative to lesion amplitude.
    pub rf: f64,
    /// Annotation noise of marker centers in the mammogram, px.
    pub xray_marker_px: f64,
    /// Annotation noise of lesion centers in the mammogram, px.
    pub lesion_px: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            marker_rot_deg: 0.2,
            marker_trans: 0.5,
            us_px: 0.5,
            us_plane_jitter: 0.3,
            force: 0.05,
            visibility_halfwidth: 0.5,
            rf: 0.02,
            xray_marker_px: 1.0,
            lesion_px: 10.0,
        }
    }
}

impl NoiseConfig {
    /// Every stochastic term off; the slice thickness is kept since it is
    /// geometry, not noise.
    pub fn zero(&self) -> Self {
        Self {
            marker_rot_deg: 0.0,
            marker_trans: 0.0,
            us_px: 0.0,
            us_plane_jitter: 0.0,
            force: 0.0,
            rf: 0.0,
            xray_marker_px: 0.0,
            lesion_px: 0.0,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub handeye_poses: usize,
    pub us_samples: usize,
    pub force_samples: usize,
    pub force_degree: usize,
    /// Half-angle of the probe orientations sampled for force calibration, deg.
    pub force_cone_deg: f64,
    pub us_init_rot_deg: f64,
    pub us_init_trans: f64,
    pub us_init_scale: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            handeye_poses: 21,
            us_samples: 30,
            force_samples: 500,
            force_degree: 3,
            force_cone_deg: 40.0,
            us_init_rot_deg: 5.0,
            us_init_trans: 5.0,
            us_init_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub gains: PidGains,
    /// N
    pub f_target: f64,
    /// mm/s
    pub v_t: f64,
    /// Standoff above the lesion, mm.
    pub k0: f64,
    pub dt: f64,
    /// Descent stop force, N.
    pub f_contact: f64,
    pub v_descend: f64,
    pub scan_duration: f64,
    pub descend_timeout: f64,
    /// Force statistics are taken after this time, s.
    pub settle_time: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            gains: PidGains::default(),
            f_target: 5.0,
            v_t: 7.27,
            k0: 50.0,
            dt: 0.01,
            f_contact: 2.0,
            v_descend: 5.0,
            scan_duration: 10.0,
            descend_timeout: 30.0,
            settle_time: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImagingConfig {
    /// Scan lines per frame (odd so that one line is centered).
    pub lines: usize,
    pub samples: usize,
    pub frames: usize,
    /// mm between frames
    pub frame_spacing: f64,
    pub dynamic_range_db: f64,
    /// Carrier period, samples.
    pub carrier_period: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            lines: 97,
            samples: 480,
            frames: 171,
            frame_spacing: 0.05,
            dynamic_range_db: 60.0,
            carrier_period: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub arm: ArmModel,
    pub collision: CollisionModel,
    pub home_joints: Joints,
    /// Uniform jitter applied to each home joint for varied starts, rad.
    pub start_jitter: f64,
    pub plate: PlateConfig,
    pub lesions: Vec<LesionConfig>,
    pub xray: XrayConfig,
    pub truth: TruthConfig,
    pub noise: NoiseConfig,
    pub calibration: CalibrationConfig,
    pub plant: PlantParams,
    pub control: ControlConfig,
    pub imaging: ImagingConfig,
    pub rrt: RrtOptions,
    pub obstacles: Vec<Aabb>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        use std::f64::consts::FRAC_PI_2;
        Self {
            seed: 2024,
            arm: ArmModel::generic_6r(),
            collision: CollisionModel::default(),
            home_joints: [0.9, -1.9, 1.7, -1.4, -FRAC_PI_2, 0.0],
            start_jitter: 0.15,
            plate: PlateConfig::default(),
            lesions: vec![
                LesionConfig::default(),
                LesionConfig {
                    position_plate: [-18.0, 22.0, -12.0],
                    radius: 1.5,
                    ..Default::default()
                },
            ],
            xray: XrayConfig::default(),
            truth: TruthConfig::default(),
            noise: NoiseConfig::default(),
            calibration: CalibrationConfig::default(),
            plant: PlantParams::default(),
            control: ControlConfig::default(),
            imaging: ImagingConfig::default(),
            rrt: RrtOptions::default(),
            obstacles: vec![Aabb::new([-760.0, -420.0, 0.0], [-660.0, 200.0, 330.0])],
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Self =
            serde_json::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Same world with every noise source switched off.
    pub fn zero_noise(&self) -> Self {
        let mut s = self.clone();
        s.noise = s.noise.zero();
        s.plant.force_noise = 0.0;
        s
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.arm.validate()?;
        let n = &self.noise;
        let sigmas = [
            n.marker_rot_deg,
            n.marker_trans,
            n.us_px,
            n.us_plane_jitter,
            n.force,
            n.rf,
            n.xray_marker_px,
            n.lesion_px,
            self.plant.force_noise,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(SimError::InvalidConfig("noise levels must be non-negative".into()));
        }
        if !(n.visibility_halfwidth > 0.0) {
            return Err(SimError::InvalidConfig("slice half-width must be positive".into()));
        }
        if n.us_plane_jitter > n.visibility_halfwidth {
            return Err(SimError::InvalidConfig(
                "cross-wire jitter exceeds the slice half-width".into(),
            ));
        }
        if !(self.truth.us_scale[0] > 0.0 && self.truth.us_scale[1] > 0.0) {
            return Err(SimError::InvalidConfig("image scales must be positive".into()));
        }
        if !(self.truth.tool_mass >= 0.0) {
            return Err(SimError::InvalidConfig("tool mass must be non-negative".into()));
        }
        if !(self.xray.pixel_size > 0.0) {
            return Err(SimError::InvalidConfig("pixel size must be positive".into()));
        }
        let im = &self.imaging;
        if im.lines == 0 || im.samples < 2 || im.frames == 0 || !(im.frame_spacing > 0.0) {
            return Err(SimError::InvalidConfig("imaging grid is empty".into()));
        }
        if !(self.plant.stiffness > 0.0 && self.plant.damping >= 0.0) {
            return Err(SimError::InvalidConfig("plant parameters out of range".into()));
        }
        for (i, t) in [self.plate.t_bp, self.truth.t_ec, self.truth.t_eu]
            .iter()
            .enumerate()
        {
            if !t.is_valid() {
                return Err(SimError::InvalidConfig(format!("transform {i} is not rigid")));
            }
        }
        Ok(())
    }

    pub fn lesion_base(&self, index: usize) -> Option<Vec3> {
        self.lesions
            .get(index)
            .map(|l| self.plate.t_bp.transform_point(&Vec3::from(l.position_plate)))
    }

    /// Foot point of a lesion on the plate surface, base frame: the point the
    /// probe is meant to touch.
    pub fn lesion_target(&self, index: usize) -> Option<Vec3> {
        self.lesions.get(index).map(|l| {
            let [x, y, _] = l.position_plate;
            self.plate.t_bp.transform_point(&Vec3::new(x, y, 0.0))
        })
    }

    /// Scan probe orientation over the plate: image lateral axis along plate
    /// x, image depth into the plate, elevation along plate y.
    pub fn probe_rotation(&self, plate_rotation: &Mat3) -> Mat3 {
        let px: Vec3 = plate_rotation.column(0).into();
        let pz: Vec3 = plate_rotation.column(2).into();
        let depth = -pz;
        let elev = px.cross(&depth);
        Mat3::from_columns(&[px, depth, elev])
    }
}

/// Independent RNG stream for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn json_round_trip_and_defaults() {
        let s = ScenarioConfig::default();
        let back = ScenarioConfig::from_json(&s.to_json()).unwrap();
        assert_eq!(back.to_json(), s.to_json());
        let partial = ScenarioConfig::from_json(r#"{"seed": 5, "control": {"k0": 30.0}}"#).unwrap();
        assert_eq!(partial.seed, 5);
        assert_eq!(partial.control.k0, 30.0);
        assert_eq!(partial.control.f_target, 5.0);
    }

    #[test]
    fn validation_rejects_negative_noise() {
        let mut s = ScenarioConfig::default();
        s.noise.marker_trans = -1.0;
        assert!(s.validate().is_err());
        assert!(ScenarioConfig::default().zero_noise().validate().is_ok());
    }

    #[test]
    fn probe_rotation_is_proper() {
        let s = ScenarioConfig::default();
        let r = s.probe_rotation(&s.plate.t_bp.rotation);
        assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn streams_differ_and_repeat() {
        let a = rng_for(1, 0).next_u64();
        assert_eq!(a, rng_for(1, 0).next_u64());
        assert_ne!(a, rng_for(1, 1).next_u64());
    }
}
