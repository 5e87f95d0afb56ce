//! Probe against the compression plate: a spring-damper contact with a noisy
//! wrist force sensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::forcecalib::Wrench;
use crate::geometry::{Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// N/mm
    pub stiffness: f64,
    /// N·s/mm, active only while pressing inward
    pub damping: f64,
    /// Standard deviation of additive noise on each force component, N.
    pub force_noise: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            stiffness: 1.0,
            damping: 0.05,
            force_noise: 0.05,
        }
    }
}

/// The plate surface is the plane through `plate_point` with outward unit
/// normal `plate_normal` (pointing toward the probe side).
#[derive(Debug, Clone)]
pub struct ContactPlant {
    pub params: PlantParams,
    pub plate_point: Vec3,
    pub plate_normal: Vec3,
    /// Base-to-sensor rotation; readings are expressed in the sensor frame.
    pub sensor_rotation: Mat3,
    /// Unloaded reading added to every sample (gravity, offsets).
    pub bias: Wrench,
    pub position: Vec3,
    pub velocity: Vec3,
    pub time: f64,
    rng: ChaCha8Rng,
}

impl ContactPlant {
    pub fn new(
        params: PlantParams,
        plate_point: Vec3,
        plate_normal: Vec3,
        position: Vec3,
        seed: u64,
    ) -> Self {
        Self {
            params,
            plate_point,
            plate_normal: plate_normal.normalize(),
            sensor_rotation: Mat3::identity(),
            bias: Wrench::zero(),
            position,
            velocity: Vec3::zeros(),
            time: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Depth of the probe below the plate surface, mm (negative when above).
    pub fn penetration(&self) -> f64 {
        -(self.position - self.plate_point).dot(&self.plate_normal)
    }

    /// Noise-free normal contact force, N.
    pub fn contact_force(&self) -> f64 {
        let depth = self.penetration();
        if depth <= 0.0 {
            return 0.0;
        }
        let inward_speed = (-self.velocity.dot(&self.plate_normal)).max(0.0);
        self.params.stiffness * depth + self.params.damping * inward_speed
    }

    /// Sensor reading: contact force pushing the probe out of the plate,
    /// plus bias and noise, in the sensor frame.
    pub fn read_wrench(&mut self) -> Wrench {
        let f_base = self.plate_normal * self.contact_force();
        let mut force = self.sensor_rotation.transpose() * f_base;
        if self.params.force_noise > 0.0 {
            let n = Normal::new(0.0, self.params.force_noise).expect("finite sigma");
            for k in 0..3 {
                force[k] += n.sample(&mut self.rng);
            }
        }
        Wrench::new(force, Vec3::zeros()) + self.bias
    }

    /// Ideal Cartesian velocity execution over one period.
    pub fn step(&mut self, velocity: Vec3, dt: f64) {
        self.velocity = velocity;
        self.position += velocity * dt;
        self.time += dt;
    }
}
