//! Pose-dependent bias model for the wrist force/torque sensor.
//!
//! Unloaded sensor readings are regressed on the tool pose with a
//! tensor-product Bernstein polynomial; compensation subtracts the predicted
//! unloaded reading from a live one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_vector, Mat3, RigidTransform, Vec3};

/// Force in N, torque in N·mm, both in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub fn new(force: Vec3, torque: Vec3) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            force: Vec3::new(v[0], v[1], v[2]),
            torque: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl std::ops::Sub for Wrench {
    type Output = Wrench;
    fn sub(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force - rhs.force, self.torque - rhs.torque)
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

impl std::ops::Mul<f64> for Wrench {
    type Output = Wrench;
    fn mul(self, k: f64) -> Wrench {
        Wrench::new(self.force * k, self.torque * k)
    }
}

/// Tool pose as regression input: rotation vector (rad) relative to a
/// reference orientation, then translation (mm).
pub type PoseVector = [f64; 6];

/// Expressing the orientation relative to a reference near the working
/// orientation keeps the rotation vector away from its wrap-around at π.
pub fn pose_vector(pose: &RigidTransform, reference: &Mat3) -> PoseVector {
    let w = rotation_vector(&(reference.transpose() * pose.rotation));
    let t = pose.translation;
    [w.x, w.y, w.z, t.x, t.y, t.z]
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForceCalibError {
    #[error("{samples} samples cannot determine {basis} basis coefficients")]
    TooFewSamples { samples: usize, basis: usize },
    #[error("design matrix is rank deficient (σ_min/σ_max = {0:e}); poses lack diversity")]
    RankDeficient(f64),
    #[error("sample {0} contains non-finite values")]
    NonFinite(usize),
}

/// Bernstein values at one point and whether `u` had to be clamped into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BernsteinEval {
    pub values: Vec<f64>,
    pub clamped: bool,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `C(n,k) uᵏ (1−u)ⁿ⁻ᵏ` for `k = 0..=n`.
pub fn bernstein_basis(u: f64, degree: usize) -> BernsteinEval {
    let clamped = !(0.0..=1.0).contains(&u);
    let u = u.clamp(0.0, 1.0);
    let values = (0..=degree)
        .map(|k| binomial(degree, k) * u.powi(k as i32) * (1.0 - u).powi((degree - k) as i32))
        .collect();
    BernsteinEval { values, clamped }
}

/// Polynomial degree per pose dimension; zero drops that dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisDegrees(pub [usize; 6]);

/// Above this many samples the full six-dimensional tensor basis is used by
/// [`BasisDegrees::auto`].
pub const FULL_BASIS_MIN_SAMPLES: usize = 4096;

impl BasisDegrees {
    pub fn uniform(n: usize) -> Self {
        Self([n; 6])
    }

    /// Degree `n` on the rotation inputs only.
    pub fn rotation_only(n: usize) -> Self {
        Self([n, n, n, 0, 0, 0])
    }

    /// Full tensor basis when the data can support it, rotation-only otherwise.
    pub fn auto(n: usize, samples: usize) -> Self {
        if samples < FULL_BASIS_MIN_SAMPLES {
            Self::rotation_only(n)
        } else {
            Self::uniform(n)
        }
    }

    pub fn basis_size(&self) -> usize {
        self.0.iter().map(|d| d + 1).product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }
}

/// Root-mean-square force (N) and torque (N·mm) magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WrenchRms {
    pub force: f64,
    pub torque: f64,
}

pub fn wrench_rms<'a>(wrenches: impl IntoIterator<Item = &'a Wrench>) -> WrenchRms {
    let (mut f, mut t, mut n) = (0.0, 0.0, 0usize);
    for w in wrenches {
        f += w.force.norm_squared();
        t += w.torque.norm_squared();
        n += 1;
    }
    if n == 0 {
        return WrenchRms::default();
    }
    WrenchRms {
        force: (f / n as f64).sqrt(),
        torque: (t / n as f64).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    pub degrees: BasisDegrees,
    pub normalization: [Normalization; 6],
    /// One coefficient vector of length `basis_size` per output channel
    /// (fx, fy, fz, tx, ty, tz).
    pub coefficients: Vec<Vec<f64>>,
    pub training_rms: WrenchRms,
}

impl BiasModel {
    /// Model predicting zero everywhere.
    pub fn zero(degrees: BasisDegrees) -> Self {
        Self {
            degrees,
            normalization: [Normalization { min: 0.0, max: 1.0 }; 6],
            coefficients: vec![vec![0.0; degrees.basis_size()]; 6],
            training_rms: WrenchRms::default(),
        }
    }

    pub fn basis_size(&self) -> usize {
        self.degrees.basis_size()
    }

    /// Tensor-product basis row; the last dimension varies fastest.
    pub fn basis_row(&self, pose: &PoseVector) -> Vec<f64> {
        let mut row = vec![1.0];
        for (dim, &deg) in self.degrees.0.iter().enumerate() {
            if deg == 0 {
                continue;
            }
            let b = bernstein_basis(self.normalization[dim].apply(pose[dim]), deg).values;
            row = row
                .iter()
                .flat_map(|r| b.iter().map(move |v| r * v))
                .collect();
        }
        row
    }

    /// Predicted unloaded reading at `pose`.
    pub fn predict(&self, pose: &PoseVector) -> Wrench {
        let row = self.basis_row(pose);
        let out: [f64; 6] = std::array::from_fn(|ch| {
            self.coefficients[ch]
                .iter()
                .zip(&row)
                .map(|(c, b)| c * b)
                .sum()
        });
        Wrench::from_array(out)
    }
}

/// Normal equations are used while the design matrix is well conditioned;
/// beyond this condition number the SVD solution is used instead.
const NORMAL_EQUATION_MAX_CONDITION: f64 = 1e6;

/// Least-squares fit of the six output channels on the Bernstein basis.
pub fn fit_bias_model(
    samples: &[(PoseVector, Wrench)],
    degrees: BasisDegrees,
) -> Result<BiasModel, ForceCalibError> {
    let basis = degrees.basis_size();
    if samples.len() < basis {
        return Err(ForceCalibError::TooFewSamples {
            samples: samples.len(),
            basis,
        });
    }
    for (i, (pose, w)) in samples.iter().enumerate() {
        if !pose.iter().all(|v| v.is_finite()) || !w.is_finite() {
            return Err(ForceCalibError::NonFinite(i));
        }
    }
    let normalization: [Normalization; 6] = std::array::from_fn(|dim| {
        let (lo, hi) = samples
            .iter()
            .map(|(p, _)| p[dim])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        if hi - lo > 1e-12 * (1.0 + lo.abs()) {
            Normalization { min: lo, max: hi }
        } else {
            // a constant input still needs a non-empty range
            Normalization {
                min: lo - 0.5,
                max: lo + 0.5,
            }
        }
    });
    let mut model = BiasModel {
        degrees,
        normalization,
        coefficients: vec![],
        training_rms: WrenchRms::default(),
    };

    let design = DMatrix::from_fn(samples.len(), basis, |_, _| 0.0);
    let mut design = design;
    for (i, (pose, _)) in samples.iter().enumerate() {
        for (j, v) in model.basis_row(pose).into_iter().enumerate() {
            design[(i, j)] = v;
        }
    }
    let targets = DMatrix::from_fn(samples.len(), 6, |i, ch| samples[i].1.to_array()[ch]);

    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    if ratio * ratio < 1e-10 {
        return Err(ForceCalibError::RankDeficient(ratio));
    }
    let solution = if 1.0 / ratio > NORMAL_EQUATION_MAX_CONDITION {
        svd.solve(&targets, 0.0)
            .map_err(|_| ForceCalibError::RankDeficient(ratio))?
    } else {
        let normal = design.transpose() * &design;
        let rhs = design.transpose() * &targets;
        normal
            .cholesky()
            .ok_or(ForceCalibError::RankDeficient(ratio))?
            .solve(&rhs)
    };
    model.coefficients = (0..6)
        .map(|ch| {
            let col: DVector<f64> = solution.column(ch).into();
            col.iter().copied().collect()
        })
        .collect();
    let residuals: Vec<Wrench> = samples
        .iter()
        .map(|(p, w)| *w - model.predict(p))
        .collect();
    model.training_rms = wrench_rms(&residuals);
    Ok(model)
}

/// `reading − predict(pose)`.
pub fn compensate(model: &BiasModel, pose: &PoseVector, reading: &Wrench) -> Wrench {
    *reading - model.predict(pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poses(n: usize, seed: u64) -> Vec<PoseVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                std::array::from_fn(|k| {
                    if k < 3 {
                        rng.random_range(-0.6..0.6)
                    } else {
                        rng.random_range(-100.0..100.0)
                    }
                })
            })
            .collect()
    }

    /// A smooth orientation-only bias.
    fn smooth_bias(p: &PoseVector) -> Wrench {
        let r = crate::geometry::rotation_from_vector(&Vec3::new(p[0], p[1], p[2]));
        let f = r.transpose() * Vec3::new(0.0, 0.0, -4.9) + Vec3::new(0.3, -0.2, 1.0);
        Wrench::new(f, Vec3::new(0.0, 0.0, 80.0).cross(&f))
    }

    #[test]
    fn bernstein_endpoints_and_midpoint() {
        let b0 = bernstein_basis(0.0, 4);
        assert_eq!(b0.values, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(!b0.clamped);
        let b1 = bernstein_basis(1.0, 3);
        assert_eq!(b1.values, vec![0.0, 0.0, 0.0, 1.0]);
        let mid = bernstein_basis(0.5, 2);
        assert_eq!(mid.values, vec![0.25, 0.5, 0.25]);
        let out = bernstein_basis(1.3, 2);
        assert!(out.clamped);
        assert_eq!(out.values, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_readings_give_zero_model() {
        let poses = random_poses(100, 1);
        let samples: Vec<_> = poses.iter().map(|p| (*p, Wrench::zero())).collect();
        let m = fit_bias_model(&samples, BasisDegrees::rotation_only(2)).unwrap();
        assert!(m.coefficients.iter().flatten().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn constant_readings_are_reproduced() {
        let w = Wrench::from_array([1.5, -2.0, 9.0, 10.0, -30.0, 4.0]);
        let poses = random_poses(200, 2);
        let samples: Vec<_> = poses.iter().map(|p| (*p, w)).collect();
        for deg in 0..=3 {
            let m = fit_bias_model(&samples, BasisDegrees::rotation_only(deg)).unwrap();
            for p in random_poses(20, 3) {
                let d = m.predict(&p) - w;
                assert!(d.to_array().iter().all(|v| v.abs() < 1e-9), "degree {deg}: {d:?}");
            }
        }
    }

    #[test]
    fn too_few_and_degenerate_samples() {
        let poses = random_poses(10, 4);
        let samples: Vec<_> = poses.iter().map(|p| (*p, Wrench::zero())).collect();
        assert_eq!(
            fit_bias_model(&samples, BasisDegrees::rotation_only(3)),
            Err(ForceCalibError::TooFewSamples {
                samples: 10,
                basis: 64
            })
        );
        // 100 copies of one pose cannot pin down a cubic
        let same: Vec<_> = (0..100).map(|_| (poses[0], Wrench::zero())).collect();
        assert!(matches!(
            fit_bias_model(&same, BasisDegrees::rotation_only(1)),
            Err(ForceCalibError::RankDeficient(_))
        ));
    }

    #[test]
    fn training_residual_non_increasing_in_degree() {
        let poses = random_poses(400, 5);
        let samples: Vec<_> = poses.iter().map(|p| (*p, smooth_bias(p))).collect();
        let mut last = WrenchRms {
            force: f64::INFINITY,
            torque: f64::INFINITY,
        };
        for deg in 0..=3 {
            let m = fit_bias_model(&samples, BasisDegrees::rotation_only(deg)).unwrap();
            assert!(m.training_rms.force <= last.force * (1.0 + 1e-9) + 1e-12);
            assert!(m.training_rms.torque <= last.torque * (1.0 + 1e-9) + 1e-12);
            last = m.training_rms;
        }
        assert!(last.force < 0.01, "{last:?}");
    }

    #[test]
    fn learns_negligible_translation_dependence() {
        let poses = random_poses(1500, 6);
        let samples: Vec<_> = poses.iter().map(|p| (*p, smooth_bias(p))).collect();
        let m = fit_bias_model(&samples, BasisDegrees([3, 3, 3, 1, 1, 1])).unwrap();
        let mut p = [0.1, -0.2, 0.3, -90.0, -90.0, -90.0];
        let a = m.predict(&p);
        p[3] = 90.0;
        p[4] = 90.0;
        p[5] = 90.0;
        let b = m.predict(&p);
        let d = (a - b).force.norm();
        assert!(d < 0.02 * a.force.norm(), "translation effect {d}");
    }

    #[test]
    fn compensation_cases() {
        let zero = BiasModel::zero(BasisDegrees::rotation_only(2));
        let r = Wrench::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = [0.1; 6];
        assert_eq!(compensate(&zero, &p, &r), r);
        let poses = random_poses(300, 7);
        let samples: Vec<_> = poses.iter().map(|p| (*p, smooth_bias(p))).collect();
        let m = fit_bias_model(&samples, BasisDegrees::rotation_only(3)).unwrap();
        let pred = m.predict(&poses[0]);
        assert_eq!(compensate(&m, &poses[0], &pred), Wrench::zero());
    }

    #[test]
    fn model_json_round_trip() {
        let poses = random_poses(100, 8);
        let samples: Vec<_> = poses.iter().map(|p| (*p, smooth_bias(p))).collect();
        let m = fit_bias_model(&samples, BasisDegrees::rotation_only(2)).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: BiasModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back.predict(&poses[1]), m.predict(&poses[1]));
    }

    proptest! {
        #[test]
        fn bernstein_partition_of_unity(u in 0.0f64..=1.0, n in 0usize..12) {
            let s: f64 = bernstein_basis(u, n).values.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn compensate_is_linear_in_reading(a in prop::array::uniform6(-50.0f64..50.0),
                                           b in prop::array::uniform6(-50.0f64..50.0),
                                           k in -3.0f64..3.0) {
            let poses = random_poses(80, 9);
            let samples: Vec<_> = poses.iter().map(|p| (*p, smooth_bias(p))).collect();
            let m = fit_bias_model(&samples, BasisDegrees::rotation_only(1)).unwrap();
            let p = poses[0];
            let (wa, wb) = (Wrench::from_array(a), Wrench::from_array(b));
            let lhs = compensate(&m, &p, &(wa * k + wb)) ;
            let rhs = compensate(&m, &p, &wa) * k + compensate(&m, &p, &wb) + m.predict(&p) * k;
            let d = lhs - rhs;
            prop_assert!(d.to_array().iter().all(|v| v.abs() < 1e-9));
        }
    }
}
