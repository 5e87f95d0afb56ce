//! Calibration, registration, motion and imaging routines for a robotic
//! mammography ultrasound platform, plus a synthetic world to exercise them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod forcecalib;
pub mod geometry;
pub mod handeye;
pub mod imaging;
pub mod motion;
pub mod raster;
pub mod registration;
pub mod simworld;
pub mod uscalib;

pub use forcecalib::{BiasModel, Wrench};
pub use geometry::{AxisAngle, HomogeneousPoint2, Mat3, RigidTransform, Vec3};
pub use handeye::MotionPair;
pub use imaging::{RfFrame, Roi, UsVolume};
pub use registration::{Correspondence, Homography, PlatePose};
pub use simworld::{ArmModel, ScenarioConfig};
pub use uscalib::{BxpSample, UsCalibration};
