//! Synthetic ground-truth world: arm, sensors, plate, lesions and contact.

pub mod arm;
pub mod observe;
pub mod plant;
pub mod scenario;

use thiserror::Error;

pub use arm::{ArmModel, DhJoint, Joints};
pub use observe::*;
pub use plant::{ContactPlant, PlantParams};
pub use scenario::*;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("joint {joint} value {value} outside its limits")]
    JointLimit { joint: usize, value: f64 },
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("marker {0} is behind the camera")]
    MarkerBehindCamera(usize),
    #[error("could not collect enough observations: {0}")]
    InsufficientData(String),
}
