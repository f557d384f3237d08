//! Dynamic-model identification for tendon-coupled, closed-chain manipulators.
//!
//! The crate covers the whole workflow: declarative robot models with
//! coupling maps ([`model`]), modified-DH kinematics ([`kinematics`]), the
//! linear-in-parameters motor-torque regressor and its base-parameter
//! reduction ([`regressor`]), Fourier excitation trajectories ([`excitation`]),
//! measurement filtering ([`signals`]), physically feasible identification
//! ([`identification`]) and a synthetic bench standing in for hardware
//! ([`synthbench`]). Ready-made dVRK MTM and PSM models ship in `models/`.

pub mod cli;
pub mod error;
pub mod excitation;
pub mod identification;
pub mod kinematics;
pub mod model;
pub mod regressor;
pub mod signals;
pub mod synthbench;

pub use error::{Error, Result};
pub use excitation::FourierTrajectory;
pub use identification::{IdentificationProblem, IdentifiedParameters};
pub use kinematics::{CoordinateState, FramePose};
pub use model::{load_model, RobotModel};
pub use regressor::{BaseReduction, ParameterVector, Regressor};
pub use signals::JointLog;
pub use synthbench::GroundTruth;

/// Directory holding the shipped model and trajectory files.
pub fn shipped_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("models")
}

/// Loads one of the shipped models by file stem (`"mtm"` or `"psm"`).
pub fn shipped_model(name: &str) -> Result<RobotModel> {
    load_model(shipped_dir().join(format!("{name}.model")))
}
