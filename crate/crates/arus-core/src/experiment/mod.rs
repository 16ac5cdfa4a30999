//! End-to-end synthetic experiment runners: a full calibration run against
//! rendered sensors, the camera-distance sweep, and the cube localization
//! accuracy study.

mod cube;
mod sim;
mod sweep;

pub use cube::{
    build_cube_scene, cube_row_csv, run_cube_eval, run_cube_eval_once, CubeReport, CubeRunRow,
    CubeScene, CUBE_CSV_HEADER,
};
pub use sim::{
    build_calibration_scene, calibration_camera_pose, matrix_error, orientation_diversity_deg,
    phantom_body_mesh, plane_pose_transform, run_single_calibration, CalibrationRunOutput,
    CalibrationScene, MatrixError,
};
pub use sweep::{run_distance_sweep, SweepDistanceRow, SweepReport, SweepRunRow};

use crate::calib::CalibError;
use crate::config::ConfigError;
use crate::depthsim::DepthSimError;
use crate::eval::EvalError;
use crate::register::RegisterError;
use crate::scene::SceneError;
use crate::ussim::UsSimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    DepthSim(#[from] DepthSimError),
    #[error(transparent)]
    UsSim(#[from] UsSimError),
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("run failed: {0}")]
    Failed(String),
}

impl ExperimentError {
    /// True for configuration problems (as opposed to numerical failures).
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}
