//! Experiment configuration: one JSON document drives scene synthesis,
//! acquisition, registration, calibration and evaluation.

use crate::calib::SegmentationParams;
use crate::depthsim::DepthNoiseModel;
use crate::geom::CameraIntrinsics;
use crate::register::IcpParams;
use crate::scene::{MarkerParams, NWireParams, DEFAULT_CUBE_EDGE_IDS};
use crate::ussim::SpeckleParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Camera-to-phantom distance: one value, or a list for sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistanceSpec {
    Single(f64),
    Sweep(Vec<f64>),
}

impl DistanceSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            DistanceSpec::Single(d) => vec![*d],
            DistanceSpec::Sweep(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub intrinsics: CameraIntrinsics,
    pub noise: DepthNoiseModel,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::new(580.0, 580.0, 320.0, 240.0, 640, 480)
                .expect("default intrinsics are valid"),
            noise: DepthNoiseModel::default(),
        }
    }
}

/// One probe placement: the image plane in phantom coordinates, given as
/// the x position of the (nominally perpendicular) plane plus fan and tilt
/// angles about the pivot at the wire center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePose {
    pub x0_mm: f64,
    /// Rotation about the phantom depth axis, degrees.
    pub fan_deg: f64,
    /// Rotation about the phantom front-back axis, degrees.
    pub tilt_deg: f64,
}

/// Probe trajectory: either an explicit pose list or a generated fan of
/// `n_poses` planes over `x0` in `[x0_min, x0_max]` with alternating fan
/// and tilt angles, plus optional per-run jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub n_poses: usize,
    pub x0_min_mm: f64,
    pub x0_max_mm: f64,
    pub max_fan_deg: f64,
    pub max_tilt_deg: f64,
    /// Random probe placement jitter per run (true motion, not noise).
    pub jitter_mm: f64,
    pub jitter_deg: f64,
    /// Overrides the generated fan when set.
    #[serde(default)]
    pub explicit: Option<Vec<PlanePose>>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            n_poses: 15,
            x0_min_mm: 10.0,
            x0_max_mm: 30.0,
            max_fan_deg: 20.0,
            max_tilt_deg: 10.0,
            jitter_mm: 1.0,
            jitter_deg: 1.5,
            explicit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    pub base_seed: u64,
    /// Repeats per configuration (per distance in a sweep).
    pub n_seeds: usize,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            base_seed: 1,
            n_seeds: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsConfig {
    pub spacing_mm_per_px: (f64, f64),
    pub image_size_px: (u32, u32),
    pub psf_sigma_px: f64,
    pub speckle: SpeckleParams,
}

impl Default for UsConfig {
    fn default() -> Self {
        Self {
            spacing_mm_per_px: (0.1, 0.1),
            image_size_px: (512, 512),
            psf_sigma_px: 2.0,
            speckle: SpeckleParams::default(),
        }
    }
}

/// Rigid mount of the marker on the probe: the ground-truth
/// `T_marker_from_image` of the simulation.
///
/// The default rotation is near `[90, 0, 90]`, which maps image axes onto
/// marker axes such that the marker sits roughly camera-aligned when the
/// probe is in scanning position. The trackers rely on that operating
/// assumption (it is what the manual ROI-alignment step establishes), so
/// large deviations from it break localization, not just accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountConfig {
    pub euler_zyx_deg: [f64; 3],
    pub translation_mm: [f64; 3],
}

impl Default for MountConfig {
    fn default() -> Self {
        Self {
            euler_zyx_deg: [80.0, -7.0, 100.0],
            translation_mm: [30.0, -20.0, 150.0],
        }
    }
}

impl MountConfig {
    pub fn transform(&self) -> crate::geom::RigidTransform {
        crate::geom::RigidTransform::from_euler_zyx_deg(self.euler_zyx_deg)
            .with_translation(nalgebra::Vector3::from(self.translation_mm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Extra perpendicular frames reserved for the error metric.
    pub n_heldout_frames: usize,
    pub min_recommended_frames: usize,
    pub min_orientation_diversity_deg: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_heldout_frames: 5,
            min_recommended_frames: 10,
            min_orientation_diversity_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeConfig {
    pub size_mm: f64,
    pub edge_ids: Vec<usize>,
    pub slices_per_edge: usize,
    /// Half extents of the marker board, mm.
    pub board_half_mm: (f64, f64),
    /// Detector noise applied to simulated corner detections, px.
    pub corner_pixel_noise_px: f64,
    /// Solve the calibration in-run when no matrix file is given.
    pub calibrate_in_run: bool,
}

impl Default for CubeConfig {
    fn default() -> Self {
        Self {
            size_mm: 50.0,
            edge_ids: DEFAULT_CUBE_EDGE_IDS.to_vec(),
            slices_per_edge: 12,
            board_half_mm: (140.0, 90.0),
            corner_pixel_noise_px: 0.5,
            calibrate_in_run: true,
        }
    }
}

/// The hard operating band for camera distances, mm.
pub const DISTANCE_HARD_RANGE: (f64, f64) = (300.0, 1000.0);
/// The recommended short-range band of the depth sensor, mm.
pub const DISTANCE_RECOMMENDED_RANGE: (f64, f64) = (400.0, 800.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: String,
    pub phantom: NWireParams,
    pub marker: MarkerParams,
    pub camera: CameraConfig,
    pub camera_distance_mm: DistanceSpec,
    pub probe_mount: MountConfig,
    pub trajectory: TrajectoryConfig,
    pub seeds: SeedConfig,
    pub us: UsConfig,
    pub segmentation: SegmentationParams,
    pub icp: IcpParams,
    pub calibration: CalibrationConfig,
    pub cube: CubeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: crate::io::SCHEMA_VERSION.to_string(),
            phantom: NWireParams::default(),
            marker: MarkerParams::default(),
            camera: CameraConfig::default(),
            camera_distance_mm: DistanceSpec::Single(500.0),
            probe_mount: MountConfig::default(),
            trajectory: TrajectoryConfig::default(),
            seeds: SeedConfig::default(),
            us: UsConfig::default(),
            segmentation: SegmentationParams::default(),
            icp: IcpParams::default(),
            calibration: CalibrationConfig::default(),
            cube: CubeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Validate hard invariants; returns human-readable warnings for soft
    /// ones (distances outside the recommended sensor band, short
    /// trajectories).
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        let mut warnings = Vec::new();
        let distances = self.camera_distance_mm.values();
        if distances.is_empty() {
            return Err(ConfigError::Invalid("no camera distance given".into()));
        }
        for d in &distances {
            if *d < DISTANCE_HARD_RANGE.0 || *d > DISTANCE_HARD_RANGE.1 {
                return Err(ConfigError::Invalid(format!(
                    "camera distance {d} mm outside the supported range {:?}",
                    DISTANCE_HARD_RANGE
                )));
            }
            if *d < DISTANCE_RECOMMENDED_RANGE.0 || *d > DISTANCE_RECOMMENDED_RANGE.1 {
                warnings.push(format!(
                    "camera distance {d} mm is outside the sensor's short-range band {:?}",
                    DISTANCE_RECOMMENDED_RANGE
                ));
            }
        }
        self.camera.noise.validate().map_err(ConfigError::Invalid)?;
        if self.trajectory.n_poses == 0 && self.trajectory.explicit.is_none() {
            return Err(ConfigError::Invalid("trajectory has no poses".into()));
        }
        let n_poses = self
            .trajectory
            .explicit
            .as_ref()
            .map_or(self.trajectory.n_poses, Vec::len);
        if n_poses < self.calibration.min_recommended_frames {
            warnings.push(format!(
                "only {n_poses} calibration frames; at least {} recommended",
                self.calibration.min_recommended_frames
            ));
        }
        let spread = 2.0 * self.trajectory.max_fan_deg.max(self.trajectory.max_tilt_deg);
        if self.trajectory.explicit.is_none() && spread < self.calibration.min_orientation_diversity_deg {
            warnings.push(format!(
                "orientation diversity {spread:.1} deg below the recommended {:.1} deg",
                self.calibration.min_orientation_diversity_deg
            ));
        }
        if self.seeds.n_seeds == 0 {
            return Err(ConfigError::Invalid("n_seeds must be at least 1".into()));
        }
        if self.us.psf_sigma_px <= 0.0
            || self.us.spacing_mm_per_px.0 <= 0.0
            || self.us.spacing_mm_per_px.1 <= 0.0
        {
            return Err(ConfigError::Invalid("ultrasound psf and spacing must be positive".into()));
        }
        self.icp
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.cube.size_mm <= 0.0 || self.cube.edge_ids.is_empty() || self.cube.slices_per_edge == 0 {
            return Err(ConfigError::Invalid("cube evaluation parameters must be positive".into()));
        }
        Ok(warnings)
    }
}
