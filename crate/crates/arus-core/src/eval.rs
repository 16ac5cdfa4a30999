//! End-to-end accuracy evaluation: board-based ground truth, cube edge
//! point collection through the calibration chain, ICP fit of the
//! ground-truth edges to the localized points, and the resulting pose
//! offset report.

use crate::calib::CalibrationMatrix;
use crate::depthsim::{DepthMap, PointCloud};
use crate::geom::{compose, pose_offset, unproject, RigidTransform};
use crate::register::{icp, mean_nn_distance, IcpParams, RegisterError};
use crate::scene::CubeEdgeModel;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Step used to densify ground-truth edges before ICP, mm.
pub const EDGE_SAMPLE_STEP: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 3 detected corners with valid depth, got {0}")]
    TooFewDetections(usize),
    #[error("corner id {0} out of range")]
    BadCornerId(usize),
    #[error("invalid board: {0}")]
    InvalidBoard(String),
    #[error(transparent)]
    Register(#[from] RegisterError),
}

/// Planar marker board: known corner positions in the world frame (board
/// center at the origin, corners in the z = 0 plane) plus the pose of the
/// evaluation cube on the board.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardModel {
    pub corners: Vec<Vector3<f64>>,
    pub cube_pose_in_world: RigidTransform,
}

impl BoardModel {
    pub fn new(corners: Vec<Vector3<f64>>, cube_pose_in_world: RigidTransform) -> Result<Self, EvalError> {
        if corners.len() < 3 {
            return Err(EvalError::InvalidBoard(format!(
                "need at least 3 corners, got {}",
                corners.len()
            )));
        }
        if corners.iter().any(|c| c.z.abs() > 1e-9) {
            return Err(EvalError::InvalidBoard("corners must lie in the z = 0 plane".into()));
        }
        // non-collinear check via the 2D scatter
        let centroid: Vector3<f64> = corners.iter().sum::<Vector3<f64>>() / corners.len() as f64;
        let mut xx = 0.0;
        let mut xy = 0.0;
        let mut yy = 0.0;
        for c in &corners {
            let d = c - centroid;
            xx += d.x * d.x;
            xy += d.x * d.y;
            yy += d.y * d.y;
        }
        let tr = xx + yy;
        let det = xx * yy - xy * xy;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let lambda_min = tr / 2.0 - disc;
        if lambda_min <= 1e-9 * tr.max(1e-9) {
            return Err(EvalError::InvalidBoard("corners are collinear".into()));
        }
        Ok(Self {
            corners,
            cube_pose_in_world,
        })
    }
}

/// Cube localization accuracy, mirroring the physical study's report:
/// registration residue (mean distance), cube center offset and the three
/// Euler angle offsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeEvalReport {
    /// Mean nearest-neighbor distance after ICP, mm.
    pub icp_residue: f64,
    /// Distance between ground-truth and fitted cube centers, mm.
    pub center_offset: f64,
    /// `[roll_x, pitch_y, yaw_z]` offsets, degrees.
    pub euler_offsets: [f64; 3],
    pub n_points: usize,
}

/// Estimate `T_cam_from_world` from detected board corners: unproject each
/// detection through the depth map, then rigidly fit the known world
/// corners onto the camera-frame points.
pub fn board_pose_from_detections(
    board: &BoardModel,
    detections: &[(usize, (f64, f64))],
    depth: &DepthMap,
) -> Result<RigidTransform, EvalError> {
    let mut world = Vec::new();
    let mut camera = Vec::new();
    for (corner_id, pixel) in detections {
        if *corner_id >= board.corners.len() {
            return Err(EvalError::BadCornerId(*corner_id));
        }
        let Some(z) = depth.sample_bilinear(pixel.0, pixel.1) else {
            continue; // dropout or out of frame
        };
        let p = unproject(&depth.intrinsics, *pixel, z).expect("sampled depth is positive");
        world.push(board.corners[*corner_id]);
        camera.push(p);
    }
    if world.len() < 3 {
        return Err(EvalError::TooFewDetections(world.len()));
    }
    Ok(crate::register::umeyama_fit(&world, &camera)?)
}

/// Map segmented ultrasound pixels into the camera frame through the
/// calibration matrix and the tracked marker pose of each frame, and
/// concatenate everything into one cloud.
pub fn collect_edge_points(
    frames: &[(Vec<(f64, f64)>, RigidTransform)],
    matrix: &CalibrationMatrix,
) -> PointCloud {
    let mut points = Vec::new();
    for (pixels, t_cam_from_marker) in frames {
        for pixel in pixels {
            let x_marker = matrix.map_pixel(*pixel);
            points.push(t_cam_from_marker.transform_point(&x_marker));
        }
    }
    PointCloud::new(points, "camera")
}

/// Densely sample the model edges at `step` mm (endpoints included), cube CS.
pub fn sample_edges(model: &CubeEdgeModel, step: f64) -> Vec<Vector3<f64>> {
    let mut samples = Vec::new();
    for (_, seg) in &model.edges {
        let n = (seg.length() / step).ceil().max(1.0) as usize;
        for i in 0..=n {
            samples.push(seg.point_at(i as f64 / n as f64));
        }
    }
    samples
}

/// Fit the ground-truth cube edges to the localized edge points and report
/// the accuracy.
///
/// The ground-truth edges are densified at 0.5 mm, expressed in the camera
/// frame through the board pose, and aligned onto the points by ICP from an
/// identity initialization; the fitted cube pose is the ICP transform
/// applied to the ground-truth cube pose.
pub fn evaluate_cube(
    points: &PointCloud,
    model: &CubeEdgeModel,
    t_cam_from_world_gt: &RigidTransform,
    cube_pose_in_world: &RigidTransform,
    icp_params: &IcpParams,
) -> Result<CubeEvalReport, EvalError> {
    let t_cam_from_cube_gt = compose(t_cam_from_world_gt, cube_pose_in_world);
    let edge_samples_cam: Vec<Vector3<f64>> = sample_edges(model, EDGE_SAMPLE_STEP)
        .iter()
        .map(|p| t_cam_from_cube_gt.transform_point(p))
        .collect();
    let model_cloud = PointCloud::new(edge_samples_cam, "camera");
    let result = icp(&model_cloud, points, &RigidTransform::identity(), icp_params)?;

    let (residue, _n) = mean_nn_distance(
        &model_cloud.points,
        points,
        &result.pose,
        icp_params.max_correspondence_distance,
    );
    let fitted_cube_pose = compose(&result.pose, &t_cam_from_cube_gt);
    let off = pose_offset(&t_cam_from_cube_gt, &fitted_cube_pose);
    Ok(CubeEvalReport {
        icp_residue: residue,
        center_offset: off.center_offset,
        euler_offsets: off.euler_offsets,
        n_points: points.len(),
    })
}
