//! Cube localization study: board-based ground truth, ultrasound sweeps
//! over the cube edges through the calibrated chain, and the ICP accuracy
//! report.

use super::sim::{look_at_camera, MarkerTrackingCtx};
use super::ExperimentError;
use crate::calib::{segment_spots, CalibrationMatrix};
use crate::config::ExperimentConfig;
use crate::depthsim::render_depth;
use crate::eval::{board_pose_from_detections, collect_edge_points, evaluate_cube, BoardModel};
use crate::geom::{compose, invert, project, RigidTransform};
use crate::register::TrackerState;
use crate::scene::{
    make_cube_edges, make_cube_mesh, make_marker_mesh, merge_meshes, CubeEdgeModel, TriangleMesh,
};
use crate::streams::{child_seed, element_rng};
use crate::ussim::{intersect_cube_edges, render_us_frame};
use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fixed world of the cube study. World CS: board center at the origin,
/// corners in z = 0, depth increasing with +z (the camera looks from -z,
/// so the cube sits on the board at negative z).
pub struct CubeScene {
    pub board: BoardModel,
    pub board_mesh: TriangleMesh,
    pub cube_model: CubeEdgeModel,
    pub cube_mesh: TriangleMesh,
    pub marker_mesh: TriangleMesh,
    pub mount: RigidTransform,
    pub t_cam_from_world: RigidTransform,
}

pub fn build_cube_scene(config: &ExperimentConfig) -> Result<CubeScene, ExperimentError> {
    let (bw, bh) = config.cube.board_half_mm;
    let corners = vec![
        Vector3::new(-bw, -bh, 0.0),
        Vector3::new(bw, -bh, 0.0),
        Vector3::new(bw, bh, 0.0),
        Vector3::new(-bw, bh, 0.0),
        Vector3::new(-bw, 0.0, 0.0),
        Vector3::new(bw, 0.0, 0.0),
        Vector3::new(0.0, -bh, 0.0),
        Vector3::new(0.0, bh, 0.0),
        Vector3::new(-bw / 2.0, -bh / 2.0, 0.0),
        Vector3::new(bw / 2.0, -bh / 2.0, 0.0),
        Vector3::new(bw / 2.0, bh / 2.0, 0.0),
        Vector3::new(-bw / 2.0, bh / 2.0, 0.0),
    ];
    // cube on the board center, its +z face toward the camera, slightly
    // yawed so no edge aligns with the board axes
    let size = config.cube.size_mm;
    let cube_pose_in_world = compose(
        &RigidTransform::from_rotation_x(std::f64::consts::PI),
        &RigidTransform::from_rotation_z(10f64.to_radians()),
    )
    .with_translation(Vector3::new(0.0, 0.0, -size / 2.0));
    let board = BoardModel::new(corners, cube_pose_in_world)?;

    let board_mesh = TriangleMesh::new(
        vec![
            Vector3::new(-bw - 20.0, -bh - 20.0, 0.0),
            Vector3::new(bw + 20.0, -bh - 20.0, 0.0),
            Vector3::new(bw + 20.0, bh + 20.0, 0.0),
            Vector3::new(-bw - 20.0, bh + 20.0, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )?;
    let cube_model = make_cube_edges(size, &config.cube.edge_ids)?;
    let cube_mesh = make_cube_mesh(size);
    let marker_mesh = make_marker_mesh(&config.marker)?;
    let mount = config.probe_mount.transform();

    let distance = config.camera_distance_mm.values()[0];
    let target = Vector3::new(0.0, 0.0, -size / 2.0);
    let toward_camera = Vector3::new(0.1, -0.3, -0.95).normalize();
    let t_cam_from_world = look_at_camera(
        target + toward_camera * distance,
        target,
        Vector3::new(0.0, 1.0, 0.0),
    );
    Ok(CubeScene {
        board,
        board_mesh,
        cube_model,
        cube_mesh,
        marker_mesh,
        mount,
        t_cam_from_world,
    })
}

/// `T_world_from_image` for a slice of an edge at parameter `t`: the image
/// plane is perpendicular to the edge (plus `tilt_deg` about the image u
/// axis), with the edge point at the image center and image v pointing to
/// increasing world depth where possible.
fn edge_slice_pose(
    scene: &CubeScene,
    config: &ExperimentConfig,
    edge_index: usize,
    t: f64,
    tilt_deg: f64,
) -> RigidTransform {
    let t_world_from_cube = scene.board.cube_pose_in_world;
    let seg = &scene.cube_model.edges[edge_index].1;
    let a = t_world_from_cube.transform_point(&seg.a);
    let b = t_world_from_cube.transform_point(&seg.b);
    let p = a + (b - a) * t;
    let w = (b - a).normalize();
    let down = Vector3::new(0.0, 0.0, 1.0);
    let mut v = down - w * down.dot(&w);
    if v.norm() < 1e-6 {
        let alt = Vector3::new(1.0, 0.0, 0.0);
        v = alt - w * alt.dot(&w);
    }
    let v = v.normalize();
    let u = v.cross(&w);
    let r = nalgebra::Matrix3::from_columns(&[u, v, w]);
    let half_u = config.us.image_size_px.0 as f64 * config.us.spacing_mm_per_px.0 / 2.0;
    let half_v = config.us.image_size_px.1 as f64 * config.us.spacing_mm_per_px.1 / 2.0;
    let origin = p - u * half_u - v * half_v;
    let base = RigidTransform::new(r, origin).expect("slice basis is orthonormal");
    // small rotation about the image u axis through the edge point
    let tilt_world = rotation_about_axis(&u, tilt_deg.to_radians());
    let about_pivot = tilt_world.with_translation(p - tilt_world.transform_vector(&p));
    compose(&about_pivot, &base)
}

fn rotation_about_axis(axis: &Vector3<f64>, angle_rad: f64) -> RigidTransform {
    let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle_rad);
    RigidTransform::new(*rot.matrix(), Vector3::zeros()).expect("axis-angle rotation is orthonormal")
}

/// One seed's accuracy figures, shaped like the physical study's table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeRunRow {
    pub seed: u64,
    pub ok: bool,
    pub icp_residue_mm: Option<f64>,
    pub center_offset_mm: Option<f64>,
    pub euler_offsets_deg: Option<[f64; 3]>,
    pub n_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeReport {
    pub schema_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub base_seed: u64,
    pub rows: Vec<CubeRunRow>,
}

/// CSV header matching [`cube_row_csv`].
pub const CUBE_CSV_HEADER: &str =
    "seed,ok,icp_residue_mm,center_offset_mm,euler_x_deg,euler_y_deg,euler_z_deg,n_points";

pub fn cube_row_csv(row: &CubeRunRow) -> String {
    let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| x.to_string());
    let euler = row.euler_offsets_deg.map_or([f64::NAN; 3], |e| e);
    let fmt_e = |i: usize| {
        if row.euler_offsets_deg.is_some() {
            euler[i].to_string()
        } else {
            "nan".to_string()
        }
    };
    format!(
        "{},{},{},{},{},{},{},{}",
        row.seed,
        u8::from(row.ok),
        fmt(row.icp_residue_mm),
        fmt(row.center_offset_mm),
        fmt_e(0),
        fmt_e(1),
        fmt_e(2),
        row.n_points
    )
}

/// Run the cube pipeline once with the given calibration matrix.
pub fn run_cube_eval_once(
    config: &ExperimentConfig,
    matrix: &CalibrationMatrix,
    seed: u64,
) -> Result<crate::eval::CubeEvalReport, ExperimentError> {
    let scene = build_cube_scene(config)?;
    let k = &config.camera.intrinsics;
    let us = &config.us;

    // ground-truth generation: depth of board+cube, detections of the
    // known corners with detector pixel noise
    let gt_mesh = merge_meshes(&[
        (&scene.board_mesh, None),
        (&scene.cube_mesh, Some(&scene.board.cube_pose_in_world)),
    ]);
    let depth = render_depth(&gt_mesh, &scene.t_cam_from_world, k, &config.camera.noise, child_seed(seed, 1))?;
    let mut det_rng = element_rng(child_seed(seed, 2), 0);
    let sigma = config.cube.corner_pixel_noise_px;
    let detections: Vec<(usize, (f64, f64))> = scene
        .board
        .corners
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let p_cam = scene.t_cam_from_world.transform_point(c);
            project(k, &p_cam).ok().map(|(u, v)| {
                if sigma > 0.0 {
                    (i, (u + det_rng.gen_range(-sigma..=sigma), v + det_rng.gen_range(-sigma..=sigma)))
                } else {
                    (i, (u, v))
                }
            })
        })
        .collect();
    let t_cam_from_world_est = board_pose_from_detections(&scene.board, &detections, &depth)?;

    // ultrasound sweep over the selected edges with continuous marker
    // tracking (transit frames bridge the repositioning between edges)
    let t_world_from_cube = scene.board.cube_pose_in_world;
    let ctx = MarkerTrackingCtx::new(
        vec![
            (&scene.board_mesh, None),
            (&scene.cube_mesh, Some(t_world_from_cube)),
        ],
        &scene.marker_mesh,
        scene.t_cam_from_world,
        config,
    );
    let mut tracker: Option<TrackerState> = None;
    let mut prev_true_pose: Option<RigidTransform> = None;
    let mut render_counter: u64 = 100;
    let mut pixel_frames: Vec<(Vec<(f64, f64)>, RigidTransform)> = Vec::new();

    let slices = config.cube.slices_per_edge;
    let mut frame_idx = 0usize;
    for edge_index in 0..scene.cube_model.edges.len() {
        for s in 0..slices {
            let t = 0.06 + 0.88 * s as f64 / (slices.max(2) - 1) as f64;
            let mut jitter_rng = element_rng(child_seed(seed, 3), frame_idx as u64);
            let tilt = jitter_rng.gen_range(-3.0..=3.0);
            let t_world_from_image = edge_slice_pose(&scene, config, edge_index, t, tilt);
            let t_world_from_marker = compose(&t_world_from_image, &invert(&scene.mount));

            let (result, lost) = ctx.track_keyframe(
                &mut tracker,
                &mut prev_true_pose,
                &t_world_from_marker,
                seed,
                &mut render_counter,
            )?;
            frame_idx += 1;
            if lost {
                log::warn!("cube scan frame {frame_idx}: marker lost, frame skipped");
                continue;
            }

            let t_image_from_cube = compose(&invert(&t_world_from_image), &t_world_from_cube);
            let hits = intersect_cube_edges(&scene.cube_model, &t_image_from_cube, us.spacing_mm_per_px, us.image_size_px);
            let spots: Vec<((f64, f64), u16)> =
                hits.iter().map(|h| (h.pixel, h.edge_id as u16)).collect();
            let frame = render_us_frame(
                &spots,
                us.psf_sigma_px,
                &us.speckle,
                child_seed(seed, 10_000 + frame_idx as u64),
                us.spacing_mm_per_px,
                us.image_size_px,
                frame_idx,
            );
            let pixels = segment_spots(&frame, &config.segmentation);
            if !pixels.is_empty() {
                pixel_frames.push((pixels, result.pose));
            }
        }
    }

    let points = collect_edge_points(&pixel_frames, matrix);
    Ok(evaluate_cube(
        &points,
        &scene.cube_model,
        &t_cam_from_world_est,
        &scene.board.cube_pose_in_world,
        &config.icp,
    )?)
}

/// Run the cube study over `n_seeds` seeds (parallel, aggregated in seed
/// order). Per-seed failures are logged and marked in the report.
pub fn run_cube_eval(config: &ExperimentConfig, matrix: &CalibrationMatrix) -> Result<CubeReport, ExperimentError> {
    config.validate()?;
    let mut rows: Vec<CubeRunRow> = (0..config.seeds.n_seeds)
        .into_par_iter()
        .map(|i| {
            let seed = config.seeds.base_seed + i as u64;
            match run_cube_eval_once(config, matrix, seed) {
                Ok(report) => CubeRunRow {
                    seed,
                    ok: true,
                    icp_residue_mm: Some(report.icp_residue),
                    center_offset_mm: Some(report.center_offset),
                    euler_offsets_deg: Some(report.euler_offsets),
                    n_points: report.n_points,
                },
                Err(e) => {
                    log::warn!("cube run seed {seed} failed: {e}");
                    CubeRunRow {
                        seed,
                        ok: false,
                        icp_residue_mm: None,
                        center_offset_mm: None,
                        euler_offsets_deg: None,
                        n_points: 0,
                    }
                }
            }
        })
        .collect();
    rows.sort_by_key(|r| r.seed);
    Ok(CubeReport {
        schema_version: crate::io::SCHEMA_VERSION.to_string(),
        generated_at: None,
        base_seed: config.seeds.base_seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ussim::GroundTruthCalibration;

    fn noiseless_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config.camera.noise = crate::depthsim::DepthNoiseModel::NOISELESS;
        config.us.speckle = crate::ussim::SpeckleParams::OFF;
        config.cube.corner_pixel_noise_px = 0.0;
        config.seeds.n_seeds = 1;
        config
    }

    #[test]
    fn noiseless_cube_run_with_ground_truth_matrix_is_exact() {
        let config = noiseless_config();
        let mount = config.probe_mount.transform();
        let gt = GroundTruthCalibration::from_mount(config.us.spacing_mm_per_px, &mount);
        let report = run_cube_eval_once(&config, &gt.matrix, 5).unwrap();
        assert!(report.n_points >= 100, "only {} points", report.n_points);
        assert!(report.icp_residue < 0.1, "residue {}", report.icp_residue);
        assert!(report.center_offset < 0.1, "center {}", report.center_offset);
        assert!(
            report.euler_offsets.iter().all(|a| a.abs() < 0.1),
            "euler {:?}",
            report.euler_offsets
        );
    }

    #[test]
    fn edge_slices_hit_their_edge() {
        let config = noiseless_config();
        let scene = build_cube_scene(&config).unwrap();
        for edge_index in 0..scene.cube_model.edges.len() {
            let pose = edge_slice_pose(&scene, &config, edge_index, 0.5, 0.0);
            let t_image_from_cube = compose(&invert(&pose), &scene.board.cube_pose_in_world);
            let hits = intersect_cube_edges(
                &scene.cube_model,
                &t_image_from_cube,
                config.us.spacing_mm_per_px,
                config.us.image_size_px,
            );
            assert!(
                hits.iter().any(|h| h.edge_id == scene.cube_model.edges[edge_index].0),
                "edge {edge_index} not hit"
            );
        }
    }
}
