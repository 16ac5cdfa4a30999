//! Scene assembly and the single end-to-end calibration run: render the
//! phantom, localize and freeze its pose, track the marker along the probe
//! trajectory, synthesize and segment ultrasound frames, solve the
//! calibration and score it on held-out frames.

use super::ExperimentError;
use crate::calib::{
    build_correspondences, calibration_error, fit_rms, match_nwires, segment_spots,
    solve_calibration, CalibrationMatrix, CalibrationReport, Correspondence, HeldoutFrame,
};
use crate::config::{ExperimentConfig, PlanePose, TrajectoryConfig, UsConfig};
use crate::depthsim::{crop_roi, render_depth, to_point_cloud, DepthNoiseModel, PointCloud};
use crate::geom::{
    compose, interpolate_pose, invert, rotation_angle_rad, CameraIntrinsics, RigidTransform,
};
use crate::io::PoseRecord;
use crate::register::{track_step, IcpParams, RegistrationResult, TrackerState};
use crate::scene::{
    make_marker_mesh, make_nwire_geometry, merge_meshes, MarkerParams, NWireGeometry, NWireParams,
    TriangleMesh,
};
use crate::streams::{child_seed, element_rng};
use crate::ussim::{
    intersect_wires, render_us_frame, wire_spot_id, GroundTruthCalibration, USFrame,
};
use nalgebra::Vector3;
use rand::Rng;

/// Nominal frame rate used for pose stream timestamps.
const POSE_STREAM_FPS: f64 = 30.0;

/// Largest inter-frame marker motion the transit tracker allows itself,
/// mm and degrees; keyframe gaps are subdivided down to this.
const TRANSIT_STEP_MM: f64 = 6.0;
const TRANSIT_STEP_DEG: f64 = 6.0;

/// Stand-in CAD body of the N-wire phantom, in phantom coordinates: an
/// asymmetric bracket of 20 mm blocks sitting just below the deepest wire
/// layer. Registration of this body is what localizes the phantom.
pub fn phantom_body_mesh(params: &NWireParams) -> TriangleMesh {
    let block = 20.0;
    let mesh = crate::scene::make_marker_mesh(&MarkerParams {
        cube_size: block,
        arrangement: vec![
            [0, 0, 0],
            [1, 0, 0],
            [2, 0, 0],
            [0, 1, 0],
            [2, 1, 0],
            [0, 0, 1],
        ],
        downsample_spacing: 3.0,
    })
    .expect("fixed bracket arrangement is valid");
    let y_mid = (params.y_front + params.y_back) / 2.0;
    let offset = Vector3::new(
        params.x_span / 2.0 - 1.5 * block,
        y_mid - block,
        params.layer_depths[2] + 2.0,
    );
    mesh.translated(offset)
}

/// Camera pose observing the phantom: `distance` mm from the wire center,
/// from above and in front. The camera's in-plane orientation keeps its
/// axes roughly aligned with the phantom axes, so identity-rotation ICP
/// initializations start inside their convergence basin (the physical
/// analog is the manual camera/ROI alignment step).
pub fn calibration_camera_pose(params: &NWireParams, distance: f64) -> RigidTransform {
    let y_mid = (params.y_front + params.y_back) / 2.0;
    let z_mid = (params.layer_depths[0] + params.layer_depths[2]) / 2.0;
    let target = Vector3::new(params.x_span / 2.0, y_mid, z_mid);
    let toward_camera = Vector3::new(0.15, -0.35, -0.92).normalize();
    look_at_camera(target + toward_camera * distance, target, Vector3::new(0.0, 1.0, 0.0))
}

/// `T_cam_from_world` for a camera at `eye` looking at `target`, with the
/// image v axis aligned as closely as possible with `down_world`.
pub fn look_at_camera(
    eye: Vector3<f64>,
    target: Vector3<f64>,
    down_world: Vector3<f64>,
) -> RigidTransform {
    let forward = (target - eye).normalize();
    let mut down = down_world - forward * down_world.dot(&forward);
    if down.norm() < 1e-9 {
        let alt = Vector3::new(0.0, 0.0, 1.0);
        down = alt - forward * alt.dot(&forward);
    }
    let down = down.normalize();
    let right = down.cross(&forward);
    let r_world_from_cam = nalgebra::Matrix3::from_columns(&[right, down, forward]);
    invert(&RigidTransform::new(r_world_from_cam, eye).expect("look-at basis is orthonormal"))
}

/// Everything fixed about one calibration setup.
pub struct CalibrationScene {
    pub geom: NWireGeometry,
    pub phantom_body: TriangleMesh,
    pub marker_mesh: TriangleMesh,
    pub t_cam_from_world: RigidTransform,
    /// Ground-truth probe mount `T_marker_from_image`.
    pub mount: RigidTransform,
    pub gt: GroundTruthCalibration,
}

pub fn build_calibration_scene(
    config: &ExperimentConfig,
    distance: f64,
) -> Result<CalibrationScene, ExperimentError> {
    let geom = make_nwire_geometry(&config.phantom)?;
    let phantom_body = phantom_body_mesh(&config.phantom);
    let marker_mesh = make_marker_mesh(&config.marker)?;
    let mount = config.probe_mount.transform();
    let gt = GroundTruthCalibration::from_mount(config.us.spacing_mm_per_px, &mount);
    Ok(CalibrationScene {
        geom,
        phantom_body,
        marker_mesh,
        t_cam_from_world: calibration_camera_pose(&config.phantom, distance),
        mount,
        gt,
    })
}

/// `T_phantom_from_image` for one probe placement: the perpendicular plane
/// at `x0` (image u along +y, v along +z, centered on the wires), fanned
/// and tilted about the wire-center pivot.
pub fn plane_pose_transform(phantom: &NWireParams, us: &UsConfig, pose: &PlanePose) -> RigidTransform {
    let y_mid = (phantom.y_front + phantom.y_back) / 2.0;
    let z_mid = (phantom.layer_depths[0] + phantom.layer_depths[2]) / 2.0;
    let center = Vector3::new(pose.x0_mm, y_mid, z_mid);
    let r0 = nalgebra::Matrix3::new(
        0.0, 0.0, 1.0, //
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0,
    );
    let half_u = us.image_size_px.0 as f64 * us.spacing_mm_per_px.0 / 2.0;
    let half_v = us.image_size_px.1 as f64 * us.spacing_mm_per_px.1 / 2.0;
    let origin = center - r0 * Vector3::new(half_u, half_v, 0.0);
    let base = RigidTransform::new(r0, origin).expect("fixed basis is orthonormal");
    let spin = compose(
        &RigidTransform::from_rotation_z(pose.fan_deg.to_radians()),
        &RigidTransform::from_rotation_y(pose.tilt_deg.to_radians()),
    );
    // rotate about the pivot so the image center stays on the wires
    let about_pivot = spin.with_translation(center - spin.transform_vector(&center));
    compose(&about_pivot, &base)
}

/// Calibration poses: a deterministic fan over the trajectory parameters
/// plus per-run jitter (true probe motion, seeded by the run). Fan and
/// tilt each complete one cycle over the trajectory, so successive poses
/// stay within the tracker's inter-frame motion budget.
fn calibration_plane_poses(tr: &TrajectoryConfig, seed: u64) -> Vec<PlanePose> {
    if let Some(explicit) = &tr.explicit {
        return explicit.clone();
    }
    let mut rng = element_rng(child_seed(seed, 7), 0);
    let n = tr.n_poses.max(1);
    (0..n)
        .map(|k| {
            let frac = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
            let phase = std::f64::consts::TAU * k as f64 / n as f64;
            PlanePose {
                x0_mm: tr.x0_min_mm
                    + frac * (tr.x0_max_mm - tr.x0_min_mm)
                    + rng.gen_range(-tr.jitter_mm..=tr.jitter_mm),
                fan_deg: tr.max_fan_deg * phase.sin() + rng.gen_range(-tr.jitter_deg..=tr.jitter_deg),
                tilt_deg: tr.max_tilt_deg * (phase + 1.0).sin()
                    + rng.gen_range(-tr.jitter_deg..=tr.jitter_deg),
            }
        })
        .collect()
}

/// Held-out poses: perpendicular, un-jittered planes with x0 spread inside
/// the wire span. The fixed orientation keeps the error metric's geometry
/// identical across frames, which the bias-injection checks rely on.
fn heldout_plane_poses(tr: &TrajectoryConfig, n: usize) -> Vec<PlanePose> {
    (0..n)
        .map(|k| {
            let frac = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
            PlanePose {
                x0_mm: (tr.x0_min_mm + 2.0) + frac * ((tr.x0_max_mm - 2.0) - (tr.x0_min_mm + 2.0)),
                fan_deg: 0.0,
                tilt_deg: 0.0,
            }
        })
        .collect()
}

/// Shared marker-tracking machinery: renders the static scene plus the
/// marker at its true pose and advances the tracker, subdividing large
/// keyframe gaps into transit frames (the continuous probe motion between
/// acquisitions).
pub(crate) struct MarkerTrackingCtx<'a> {
    pub static_parts: Vec<(&'a TriangleMesh, Option<RigidTransform>)>,
    pub marker_mesh: &'a TriangleMesh,
    pub marker_centroid: Vector3<f64>,
    pub marker_radius: f64,
    pub t_cam_from_world: RigidTransform,
    pub k: CameraIntrinsics,
    pub noise: DepthNoiseModel,
    pub icp: IcpParams,
}

impl<'a> MarkerTrackingCtx<'a> {
    pub fn new(
        static_parts: Vec<(&'a TriangleMesh, Option<RigidTransform>)>,
        marker_mesh: &'a TriangleMesh,
        t_cam_from_world: RigidTransform,
        config: &ExperimentConfig,
    ) -> Self {
        Self {
            static_parts,
            marker_mesh,
            marker_centroid: marker_mesh.centroid(),
            marker_radius: marker_mesh.span() * 0.75 + config.icp.max_correspondence_distance,
            t_cam_from_world,
            k: config.camera.intrinsics,
            noise: config.camera.noise,
            icp: config.icp,
        }
    }

    fn render_cloud(&self, t_world_from_marker: &RigidTransform, seed: u64) -> Result<PointCloud, ExperimentError> {
        let mut parts: Vec<(&TriangleMesh, Option<&RigidTransform>)> = self
            .static_parts
            .iter()
            .map(|(m, p)| (*m, p.as_ref()))
            .collect();
        parts.push((self.marker_mesh, Some(t_world_from_marker)));
        let merged = merge_meshes(&parts);
        let map = render_depth(&merged, &self.t_cam_from_world, &self.k, &self.noise, seed)?;
        Ok(to_point_cloud(&map))
    }

    fn track_transit(
        &self,
        tracker: &mut TrackerState,
        from: &RigidTransform,
        to: &RigidTransform,
        seed: u64,
        render_counter: &mut u64,
    ) -> Result<(), ExperimentError> {
        let dt = (to.translation() - from.translation()).norm();
        let dr_deg = rotation_angle_rad(&(from.rotation().transpose() * to.rotation())).to_degrees();
        let steps = ((dt / TRANSIT_STEP_MM).max(dr_deg / TRANSIT_STEP_DEG).ceil() as usize).clamp(1, 60);
        for i in 1..steps {
            let pose = interpolate_pose(from, to, i as f64 / steps as f64);
            let cloud = self.render_cloud(&pose, child_seed(seed, *render_counter))?;
            *render_counter += 1;
            let predicted = tracker.last_pose.transform_point(&self.marker_centroid);
            let roi = crop_roi(&cloud, &predicted, self.marker_radius);
            let _ = track_step(tracker, &roi, &self.icp);
        }
        Ok(())
    }

    /// Advance to a keyframe: transit-track from the previous keyframe's
    /// true pose, then track (or initialize) on the keyframe itself.
    pub fn track_keyframe(
        &self,
        tracker: &mut Option<TrackerState>,
        prev_true_pose: &mut Option<RigidTransform>,
        t_world_from_marker: &RigidTransform,
        seed: u64,
        render_counter: &mut u64,
    ) -> Result<(RegistrationResult, bool), ExperimentError> {
        if let (Some(state), Some(prev)) = (tracker.as_mut(), prev_true_pose.as_ref()) {
            self.track_transit(state, prev, t_world_from_marker, seed, render_counter)?;
        }
        let cloud = self.render_cloud(t_world_from_marker, child_seed(seed, *render_counter))?;
        *render_counter += 1;
        let out = match tracker.as_mut() {
            None => {
                // manual ROI alignment of the workflow's initialization step
                let predicted = compose(&self.t_cam_from_world, t_world_from_marker)
                    .transform_point(&self.marker_centroid);
                let (state, result) = TrackerState::initialize(
                    self.marker_mesh,
                    &cloud,
                    &predicted,
                    self.marker_radius,
                    &self.icp,
                )?;
                *tracker = Some(state);
                (result, false)
            }
            Some(state) => {
                let predicted = state.last_pose.transform_point(&self.marker_centroid);
                let roi = crop_roi(&cloud, &predicted, self.marker_radius);
                let result = track_step(state, &roi, &self.icp);
                (result, state.lost)
            }
        };
        *prev_true_pose = Some(*t_world_from_marker);
        Ok(out)
    }
}

/// Difference between two calibration matrices, in the units the
/// acceptance thresholds use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixError {
    pub translation_mm: f64,
    /// Geodesic rotation angle between the two rotation parts, degrees.
    pub rotation_deg: f64,
    /// Largest relative per-axis scale error.
    pub scale_rel: f64,
}

pub fn matrix_error(reference: &CalibrationMatrix, estimate: &CalibrationMatrix) -> MatrixError {
    let translation_mm = (reference.translation() - estimate.translation()).norm();
    let r_rel = reference.rotation().transpose() * estimate.rotation();
    let rotation_deg = rotation_angle_rad(&r_rel).to_degrees();
    let scale_rel = ((reference.sx() - estimate.sx()).abs() / reference.sx())
        .max((reference.sy() - estimate.sy()).abs() / reference.sy());
    MatrixError {
        translation_mm,
        rotation_deg,
        scale_rel,
    }
}

/// Everything a single calibration run produces, artifacts included.
pub struct CalibrationRunOutput {
    pub gt: GroundTruthCalibration,
    pub report: CalibrationReport,
    pub t_cam_from_phantom_est: RigidTransform,
    pub t_cam_from_phantom_gt: RigidTransform,
    /// Tracked marker pose per keyframe (calibration then held-out frames).
    pub marker_records: Vec<PoseRecord>,
    /// Ultrasound frames used for the solve, with annotations.
    pub frames: Vec<USFrame>,
    pub heldout: Vec<HeldoutFrame>,
    /// Scene cloud of the phantom localization step, camera frame.
    pub localization_cloud: PointCloud,
    pub n_frames_dropped: usize,
}

impl CalibrationRunOutput {
    /// How far the solved matrix is from the simulator's ground truth.
    pub fn error_vs_ground_truth(&self) -> MatrixError {
        matrix_error(&self.gt.matrix, &self.report.matrix)
    }
}

/// Run the full calibration pipeline once at the given camera distance.
pub fn run_single_calibration(
    config: &ExperimentConfig,
    distance: f64,
    seed: u64,
) -> Result<CalibrationRunOutput, ExperimentError> {
    let scene = build_calibration_scene(config, distance)?;
    let us = &config.us;

    // phantom localization on a frame without the probe, then freeze
    let loc_map = render_depth(
        &scene.phantom_body,
        &scene.t_cam_from_world,
        &config.camera.intrinsics,
        &config.camera.noise,
        child_seed(seed, 0),
    )?;
    let localization_cloud = to_point_cloud(&loc_map);
    let body_centroid_cam = scene
        .t_cam_from_world
        .transform_point(&scene.phantom_body.centroid());
    let roi_radius = scene.phantom_body.span() * 0.75 + 20.0;
    let (mut phantom_tracker, _) = TrackerState::initialize(
        &scene.phantom_body,
        &localization_cloud,
        &body_centroid_cam,
        roi_radius,
        &config.icp,
    )?;
    phantom_tracker.freeze();
    let t_cam_from_phantom_est = phantom_tracker.last_pose;

    let calib_poses = calibration_plane_poses(&config.trajectory, seed);
    let heldout_poses = heldout_plane_poses(&config.trajectory, config.calibration.n_heldout_frames);
    let n_calib = calib_poses.len();

    let ctx = MarkerTrackingCtx::new(
        vec![(&scene.phantom_body, None)],
        &scene.marker_mesh,
        scene.t_cam_from_world,
        config,
    );
    let mut marker_tracker: Option<TrackerState> = None;
    let mut prev_true_pose: Option<RigidTransform> = None;
    let mut render_counter: u64 = 1;

    let mut correspondences: Vec<Correspondence> = Vec::new();
    let mut frames = Vec::new();
    let mut heldout: Vec<HeldoutFrame> = Vec::new();
    let mut marker_records = Vec::new();
    let mut n_frames_dropped = 0usize;

    for (idx, plane) in calib_poses.iter().chain(heldout_poses.iter()).enumerate() {
        let is_heldout = idx >= n_calib;
        let t_phantom_from_image = plane_pose_transform(&config.phantom, us, plane);
        let t_world_from_marker = compose(&t_phantom_from_image, &invert(&scene.mount));

        let (result, lost) = ctx.track_keyframe(
            &mut marker_tracker,
            &mut prev_true_pose,
            &t_world_from_marker,
            seed,
            &mut render_counter,
        )?;
        marker_records.push(PoseRecord {
            frame: idx,
            t_s: idx as f64 / POSE_STREAM_FPS,
            pose: result.pose,
            rms_mm: result.rms_residue,
            lost,
        });
        if lost {
            log::warn!("frame {idx}: marker tracking lost, frame dropped");
            n_frames_dropped += 1;
            continue;
        }
        let t_cam_from_marker = result.pose;

        let t_image_from_phantom = invert(&t_phantom_from_image);
        let hits = match intersect_wires(&scene.geom, &t_image_from_phantom, us.spacing_mm_per_px, us.image_size_px) {
            Ok(h) => h,
            Err(e) => {
                log::warn!("frame {idx}: {e}; frame dropped");
                n_frames_dropped += 1;
                continue;
            }
        };
        let spots: Vec<((f64, f64), u16)> = hits
            .iter()
            .filter(|h| h.in_field)
            .map(|h| (h.pixel, wire_spot_id(h.layer, h.position)))
            .collect();
        let frame = render_us_frame(
            &spots,
            us.psf_sigma_px,
            &us.speckle,
            child_seed(seed, 10_000 + idx as u64),
            us.spacing_mm_per_px,
            us.image_size_px,
            idx,
        );

        if is_heldout {
            heldout.push((frame, t_cam_from_marker));
            continue;
        }

        let centroids = segment_spots(&frame, &config.segmentation);
        let labeled = match match_nwires(&centroids, 3) {
            Ok(l) => l,
            Err(e) => {
                log::warn!("frame {idx}: {e}; frame dropped");
                n_frames_dropped += 1;
                continue;
            }
        };
        let corrs = build_correspondences(
            &labeled,
            &scene.geom,
            &t_cam_from_phantom_est,
            &t_cam_from_marker,
            idx,
        )?;
        correspondences.extend(corrs);
        frames.push(frame);
    }

    let matrix = solve_calibration(&correspondences)?;
    let rms_fit = fit_rms(&matrix, &correspondences);
    let (error_mean, error_sd) = calibration_error(
        &matrix,
        &heldout,
        &scene.geom,
        &t_cam_from_phantom_est,
        &config.segmentation,
    )?;

    let report = CalibrationReport {
        matrix,
        rms_fit,
        n_frames: frames.len(),
        n_correspondences: correspondences.len(),
        error_mean,
        error_sd,
    };
    Ok(CalibrationRunOutput {
        gt: scene.gt,
        report,
        t_cam_from_phantom_est,
        t_cam_from_phantom_gt: scene.t_cam_from_world,
        marker_records,
        frames,
        heldout,
        localization_cloud,
        n_frames_dropped,
    })
}

/// Spread of probe orientations over a pose list, degrees: the largest
/// pairwise geodesic angle between image-plane rotations.
pub fn orientation_diversity_deg(poses: &[PlanePose]) -> f64 {
    let mut max = 0.0f64;
    for a in poses {
        for b in poses {
            let ra = RigidTransform::from_rotation_z(a.fan_deg.to_radians()).rotation()
                * RigidTransform::from_rotation_y(a.tilt_deg.to_radians()).rotation();
            let rb = RigidTransform::from_rotation_z(b.fan_deg.to_radians()).rotation()
                * RigidTransform::from_rotation_y(b.tilt_deg.to_radians()).rotation();
            max = max.max(rotation_angle_rad(&(ra.transpose() * rb)).to_degrees());
        }
    }
    max
}
