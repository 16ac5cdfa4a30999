//! Model-to-cloud registration: Umeyama rigid fit, point-to-point ICP with
//! grid-accelerated nearest neighbors, and the depth-based tracker used for
//! phantom localization (pose freezing) and marker tracking.
//!
//! The tracker replaces the original registration engine of the physical
//! system, which is not publicly available, behind the same contract:
//! virtual model in, real-time poses out. Mesh models are sampled to surface
//! points with normals; the tracking paths cull model points whose normal
//! faces away from the camera so that hidden faces do not bias the fit.

use crate::depthsim::{crop_roi, PointCloud};
use crate::geom::RigidTransform;
use crate::scene::TriangleMesh;
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Fixed seed of the deterministic mesh surface sampler.
const MESH_SAMPLING_SEED: u64 = 0x5ca1_ab1e;

#[derive(Debug, Error)]
pub enum RegisterError {
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no correspondences within {max_distance} mm at the initial pose")]
    NoCorrespondences { max_distance: f64 },
    #[error("ROI crop selected no scene points")]
    EmptyRoi,
    #[error("invalid ICP parameters: {0}")]
    InvalidParams(String),
}

/// ICP tuning knobs. All values must be positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Stop when the RMS improvement drops below this, mm.
    pub convergence_delta_rms: f64,
    /// Pairs farther than this are rejected, mm.
    pub max_correspondence_distance: f64,
    /// Voxel spacing of the sampled model surface, mm.
    pub model_downsample_spacing: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            convergence_delta_rms: 1e-4,
            max_correspondence_distance: 15.0,
            model_downsample_spacing: 3.0,
        }
    }
}

impl IcpParams {
    pub fn validate(&self) -> Result<(), RegisterError> {
        if self.max_iterations == 0
            || self.convergence_delta_rms <= 0.0
            || self.max_correspondence_distance <= 0.0
            || self.model_downsample_spacing <= 0.0
        {
            return Err(RegisterError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Outcome of a registration run. `pose` is `T_cam_from_model` when the
/// scene cloud is in the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub pose: RigidTransform,
    /// RMS distance over the final accepted correspondences, mm.
    pub rms_residue: f64,
    pub iterations: usize,
    pub converged: bool,
    /// RMS of every accepted iteration, monotone non-increasing.
    pub rms_history: Vec<f64>,
}

/// Least-squares rigid transform mapping `src` onto `dst` (paired points):
/// minimizes the sum of squared distances, reflection corrected so that
/// det(R) = +1.
pub fn umeyama_fit(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<RigidTransform, RegisterError> {
    if src.len() != dst.len() {
        return Err(RegisterError::DegenerateConfiguration(format!(
            "paired sets of different length: {} vs {}",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(RegisterError::DegenerateConfiguration(format!(
            "need at least 3 pairs, got {}",
            src.len()
        )));
    }
    let n = src.len() as f64;
    let centroid_src: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let centroid_dst: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    let mut cross = Matrix3::zeros();
    let mut src_scatter = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst.iter()) {
        let sc = s - centroid_src;
        let dc = d - centroid_dst;
        cross += dc * sc.transpose();
        src_scatter += sc * sc.transpose();
    }

    // collinear or coincident sources leave the rotation unconstrained
    let sv = src_scatter.svd(false, false).singular_values;
    if sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(RegisterError::DegenerateConfiguration(
            "source points are collinear or coincident".into(),
        ));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("3x3 svd yields u");
    let v_t = svd.v_t.expect("3x3 svd yields v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let translation = centroid_dst - rotation * centroid_src;
    RigidTransform::new(rotation, translation)
        .map_err(|e| RegisterError::DegenerateConfiguration(e.to_string()))
}

/// Uniform voxel hash over scene points; the cell size equals the query
/// radius, so a nearest-within-radius lookup only scans 27 cells.
pub struct NearestGrid {
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<u32>>,
    points: Vec<Vector3<f64>>,
}

impl NearestGrid {
    pub fn build(points: &[Vector3<f64>], radius: f64) -> Self {
        let cell = radius.max(1e-9);
        let mut buckets: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self {
            cell,
            buckets,
            points: points.to_vec(),
        }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Nearest point within the build radius of `q`, as (index, distance).
    pub fn nearest_within(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        let (kx, ky, kz) = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in bucket {
                            let d = (self.points[i as usize] - q).norm();
                            if d <= self.cell && best.map_or(true, |(_, bd)| d < bd) {
                                best = Some((i as usize, d));
                            }
                        }
                    }
                }
            }
        }
        best
    }
}

/// Point-to-point ICP aligning `model_points` onto `scene`.
///
/// Correspondences run scene to model: each scene point pairs with the
/// nearest posed model point (pairs beyond `max_correspondence_distance`
/// rejected). Because the model is a complete surface while the scene is a
/// partial view, every scene point has a true counterpart and
/// self-occlusion cannot bias the fit. The fit alternates with
/// [`umeyama_fit`] until the RMS improvement drops below
/// `convergence_delta_rms` or the iteration budget runs out; the reported
/// RMS sequence over accepted iterations is monotone non-increasing (an
/// iteration that would increase it reverts to the previous pose and
/// terminates).
pub fn icp(
    model_points: &PointCloud,
    scene: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationResult, RegisterError> {
    icp_core(&model_points.points, false, scene, init, params)
}

pub(crate) fn icp_core(
    model: &[Vector3<f64>],
    trim: bool,
    scene: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<RegistrationResult, RegisterError> {
    params.validate()?;
    if model.is_empty() || scene.is_empty() {
        return Err(RegisterError::DegenerateConfiguration(
            "model and scene clouds must be nonempty".into(),
        ));
    }

    let mut pose = *init;
    let mut prev_rms = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut rms_history = Vec::new();

    let mut src = Vec::with_capacity(scene.len());
    let mut dst = Vec::with_capacity(scene.len());
    let mut dists = Vec::with_capacity(scene.len());
    let mut posed = vec![Vector3::zeros(); model.len()];
    for iter in 0..params.max_iterations {
        for (out, m) in posed.iter_mut().zip(model.iter()) {
            *out = pose.transform_point(m);
        }
        let grid = NearestGrid::build(&posed, params.max_correspondence_distance);
        src.clear();
        dst.clear();
        dists.clear();
        for s in &scene.points {
            if let Some((j, d)) = grid.nearest_within(s) {
                src.push(model[j]);
                dst.push(*s);
                dists.push(d);
            }
        }
        if trim && src.len() >= 12 {
            // stray scene points (neighboring objects inside the ROI,
            // heavy sensor noise) are cut at 3x the median pair distance;
            // the floor keeps the near-edge points that pin down in-plane
            // sliding once the fit is tight
            let mut sorted = dists.clone();
            sorted.sort_by(f64::total_cmp);
            let cutoff = (3.0 * sorted[sorted.len() / 2]).max(0.25 * params.model_downsample_spacing);
            let mut keep = 0usize;
            for i in 0..src.len() {
                if dists[i] <= cutoff {
                    src[keep] = src[i];
                    dst[keep] = dst[i];
                    keep += 1;
                }
            }
            src.truncate(keep);
            dst.truncate(keep);
        }
        if src.len() < 3 {
            if iter == 0 {
                return Err(RegisterError::NoCorrespondences {
                    max_distance: params.max_correspondence_distance,
                });
            }
            break;
        }
        let fit = umeyama_fit(&src, &dst)?;
        let rms = rms_error(&fit, &src, &dst);
        iterations = iter + 1;
        if rms > prev_rms {
            // re-pairing made things worse: keep the previous pose
            converged = true;
            break;
        }
        pose = fit;
        rms_history.push(rms);
        if prev_rms - rms < params.convergence_delta_rms {
            prev_rms = rms;
            converged = true;
            break;
        }
        prev_rms = rms;
    }
    debug_assert!(rms_history.windows(2).all(|w| w[1] <= w[0]));

    Ok(RegistrationResult {
        pose,
        rms_residue: if prev_rms.is_finite() { prev_rms } else { 0.0 },
        iterations,
        converged,
        rms_history,
    })
}

fn rms_error(pose: &RigidTransform, src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
    let sum: f64 = src
        .iter()
        .zip(dst.iter())
        .map(|(s, d)| (pose.transform_point(s) - d).norm_squared())
        .sum();
    (sum / src.len() as f64).sqrt()
}

/// Point-to-surface polish iterations when warm-starting (tracking).
const TRACKING_REFINE_ITERATIONS: usize = 20;

/// Rotation starts tried by [`localize_model`], degrees (Z-Y-X Euler).
const LOCALIZE_ROTATION_STARTS: &[[f64; 3]] = &[
    [0.0, 0.0, 0.0],
    [25.0, 0.0, 0.0],
    [-25.0, 0.0, 0.0],
    [0.0, 25.0, 0.0],
    [0.0, -25.0, 0.0],
    [0.0, 0.0, 25.0],
    [0.0, 0.0, -25.0],
];

/// Polish a pose by matching scene points against the continuous mesh
/// surface instead of its samples, minimizing the point-to-plane distance.
///
/// This removes the sampling quantization bias of point-to-point matching
/// and converges the tangential sliding modes of flat-faced models in a
/// handful of iterations. The reported residue stays the Euclidean RMS
/// distance to the surface.
pub(crate) fn refine_on_surface(
    mesh: &crate::scene::TriangleMesh,
    scene: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
    max_iterations: usize,
    carry_history: Vec<f64>,
) -> Result<RegistrationResult, RegisterError> {
    use nalgebra::{SMatrix, SVector};

    let mut pose = *init;
    let mut prev_rms = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut rms_history = carry_history;

    let mut pairs: Vec<(Vector3<f64>, Vector3<f64>, Vector3<f64>, f64)> = Vec::new();
    for iter in 0..max_iterations {
        let inv_pose = crate::geom::invert(&pose);
        pairs.clear();
        for s in &scene.points {
            let s_model = inv_pose.transform_point(s);
            let (q, d, tri) = mesh.closest_surface_point(&s_model);
            if d <= params.max_correspondence_distance {
                // surface normal at the match, oriented toward the point
                let mut n = mesh.triangle_normal(tri);
                if d > 1e-9 && n.dot(&(s_model - q)) < 0.0 {
                    n = -n;
                }
                pairs.push((s_model, q, n, d));
            }
        }
        if pairs.len() >= 12 {
            let mut sorted: Vec<f64> = pairs.iter().map(|p| p.3).collect();
            sorted.sort_by(f64::total_cmp);
            let cutoff = (3.0 * sorted[sorted.len() / 2]).max(0.25 * params.model_downsample_spacing);
            pairs.retain(|p| p.3 <= cutoff);
        }
        if pairs.len() < 6 {
            if iter == 0 {
                return Err(RegisterError::NoCorrespondences {
                    max_distance: params.max_correspondence_distance,
                });
            }
            break;
        }

        // point-to-plane least squares for the model-frame correction D
        // applied as pose <- pose * D^-1: residual n.(s + w x s + t - q)
        let mut ata = SMatrix::<f64, 6, 6>::zeros();
        let mut atb = SVector::<f64, 6>::zeros();
        let mut sq_sum = 0.0;
        for (s_model, q, n, d) in &pairs {
            let c = s_model.cross(n);
            let row = [c.x, c.y, c.z, n.x, n.y, n.z];
            let b = n.dot(&(s_model - q));
            for r in 0..6 {
                for cidx in 0..6 {
                    ata[(r, cidx)] += row[r] * row[cidx];
                }
                atb[r] += row[r] * b;
            }
            sq_sum += d * d;
        }
        let rms = (sq_sum / pairs.len() as f64).sqrt();
        iterations = iter + 1;
        if rms > prev_rms {
            converged = true;
            break;
        }
        rms_history.push(rms);
        if prev_rms - rms < params.convergence_delta_rms {
            prev_rms = rms;
            converged = true;
            break;
        }
        prev_rms = rms;

        let Some(x) = ata.lu().solve(&(-atb)) else {
            // normals do not constrain all six degrees of freedom
            converged = true;
            break;
        };
        let omega = Vector3::new(x[0], x[1], x[2]);
        let t = Vector3::new(x[3], x[4], x[5]);
        let d_rot = nalgebra::Rotation3::from_scaled_axis(omega);
        let correction = RigidTransform::new(*d_rot.matrix(), t)
            .map_err(|e| RegisterError::DegenerateConfiguration(e.to_string()))?;
        pose = crate::geom::compose(&pose, &crate::geom::invert(&correction));
    }
    Ok(RegistrationResult {
        pose,
        rms_residue: if prev_rms.is_finite() { prev_rms } else { 0.0 },
        iterations,
        converged,
        rms_history,
    })
}

/// Mean nearest-neighbor distance of the posed model against the scene,
/// over pairs within the correspondence radius. Returns the mean and the
/// number of accepted pairs; the mean is infinite when nothing pairs up.
pub fn mean_nn_distance(
    model: &[Vector3<f64>],
    scene: &PointCloud,
    pose: &RigidTransform,
    max_distance: f64,
) -> (f64, usize) {
    let grid = NearestGrid::build(&scene.points, max_distance);
    let mut sum = 0.0;
    let mut n = 0usize;
    for m in model {
        let p = pose.transform_point(m);
        if let Some((_, d)) = grid.nearest_within(&p) {
            sum += d;
            n += 1;
        }
    }
    (if n > 0 { sum / n as f64 } else { f64::INFINITY }, n)
}

/// Surface samples of a mesh with per-point normals.
#[derive(Debug, Clone)]
pub struct SampledModel {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
}

/// Sample a mesh surface: uniform-area random sampling with a fixed seed,
/// thinned on a voxel grid at `spacing` (deterministic for a given mesh).
pub fn sample_mesh_surface(mesh: &TriangleMesh, spacing: f64) -> SampledModel {
    let total_area = mesh.total_area();
    // oversample well past the voxel budget so thinning fills evenly
    let target = ((total_area / (spacing * spacing)).ceil() as usize).max(1) * 12;

    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for i in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(i);
        cumulative.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(MESH_SAMPLING_SEED);
    let mut occupied: HashMap<(i64, i64, i64), ()> = HashMap::new();
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for _ in 0..target {
        let pick = rng.gen_range(0.0..acc);
        let tri = cumulative.partition_point(|&c| c < pick).min(mesh.triangles.len() - 1);
        let [a, b, c] = mesh.triangle_vertices(tri);
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let sq = r1.sqrt();
        let p = a * (1.0 - sq) + b * (sq * (1.0 - r2)) + c * (sq * r2);
        let key = (
            (p.x / spacing).floor() as i64,
            (p.y / spacing).floor() as i64,
            (p.z / spacing).floor() as i64,
        );
        if occupied.insert(key, ()).is_none() {
            points.push(p);
            normals.push(mesh.triangle_normal(tri));
        }
    }
    SampledModel { points, normals }
}

/// Localize a mesh model inside a scene cloud: crop the ROI, align the
/// sampled model centroid with the crop centroid (identity rotation), then
/// run ICP coarse to fine. A non-converged run is surfaced via the result,
/// not an error.
///
/// The scene cloud only shows faces visible to the camera, so the initial
/// translation is computed from the model points that face the camera
/// under the identity rotation; the correspondence radius is annealed from
/// the model span down to the configured value, which steps blocky models
/// out of lattice-shifted local minima.
pub fn localize_model(
    mesh: &TriangleMesh,
    scene: &PointCloud,
    roi_center: &Vector3<f64>,
    roi_radius: f64,
    params: &IcpParams,
) -> Result<RegistrationResult, RegisterError> {
    params.validate()?;
    let cropped = crop_roi(scene, roi_center, roi_radius);
    if cropped.is_empty() {
        return Err(RegisterError::EmptyRoi);
    }
    let model = sample_mesh_surface(mesh, params.model_downsample_spacing);
    // view direction under the identity-rotation init is toward the ROI
    let visible: Vec<Vector3<f64>> = model
        .points
        .iter()
        .zip(model.normals.iter())
        .filter(|(_, n)| n.dot(roi_center) < 0.0)
        .map(|(p, _)| *p)
        .collect();
    let init_points = if visible.len() >= 3 { &visible } else { &model.points };
    let centroid: Vector3<f64> = init_points.iter().sum::<Vector3<f64>>() / init_points.len() as f64;
    let init_translation = cropped.centroid() - centroid;

    let span = mesh.span();
    let mut stages = vec![
        span.max(params.max_correspondence_distance),
        (span / 2.0).max(params.max_correspondence_distance),
        params.max_correspondence_distance,
    ];
    stages.dedup_by(|a, b| (*a - *b).abs() < 1e-9);

    // the sample-RMS floor cannot tell a lattice-aliased basin from the
    // true one, so each rotation start is scored by its surface residue
    let mut best: Option<RegistrationResult> = None;
    for start_deg in LOCALIZE_ROTATION_STARTS {
        let spin = RigidTransform::from_euler_zyx_deg(*start_deg);
        let mut pose = spin
            .with_translation(centroid + init_translation - spin.transform_vector(&centroid));
        let mut history = Vec::new();
        let mut failed = false;
        for radius in &stages {
            let stage_params = IcpParams {
                max_correspondence_distance: *radius,
                ..*params
            };
            match icp_core(&model.points, true, &cropped, &pose, &stage_params) {
                Ok(r) => {
                    pose = r.pose;
                    history = r.rms_history;
                }
                Err(RegisterError::NoCorrespondences { .. }) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if failed {
            continue;
        }
        let candidate = refine_on_surface(mesh, &cropped, &pose, params, 10, history)?;
        if best
            .as_ref()
            .map_or(true, |b| candidate.rms_residue < b.rms_residue)
        {
            best = Some(candidate);
        }
    }
    let seed_result = best.ok_or(RegisterError::NoCorrespondences {
        max_distance: params.max_correspondence_distance,
    })?;
    let result = refine_on_surface(
        mesh,
        &cropped,
        &seed_result.pose,
        params,
        params.max_iterations,
        seed_result.rms_history,
    )?;
    if orientation_ambiguous(&model.points, &cropped, &result, params) {
        log::warn!(
            "model orientation is ambiguous: a rotated fit matches the scene almost as well \
             (rms {:.3} mm); consider an asymmetric model",
            result.rms_residue
        );
    }
    Ok(result)
}

/// True when spinning the model a quarter/half turn about one of its
/// centroid axes fits the scene nearly as well as the converged pose, i.e.
/// the residue cannot discriminate orientations (symmetric models).
pub fn orientation_ambiguous(
    model: &[Vector3<f64>],
    scene: &PointCloud,
    result: &RegistrationResult,
    params: &IcpParams,
) -> bool {
    let centroid: Vector3<f64> = model.iter().sum::<Vector3<f64>>() / model.len() as f64;
    let sample_rms = |rot: Option<&RigidTransform>| -> Option<f64> {
        let posed: Vec<Vector3<f64>> = model
            .iter()
            .map(|m| {
                let spun = match rot {
                    Some(r) => r.transform_point(&(m - centroid)) + centroid,
                    None => *m,
                };
                result.pose.transform_point(&spun)
            })
            .collect();
        let grid = NearestGrid::build(&posed, params.max_correspondence_distance);
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in &scene.points {
            if let Some((_, d)) = grid.nearest_within(s) {
                sum += d * d;
                n += 1;
            }
        }
        (n >= scene.len() / 2).then(|| (sum / n as f64).sqrt())
    };
    let Some(base) = sample_rms(None) else {
        return false;
    };
    let threshold = (1.25 * base).max(base + 0.25 * params.model_downsample_spacing);
    for axis in 0..3 {
        for quarter_turns in 1..=3 {
            let angle = quarter_turns as f64 * std::f64::consts::FRAC_PI_2;
            let rot = match axis {
                0 => RigidTransform::from_rotation_x(angle),
                1 => RigidTransform::from_rotation_y(angle),
                _ => RigidTransform::from_rotation_z(angle),
            };
            if let Some(alt) = sample_rms(Some(&rot)) {
                if alt <= threshold {
                    return true;
                }
            }
        }
    }
    false
}

/// State of one tracked object. Single-owner mutable: one tracker per
/// object; distinct trackers may run on distinct threads.
#[derive(Debug, Clone)]
pub struct TrackerState {
    mesh: TriangleMesh,
    model: SampledModel,
    pub last_pose: RigidTransform,
    pub frozen: bool,
    pub lost: bool,
    pub residue_history: Vec<f64>,
}

impl TrackerState {
    /// Localize `mesh` in `scene` and start tracking from the found pose.
    pub fn initialize(
        mesh: &TriangleMesh,
        scene: &PointCloud,
        roi_center: &Vector3<f64>,
        roi_radius: f64,
        params: &IcpParams,
    ) -> Result<(Self, RegistrationResult), RegisterError> {
        let result = localize_model(mesh, scene, roi_center, roi_radius, params)?;
        let model = sample_mesh_surface(mesh, params.model_downsample_spacing);
        Ok((
            Self {
                mesh: mesh.clone(),
                model,
                last_pose: result.pose,
                frozen: false,
                lost: false,
                residue_history: vec![result.rms_residue],
            },
            result,
        ))
    }

    /// Freeze the pose: every subsequent [`track_step`] returns it
    /// unchanged. Used for the static phantom.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn model_points(&self) -> &[Vector3<f64>] {
        &self.model.points
    }
}

/// Advance the tracker by one frame.
///
/// A frozen tracker returns its pose bit-exactly. Otherwise ICP is
/// warm-started from the last pose; the tracker is flagged lost when the
/// residue exceeds 3x the model sampling spacing (or no correspondences
/// remain), in which case the last good pose is kept.
pub fn track_step(
    state: &mut TrackerState,
    scene: &PointCloud,
    params: &IcpParams,
) -> RegistrationResult {
    if state.frozen {
        return RegistrationResult {
            pose: state.last_pose,
            rms_residue: state.residue_history.last().copied().unwrap_or(0.0),
            iterations: 0,
            converged: true,
            rms_history: vec![],
        };
    }
    let tracked = icp_core(&state.model.points, true, scene, &state.last_pose, params).and_then(
        |coarse| {
            refine_on_surface(
                &state.mesh,
                scene,
                &coarse.pose,
                params,
                TRACKING_REFINE_ITERATIONS,
                coarse.rms_history,
            )
        },
    );
    match tracked {
        Ok(result) => {
            state.lost = result.rms_residue > 3.0 * params.model_downsample_spacing;
            if !state.lost {
                state.last_pose = result.pose;
                state.residue_history.push(result.rms_residue);
            }
            result
        }
        Err(_) => {
            state.lost = true;
            RegistrationResult {
                pose: state.last_pose,
                rms_residue: f64::INFINITY,
                iterations: 0,
                converged: false,
                rms_history: vec![],
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depthsim::{render_depth, to_point_cloud, DepthNoiseModel};
    use crate::geom::{compose, invert, pose_offset, CameraIntrinsics};
    use crate::scene::{make_marker_mesh, MarkerParams};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn random_points(rng: &mut StdRng, n: usize, span: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-span..span),
                    rng.gen_range(-span..span),
                    rng.gen_range(-span..span),
                )
            })
            .collect()
    }

    fn random_pose(rng: &mut StdRng) -> RigidTransform {
        RigidTransform::from_euler_zyx_deg([
            rng.gen_range(-170.0..170.0),
            rng.gen_range(-80.0..80.0),
            rng.gen_range(-170.0..170.0),
        ])
        .with_translation(Vector3::new(
            rng.gen_range(-200.0..200.0),
            rng.gen_range(-200.0..200.0),
            rng.gen_range(-200.0..200.0),
        ))
    }

    #[test]
    fn umeyama_identity_on_equal_sets() {
        let mut rng = StdRng::seed_from_u64(1);
        let pts = random_points(&mut rng, 20, 50.0);
        let t = umeyama_fit(&pts, &pts).unwrap();
        let off = pose_offset(&RigidTransform::identity(), &t);
        assert!(off.center_offset < 1e-12);
        assert!(off.euler_offsets.iter().all(|a| a.abs() < 1e-10));
    }

    #[test]
    fn umeyama_recovers_random_transforms_exactly() {
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..100 {
            let src = random_points(&mut rng, 10, 80.0);
            let truth = random_pose(&mut rng);
            let dst: Vec<_> = src.iter().map(|p| truth.transform_point(p)).collect();
            let fit = umeyama_fit(&src, &dst).unwrap();
            let off = pose_offset(&truth, &fit);
            assert!(off.center_offset < 1e-10, "center {}", off.center_offset);
            assert!(off.euler_offsets.iter().all(|a| a.abs() < 1e-10));
        }
    }

    #[test]
    fn umeyama_rejects_degenerate_input() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            umeyama_fit(&line, &line),
            Err(RegisterError::DegenerateConfiguration(_))
        ));
        let two = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        assert!(umeyama_fit(&two, &two).is_err());
        let coincident = vec![Vector3::zeros(); 4];
        assert!(umeyama_fit(&coincident, &coincident).is_err());
    }

    #[test]
    fn umeyama_minimizes_the_squared_objective() {
        let mut rng = StdRng::seed_from_u64(3);
        let src = random_points(&mut rng, 15, 60.0);
        let truth = random_pose(&mut rng);
        // noisy targets so the optimum is strictly interior
        let dst: Vec<_> = src
            .iter()
            .map(|p| {
                truth.transform_point(p)
                    + Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
            })
            .collect();
        let fit = umeyama_fit(&src, &dst).unwrap();
        let objective = |t: &RigidTransform| -> f64 {
            src.iter()
                .zip(dst.iter())
                .map(|(s, d)| (t.transform_point(s) - d).norm_squared())
                .sum()
        };
        let best = objective(&fit);
        for _ in 0..100 {
            let delta = RigidTransform::from_euler_zyx_deg([
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ])
            .with_translation(Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ));
            let perturbed = compose(&fit, &delta);
            assert!(objective(&perturbed) >= best - 1e-9);
        }
    }

    #[test]
    fn icp_on_identical_clouds_converges_immediately() {
        let mut rng = StdRng::seed_from_u64(4);
        let pts = random_points(&mut rng, 200, 50.0);
        let cloud = PointCloud::new(pts, "camera");
        let result = icp(&cloud, &cloud, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!(result.converged);
        assert!(result.iterations <= 2);
        assert!(result.rms_residue < 1e-12);
        let off = pose_offset(&RigidTransform::identity(), &result.pose);
        assert!(off.center_offset < 1e-12);
    }

    #[test]
    fn icp_recovers_small_perturbations() {
        let mut rng = StdRng::seed_from_u64(5);
        let pts = random_points(&mut rng, 300, 50.0);
        let truth = RigidTransform::from_euler_zyx_deg([3.0, -4.0, 2.0])
            .with_translation(Vector3::new(5.0, -3.0, 4.0));
        let scene = PointCloud::new(pts.iter().map(|p| truth.transform_point(p)).collect(), "camera");
        let model = PointCloud::new(pts, "model");
        let result = icp(&model, &scene, &RigidTransform::identity(), &IcpParams::default()).unwrap();
        assert!(result.converged);
        let off = pose_offset(&truth, &result.pose);
        assert!(off.center_offset < 0.01, "center {}", off.center_offset);
        assert!(off.euler_offsets.iter().all(|a| a.abs() < 0.01));
    }

    #[test]
    fn icp_far_init_yields_no_correspondences() {
        let mut rng = StdRng::seed_from_u64(6);
        let pts = random_points(&mut rng, 100, 30.0);
        let cloud = PointCloud::new(pts, "camera");
        let far = RigidTransform::from_translation(Vector3::new(500.0, 0.0, 0.0));
        let params = IcpParams {
            max_correspondence_distance: 10.0,
            ..IcpParams::default()
        };
        assert!(matches!(
            icp(&cloud, &cloud, &far, &params),
            Err(RegisterError::NoCorrespondences { .. })
        ));
    }

    fn rendered_marker_cloud(
        mesh: &TriangleMesh,
        pose: &RigidTransform,
        noise: &DepthNoiseModel,
        seed: u64,
    ) -> PointCloud {
        let k = CameraIntrinsics::new(580.0, 580.0, 320.0, 240.0, 640, 480).unwrap();
        let map = render_depth(mesh, pose, &k, noise, seed).unwrap();
        to_point_cloud(&map)
    }

    #[test]
    fn localize_rendered_marker_within_half_mm() {
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let truth = RigidTransform::from_euler_zyx_deg([10.0, 15.0, -20.0])
            .with_translation(Vector3::new(-15.0, -12.0, 500.0));
        let cloud = rendered_marker_cloud(&mesh, &truth, &DepthNoiseModel::NOISELESS, 0);
        assert!(!cloud.is_empty());
        let result =
            localize_model(&mesh, &cloud, &cloud.centroid(), 100.0, &IcpParams::default()).unwrap();
        assert!(result.converged);
        let off = pose_offset(&truth, &result.pose);
        assert!(off.center_offset < 0.5, "center offset {}", off.center_offset);
        assert!(
            off.euler_offsets.iter().all(|a| a.abs() < 0.5),
            "euler {:?}",
            off.euler_offsets
        );
    }

    #[test]
    fn localize_empty_roi_is_an_error() {
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let cloud = PointCloud::new(vec![Vector3::new(0.0, 0.0, 400.0)], "camera");
        assert!(matches!(
            localize_model(
                &mesh,
                &cloud,
                &Vector3::new(900.0, 0.0, 0.0),
                10.0,
                &IcpParams::default()
            ),
            Err(RegisterError::EmptyRoi)
        ));
    }

    #[test]
    fn symmetric_model_is_flagged_ambiguous() {
        let symmetric = make_marker_mesh(&MarkerParams {
            cube_size: 10.0,
            arrangement: vec![
                [0, 0, 0],
                [1, 0, 0],
                [0, 1, 0],
                [1, 1, 0],
                [0, 0, 1],
                [1, 0, 1],
                [0, 1, 1],
                [1, 1, 1],
            ],
            downsample_spacing: 3.0,
        })
        .unwrap();
        let params = IcpParams::default();
        let truth = RigidTransform::from_translation(Vector3::new(-10.0, -10.0, 450.0));
        let cloud = rendered_marker_cloud(&symmetric, &truth, &DepthNoiseModel::NOISELESS, 0);
        let result = localize_model(&symmetric, &cloud, &cloud.centroid(), 80.0, &params).unwrap();
        assert!(result.converged);
        let model = sample_mesh_surface(&symmetric, params.model_downsample_spacing);
        assert!(orientation_ambiguous(&model.points, &cloud, &result, &params));

        // the asymmetric default marker is not flagged
        let marker = make_marker_mesh(&MarkerParams::default()).unwrap();
        let cloud = rendered_marker_cloud(&marker, &truth, &DepthNoiseModel::NOISELESS, 0);
        let result = localize_model(&marker, &cloud, &cloud.centroid(), 80.0, &params).unwrap();
        let model = sample_mesh_surface(&marker, params.model_downsample_spacing);
        assert!(!orientation_ambiguous(&model.points, &cloud, &result, &params));
    }

    #[test]
    fn frozen_tracker_pose_is_bit_constant() {
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let truth = RigidTransform::from_translation(Vector3::new(-20.0, -10.0, 480.0));
        let cloud = rendered_marker_cloud(&mesh, &truth, &DepthNoiseModel::NOISELESS, 0);
        let params = IcpParams::default();
        let (mut state, _) =
            TrackerState::initialize(&mesh, &cloud, &cloud.centroid(), 100.0, &params).unwrap();
        state.freeze();
        let frozen_pose = state.last_pose;
        for seed in 0..5 {
            let moved = rendered_marker_cloud(
                &mesh,
                &truth.with_translation(truth.translation() + Vector3::new(seed as f64, 0.0, 0.0)),
                &DepthNoiseModel::default(),
                seed,
            );
            let result = track_step(&mut state, &moved, &params);
            assert_eq!(result.pose, frozen_pose);
            assert_eq!(state.last_pose, frozen_pose);
        }
    }

    #[test]
    fn tracker_follows_small_motion() {
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let mut truth = RigidTransform::from_euler_zyx_deg([5.0, -8.0, 10.0])
            .with_translation(Vector3::new(-18.0, -8.0, 500.0));
        let params = IcpParams::default();
        let cloud = rendered_marker_cloud(&mesh, &truth, &DepthNoiseModel::NOISELESS, 0);
        let (mut state, _) =
            TrackerState::initialize(&mesh, &cloud, &cloud.centroid(), 100.0, &params).unwrap();
        for step in 0..5 {
            truth = truth.with_translation(truth.translation() + Vector3::new(2.0, 0.0, 0.0));
            let cloud = rendered_marker_cloud(&mesh, &truth, &DepthNoiseModel::NOISELESS, step);
            let result = track_step(&mut state, &cloud, &params);
            assert!(!state.lost);
            let off = pose_offset(&truth, &result.pose);
            assert!(off.center_offset < 0.05, "step {step}: {}", off.center_offset);
        }
    }

    #[test]
    fn teleport_sets_lost() {
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let truth = RigidTransform::from_translation(Vector3::new(-20.0, -10.0, 500.0));
        let params = IcpParams::default();
        let cloud = rendered_marker_cloud(&mesh, &truth, &DepthNoiseModel::NOISELESS, 0);
        let (mut state, _) =
            TrackerState::initialize(&mesh, &cloud, &cloud.centroid(), 100.0, &params).unwrap();
        let pose_before = state.last_pose;
        let teleported = truth.with_translation(truth.translation() + Vector3::new(300.0, 0.0, 0.0));
        let far_cloud = rendered_marker_cloud(&mesh, &teleported, &DepthNoiseModel::NOISELESS, 1);
        let _ = track_step(&mut state, &far_cloud, &params);
        assert!(state.lost);
        assert_eq!(state.last_pose, pose_before);
    }

    #[test]
    fn icp_rms_history_is_monotone() {
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let params = IcpParams::default();
        let mut rng = StdRng::seed_from_u64(9);
        for trial in 0..10 {
            let truth = RigidTransform::from_euler_zyx_deg([
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
            ])
            .with_translation(Vector3::new(-18.0, -8.0, 480.0));
            let cloud = rendered_marker_cloud(&mesh, &truth, &DepthNoiseModel::default(), trial);
            if cloud.is_empty() {
                continue;
            }
            let model = sample_mesh_surface(&mesh, params.model_downsample_spacing);
            let init = RigidTransform::from_translation(
                cloud.centroid()
                    - model.points.iter().sum::<Vector3<f64>>() / model.points.len() as f64,
            );
            let result = icp_core(&model.points, true, &cloud, &init, &params).unwrap();
            assert!(!result.rms_history.is_empty(), "trial {trial} made no progress");
            for w in result.rms_history.windows(2) {
                assert!(w[1] <= w[0], "history not monotone: {:?}", result.rms_history);
            }
        }
    }

    #[test]
    fn localized_pose_maps_model_onto_cloud() {
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let truth = RigidTransform::from_translation(Vector3::new(-20.0, -10.0, 500.0));
        let cloud = rendered_marker_cloud(&mesh, &truth, &DepthNoiseModel::NOISELESS, 0);
        let params = IcpParams::default();
        let result = localize_model(&mesh, &cloud, &cloud.centroid(), 100.0, &params).unwrap();
        // every scene point must sit near the posed model (the other
        // direction is not small: hidden model faces have no scene data)
        let model = sample_mesh_surface(&mesh, params.model_downsample_spacing);
        let back = cloud.transformed(&invert(&result.pose), "model");
        let (mean_back, n) = mean_nn_distance(
            &back.points,
            &PointCloud::new(model.points.clone(), "model"),
            &RigidTransform::identity(),
            10.0,
        );
        assert_eq!(n, cloud.len());
        assert!(mean_back < 2.0, "mean scene-to-model distance {mean_back}");
        // and directly against the continuous surface
        let far = back
            .points
            .iter()
            .map(|p| mesh.distance_to_surface(p))
            .fold(0.0f64, f64::max);
        assert!(far < 0.5, "worst scene-to-surface distance {far}");
    }
}
