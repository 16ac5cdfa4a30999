//! Synthetic RGB-D depth camera: ray-cast depth maps of triangle meshes
//! with a distance-dependent Gaussian noise model and dropout, plus
//! conversion to point clouds and ROI cropping.
//!
//! Depth is z-depth along the optical axis, not ray length. A pixel value
//! of 0 means no return. Rendering is deterministic for a given seed and
//! independent of the thread schedule (per-pixel noise streams).

use crate::geom::{unproject, CameraIntrinsics, RigidTransform};
use crate::scene::TriangleMesh;
use crate::streams::element_rng;
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DepthSimError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("depth map size {got_w}x{got_h} does not match intrinsics {want_w}x{want_h}")]
    SizeMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("negative depth {0} at pixel {1}")]
    NegativeDepth(f64, usize),
}

/// Per-pixel z-depth image, mm. 0 = no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub depths: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl DepthMap {
    pub fn new(intrinsics: CameraIntrinsics, depths: Vec<f64>) -> Result<Self, DepthSimError> {
        let expect = (intrinsics.width as usize) * (intrinsics.height as usize);
        if depths.len() != expect {
            return Err(DepthSimError::SizeMismatch {
                got_w: intrinsics.width,
                got_h: (depths.len() / intrinsics.width.max(1) as usize) as u32,
                want_w: intrinsics.width,
                want_h: intrinsics.height,
            });
        }
        if let Some((i, &d)) = depths.iter().enumerate().find(|(_, &d)| d < 0.0) {
            return Err(DepthSimError::NegativeDepth(d, i));
        }
        Ok(Self {
            width: intrinsics.width,
            height: intrinsics.height,
            depths,
            intrinsics,
        })
    }

    pub fn zeros(intrinsics: CameraIntrinsics) -> Self {
        let n = (intrinsics.width as usize) * (intrinsics.height as usize);
        Self {
            width: intrinsics.width,
            height: intrinsics.height,
            depths: vec![0.0; n],
            intrinsics,
        }
    }

    pub fn at(&self, u: u32, v: u32) -> f64 {
        self.depths[v as usize * self.width as usize + u as usize]
    }

    /// Depth at the pixel nearest to a continuous coordinate, or `None`
    /// when out of bounds or a dropout.
    pub fn sample_nearest(&self, u: f64, v: f64) -> Option<f64> {
        let ui = u.round();
        let vi = v.round();
        if ui < 0.0 || vi < 0.0 || ui >= self.width as f64 || vi >= self.height as f64 {
            return None;
        }
        let d = self.at(ui as u32, vi as u32);
        (d > 0.0).then_some(d)
    }

    /// Bilinearly interpolated depth at a continuous coordinate. Falls back
    /// to nearest sampling when any of the four neighbors is a dropout or
    /// the coordinate touches the border.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f64> {
        let u0 = u.floor();
        let v0 = v.floor();
        if u0 < 0.0 || v0 < 0.0 || u0 + 1.0 >= self.width as f64 || v0 + 1.0 >= self.height as f64 {
            return self.sample_nearest(u, v);
        }
        let (ui, vi) = (u0 as u32, v0 as u32);
        let d00 = self.at(ui, vi);
        let d10 = self.at(ui + 1, vi);
        let d01 = self.at(ui, vi + 1);
        let d11 = self.at(ui + 1, vi + 1);
        if d00 <= 0.0 || d10 <= 0.0 || d01 <= 0.0 || d11 <= 0.0 {
            return self.sample_nearest(u, v);
        }
        let fu = u - u0;
        let fv = v - v0;
        Some(
            d00 * (1.0 - fu) * (1.0 - fv)
                + d10 * fu * (1.0 - fv)
                + d01 * (1.0 - fu) * fv
                + d11 * fu * fv,
        )
    }
}

/// Point cloud in a named frame, mm.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Name of the coordinate frame the points live in, e.g. `"camera"`.
    pub frame: String,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: impl Into<String>) -> Self {
        Self {
            points,
            frame: frame.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for p in &self.points {
            c += p;
        }
        c / self.points.len().max(1) as f64
    }

    /// Apply `t` to every point, relabeling the frame.
    pub fn transformed(&self, t: &RigidTransform, frame: impl Into<String>) -> Self {
        Self {
            points: self.points.iter().map(|p| t.transform_point(p)).collect(),
            frame: frame.into(),
        }
    }
}

/// Depth noise: sigma(z) = sigma0 + sigma1 * (z/1000)^2, plus dropout.
///
/// Stands in for the real sensor's error, whose published spec covers only
/// the 40-80 cm short-range operating band; both terms are configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthNoiseModel {
    /// Constant noise floor, mm.
    pub sigma0: f64,
    /// Coefficient of the quadratic term in (z/1000)², mm.
    pub sigma1: f64,
    /// Probability that a covered pixel returns nothing.
    pub dropout_rate: f64,
}

impl DepthNoiseModel {
    pub const NOISELESS: Self = Self {
        sigma0: 0.0,
        sigma1: 0.0,
        dropout_rate: 0.0,
    };

    pub fn sigma_at(&self, z: f64) -> f64 {
        self.sigma0 + self.sigma1 * (z / 1000.0) * (z / 1000.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sigma0 < 0.0 || self.sigma1 < 0.0 || !(0.0..=1.0).contains(&self.dropout_rate) {
            return Err(format!(
                "noise parameters must satisfy sigma0, sigma1 >= 0 and dropout in [0,1]: {self:?}"
            ));
        }
        Ok(())
    }
}

impl Default for DepthNoiseModel {
    fn default() -> Self {
        Self {
            sigma0: 0.5,
            sigma1: 2.5,
            dropout_rate: 0.01,
        }
    }
}

/// Ray-cast a depth map of `mesh` (world frame) seen by a camera at
/// `T_cam_from_world`.
///
/// Each pixel receives the z-depth of the nearest ray-triangle hit through
/// its (integer) pixel coordinate, perturbed by `noise`. Triangles not
/// entirely in front of the camera (all vertices z > 0) are skipped, so a
/// mesh behind the camera renders to an all-zero map.
pub fn render_depth(
    mesh: &TriangleMesh,
    t_cam_from_world: &RigidTransform,
    k: &CameraIntrinsics,
    noise: &DepthNoiseModel,
    seed: u64,
) -> Result<DepthMap, DepthSimError> {
    if mesh.triangles.is_empty() {
        return Err(DepthSimError::EmptyMesh);
    }
    let w = k.width as usize;
    let h = k.height as usize;
    let mut zbuf = vec![f64::INFINITY; w * h];

    let cam_vertices: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|v| t_cam_from_world.transform_point(v))
        .collect();

    for tri in &mesh.triangles {
        let a = cam_vertices[tri[0]];
        let b = cam_vertices[tri[1]];
        let c = cam_vertices[tri[2]];
        if a.z <= 1e-9 || b.z <= 1e-9 || c.z <= 1e-9 {
            continue;
        }
        // pixel bounding box of the projected triangle
        let project = |p: &Vector3<f64>| (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
        let (ua, va) = project(&a);
        let (ub, vb) = project(&b);
        let (uc, vc) = project(&c);
        let u_min = ua.min(ub).min(uc).floor().max(0.0) as usize;
        let u_max = ua.max(ub).max(uc).ceil().min((w - 1) as f64) as usize;
        let v_min = va.min(vb).min(vc).floor().max(0.0) as usize;
        let v_max = va.max(vb).max(vc).ceil().min((h - 1) as f64) as usize;
        if u_min > u_max || v_min > v_max {
            continue;
        }
        let e1 = b - a;
        let e2 = c - a;
        for v in v_min..=v_max {
            for u in u_min..=u_max {
                // ray direction with dz = 1, so the ray parameter equals z-depth
                let dir = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                if let Some(t) = ray_triangle(&dir, &a, &e1, &e2) {
                    let cell = &mut zbuf[v * w + u];
                    if t < *cell {
                        *cell = t;
                    }
                }
            }
        }
    }

    let depths: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let z = zbuf[idx];
            if !z.is_finite() {
                return 0.0;
            }
            if noise.sigma0 == 0.0 && noise.sigma1 == 0.0 && noise.dropout_rate == 0.0 {
                return z;
            }
            let mut rng = element_rng(seed, idx as u64);
            let sigma = noise.sigma_at(z);
            let noisy = if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("sigma validated >= 0");
                (z + normal.sample(&mut rng)).max(0.0)
            } else {
                z
            };
            if noise.dropout_rate > 0.0 && rng.gen::<f64>() < noise.dropout_rate {
                0.0
            } else {
                noisy
            }
        })
        .collect();

    DepthMap::new(*k, depths)
}

/// Möller-Trumbore intersection of the ray `t * dir` (origin at zero)
/// against triangle `(a, a+e1, a+e2)`. Returns the ray parameter of a
/// front-side hit.
fn ray_triangle(dir: &Vector3<f64>, a: &Vector3<f64>, e1: &Vector3<f64>, e2: &Vector3<f64>) -> Option<f64> {
    let pvec = dir.cross(e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = -a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > 1e-9).then_some(t)
}

/// Unproject every non-zero pixel into a camera-frame point cloud.
///
/// Points are emitted in row-major pixel order, so the output is
/// deterministic.
pub fn to_point_cloud(d: &DepthMap) -> PointCloud {
    let mut points = Vec::new();
    for v in 0..d.height {
        for u in 0..d.width {
            let z = d.at(u, v);
            if z > 0.0 {
                let p = unproject(&d.intrinsics, (u as f64, v as f64), z)
                    .expect("z > 0 by construction");
                points.push(p);
            }
        }
    }
    PointCloud::new(points, "camera")
}

/// Keep the points within `radius` of `center` (inclusive).
pub fn crop_roi(cloud: &PointCloud, center: &Vector3<f64>, radius: f64) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .filter(|p| (*p - center).norm() <= radius)
            .copied()
            .collect(),
        frame: cloud.frame.clone(),
    }
}
