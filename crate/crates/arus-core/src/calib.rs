//! The N-wire calibration pipeline: spot segmentation, N-pattern matching,
//! middle-wire ratio interpolation, correspondence building across the pose
//! chain, the least-squares calibration solve, and the held-out calibration
//! error metric.
//!
//! The calibration model is an affine map with two per-axis pixel scales
//! and no shear: homogeneous pixel `[u, v, 1]` goes to marker-frame mm via
//! `A = [sx·r1 | sy·r2 | t]` with `R = [r1 r2 r3]` a proper rotation. Any
//! shear in the raw least-squares fit is projected out and absorbed into
//! the residual.

use crate::geom::{compose, invert, nearest_rotation, rotation_deviation, RigidTransform};
use crate::scene::{middle_point_on_diagonal, NWireGeometry, WirePosition};
use crate::ussim::USFrame;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("invalid calibration matrix: {0}")]
    InvalidMatrix(String),
    #[error("N-wire matching failed: {0}")]
    MatchFailed(String),
    #[error("need at least 4 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("pixels are collinear; the calibration solve is rank-deficient")]
    DegeneratePixelConfiguration,
    #[error("design matrix is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("no held-out frame survived segmentation and matching")]
    NoValidFrames,
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
}

/// Affine image-to-marker map with per-axis pixel scales.
///
/// Stored as its decomposition (sx, sy, R, t); the 3x3 matrix on
/// homogeneous pixels `[u, v, 1]` is derived, so the structural invariant
/// holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationMatrixRaw", into = "CalibrationMatrixRaw")]
pub struct CalibrationMatrix {
    sx: f64,
    sy: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationMatrixRaw {
    matrix_row_major: [f64; 9],
}

impl From<CalibrationMatrix> for CalibrationMatrixRaw {
    fn from(m: CalibrationMatrix) -> Self {
        let a = m.matrix();
        let mut row = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                row[r * 3 + c] = a[(r, c)];
            }
        }
        Self {
            matrix_row_major: row,
        }
    }
}

impl TryFrom<CalibrationMatrixRaw> for CalibrationMatrix {
    type Error = CalibError;
    fn try_from(raw: CalibrationMatrixRaw) -> Result<Self, CalibError> {
        let m = raw.matrix_row_major;
        let a = Matrix3::new(m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], m[8]);
        let cal = CalibrationMatrix::from_general_matrix(&a)?;
        // reject matrices whose shear was silently projected away
        let diff = (cal.matrix() - a).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if diff > 1e-9 {
            return Err(CalibError::InvalidMatrix(format!(
                "matrix is not of the two-scale no-shear form (deviation {diff:.3e})"
            )));
        }
        Ok(cal)
    }
}

impl CalibrationMatrix {
    pub fn new(
        sx: f64,
        sy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, CalibError> {
        if sx <= 0.0 || sy <= 0.0 {
            return Err(CalibError::InvalidMatrix(format!(
                "pixel scales must be positive, got sx={sx}, sy={sy}"
            )));
        }
        let dev = rotation_deviation(&rotation);
        if dev > 1e-9 {
            return Err(CalibError::InvalidMatrix(format!(
                "rotation part deviates from orthonormal by {dev:.3e}"
            )));
        }
        Ok(Self {
            sx,
            sy,
            rotation,
            translation,
        })
    }

    /// Decompose a general 3x3 affine map: `sx = |col1|`, `sy = |col2|`,
    /// rotation = the proper rotation nearest to
    /// `[col1/sx, col2/sy, col1×col2/(sx·sy)]`, translation = col3.
    pub fn from_general_matrix(a: &Matrix3<f64>) -> Result<Self, CalibError> {
        let col1: Vector3<f64> = a.column(0).into();
        let col2: Vector3<f64> = a.column(1).into();
        let sx = col1.norm();
        let sy = col2.norm();
        if sx <= 0.0 || sy <= 0.0 {
            return Err(CalibError::InvalidMatrix(
                "matrix has a zero scale column".into(),
            ));
        }
        let r1 = col1 / sx;
        let r2 = col2 / sy;
        let r3 = r1.cross(&r2);
        let rotation = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r3]));
        Self::new(sx, sy, rotation, a.column(2).into())
    }

    /// The matrix acting on homogeneous pixels `[u, v, 1]`.
    pub fn matrix(&self) -> Matrix3<f64> {
        let r1: Vector3<f64> = self.rotation.column(0).into();
        let r2: Vector3<f64> = self.rotation.column(1).into();
        Matrix3::from_columns(&[r1 * self.sx, r2 * self.sy, self.translation])
    }

    /// Map a pixel to marker-frame mm.
    pub fn map_pixel(&self, pixel: (f64, f64)) -> Vector3<f64> {
        self.matrix() * Vector3::new(pixel.0, pixel.1, 1.0)
    }

    pub fn sx(&self) -> f64 {
        self.sx
    }

    pub fn sy(&self) -> f64 {
        self.sy
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// The rigid part as `T_marker_from_image` (image coordinates in mm).
    pub fn mount(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation)
            .expect("stored rotation is validated")
    }
}

/// Spot segmentation parameters: intensity threshold, blob size filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub threshold: u8,
    pub min_blob_px: usize,
    pub max_blob_px: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            threshold: 80,
            min_blob_px: 3,
            max_blob_px: 2000,
        }
    }
}

/// Threshold, label 8-connected components, filter by size and return the
/// intensity-weighted subpixel centroid of each surviving blob, in
/// discovery (row-major) order. The caller checks the count.
pub fn segment_spots(frame: &USFrame, params: &SegmentationParams) -> Vec<(f64, f64)> {
    let w = frame.width as usize;
    let h = frame.height as usize;
    let mask: Vec<bool> = frame.pixels.iter().map(|&p| p >= params.threshold).collect();
    let mut visited = vec![false; w * h];
    let mut centroids = Vec::new();
    let mut stack = Vec::new();

    for start in 0..w * h {
        if !mask[start] || visited[start] {
            continue;
        }
        stack.push(start);
        visited[start] = true;
        let mut blob = Vec::new();
        while let Some(idx) = stack.pop() {
            blob.push(idx);
            let (u, v) = (idx % w, idx / w);
            for dv in -1i64..=1 {
                for du in -1i64..=1 {
                    if du == 0 && dv == 0 {
                        continue;
                    }
                    let (nu, nv) = (u as i64 + du, v as i64 + dv);
                    if nu < 0 || nv < 0 || nu >= w as i64 || nv >= h as i64 {
                        continue;
                    }
                    let n = nv as usize * w + nu as usize;
                    if mask[n] && !visited[n] {
                        visited[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        if blob.len() < params.min_blob_px || blob.len() > params.max_blob_px {
            continue;
        }
        let mut su = 0.0;
        let mut sv = 0.0;
        let mut sw = 0.0;
        for idx in blob {
            let p = frame.pixels[idx] as f64;
            su += p * (idx % w) as f64;
            sv += p * (idx / w) as f64;
            sw += p;
        }
        centroids.push((su / sw, sv / sw));
    }
    centroids
}

/// One matched N layer: front/middle/back spot pixels plus the diagonal
/// ratio `alpha` computed from pixel distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpots {
    pub front: (f64, f64),
    pub middle: (f64, f64),
    pub back: (f64, f64),
    pub alpha: f64,
}

/// The nine spots of one frame matched to the three N layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSpots {
    pub layers: [LayerSpots; 3],
}

/// Maximum distance of the middle spot from the line through the outer
/// spots for a triple to count as collinear, px.
pub const COLLINEARITY_TOLERANCE_PX: f64 = 3.0;

/// Match segmented spots to the nine wires.
///
/// Spots are clustered into `expected_layers` triples by v (image depth,
/// shallow first) and ordered by u within each triple. This relies on the
/// acquisition convention that image u increases front to back and image v
/// with phantom depth, which the probe trajectories used here guarantee.
pub fn match_nwires(spots: &[(f64, f64)], expected_layers: usize) -> Result<LabeledSpots, CalibError> {
    let expected = expected_layers * 3;
    if spots.len() != expected {
        return Err(CalibError::MatchFailed(format!(
            "expected {expected} spots, got {}",
            spots.len()
        )));
    }
    if expected_layers != 3 {
        return Err(CalibError::MatchFailed(format!(
            "only 3-layer phantoms are supported, got {expected_layers}"
        )));
    }
    let mut sorted = spots.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut layers = Vec::with_capacity(3);
    for chunk in sorted.chunks_exact(3) {
        let mut triple = chunk.to_vec();
        triple.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (f, m, b) = (triple[0], triple[1], triple[2]);
        // middle spot must sit on the line through the outer spots
        let dir = (b.0 - f.0, b.1 - f.1);
        let len = dir.0.hypot(dir.1);
        if len < 1e-9 {
            return Err(CalibError::MatchFailed("coincident outer spots".into()));
        }
        let off = ((m.0 - f.0) * dir.1 - (m.1 - f.1) * dir.0).abs() / len;
        if off > COLLINEARITY_TOLERANCE_PX {
            return Err(CalibError::MatchFailed(format!(
                "triple deviates from a line by {off:.2} px"
            )));
        }
        let alpha = (m.0 - f.0).hypot(m.1 - f.1) / len;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(CalibError::MatchFailed(format!("alpha {alpha} outside [0, 1]")));
        }
        layers.push(LayerSpots {
            front: f,
            middle: m,
            back: b,
            alpha,
        });
    }
    Ok(LabeledSpots {
        layers: [layers[0], layers[1], layers[2]],
    })
}

/// A pixel paired with its ground-truth 3D position in the marker frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub pixel: (f64, f64),
    pub x_marker: Vector3<f64>,
    pub frame_index: usize,
}

/// Turn one frame's matched middle-wire spots into pixel-to-marker
/// correspondences through the camera: the phantom-frame middle-wire point
/// is mapped to the marker frame via the two poses the camera provides.
pub fn build_correspondences(
    labeled: &LabeledSpots,
    geom: &NWireGeometry,
    t_cam_from_phantom: &RigidTransform,
    t_cam_from_marker: &RigidTransform,
    frame_index: usize,
) -> Result<Vec<Correspondence>, CalibError> {
    let marker_from_phantom = compose(&invert(t_cam_from_marker), t_cam_from_phantom);
    let mut out = Vec::with_capacity(3);
    for (layer_idx, layer) in labeled.layers.iter().enumerate() {
        let x_phantom = middle_point_on_diagonal(geom, layer_idx, layer.alpha)?;
        out.push(Correspondence {
            pixel: layer.middle,
            x_marker: marker_from_phantom.transform_point(&x_phantom),
            frame_index,
        });
    }
    Ok(out)
}

/// Condition-number bound on the [u, v, 1] design matrix.
pub const MAX_DESIGN_CONDITION: f64 = 1e8;

/// Least-squares calibration solve: `A = argmin Σ |A·[u,v,1]ᵀ − X_marker|²`
/// over the correspondences, then projected onto the two-scale no-shear
/// form of [`CalibrationMatrix`].
pub fn solve_calibration(corrs: &[Correspondence]) -> Result<CalibrationMatrix, CalibError> {
    if corrs.len() < 4 {
        return Err(CalibError::TooFewCorrespondences(corrs.len()));
    }
    // normal equations on homogeneous pixels
    let mut m = Matrix3::zeros(); // Σ h hᵀ
    let mut b = Matrix3::zeros(); // Σ x hᵀ
    for c in corrs {
        let h = Vector3::new(c.pixel.0, c.pixel.1, 1.0);
        m += h * h.transpose();
        b += c.x_marker * h.transpose();
    }
    let svd = m.svd(true, true);
    let sv = svd.singular_values;
    if sv[2] <= 1e-12 * sv[0] {
        return Err(CalibError::DegeneratePixelConfiguration);
    }
    // m = Hᵀ H, so cond(H) = sqrt of the eigenvalue ratio
    let cond = (sv[0] / sv[2]).sqrt();
    if cond >= MAX_DESIGN_CONDITION {
        return Err(CalibError::IllConditioned(cond));
    }
    let m_inv = svd.pseudo_inverse(0.0).expect("rank checked above");
    let a = b * m_inv;
    CalibrationMatrix::from_general_matrix(&a)
}

/// RMS residual of a calibration matrix over correspondences, mm.
pub fn fit_rms(matrix: &CalibrationMatrix, corrs: &[Correspondence]) -> f64 {
    let sum: f64 = corrs
        .iter()
        .map(|c| (matrix.map_pixel(c.pixel) - c.x_marker).norm_squared())
        .sum();
    (sum / corrs.len().max(1) as f64).sqrt()
}

/// Calibration solve plus bookkeeping for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub matrix: CalibrationMatrix,
    pub rms_fit: f64,
    pub n_frames: usize,
    pub n_correspondences: usize,
    /// Held-out reprojection error, mm.
    pub error_mean: f64,
    pub error_sd: f64,
}

/// A held-out frame: the ultrasound image plus the tracked marker pose at
/// acquisition time.
pub type HeldoutFrame = (USFrame, RigidTransform);

/// The held-out calibration error metric.
///
/// Every segmented spot of every frame (all nine wires) is mapped pixel →
/// marker (via the matrix) → camera (tracked marker pose) → phantom
/// (frozen phantom pose); the error is its distance to the corresponding
/// wire segment. Frames that fail segmentation or matching are skipped
/// with a logged warning. Returns (mean, sample sd) over all spots.
pub fn calibration_error(
    matrix: &CalibrationMatrix,
    heldout: &[HeldoutFrame],
    geom: &NWireGeometry,
    t_cam_from_phantom: &RigidTransform,
    seg_params: &SegmentationParams,
) -> Result<(f64, f64), CalibError> {
    let phantom_from_cam = invert(t_cam_from_phantom);
    let mut distances = Vec::new();
    for (frame, t_cam_from_marker) in heldout {
        let spots = segment_spots(frame, seg_params);
        let labeled = match match_nwires(&spots, 3) {
            Ok(l) => l,
            Err(e) => {
                log::warn!("held-out frame {} skipped: {e}", frame.frame_index);
                continue;
            }
        };
        let phantom_from_marker = compose(&phantom_from_cam, t_cam_from_marker);
        for (layer_idx, layer) in labeled.layers.iter().enumerate() {
            for (pixel, position) in [
                (layer.front, WirePosition::Front),
                (layer.middle, WirePosition::Diagonal),
                (layer.back, WirePosition::Back),
            ] {
                let x_marker = matrix.map_pixel(pixel);
                let x_phantom = phantom_from_marker.transform_point(&x_marker);
                let wire = geom.layers[layer_idx].wire(position);
                distances.push(wire.distance_to_point(&x_phantom));
            }
        }
    }
    if distances.is_empty() {
        return Err(CalibError::NoValidFrames);
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let sd = if distances.len() > 1 {
        (distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, sd))
}
