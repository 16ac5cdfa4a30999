//! AR compositing: project the calibrated ultrasound image into an RGB
//! frame through the marker pose, the calibration matrix and the color
//! camera intrinsics, then paint it by inverse-homography sampling.
//!
//! Pure software rasterization with nearest-neighbor sampling, so outputs
//! are deterministic and suitable for golden-image comparisons.

use crate::calib::CalibrationMatrix;
use crate::geom::{project, CameraIntrinsics, GeomError, RigidTransform};
use crate::ussim::USFrame;
use nalgebra::{SMatrix, SVector};
use std::str::FromStr;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("an image corner maps behind the camera: {0}")]
    BehindCamera(#[from] GeomError),
    #[error("quad is degenerate or non-convex")]
    DegenerateQuad,
    #[error("unknown colormap {0:?} (expected \"hot\" or \"gray\")")]
    UnknownColormap(String),
    #[error("opacity {0} outside [0, 1]")]
    BadOpacity(f64),
}

/// 8-bit interleaved RGB frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RgbFrame {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn at(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Project the four ultrasound image corners (0,0), (W,0), (W,H), (0,H)
/// into RGB pixel coordinates through the calibration matrix, the marker
/// pose and the color intrinsics. Order is preserved.
pub fn image_quad(
    matrix: &CalibrationMatrix,
    t_cam_from_marker: &RigidTransform,
    k: &CameraIntrinsics,
    us_size: (u32, u32),
) -> Result<[(f64, f64); 4], OverlayError> {
    let (w, h) = (us_size.0 as f64, us_size.1 as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let mut out = [(0.0, 0.0); 4];
    for (i, c) in corners.iter().enumerate() {
        let p_marker = matrix.map_pixel(*c);
        let p_cam = t_cam_from_marker.transform_point(&p_marker);
        out[i] = project(k, &p_cam)?;
    }
    Ok(out)
}

/// Colormap applied to ultrasound intensities before blending.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    /// Black through red to yellow and white; highlights bright pixels.
    Hot,
    Gray,
}

impl FromStr for Colormap {
    type Err = OverlayError;
    fn from_str(s: &str) -> Result<Self, OverlayError> {
        match s.to_ascii_lowercase().as_str() {
            "hot" => Ok(Colormap::Hot),
            "gray" | "grayscale" | "grey" => Ok(Colormap::Gray),
            other => Err(OverlayError::UnknownColormap(other.to_string())),
        }
    }
}

/// Fixed 256-entry "hot" lookup table.
pub fn hot_table() -> &'static [[u8; 3]; 256] {
    static TABLE: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[0u8; 3]; 256];
        for (i, entry) in t.iter_mut().enumerate() {
            let x = i as f64 / 255.0;
            let r = (x / 0.375).clamp(0.0, 1.0);
            let g = ((x - 0.375) / 0.375).clamp(0.0, 1.0);
            let b = ((x - 0.75) / 0.25).clamp(0.0, 1.0);
            *entry = [
                (r * 255.0).round() as u8,
                (g * 255.0).round() as u8,
                (b * 255.0).round() as u8,
            ];
        }
        t
    })
}

impl Colormap {
    pub fn apply(&self, intensity: u8) -> [u8; 3] {
        match self {
            Colormap::Hot => hot_table()[intensity as usize],
            Colormap::Gray => [intensity; 3],
        }
    }
}

/// Homography mapping `src` quad corners onto `dst` quad corners (4-point
/// direct linear solve, h33 fixed to 1).
fn homography_4pt(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Option<SMatrix<f64, 3, 3>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = src[i];
        let (u, v) = dst[i];
        a.row_mut(2 * i).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(2 * i + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[2 * i] = u;
        b[2 * i + 1] = v;
    }
    let h = a.lu().solve(&b)?;
    Some(SMatrix::<f64, 3, 3>::new(
        h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0,
    ))
}

fn is_convex(quad: &[(f64, f64); 4]) -> bool {
    let mut sign = 0.0f64;
    for i in 0..4 {
        let a = quad[i];
        let b = quad[(i + 1) % 4];
        let c = quad[(i + 2) % 4];
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        if cross.abs() < 1e-9 {
            return false; // collinear corners
        }
        if sign == 0.0 {
            sign = cross;
        } else if sign * cross < 0.0 {
            return false;
        }
    }
    true
}

/// Paint the ultrasound frame over `rgb` inside `quad`.
///
/// Every output pixel inside the quad's bounding box is mapped back into
/// ultrasound coordinates by the inverse homography; pixels landing outside
/// the ultrasound frame are left untouched (clipping), the rest are sampled
/// nearest-neighbor, colormapped and alpha-blended at `opacity`.
pub fn composite(
    rgb: &RgbFrame,
    us: &USFrame,
    quad: &[(f64, f64); 4],
    colormap: Colormap,
    opacity: f64,
) -> Result<RgbFrame, OverlayError> {
    if !(0.0..=1.0).contains(&opacity) {
        return Err(OverlayError::BadOpacity(opacity));
    }
    if !is_convex(quad) {
        return Err(OverlayError::DegenerateQuad);
    }
    let (w, h) = (us.width as f64, us.height as f64);
    let us_rect = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let h_to_us = homography_4pt(quad, &us_rect).ok_or(OverlayError::DegenerateQuad)?;

    let x_min = quad.iter().map(|c| c.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
    let x_max = quad
        .iter()
        .map(|c| c.0)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        .min(rgb.width as f64 - 1.0) as u32;
    let y_min = quad.iter().map(|c| c.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
    let y_max = quad
        .iter()
        .map(|c| c.1)
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        .min(rgb.height as f64 - 1.0) as u32;

    let mut out = rgb.clone();
    if x_min > x_max || y_min > y_max {
        return Ok(out);
    }
    for y in y_min..=y_max {
        for x in x_min..=x_max {
            let p = h_to_us * nalgebra::Vector3::new(x as f64, y as f64, 1.0);
            if p.z.abs() < 1e-12 {
                continue;
            }
            let su = (p.x / p.z).round();
            let sv = (p.y / p.z).round();
            if su < 0.0 || sv < 0.0 || su >= w || sv >= h {
                continue;
            }
            let intensity = us.at(su as u32, sv as u32);
            let color = colormap.apply(intensity);
            let base = out.at(x, y);
            let blended = [
                ((1.0 - opacity) * base[0] as f64 + opacity * color[0] as f64).round() as u8,
                ((1.0 - opacity) * base[1] as f64 + opacity * color[1] as f64).round() as u8,
                ((1.0 - opacity) * base[2] as f64 + opacity * color[2] as f64).round() as u8,
            ];
            out.set(x, y, blended);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{compose, invert};
    use crate::ussim::{render_us_frame, GroundTruthCalibration, SpeckleParams};
    use nalgebra::Vector3;

    fn test_k() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn test_matrix() -> CalibrationMatrix {
        let mount = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 500.0));
        GroundTruthCalibration::from_mount((0.1, 0.1), &mount).matrix
    }

    #[test]
    fn quad_matches_closed_form_projection() {
        let matrix = test_matrix();
        let k = test_k();
        let quad = image_quad(&matrix, &RigidTransform::identity(), &k, (512, 512)).unwrap();
        // corner (0,0) maps to marker (0,0,500): principal point
        assert!((quad[0].0 - 320.0).abs() < 1e-12 && (quad[0].1 - 240.0).abs() < 1e-12);
        // corner (512,0) maps to (51.2, 0, 500): u = 600*51.2/500 + 320
        assert!((quad[1].0 - (320.0 + 600.0 * 51.2 / 500.0)).abs() < 1e-9);
        // consistency: each corner projected independently through the chain
        for (i, c) in [(0.0, 0.0), (512.0, 0.0), (512.0, 512.0), (0.0, 512.0)]
            .iter()
            .enumerate()
        {
            let p = project(&k, &matrix.map_pixel(*c)).unwrap();
            assert!((p.0 - quad[i].0).abs() < 1e-9 && (p.1 - quad[i].1).abs() < 1e-9);
        }
    }

    #[test]
    fn quad_behind_camera_is_an_error() {
        let mount = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -500.0));
        let matrix = GroundTruthCalibration::from_mount((0.1, 0.1), &mount).matrix;
        assert!(matches!(
            image_quad(&matrix, &RigidTransform::identity(), &test_k(), (512, 512)),
            Err(OverlayError::BehindCamera(_))
        ));
    }

    #[test]
    fn quad_is_invariant_under_consistent_camera_motion() {
        let matrix = test_matrix();
        let k = test_k();
        let t_cam_from_marker = RigidTransform::from_euler_zyx_deg([5.0, -3.0, 10.0])
            .with_translation(Vector3::new(20.0, -10.0, 30.0));
        let base = image_quad(&matrix, &t_cam_from_marker, &k, (512, 512)).unwrap();

        let motion = RigidTransform::from_euler_zyx_deg([2.0, 4.0, -6.0])
            .with_translation(Vector3::new(15.0, 25.0, -10.0));
        // moving the camera by `motion` and the marker pose consistently
        let moved = compose(&compose(&motion, &invert(&motion)), &t_cam_from_marker);
        let quad2 = image_quad(&matrix, &moved, &k, (512, 512)).unwrap();
        for i in 0..4 {
            assert!((base[i].0 - quad2[i].0).abs() < 1e-9);
            assert!((base[i].1 - quad2[i].1).abs() < 1e-9);
        }
    }

    fn checker_us(w: u32, h: u32) -> USFrame {
        let mut pixels = vec![0u8; (w * h) as usize];
        for v in 0..h {
            for u in 0..w {
                pixels[(v * w + u) as usize] = if (u / 8 + v / 8) % 2 == 0 { 200 } else { 30 };
            }
        }
        USFrame {
            width: w,
            height: h,
            pixels,
            spacing: (0.1, 0.1),
            frame_index: 0,
            annotations: vec![],
        }
    }

    #[test]
    fn zero_opacity_is_a_byte_identical_noop() {
        let rgb = RgbFrame::filled(320, 240, [10, 90, 35]);
        let us = checker_us(64, 64);
        let quad = [(50.0, 40.0), (114.0, 40.0), (114.0, 104.0), (50.0, 104.0)];
        let out = composite(&rgb, &us, &quad, Colormap::Hot, 0.0).unwrap();
        assert_eq!(out.pixels, rgb.pixels);
    }

    #[test]
    fn identity_quad_with_gray_copies_pixels_verbatim() {
        let us = checker_us(64, 64);
        let rgb = RgbFrame::filled(64, 64, [7, 7, 7]);
        let quad = [(0.0, 0.0), (64.0, 0.0), (64.0, 64.0), (0.0, 64.0)];
        let out = composite(&rgb, &us, &quad, Colormap::Gray, 1.0).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let i = us.at(x, y);
                assert_eq!(out.at(x, y), [i, i, i]);
            }
        }
    }

    #[test]
    fn composite_never_writes_outside_the_quad_bounding_box() {
        let rgb = RgbFrame::filled(320, 240, [1, 2, 3]);
        let us = checker_us(64, 64);
        let quad = [(100.0, 60.0), (160.0, 70.0), (150.0, 130.0), (95.0, 120.0)];
        let out = composite(&rgb, &us, &quad, Colormap::Hot, 1.0).unwrap();
        let (x_min, x_max) = (95u32, 160u32);
        let (y_min, y_max) = (60u32, 130u32);
        for y in 0..240 {
            for x in 0..320 {
                if x < x_min || x > x_max || y < y_min || y > y_max {
                    assert_eq!(out.at(x, y), [1, 2, 3], "modified pixel outside bbox at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn degenerate_quad_is_rejected() {
        let rgb = RgbFrame::filled(100, 100, [0, 0, 0]);
        let us = checker_us(16, 16);
        let collinear = [(10.0, 10.0), (50.0, 10.0), (90.0, 10.0), (90.0, 10.0)];
        assert!(matches!(
            composite(&rgb, &us, &collinear, Colormap::Hot, 1.0),
            Err(OverlayError::DegenerateQuad)
        ));
    }

    #[test]
    fn rotated_overlay_centroid_matches_the_mapped_bright_centroid() {
        // single bright blob drawn into an otherwise dark US frame
        let us = render_us_frame(
            &[((32.0, 20.0), 0)],
            2.0,
            &SpeckleParams::OFF,
            0,
            (0.1, 0.1),
            (64, 48),
            0,
        );
        let quad = [(140.0, 60.0), (210.0, 80.0), (190.0, 150.0), (120.0, 130.0)];
        let rgb = RgbFrame::filled(320, 240, [0, 0, 0]);
        let out = composite(&rgb, &us, &quad, Colormap::Gray, 1.0).unwrap();

        // brightness-weighted centroid of the composited result
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut sw = 0.0;
        for y in 0..240u32 {
            for x in 0..320u32 {
                let p = out.at(x, y)[0] as f64;
                if p > 10.0 {
                    sx += p * x as f64;
                    sy += p * y as f64;
                    sw += p;
                }
            }
        }
        let got = (sx / sw, sy / sw);
        // map the blob center through the forward (us -> output) homography
        let us_rect = [(0.0, 0.0), (64.0, 0.0), (64.0, 48.0), (0.0, 48.0)];
        let h_fwd = homography_4pt(&us_rect, &quad).unwrap();
        let m = h_fwd * nalgebra::Vector3::new(32.0, 20.0, 1.0);
        let want = (m.x / m.z, m.y / m.z);
        assert!(
            (got.0 - want.0).abs() < 1.0 && (got.1 - want.1).abs() < 1.0,
            "centroid {got:?} vs {want:?}"
        );
    }

    #[test]
    fn colormap_table_endpoints() {
        assert_eq!(hot_table()[0], [0, 0, 0]);
        assert_eq!(hot_table()[255], [255, 255, 255]);
        // red saturates before green starts rising
        assert_eq!(hot_table()[96][0], 255);
        assert!(hot_table()[96][2] == 0);
        assert!(Colormap::from_str("hot").is_ok());
        assert!(Colormap::from_str("plasma").is_err());
    }
}
