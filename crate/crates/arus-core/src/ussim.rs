//! Synthetic B-mode ultrasound: intersect the image plane with phantom
//! wires or cube edges and render the intersections as bright Gaussian
//! spots over a speckle background.
//!
//! Image coordinate system: origin top-left, u right, v down, the image
//! plane is z = 0 in image CS. A pixel (u, v) sits at (u·sx, v·sy, 0) mm,
//! matching the homogeneous convention of the calibration matrix.

use crate::calib::CalibrationMatrix;
use crate::geom::RigidTransform;
use crate::scene::{CubeEdgeModel, NWireGeometry, Segment, WirePosition};
use crate::streams::element_rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum angle between a wire and the image plane for a usable
/// intersection, degrees.
pub const MIN_INTERSECTION_ANGLE_DEG: f64 = 1.0;

#[derive(Debug, Error)]
pub enum UsSimError {
    #[error("image plane nearly parallel to layer {layer} {position:?} wire (angle {angle_deg:.3} deg)")]
    DegenerateIntersection {
        layer: usize,
        position: WirePosition,
        angle_deg: f64,
    },
    #[error("invalid frame parameters: {0}")]
    InvalidFrame(String),
}

/// Ground-truth spot annotation: subpixel position plus the id of the wire
/// or edge that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotAnnotation {
    pub u: f64,
    pub v: f64,
    pub id: u16,
}

/// 8-bit ultrasound frame with pixel spacing and optional ground-truth
/// annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct USFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
    /// (sx, sy) mm per pixel.
    pub spacing: (f64, f64),
    pub frame_index: usize,
    pub annotations: Vec<SpotAnnotation>,
}

impl USFrame {
    pub fn at(&self, u: u32, v: u32) -> u8 {
        self.pixels[v as usize * self.width as usize + u as usize]
    }
}

/// Annotation id of a wire spot: layer-major, front/diagonal/back within.
pub fn wire_spot_id(layer: usize, position: WirePosition) -> u16 {
    let p = match position {
        WirePosition::Front => 0,
        WirePosition::Diagonal => 1,
        WirePosition::Back => 2,
    };
    (layer * 3 + p) as u16
}

/// Inverse of [`wire_spot_id`].
pub fn spot_wire(id: u16) -> (usize, WirePosition) {
    let layer = (id / 3) as usize;
    let position = match id % 3 {
        0 => WirePosition::Front,
        1 => WirePosition::Diagonal,
        _ => WirePosition::Back,
    };
    (layer, position)
}

/// One wire-plane intersection. `in_field` is false when the intersection
/// falls beyond the physical wire segment or outside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireHit {
    pub pixel: (f64, f64),
    pub layer: usize,
    pub position: WirePosition,
    pub in_field: bool,
}

fn plane_intersection(
    seg: &Segment,
    t_image_from_obj: &RigidTransform,
    spacing: (f64, f64),
    image_size: (u32, u32),
) -> Option<((f64, f64), bool, f64)> {
    let a = t_image_from_obj.transform_point(&seg.a);
    let b = t_image_from_obj.transform_point(&seg.b);
    let d = b - a;
    let len = d.norm();
    if len == 0.0 {
        return None;
    }
    let sin_angle = (d.z / len).abs();
    let angle_deg = sin_angle.asin().to_degrees();
    if angle_deg < MIN_INTERSECTION_ANGLE_DEG {
        return None;
    }
    let s = -a.z / d.z;
    let hit = a + d * s;
    let pixel = (hit.x / spacing.0, hit.y / spacing.1);
    let in_image = pixel.0 >= 0.0
        && pixel.0 < image_size.0 as f64
        && pixel.1 >= 0.0
        && pixel.1 < image_size.1 as f64;
    let in_field = (0.0..=1.0).contains(&s) && in_image;
    Some((pixel, in_field, angle_deg))
}

/// Intersect all nine phantom wires with the image plane.
///
/// Every wire produces a hit (computed on the infinite supporting line);
/// hits beyond the segment extent or outside the image bounds are flagged
/// out-of-field rather than dropped. A wire nearly parallel to the plane
/// (angle below 1°) is a degenerate configuration and fails the frame.
pub fn intersect_wires(
    geom: &NWireGeometry,
    t_image_from_phantom: &RigidTransform,
    spacing: (f64, f64),
    image_size: (u32, u32),
) -> Result<Vec<WireHit>, UsSimError> {
    let mut hits = Vec::with_capacity(9);
    for (layer_idx, layer) in geom.layers.iter().enumerate() {
        for position in [WirePosition::Front, WirePosition::Diagonal, WirePosition::Back] {
            let seg = layer.wire(position);
            match plane_intersection(seg, t_image_from_phantom, spacing, image_size) {
                Some((pixel, in_field, _)) => hits.push(WireHit {
                    pixel,
                    layer: layer_idx,
                    position,
                    in_field,
                }),
                None => {
                    let a = t_image_from_phantom.transform_point(&seg.a);
                    let b = t_image_from_phantom.transform_point(&seg.b);
                    let d = b - a;
                    let angle_deg = (d.z / d.norm()).abs().asin().to_degrees();
                    return Err(UsSimError::DegenerateIntersection {
                        layer: layer_idx,
                        position,
                        angle_deg,
                    });
                }
            }
        }
    }
    Ok(hits)
}

/// One cube-edge-plane intersection, inside the segment and the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeHit {
    pub pixel: (f64, f64),
    pub edge_id: usize,
}

/// Intersect the selected cube edges with the image plane.
///
/// Unlike the wires, a slicing plane is always near-parallel to some cube
/// edges (a plane perpendicular to one edge is parallel to the eight edges
/// orthogonal to it), so non-transversal edges are skipped rather than
/// treated as errors, and only in-field hits are returned. A plane missing
/// the cube yields an empty list.
pub fn intersect_cube_edges(
    model: &CubeEdgeModel,
    t_image_from_cube: &RigidTransform,
    spacing: (f64, f64),
    image_size: (u32, u32),
) -> Vec<EdgeHit> {
    let mut hits = Vec::new();
    for (edge_id, seg) in &model.edges {
        if let Some((pixel, true, _)) = plane_intersection(seg, t_image_from_cube, spacing, image_size) {
            hits.push(EdgeHit {
                pixel,
                edge_id: *edge_id,
            });
        }
    }
    hits
}

/// Multiplicative speckle background: per pixel a uniform sample with the
/// given mean and standard deviation (clamped nonnegative). Mean 0 turns
/// the background off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeckleParams {
    pub mean: f64,
    pub sigma: f64,
}

impl Default for SpeckleParams {
    fn default() -> Self {
        Self {
            mean: 20.0,
            sigma: 10.0,
        }
    }
}

impl SpeckleParams {
    pub const OFF: Self = Self {
        mean: 0.0,
        sigma: 0.0,
    };
}

/// Render spots into an 8-bit frame: a Gaussian blob of peak 255 per spot,
/// blended over the speckle background. Deterministic per seed; the given
/// spots (those inside the image) are attached as annotations.
#[allow(clippy::too_many_arguments)]
pub fn render_us_frame(
    spots: &[((f64, f64), u16)],
    psf_sigma: f64,
    speckle: &SpeckleParams,
    seed: u64,
    spacing: (f64, f64),
    image_size: (u32, u32),
    frame_index: usize,
) -> USFrame {
    assert!(psf_sigma > 0.0, "psf_sigma must be positive");
    assert!(spacing.0 > 0.0 && spacing.1 > 0.0, "spacing must be positive");
    let (w, h) = (image_size.0 as usize, image_size.1 as usize);

    // blob field: max over spots of a Gaussian with peak 255
    let mut blob = vec![0.0f64; w * h];
    let reach = (4.0 * psf_sigma).ceil() as i64;
    for ((su, sv), _) in spots {
        let u0 = (su.round() as i64 - reach).max(0);
        let u1 = (su.round() as i64 + reach).min(w as i64 - 1);
        let v0 = (sv.round() as i64 - reach).max(0);
        let v1 = (sv.round() as i64 + reach).min(h as i64 - 1);
        for v in v0..=v1 {
            for u in u0..=u1 {
                let du = u as f64 - su;
                let dv = v as f64 - sv;
                let g = 255.0 * (-(du * du + dv * dv) / (2.0 * psf_sigma * psf_sigma)).exp();
                let cell = &mut blob[v as usize * w + u as usize];
                if g > *cell {
                    *cell = g;
                }
            }
        }
    }

    let spread = 3.0f64.sqrt() * speckle.sigma;
    let pixels: Vec<u8> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let bg = if speckle.mean > 0.0 {
                let mut rng = element_rng(seed, idx as u64);
                rng.gen_range((speckle.mean - spread).max(0.0)..=(speckle.mean + spread))
            } else {
                0.0
            };
            let b = blob[idx];
            // spot over background: keeps the blob peak at exactly 255
            let value = b + bg * (1.0 - b / 255.0);
            value.round().clamp(0.0, 255.0) as u8
        })
        .collect();

    let annotations = spots
        .iter()
        .filter(|((u, v), _)| *u >= 0.0 && *u < w as f64 && *v >= 0.0 && *v < h as f64)
        .map(|((u, v), id)| SpotAnnotation {
            u: *u,
            v: *v,
            id: *id,
        })
        .collect();

    USFrame {
        width: image_size.0,
        height: image_size.1,
        pixels,
        spacing,
        frame_index,
        annotations,
    }
}

/// The true image-to-marker calibration used by the simulator; lets tests
/// check exact recovery of the solved matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCalibration {
    pub matrix: CalibrationMatrix,
}

impl GroundTruthCalibration {
    /// Build from the rigid probe mount `T_marker_from_image` and the pixel
    /// spacing of the ultrasound image.
    pub fn from_mount(spacing: (f64, f64), t_marker_from_image: &RigidTransform) -> Self {
        Self {
            matrix: CalibrationMatrix::new(
                spacing.0,
                spacing.1,
                *t_marker_from_image.rotation(),
                *t_marker_from_image.translation(),
            )
            .expect("valid rigid mount yields a valid calibration"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{compose, invert};
    use crate::scene::{make_cube_edges, make_nwire_geometry, NWireParams, DEFAULT_CUBE_EDGE_IDS};
    use approx::assert_abs_diff_eq;
    use nalgebra::{Matrix3, Vector3};

    pub(crate) const SPACING: (f64, f64) = (0.1, 0.1);
    pub(crate) const SIZE: (u32, u32) = (512, 512);

    /// Image plane x = x0, u along +y, v along +z, centered on the wires.
    pub(crate) fn perpendicular_plane(x0: f64) -> RigidTransform {
        // columns of R are the phantom-frame directions of image u, v, w
        let r = Matrix3::new(
            0.0, 0.0, 1.0, //
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0,
        );
        let half_u = SIZE.0 as f64 * SPACING.0 / 2.0;
        let half_v = SIZE.1 as f64 * SPACING.1 / 2.0;
        let origin = Vector3::new(x0, 20.0 - half_u, 25.0 - half_v);
        let t_phantom_from_image = RigidTransform::new(r, origin).unwrap();
        invert(&t_phantom_from_image)
    }

    #[test]
    fn perpendicular_plane_hits_all_nine_wires() {
        let geom = make_nwire_geometry(&NWireParams::default()).unwrap();
        let hits = intersect_wires(&geom, &perpendicular_plane(20.0), SPACING, SIZE).unwrap();
        assert_eq!(hits.len(), 9);
        assert!(hits.iter().all(|h| h.in_field));

        // layer-0 diagonal passes through phantom point (20, 20, 15):
        // u = (20 - y_origin)/sx, v = (15 - z_origin)/sy
        let diag = hits
            .iter()
            .find(|h| h.layer == 0 && h.position == WirePosition::Diagonal)
            .unwrap();
        let expect_u = (20.0 - (20.0 - 25.6)) / 0.1;
        let expect_v = (15.0 - (25.0 - 25.6)) / 0.1;
        assert_abs_diff_eq!(diag.pixel.0, expect_u, epsilon = 1e-9);
        assert_abs_diff_eq!(diag.pixel.1, expect_v, epsilon = 1e-9);
    }

    #[test]
    fn plane_parallel_to_wires_is_degenerate() {
        let geom = make_nwire_geometry(&NWireParams::default()).unwrap();
        // image plane z = const in phantom CS: u along x, v along y, w along z;
        // the side wires (along x) lie inside the plane
        let r = Matrix3::identity();
        let t_image_from_phantom = invert(&RigidTransform::new(r, Vector3::new(0.0, 0.0, 25.0)).unwrap());
        assert!(matches!(
            intersect_wires(&geom, &t_image_from_phantom, SPACING, SIZE),
            Err(UsSimError::DegenerateIntersection { .. })
        ));
    }

    #[test]
    fn out_of_span_plane_flags_out_of_field() {
        let geom = make_nwire_geometry(&NWireParams::default()).unwrap();
        let hits = intersect_wires(&geom, &perpendicular_plane(-5.0), SPACING, SIZE).unwrap();
        assert_eq!(hits.len(), 9);
        // intersections land beyond the segment extent on every wire
        assert!(hits.iter().all(|h| !h.in_field));
    }

    #[test]
    fn alpha_from_perpendicular_plane_equals_x_ratio() {
        let geom = make_nwire_geometry(&NWireParams::default()).unwrap();
        for x0 in [5.0, 10.0, 20.0, 30.0] {
            let hits = intersect_wires(&geom, &perpendicular_plane(x0), SPACING, SIZE).unwrap();
            for layer in 0..3 {
                let get = |pos| {
                    hits.iter()
                        .find(|h| h.layer == layer && h.position == pos)
                        .unwrap()
                        .pixel
                };
                let f = get(WirePosition::Front);
                let m = get(WirePosition::Diagonal);
                let b = get(WirePosition::Back);
                let alpha = ((m.0 - f.0).hypot(m.1 - f.1)) / ((b.0 - f.0).hypot(b.1 - f.1));
                assert_abs_diff_eq!(alpha, x0 / 40.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn single_spot_renders_a_peak_at_its_pixel() {
        let frame = render_us_frame(
            &[((256.0, 256.0), 0)],
            2.0,
            &SpeckleParams::OFF,
            0,
            SPACING,
            SIZE,
            0,
        );
        assert_eq!(frame.at(256, 256), 255);
        let max = frame.pixels.iter().copied().max().unwrap();
        let n_max = frame.pixels.iter().filter(|&&p| p == max).count();
        assert_eq!(max, 255);
        assert_eq!(n_max, 1);
        assert_eq!(frame.annotations.len(), 1);
    }

    #[test]
    fn close_spots_merge_into_one_blob() {
        let frame = render_us_frame(
            &[((250.0, 250.0), 0), ((251.0, 250.0), 1)],
            2.0,
            &SpeckleParams::OFF,
            0,
            SPACING,
            SIZE,
            0,
        );
        // between the spots the response stays close to the peak: a
        // segmentation stage sees a single connected component
        assert!(frame.at(250, 250) > 240 && frame.at(251, 250) > 240);
        let mid = frame.pixels[250 * 512 + 250..=250 * 512 + 251]
            .iter()
            .copied()
            .min()
            .unwrap();
        assert!(mid > 240);
    }

    #[test]
    fn annotations_match_intensity_centroids_without_speckle() {
        let spots: Vec<((f64, f64), u16)> = vec![
            ((100.25, 200.75), 0),
            ((300.5, 150.0), 1),
            ((400.0, 400.4), 2),
        ];
        let frame = render_us_frame(&spots, 2.0, &SpeckleParams::OFF, 0, SPACING, SIZE, 0);
        for ann in &frame.annotations {
            // intensity centroid over the blob neighborhood
            let (mut su, mut sv, mut sw) = (0.0, 0.0, 0.0);
            let u0 = ann.u as i64 - 10;
            let v0 = ann.v as i64 - 10;
            for v in v0..=(v0 + 20) {
                for u in u0..=(u0 + 20) {
                    let p = frame.at(u as u32, v as u32) as f64;
                    su += p * u as f64;
                    sv += p * v as f64;
                    sw += p;
                }
            }
            assert!((su / sw - ann.u).abs() < 0.25, "u centroid off");
            assert!((sv / sw - ann.v).abs() < 0.25, "v centroid off");
        }
    }

    #[test]
    fn frame_rendering_is_deterministic() {
        let spots = [((256.0, 256.0), 0)];
        let a = render_us_frame(&spots, 2.0, &SpeckleParams::default(), 7, SPACING, SIZE, 0);
        let b = render_us_frame(&spots, 2.0, &SpeckleParams::default(), 7, SPACING, SIZE, 0);
        assert_eq!(a.pixels, b.pixels);
        let c = render_us_frame(&spots, 2.0, &SpeckleParams::default(), 8, SPACING, SIZE, 0);
        assert_ne!(a.pixels, c.pixels);
    }

    #[test]
    fn cube_edge_perpendicular_slice_hits_one_edge() {
        let model = make_cube_edges(50.0, &DEFAULT_CUBE_EDGE_IDS).unwrap();
        // edge 4 runs along x at y = -25, z = +25; slice it at x = 10
        let r = Matrix3::new(
            0.0, 0.0, 1.0, //
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0,
        );
        let half_u = SIZE.0 as f64 * SPACING.0 / 2.0;
        let half_v = SIZE.1 as f64 * SPACING.1 / 2.0;
        let origin = Vector3::new(10.0, -25.0 - half_u, 25.0 - half_v);
        let t_image_from_cube = invert(&RigidTransform::new(r, origin).unwrap());
        let hits = intersect_cube_edges(&model, &t_image_from_cube, SPACING, SIZE);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].edge_id, 4);
        assert_abs_diff_eq!(hits[0].pixel.0, 256.0, epsilon = 1e-9);
        assert_abs_diff_eq!(hits[0].pixel.1, 256.0, epsilon = 1e-9);

        // a plane past the cube misses everything
        let far = invert(&RigidTransform::new(r, origin + Vector3::new(100.0, 0.0, 0.0)).unwrap());
        assert!(intersect_cube_edges(&model, &far, SPACING, SIZE).is_empty());
    }

    #[test]
    fn cube_edge_sweep_points_lie_on_the_edge() {
        let model = make_cube_edges(50.0, &[4]).unwrap();
        let edge = model.edges[0].1;
        let r = Matrix3::new(
            0.0, 0.0, 1.0, //
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0,
        );
        let half_u = SIZE.0 as f64 * SPACING.0 / 2.0;
        let half_v = SIZE.1 as f64 * SPACING.1 / 2.0;
        for i in 0..50 {
            let x = -24.0 + 48.0 * i as f64 / 49.0;
            let origin = Vector3::new(x, -25.0 - half_u, 25.0 - half_v);
            let t_phantom_from_image = RigidTransform::new(r, origin).unwrap();
            let t_image_from_cube = invert(&t_phantom_from_image);
            let hits = intersect_cube_edges(&model, &t_image_from_cube, SPACING, SIZE);
            assert_eq!(hits.len(), 1);
            // unproject the pixel back to cube CS and check it sits on the edge
            let p_image = Vector3::new(hits[0].pixel.0 * SPACING.0, hits[0].pixel.1 * SPACING.1, 0.0);
            let p_cube = t_phantom_from_image.transform_point(&p_image);
            assert!(edge.distance_to_point(&p_cube) < 1e-9);
        }
    }

    #[test]
    fn loop_closure_through_ground_truth_calibration() {
        // pixel -> marker (ground-truth matrix) -> camera -> phantom must
        // reproduce the analytic wire-plane intersection
        let geom = make_nwire_geometry(&NWireParams::default()).unwrap();
        let t_image_from_phantom = perpendicular_plane(17.0);
        let t_cam_from_phantom = RigidTransform::from_euler_zyx_deg([160.0, 10.0, -5.0])
            .with_translation(Vector3::new(30.0, -20.0, 500.0));
        // marker rigidly mounted on the probe, away from the image plane
        let t_marker_from_image = RigidTransform::from_euler_zyx_deg([10.0, -7.0, 15.0])
            .with_translation(Vector3::new(30.0, -20.0, 150.0));
        let t_cam_from_image = compose(&t_cam_from_phantom, &invert(&t_image_from_phantom));
        let t_cam_from_marker = compose(&t_cam_from_image, &invert(&t_marker_from_image));
        let gt = GroundTruthCalibration::from_mount(SPACING, &t_marker_from_image);

        let hits = intersect_wires(&geom, &t_image_from_phantom, SPACING, SIZE).unwrap();
        let phantom_from_cam = invert(&t_cam_from_phantom);
        for hit in hits {
            let x_marker = gt.matrix.map_pixel(hit.pixel);
            let x_cam = t_cam_from_marker.transform_point(&x_marker);
            let x_phantom = phantom_from_cam.transform_point(&x_cam);
            let wire = geom.layers[hit.layer].wire(hit.position);
            assert!(
                wire.distance_to_line(&x_phantom) < 1e-9,
                "layer {} {:?}: {}",
                hit.layer,
                hit.position,
                wire.distance_to_line(&x_phantom)
            );
        }
    }
}
