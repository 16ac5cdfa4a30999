//! Parametric ground-truth world: N-wire phantom geometry, the cube-cluster
//! marker mesh, cube edge models and triangle meshes.
//!
//! Phantom coordinate system: x runs along the wires, y front to back, z
//! increasing with depth, origin at the front-top wire anchor. The image
//! plane of a nominally held probe is then the y-z plane.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum triangle area accepted in a mesh, mm².
pub const DEGENERATE_TRIANGLE_AREA: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid N-wire geometry: {0}")]
    InvalidGeometry(String),
    #[error("diagonal ratio alpha = {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("marker arrangement is empty")]
    EmptyArrangement,
    #[error("cube edge id {0} out of range 0..12")]
    BadEdgeId(usize),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
}

/// A 3D segment between two endpoints, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Segment {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        Self { a, b }
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.b - self.a
    }

    pub fn length(&self) -> f64 {
        self.direction().norm()
    }

    /// Point at parameter `t` along the segment (`t = 0` at `a`).
    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.a + self.direction() * t
    }

    /// Distance from `p` to the closest point of the segment.
    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        let d = self.direction();
        let len2 = d.norm_squared();
        if len2 == 0.0 {
            return (p - self.a).norm();
        }
        let t = ((p - self.a).dot(&d) / len2).clamp(0.0, 1.0);
        (p - self.point_at(t)).norm()
    }

    /// Distance from `p` to the infinite line supporting the segment.
    pub fn distance_to_line(&self, p: &Vector3<f64>) -> f64 {
        let d = self.direction();
        let len = d.norm();
        if len == 0.0 {
            return (p - self.a).norm();
        }
        (p - self.a).cross(&d).norm() / len
    }
}

/// Indexed triangle mesh, vertices in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Build a mesh, rejecting out-of-range indices and degenerate
    /// (zero-area) triangles.
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, SceneError> {
        let mesh = Self { vertices, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for (i, tri) in self.triangles.iter().enumerate() {
            for &idx in tri {
                if idx >= self.vertices.len() {
                    return Err(SceneError::InvalidMesh(format!(
                        "triangle {i} references vertex {idx} of {}",
                        self.vertices.len()
                    )));
                }
            }
            if self.triangle_area(i) < DEGENERATE_TRIANGLE_AREA {
                return Err(SceneError::InvalidMesh(format!("triangle {i} is degenerate")));
            }
        }
        Ok(())
    }

    pub fn triangle_vertices(&self, i: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Outward unit normal of triangle `i` (right-hand winding).
    pub fn triangle_normal(&self, i: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle_vertices(i);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Largest extent of the bounding box, mm.
    pub fn span(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).amax()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let mut c = Vector3::zeros();
        for v in &self.vertices {
            c += v;
        }
        c / self.vertices.len() as f64
    }

    pub fn translated(&self, offset: Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Distance from `p` to the closest point on the mesh surface.
    pub fn distance_to_surface(&self, p: &Vector3<f64>) -> f64 {
        self.closest_surface_point(p).1
    }

    /// Closest point on the mesh surface to `p`, with its distance and the
    /// index of the triangle it lies on.
    pub fn closest_surface_point(&self, p: &Vector3<f64>) -> (Vector3<f64>, f64, usize) {
        let mut best = (Vector3::zeros(), f64::INFINITY, 0);
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_vertices(i);
            let q = closest_point_on_triangle(p, &a, &b, &c);
            let d = (p - q).norm();
            if d < best.1 {
                best = (q, d, i);
            }
        }
        best
    }
}

/// Closest point to `p` on the closed triangle `(a, b, c)`.
pub fn closest_point_on_triangle(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> Vector3<f64> {
    // project onto the triangle plane, then clamp to edges if outside
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let n = ab.cross(&ac);
    if n.norm_squared() > 0.0 {
        // barycentric test of the in-plane projection
        let d1 = ab.dot(&ap);
        let d2 = ac.dot(&ap);
        let d00 = ab.dot(&ab);
        let d01 = ab.dot(&ac);
        let d11 = ac.dot(&ac);
        let denom = d00 * d11 - d01 * d01;
        if denom > 0.0 {
            let v = (d11 * d1 - d01 * d2) / denom;
            let w = (d00 * d2 - d01 * d1) / denom;
            if v >= 0.0 && w >= 0.0 && v + w <= 1.0 {
                return a + ab * v + ac * w;
            }
        }
    }
    let mut best = *a;
    let mut best_d = f64::INFINITY;
    for seg in [Segment::new(*a, *b), Segment::new(*b, *c), Segment::new(*c, *a)] {
        let dir = seg.direction();
        let t = if dir.norm_squared() > 0.0 {
            ((p - seg.a).dot(&dir) / dir.norm_squared()).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = seg.point_at(t);
        let d = (p - q).norm_squared();
        if d < best_d {
            best_d = d;
            best = q;
        }
    }
    best
}

/// Distance from a point to a triangle (closest point on the closed triangle).
pub fn point_triangle_distance(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> f64 {
    (p - closest_point_on_triangle(p, a, b, c)).norm()
}

/// Which of the three wires of an N layer a point or spot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WirePosition {
    Front,
    Diagonal,
    Back,
}

/// One depth layer of the phantom: two side wires along x and the diagonal
/// connecting them, all at depth `depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NWireLayer {
    pub depth: f64,
    pub side_wire_front: Segment,
    pub side_wire_back: Segment,
    pub diagonal_wire: Segment,
}

impl NWireLayer {
    pub fn wire(&self, pos: WirePosition) -> &Segment {
        match pos {
            WirePosition::Front => &self.side_wire_front,
            WirePosition::Diagonal => &self.diagonal_wire,
            WirePosition::Back => &self.side_wire_back,
        }
    }
}

/// Nine wire segments forming an "N" at three depth levels, phantom CS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NWireGeometry {
    pub layers: [NWireLayer; 3],
    pub wire_diameter: f64,
}

/// Parameters of [`make_nwire_geometry`]. The dimensions of the physical
/// phantom are not public, so these defaults are plausible stand-ins; all
/// downstream code takes the geometry as data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NWireParams {
    pub x_span: f64,
    pub y_front: f64,
    pub y_back: f64,
    pub layer_depths: [f64; 3],
    pub wire_diameter: f64,
}

impl Default for NWireParams {
    fn default() -> Self {
        Self {
            x_span: 40.0,
            y_front: 10.0,
            y_back: 30.0,
            layer_depths: [15.0, 25.0, 35.0],
            wire_diameter: 1.0,
        }
    }
}

/// Build the nine-wire phantom: per layer, side wires along x at `y_front`
/// and `y_back`, and the diagonal from `(0, y_front, z)` to
/// `(x_span, y_back, z)`. The diagonal orientation is front-to-back on all
/// three layers.
pub fn make_nwire_geometry(params: &NWireParams) -> Result<NWireGeometry, SceneError> {
    if params.x_span <= 0.0 {
        return Err(SceneError::InvalidGeometry(format!(
            "x_span must be positive, got {}",
            params.x_span
        )));
    }
    if params.y_front == params.y_back {
        return Err(SceneError::InvalidGeometry(
            "y_front equals y_back; the N collapses to a line".into(),
        ));
    }
    if !(params.layer_depths[0] < params.layer_depths[1] && params.layer_depths[1] < params.layer_depths[2]) {
        return Err(SceneError::InvalidGeometry(format!(
            "layer depths must be strictly increasing, got {:?}",
            params.layer_depths
        )));
    }
    if params.wire_diameter <= 0.0 {
        return Err(SceneError::InvalidGeometry("wire diameter must be positive".into()));
    }
    let layer = |z: f64| NWireLayer {
        depth: z,
        side_wire_front: Segment::new(
            Vector3::new(0.0, params.y_front, z),
            Vector3::new(params.x_span, params.y_front, z),
        ),
        side_wire_back: Segment::new(
            Vector3::new(0.0, params.y_back, z),
            Vector3::new(params.x_span, params.y_back, z),
        ),
        diagonal_wire: Segment::new(
            Vector3::new(0.0, params.y_front, z),
            Vector3::new(params.x_span, params.y_back, z),
        ),
    };
    Ok(NWireGeometry {
        layers: [
            layer(params.layer_depths[0]),
            layer(params.layer_depths[1]),
            layer(params.layer_depths[2]),
        ],
        wire_diameter: params.wire_diameter,
    })
}

/// Ground-truth position on a layer's diagonal at ratio `alpha` from the
/// front-side endpoint.
pub fn middle_point_on_diagonal(
    geom: &NWireGeometry,
    layer: usize,
    alpha: f64,
) -> Result<Vector3<f64>, SceneError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SceneError::AlphaOutOfRange(alpha));
    }
    Ok(geom.layers[layer].diagonal_wire.point_at(alpha))
}

/// Parameters of the cube-cluster marker mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerParams {
    /// Edge length of each small cube, mm.
    pub cube_size: f64,
    /// Lattice offsets of the cubes, in cube-size units.
    pub arrangement: Vec<[i32; 3]>,
    /// Recommended surface sampling spacing for registration, mm.
    pub downsample_spacing: f64,
}

impl Default for MarkerParams {
    fn default() -> Self {
        Self {
            cube_size: 10.0,
            arrangement: default_marker_arrangement(),
            downsample_spacing: 3.0,
        }
    }
}

/// Default 7-cube arrangement. Rotationally asymmetric so that registration
/// has a unique optimum; spans 4 cube sizes along x.
pub fn default_marker_arrangement() -> Vec<[i32; 3]> {
    vec![
        [0, 0, 0],
        [1, 0, 0],
        [2, 0, 0],
        [3, 0, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
    ]
}

/// Build the watertight union-of-cubes surface mesh of a marker.
///
/// Faces shared by two cubes of the arrangement are dropped and coincident
/// vertices merged, so a single cube yields 8 vertices and 12 triangles.
/// Note that a rotationally symmetric arrangement (for example 2x2x2) is
/// accepted but leaves model-to-cloud registration ambiguous.
pub fn make_marker_mesh(params: &MarkerParams) -> Result<TriangleMesh, SceneError> {
    if params.arrangement.is_empty() {
        return Err(SceneError::EmptyArrangement);
    }
    let s = params.cube_size;
    let occupied: std::collections::HashSet<[i32; 3]> = params.arrangement.iter().copied().collect();

    // Per axis-aligned face: (neighbor offset, the 4 cube-local corners in
    // outward-CCW order). Corners are in {0,1}^3, scaled by cube size.
    const FACES: [([i32; 3], [[i32; 3]; 4]); 6] = [
        ([-1, 0, 0], [[0, 0, 0], [0, 0, 1], [0, 1, 1], [0, 1, 0]]),
        ([1, 0, 0], [[1, 0, 0], [1, 1, 0], [1, 1, 1], [1, 0, 1]]),
        ([0, -1, 0], [[0, 0, 0], [1, 0, 0], [1, 0, 1], [0, 0, 1]]),
        ([0, 1, 0], [[0, 1, 0], [0, 1, 1], [1, 1, 1], [1, 1, 0]]),
        ([0, 0, -1], [[0, 0, 0], [0, 1, 0], [1, 1, 0], [1, 0, 0]]),
        ([0, 0, 1], [[0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]),
    ];

    let mut vertex_index: std::collections::HashMap<[i64; 3], usize> = std::collections::HashMap::new();
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let mut intern = |key: [i64; 3]| -> usize {
        *vertex_index.entry(key).or_insert_with(|| {
            vertices.push(Vector3::new(key[0] as f64 * s, key[1] as f64 * s, key[2] as f64 * s));
            vertices.len() - 1
        })
    };

    for cube in &params.arrangement {
        for (neighbor, corners) in &FACES {
            let adj = [cube[0] + neighbor[0], cube[1] + neighbor[1], cube[2] + neighbor[2]];
            if occupied.contains(&adj) {
                continue; // interior face
            }
            let idx: Vec<usize> = corners
                .iter()
                .map(|c| {
                    intern([
                        (cube[0] + c[0]) as i64,
                        (cube[1] + c[1]) as i64,
                        (cube[2] + c[2]) as i64,
                    ])
                })
                .collect();
            triangles.push([idx[0], idx[1], idx[2]]);
            triangles.push([idx[0], idx[2], idx[3]]);
        }
    }

    TriangleMesh::new(vertices, triangles)
}

/// Selected edges of an axis-aligned cube, cube CS centered at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeEdgeModel {
    pub size: f64,
    /// `(edge_id, segment)` pairs; ids index the 12 cube edges.
    pub edges: Vec<(usize, Segment)>,
    pub center: Vector3<f64>,
}

/// The 12 edges of a size-`s` cube centered at the origin. Ids 0-3 are the
/// bottom ring (z = -s/2), 4-7 the top ring (z = +s/2), 8-11 the verticals.
pub fn cube_edge_segments(size: f64) -> [Segment; 12] {
    let h = size / 2.0;
    let c = |x: f64, y: f64, z: f64| Vector3::new(x * h, y * h, z * h);
    [
        // bottom ring
        Segment::new(c(-1.0, -1.0, -1.0), c(1.0, -1.0, -1.0)),
        Segment::new(c(1.0, -1.0, -1.0), c(1.0, 1.0, -1.0)),
        Segment::new(c(1.0, 1.0, -1.0), c(-1.0, 1.0, -1.0)),
        Segment::new(c(-1.0, 1.0, -1.0), c(-1.0, -1.0, -1.0)),
        // top ring
        Segment::new(c(-1.0, -1.0, 1.0), c(1.0, -1.0, 1.0)),
        Segment::new(c(1.0, -1.0, 1.0), c(1.0, 1.0, 1.0)),
        Segment::new(c(1.0, 1.0, 1.0), c(-1.0, 1.0, 1.0)),
        Segment::new(c(-1.0, 1.0, 1.0), c(-1.0, -1.0, 1.0)),
        // verticals
        Segment::new(c(-1.0, -1.0, -1.0), c(-1.0, -1.0, 1.0)),
        Segment::new(c(1.0, -1.0, -1.0), c(1.0, -1.0, 1.0)),
        Segment::new(c(1.0, 1.0, -1.0), c(1.0, 1.0, 1.0)),
        Segment::new(c(-1.0, 1.0, -1.0), c(-1.0, 1.0, 1.0)),
    ]
}

/// Default scan selection: the four top edges plus one vertical, enough to
/// pin the cube pose.
pub const DEFAULT_CUBE_EDGE_IDS: [usize; 5] = [4, 5, 6, 7, 8];

/// Build an edge model from a selection of cube edge ids (0..12, distinct).
pub fn make_cube_edges(size: f64, edge_selection: &[usize]) -> Result<CubeEdgeModel, SceneError> {
    if edge_selection.is_empty() || edge_selection.len() > 12 {
        return Err(SceneError::InvalidGeometry(format!(
            "need 1 to 12 edge ids, got {}",
            edge_selection.len()
        )));
    }
    let mut seen = [false; 12];
    let all = cube_edge_segments(size);
    let mut edges = Vec::with_capacity(edge_selection.len());
    for &id in edge_selection {
        if id >= 12 {
            return Err(SceneError::BadEdgeId(id));
        }
        if seen[id] {
            return Err(SceneError::InvalidGeometry(format!("duplicate edge id {id}")));
        }
        seen[id] = true;
        edges.push((id, all[id]));
    }
    Ok(CubeEdgeModel {
        size,
        edges,
        center: Vector3::zeros(),
    })
}

/// Concatenate meshes into one, optionally transforming each by a rigid
/// pose (mesh frame to output frame).
pub fn merge_meshes(parts: &[(&TriangleMesh, Option<&crate::geom::RigidTransform>)]) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (mesh, pose) in parts {
        let base = vertices.len();
        match pose {
            Some(t) => vertices.extend(mesh.vertices.iter().map(|v| t.transform_point(v))),
            None => vertices.extend(mesh.vertices.iter().copied()),
        }
        triangles.extend(mesh.triangles.iter().map(|t| t.map(|i| i + base)));
    }
    TriangleMesh {
        vertices,
        triangles,
    }
}

/// Surface mesh of a single size-`s` cube centered at the origin, used when
/// the evaluation cube itself must appear in rendered depth maps.
pub fn make_cube_mesh(size: f64) -> TriangleMesh {
    let mut mesh = make_marker_mesh(&MarkerParams {
        cube_size: size,
        arrangement: vec![[0, 0, 0]],
        downsample_spacing: size,
    })
    .expect("single cube is always valid");
    mesh = mesh.translated(Vector3::repeat(-size / 2.0));
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nwire_defaults_are_valid() {
        let geom = make_nwire_geometry(&NWireParams::default()).unwrap();
        assert_eq!(geom.layers.len(), 3);
        for layer in &geom.layers {
            for pos in [WirePosition::Front, WirePosition::Diagonal, WirePosition::Back] {
                let w = layer.wire(pos);
                assert_eq!(w.a.z, layer.depth);
                assert_eq!(w.b.z, layer.depth);
            }
            // diagonal endpoints sit on the side wires' supporting lines
            assert!(layer.side_wire_front.distance_to_line(&layer.diagonal_wire.a) < 1e-9);
            assert!(layer.side_wire_back.distance_to_line(&layer.diagonal_wire.b) < 1e-9);
        }
    }

    #[test]
    fn nwire_rejects_degenerate_params() {
        let mut p = NWireParams::default();
        p.y_back = p.y_front;
        assert!(matches!(make_nwire_geometry(&p), Err(SceneError::InvalidGeometry(_))));

        let mut p = NWireParams::default();
        p.layer_depths = [15.0, 15.0, 35.0];
        assert!(make_nwire_geometry(&p).is_err());

        let mut p = NWireParams::default();
        p.x_span = 0.0;
        assert!(make_nwire_geometry(&p).is_err());
    }

    #[test]
    fn middle_point_endpoints_and_center() {
        let geom = make_nwire_geometry(&NWireParams::default()).unwrap();
        let d = &geom.layers[0].diagonal_wire;
        assert_eq!(middle_point_on_diagonal(&geom, 0, 0.0).unwrap(), d.a);
        assert_eq!(middle_point_on_diagonal(&geom, 0, 1.0).unwrap(), d.b);
        // plane x = 20 cuts the default diagonal at (20, 20, 15)
        assert_abs_diff_eq!(
            middle_point_on_diagonal(&geom, 0, 0.5).unwrap(),
            Vector3::new(20.0, 20.0, 15.0),
            epsilon = 1e-12
        );
        assert!(matches!(
            middle_point_on_diagonal(&geom, 0, 1.5),
            Err(SceneError::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn middle_point_stays_on_diagonal() {
        let geom = make_nwire_geometry(&NWireParams::default()).unwrap();
        for layer in 0..3 {
            for i in 0..=100 {
                let alpha = i as f64 / 100.0;
                let p = middle_point_on_diagonal(&geom, layer, alpha).unwrap();
                assert!(geom.layers[layer].diagonal_wire.distance_to_point(&p) < 1e-12);
            }
        }
    }

    #[test]
    fn single_cube_mesh_shape() {
        let mesh = make_marker_mesh(&MarkerParams {
            cube_size: 10.0,
            arrangement: vec![[0, 0, 0]],
            downsample_spacing: 3.0,
        })
        .unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.triangles.len(), 12);
        assert_abs_diff_eq!(mesh.span(), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mesh.total_area(), 600.0, epsilon = 1e-9);
    }

    #[test]
    fn default_marker_span_is_about_4cm() {
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let span = mesh.span();
        assert!((35.0..=45.0).contains(&span), "span {span} outside [35, 45]");
        // interior faces removed: fewer triangles than 7 isolated cubes
        assert!(mesh.triangles.len() < 7 * 12);
    }

    #[test]
    fn symmetric_marker_is_accepted() {
        let mesh = make_marker_mesh(&MarkerParams {
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
        // a 2x2x2 block is accepted; all 8 interior faces are culled and the
        // surface keeps its 26 lattice vertices
        assert_eq!(mesh.vertices.len(), 26);
        assert_eq!(mesh.triangles.len(), 48);
        assert_abs_diff_eq!(mesh.span(), 20.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_arrangement_rejected() {
        let p = MarkerParams {
            cube_size: 10.0,
            arrangement: vec![],
            downsample_spacing: 3.0,
        };
        assert!(matches!(make_marker_mesh(&p), Err(SceneError::EmptyArrangement)));
    }

    #[test]
    fn marker_normals_are_unit_and_outward_consistent() {
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let centroid = mesh.centroid();
        let mut outward = 0usize;
        for i in 0..mesh.triangles.len() {
            let n = mesh.triangle_normal(i);
            assert_abs_diff_eq!(n.norm(), 1.0, epsilon = 1e-9);
            let [a, b, c] = mesh.triangle_vertices(i);
            let face_center = (a + b + c) / 3.0;
            if n.dot(&(face_center - centroid)) > 0.0 {
                outward += 1;
            }
        }
        // winding is consistently outward for the union surface
        assert!(outward as f64 > 0.9 * mesh.triangles.len() as f64);
    }

    #[test]
    fn cube_edges_full_and_default_selection() {
        let all: Vec<usize> = (0..12).collect();
        let model = make_cube_edges(50.0, &all).unwrap();
        let total: f64 = model.edges.iter().map(|(_, s)| s.length()).sum();
        assert_abs_diff_eq!(total, 600.0, epsilon = 1e-9);

        let model = make_cube_edges(50.0, &DEFAULT_CUBE_EDGE_IDS).unwrap();
        assert_eq!(model.edges.len(), 5);
        for (_, seg) in &model.edges {
            assert_abs_diff_eq!(seg.length(), 50.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cube_edges_bad_id() {
        assert!(matches!(make_cube_edges(50.0, &[13]), Err(SceneError::BadEdgeId(13))));
        assert!(make_cube_edges(50.0, &[]).is_err());
        assert!(make_cube_edges(50.0, &[1, 1]).is_err());
    }

    #[test]
    fn point_triangle_distance_cases() {
        let a = Vector3::new(0.0, 0.0, 0.0);
        let b = Vector3::new(1.0, 0.0, 0.0);
        let c = Vector3::new(0.0, 1.0, 0.0);
        // above the interior
        assert_abs_diff_eq!(
            point_triangle_distance(&Vector3::new(0.2, 0.2, 0.5), &a, &b, &c),
            0.5,
            epsilon = 1e-12
        );
        // beyond a vertex
        assert_abs_diff_eq!(
            point_triangle_distance(&Vector3::new(2.0, 0.0, 0.0), &a, &b, &c),
            1.0,
            epsilon = 1e-12
        );
    }
}
