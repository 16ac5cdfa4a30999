//! ASCII OBJ subset: `v x y z` vertices and `f a b c` triangle faces
//! (1-based indices). Anything else except comments and blank lines is
//! rejected; in particular quad faces are a parse error.

use super::IoError;
use crate::scene::TriangleMesh;
use nalgebra::Vector3;
use std::io::Write;
use std::path::Path;

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<(), IoError> {
    let mut out = Vec::new();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).expect("write to vec cannot fail");
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("write to vec cannot fail");
    }
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .map(|p| {
                        p.parse::<f64>()
                            .map_err(|e| IoError::parse(path, lineno, format!("bad coordinate {p:?}: {e}")))
                    })
                    .collect::<Result<_, _>>()?;
                if coords.len() != 3 {
                    return Err(IoError::parse(
                        path,
                        lineno,
                        format!("vertex needs 3 coordinates, got {}", coords.len()),
                    ));
                }
                vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|p| {
                        // accept the common `v/vt/vn` syntax but only use v
                        let v = p.split('/').next().unwrap_or(p);
                        v.parse::<usize>()
                            .map_err(|e| IoError::parse(path, lineno, format!("bad index {p:?}: {e}")))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(IoError::parse(
                        path,
                        lineno,
                        format!("only triangle faces are supported, got {} indices", idx.len()),
                    ));
                }
                for &v in &idx {
                    if v == 0 || v > vertices.len() {
                        return Err(IoError::parse(path, lineno, format!("face index {v} out of range")));
                    }
                }
                triangles.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            Some(other) => {
                return Err(IoError::parse(path, lineno, format!("unsupported element {other:?}")));
            }
            None => {}
        }
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| IoError::parse(path, 0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_marker_mesh, MarkerParams};
    use tempfile::tempdir;

    #[test]
    fn obj_round_trip_is_byte_stable() {
        let dir = tempdir().unwrap();
        let mesh = make_marker_mesh(&MarkerParams::default()).unwrap();
        let p1 = dir.path().join("a.obj");
        let p2 = dir.path().join("b.obj");
        write_obj(&p1, &mesh).unwrap();
        let back = read_obj(&p1).unwrap();
        assert_eq!(back, mesh);
        write_obj(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn quad_face_is_rejected_with_line_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("quad.obj");
        std::fs::write(
            &path,
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n",
        )
        .unwrap();
        match read_obj(&path) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
