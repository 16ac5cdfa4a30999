//! ASCII XYZ point clouds: one `x y z` line per point, mm.

use super::IoError;
use crate::depthsim::PointCloud;
use nalgebra::Vector3;
use std::io::Write;
use std::path::Path;

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let mut out = Vec::new();
    for p in &cloud.points {
        writeln!(out, "{} {} {}", p.x, p.y, p.z).expect("write to vec cannot fail");
    }
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Read an XYZ file; the frame label is supplied by the caller since the
/// format does not carry one.
pub fn read_xyz(path: &Path, frame: &str) -> Result<PointCloud, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let coords: Vec<f64> = line
            .split_whitespace()
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|e| IoError::parse(path, i + 1, format!("bad coordinate {p:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        if coords.len() != 3 {
            return Err(IoError::parse(
                path,
                i + 1,
                format!("expected 3 coordinates, got {}", coords.len()),
            ));
        }
        if !coords.iter().all(|c| c.is_finite()) {
            return Err(IoError::parse(path, i + 1, "non-finite coordinate"));
        }
        points.push(Vector3::new(coords[0], coords[1], coords[2]));
    }
    Ok(PointCloud::new(points, frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use tempfile::tempdir;

    #[test]
    fn xyz_round_trip_thousand_points_byte_equal() {
        let dir = tempdir().unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(77);
        let cloud = PointCloud::new(
            (0..1000)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-500.0..500.0),
                        rng.gen_range(-500.0..500.0),
                        rng.gen_range(-500.0..500.0),
                    )
                })
                .collect(),
            "camera",
        );
        let p1 = dir.path().join("a.xyz");
        let p2 = dir.path().join("b.xyz");
        write_xyz(&p1, &cloud).unwrap();
        let back = read_xyz(&p1, "camera").unwrap();
        assert_eq!(back.points, cloud.points);
        write_xyz(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        std::fs::write(&path, "1 2 3\n4 5\n").unwrap();
        match read_xyz(&path, "camera") {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
