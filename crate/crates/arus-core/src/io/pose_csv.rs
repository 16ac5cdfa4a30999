//! Pose-stream CSV (`frame,t_s,tx_mm,ty_mm,tz_mm,qw,qx,qy,qz,rms_mm,lost`)
//! and the spot-annotation sidecar (`frame,u,v,wire_id`).
//!
//! Quaternions are validated on read: a norm off unit by more than 1e-6 is
//! a parse error, matching the rigid-transform invariant.

use super::IoError;
use crate::geom::RigidTransform;
use crate::ussim::SpotAnnotation;
use nalgebra::{Quaternion, Rotation3, UnitQuaternion};
use std::io::Write;
use std::path::Path;

pub const POSE_HEADER: &str = "frame,t_s,tx_mm,ty_mm,tz_mm,qw,qx,qy,qz,rms_mm,lost";
pub const ANNOTATION_HEADER: &str = "frame,u,v,wire_id";

/// One tracked pose sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub frame: usize,
    pub t_s: f64,
    pub pose: RigidTransform,
    pub rms_mm: f64,
    pub lost: bool,
}

pub fn write_pose_csv(path: &Path, records: &[PoseRecord]) -> Result<(), IoError> {
    let mut out = Vec::new();
    writeln!(out, "{POSE_HEADER}").expect("write to vec cannot fail");
    for r in records {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            *r.pose.rotation(),
        ));
        let t = r.pose.translation();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.frame,
            r.t_s,
            t.x,
            t.y,
            t.z,
            q.w,
            q.i,
            q.j,
            q.k,
            r.rms_mm,
            u8::from(r.lost)
        )
        .expect("write to vec cannot fail");
    }
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

pub fn read_pose_csv(path: &Path) -> Result<Vec<PoseRecord>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == POSE_HEADER => {}
        Some((_, header)) => {
            return Err(IoError::parse(path, 1, format!("unexpected header {header:?}")))
        }
        None => return Err(IoError::parse(path, 1, "empty file")),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("expected 11 fields, got {}", fields.len()),
            ));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|e| IoError::parse(path, lineno, format!("bad frame: {e}")))?;
        let nums: Vec<f64> = fields[1..10]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| IoError::parse(path, lineno, format!("bad number {f:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        let lost = match fields[10].trim() {
            "0" => false,
            "1" => true,
            other => return Err(IoError::parse(path, lineno, format!("bad lost flag {other:?}"))),
        };
        let q = Quaternion::new(nums[4], nums[5], nums[6], nums[7]);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("quaternion norm {} is not unit", q.norm()),
            ));
        }
        let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        let pose = RigidTransform::new(*rot.matrix(), nalgebra::Vector3::new(nums[1], nums[2], nums[3]))
            .map_err(|e| IoError::parse(path, lineno, e.to_string()))?;
        records.push(PoseRecord {
            frame,
            t_s: nums[0],
            pose,
            rms_mm: nums[8],
            lost,
        });
    }
    Ok(records)
}

pub fn write_annotations_csv(path: &Path, rows: &[(usize, SpotAnnotation)]) -> Result<(), IoError> {
    let mut out = Vec::new();
    writeln!(out, "{ANNOTATION_HEADER}").expect("write to vec cannot fail");
    for (frame, ann) in rows {
        writeln!(out, "{},{},{},{}", frame, ann.u, ann.v, ann.id).expect("write to vec cannot fail");
    }
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

pub fn read_annotations_csv(path: &Path) -> Result<Vec<(usize, SpotAnnotation)>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == ANNOTATION_HEADER => {}
        Some((_, header)) => {
            return Err(IoError::parse(path, 1, format!("unexpected header {header:?}")))
        }
        None => return Err(IoError::parse(path, 1, "empty file")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(IoError::parse(
                path,
                lineno,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let frame: usize = fields[0]
            .parse()
            .map_err(|e| IoError::parse(path, lineno, format!("bad frame: {e}")))?;
        let u: f64 = fields[1]
            .parse()
            .map_err(|e| IoError::parse(path, lineno, format!("bad u: {e}")))?;
        let v: f64 = fields[2]
            .parse()
            .map_err(|e| IoError::parse(path, lineno, format!("bad v: {e}")))?;
        let id: u16 = fields[3]
            .parse()
            .map_err(|e| IoError::parse(path, lineno, format!("bad wire_id: {e}")))?;
        rows.push((frame, SpotAnnotation { u, v, id }));
    }
    Ok(rows)
}
