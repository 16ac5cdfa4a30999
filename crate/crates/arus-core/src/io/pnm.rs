//! Binary PNM images: 8-bit PGM (P5) for ultrasound frames, 16-bit PGM for
//! depth maps at 0.1 mm per unit, and 8-bit PPM (P6) for RGB frames.
//!
//! Ultrasound PGMs embed pixel spacing and frame index in a comment line so
//! they round-trip; readers of plain PGMs fall back to defaults.

use super::IoError;
use crate::depthsim::DepthMap;
use crate::geom::CameraIntrinsics;
use crate::overlay::RgbFrame;
use crate::ussim::USFrame;
use std::io::Write;
use std::path::Path;

/// Depth quantization of the 16-bit PGM format, mm per unit.
pub const DEPTH_MM_PER_UNIT: f64 = 0.1;

struct PnmHeader {
    width: u32,
    height: u32,
    maxval: u32,
    comments: Vec<String>,
    data_offset: usize,
}

fn parse_header(path: &Path, bytes: &[u8], magic: &str) -> Result<PnmHeader, IoError> {
    let mut pos = 0usize;
    let mut fields = Vec::new();
    let mut comments = Vec::new();

    let mut token = Vec::new();
    while fields.len() < 4 && pos < bytes.len() {
        let b = bytes[pos];
        if b == b'#' {
            let end = bytes[pos..]
                .iter()
                .position(|&c| c == b'\n')
                .map(|e| pos + e)
                .unwrap_or(bytes.len());
            comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
            pos = end + 1;
            continue;
        }
        if b.is_ascii_whitespace() {
            if !token.is_empty() {
                fields.push(String::from_utf8_lossy(&token).to_string());
                token.clear();
            }
            pos += 1;
            // exactly one whitespace byte terminates the maxval field
            if fields.len() == 4 {
                break;
            }
            continue;
        }
        token.push(b);
        pos += 1;
    }
    if fields.len() < 4 {
        return Err(IoError::parse(path, 1, "truncated PNM header"));
    }
    if fields[0] != magic {
        return Err(IoError::parse(
            path,
            1,
            format!("expected {magic} file, found {:?}", fields[0]),
        ));
    }
    let parse_u32 = |s: &str| {
        s.parse::<u32>()
            .map_err(|e| IoError::parse(path, 1, format!("bad header field {s:?}: {e}")))
    };
    Ok(PnmHeader {
        width: parse_u32(&fields[1])?,
        height: parse_u32(&fields[2])?,
        maxval: parse_u32(&fields[3])?,
        comments,
        data_offset: pos,
    })
}

pub fn write_us_pgm(path: &Path, frame: &USFrame) -> Result<(), IoError> {
    let mut out = Vec::new();
    write!(
        out,
        "P5\n# spacing {} {} frame {}\n{} {}\n255\n",
        frame.spacing.0, frame.spacing.1, frame.frame_index, frame.width, frame.height
    )
    .expect("write to vec cannot fail");
    out.extend_from_slice(&frame.pixels);
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Read an 8-bit PGM as an ultrasound frame. Spacing and frame index come
/// from the embedded comment when present, else (0.1, 0.1) and 0.
pub fn read_us_pgm(path: &Path) -> Result<USFrame, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let header = parse_header(path, &bytes, "P5")?;
    if header.maxval != 255 {
        return Err(IoError::parse(
            path,
            1,
            format!("ultrasound PGM must have maxval 255, found {}", header.maxval),
        ));
    }
    let n = header.width as usize * header.height as usize;
    let data = &bytes[header.data_offset..];
    if data.len() != n {
        return Err(IoError::parse(
            path,
            1,
            format!("expected {n} data bytes, found {}", data.len()),
        ));
    }
    let mut spacing = (0.1, 0.1);
    let mut frame_index = 0usize;
    for c in &header.comments {
        let parts: Vec<&str> = c.split_whitespace().collect();
        if parts.len() == 5 && parts[0] == "spacing" && parts[3] == "frame" {
            if let (Ok(sx), Ok(sy), Ok(f)) = (parts[1].parse(), parts[2].parse(), parts[4].parse()) {
                spacing = (sx, sy);
                frame_index = f;
            }
        }
    }
    Ok(USFrame {
        width: header.width,
        height: header.height,
        pixels: data.to_vec(),
        spacing,
        frame_index,
        annotations: vec![],
    })
}

pub fn write_depth_pgm(path: &Path, map: &DepthMap) -> Result<(), IoError> {
    let mut out = Vec::new();
    write!(out, "P5\n{} {}\n65535\n", map.width, map.height).expect("write to vec cannot fail");
    for &d in &map.depths {
        let q = (d / DEPTH_MM_PER_UNIT).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

/// Read a 16-bit depth PGM; the camera intrinsics are supplied by the
/// caller since the format does not carry them.
pub fn read_depth_pgm(path: &Path, intrinsics: CameraIntrinsics) -> Result<DepthMap, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let header = parse_header(path, &bytes, "P5")?;
    if header.maxval != 65535 {
        return Err(IoError::parse(
            path,
            1,
            format!("depth PGM must have maxval 65535, found {}", header.maxval),
        ));
    }
    if header.width != intrinsics.width || header.height != intrinsics.height {
        return Err(IoError::parse(
            path,
            1,
            format!(
                "size {}x{} does not match intrinsics {}x{}",
                header.width, header.height, intrinsics.width, intrinsics.height
            ),
        ));
    }
    let n = header.width as usize * header.height as usize;
    let data = &bytes[header.data_offset..];
    if data.len() != 2 * n {
        return Err(IoError::parse(
            path,
            1,
            format!("expected {} data bytes, found {}", 2 * n, data.len()),
        ));
    }
    let depths: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * DEPTH_MM_PER_UNIT)
        .collect();
    DepthMap::new(intrinsics, depths).map_err(|e| IoError::parse(path, 0, e.to_string()))
}

pub fn write_ppm(path: &Path, frame: &RgbFrame) -> Result<(), IoError> {
    let mut out = Vec::new();
    write!(out, "P6\n{} {}\n255\n", frame.width, frame.height).expect("write to vec cannot fail");
    out.extend_from_slice(&frame.pixels);
    std::fs::write(path, out).map_err(|e| IoError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<RgbFrame, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    let header = parse_header(path, &bytes, "P6")?;
    if header.maxval != 255 {
        return Err(IoError::parse(path, 1, "PPM must have maxval 255"));
    }
    let n = header.width as usize * header.height as usize * 3;
    let data = &bytes[header.data_offset..];
    if data.len() != n {
        return Err(IoError::parse(
            path,
            1,
            format!("expected {n} data bytes, found {}", data.len()),
        ));
    }
    Ok(RgbFrame {
        width: header.width,
        height: header.height,
        pixels: data.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ussim::{render_us_frame, SpeckleParams};
    use tempfile::tempdir;

    #[test]
    fn us_pgm_round_trip() {
        let dir = tempdir().unwrap();
        let frame = render_us_frame(
            &[((100.0, 120.0), 3)],
            2.0,
            &SpeckleParams::default(),
            5,
            (0.1, 0.1),
            (256, 200),
            7,
        );
        let path = dir.path().join("f.pgm");
        write_us_pgm(&path, &frame).unwrap();
        let back = read_us_pgm(&path).unwrap();
        assert_eq!(back.pixels, frame.pixels);
        assert_eq!(back.spacing, frame.spacing);
        assert_eq!(back.frame_index, 7);
    }

    #[test]
    fn depth_pgm_quantizes_at_tenth_mm() {
        let dir = tempdir().unwrap();
        let k = CameraIntrinsics::new(100.0, 100.0, 8.0, 8.0, 16, 16).unwrap();
        let mut map = DepthMap::zeros(k);
        map.depths[0] = 499.96;
        map.depths[1] = 500.04;
        map.depths[17] = 6553.5;
        let path = dir.path().join("d.pgm");
        write_depth_pgm(&path, &map).unwrap();
        let back = read_depth_pgm(&path, k).unwrap();
        assert_eq!(back.depths[0], 500.0);
        assert_eq!(back.depths[1], 500.0);
        assert_eq!(back.depths[17], 6553.5);
        assert_eq!(back.depths[2], 0.0);
    }

    #[test]
    fn ppm_round_trip_and_magic_check() {
        let dir = tempdir().unwrap();
        let mut rgb = RgbFrame::filled(20, 10, [1, 2, 3]);
        rgb.pixels[0] = 200;
        let path = dir.path().join("f.ppm");
        write_ppm(&path, &rgb).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), rgb);
        assert!(matches!(read_us_pgm(&path), Err(IoError::Parse { .. })));
    }
}
