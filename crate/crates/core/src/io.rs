//! File formats: binary PPM color, 16-bit PGM depth, trajectory text and
//! JSON-lines records.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{DepthImage, RgbImage};
use crate::geometry::Pose;

/// Default depth quantization: 1 unit = 0.1 mm.
pub const DEPTH_SCALE: f64 = 1e-4;

fn parse_err(path: &Path, kind: &'static str, msg: impl Into<String>) -> Error {
    Error::Parse {
        kind,
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary P6 with maxval 255.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for c in &img.data {
        out.extend(c.iter().map(|v| quantize8(*v)));
    }
    out
}

/// Header tokens of a PNM file, comments collected separately.
struct PnmHeader {
    magic: String,
    width: u32,
    height: u32,
    maxval: u32,
    comments: Vec<String>,
    data_start: usize,
}

fn parse_pnm_header(bytes: &[u8], path: &Path) -> Result<PnmHeader> {
    let mut pos = 0;
    let mut tokens = Vec::new();
    let mut comments = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(parse_err(path, "pnm", "truncated header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|b| *b == b'\n').map_or(bytes.len(), |e| pos + e);
            comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let num = |s: &str| s.parse::<u32>().map_err(|_| parse_err(path, "pnm", format!("bad number {s:?}")));
    Ok(PnmHeader {
        magic: tokens[0].clone(),
        width: num(&tokens[1])?,
        height: num(&tokens[2])?,
        maxval: num(&tokens[3])?,
        comments,
        data_start: pos,
    })
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let h = parse_pnm_header(bytes, path)?;
    if h.magic != "P6" || h.maxval != 255 {
        return Err(parse_err(path, "ppm", "expected P6 with maxval 255"));
    }
    let n = h.width as usize * h.height as usize;
    let raster = bytes
        .get(h.data_start..h.data_start + 3 * n)
        .ok_or_else(|| parse_err(path, "ppm", "truncated raster"))?;
    let data = raster
        .chunks_exact(3)
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data,
    })
}

/// Binary P5 with maxval 65535 and a `# depth_scale <s>` comment giving
/// meters per unit. Depths beyond the range saturate; 0 marks no depth.
pub fn encode_pgm16(img: &DepthImage, scale: f64) -> Vec<u8> {
    let mut out = format!("P5\n# depth_scale {scale:e}\n{} {}\n65535\n", img.width, img.height).into_bytes();
    for d in &img.data {
        let q = if DepthImage::is_valid(*d) {
            (d / scale).round().clamp(1.0, 65535.0) as u16
        } else {
            0
        };
        out.extend(q.to_be_bytes());
    }
    out
}

pub fn decode_pgm16(bytes: &[u8], path: &Path) -> Result<DepthImage> {
    let h = parse_pnm_header(bytes, path)?;
    if h.magic != "P5" || h.maxval != 65535 {
        return Err(parse_err(path, "pgm", "expected P5 with maxval 65535"));
    }
    let scale = h
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("depth_scale").and_then(|s| s.trim().parse::<f64>().ok()))
        .ok_or_else(|| parse_err(path, "pgm", "missing depth_scale comment"))?;
    let n = h.width as usize * h.height as usize;
    let raster = bytes
        .get(h.data_start..h.data_start + 2 * n)
        .ok_or_else(|| parse_err(path, "pgm", "truncated raster"))?;
    let data = raster
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
        .collect();
    Ok(DepthImage {
        width: h.width,
        height: h.height,
        data,
    })
}

/// Per-pixel uncertainty in `[0, 0.25]` as a 16-bit PGM, 65535 = 0.25.
pub fn encode_uncertainty(values: &[f64], width: u32, height: u32) -> Vec<u8> {
    let mut out = format!("P5\n# variance_scale {:e}\n{width} {height}\n65535\n", 0.25 / 65535.0).into_bytes();
    for v in values {
        let q = (v.clamp(0.0, 0.25) / 0.25 * 65535.0).round() as u16;
        out.extend(q.to_be_bytes());
    }
    out
}

/// One `timestamp tx ty tz qx qy qz qw` line per pose.
pub fn format_trajectory(records: &[(f64, Pose)]) -> String {
    let mut s = String::new();
    for (t, p) in records {
        let q = p.quaternion();
        let x = p.translation;
        writeln!(
            s,
            "{t:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            x[0], x[1], x[2], q[0], q[1], q[2], q[3]
        )
        .expect("write to string");
    }
    s
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<(f64, Pose)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(path, "trajectory", format!("line {}: {e}", i + 1)))?;
        if v.len() != 8 {
            return Err(parse_err(
                path,
                "trajectory",
                format!("line {}: expected 8 fields, got {}", i + 1, v.len()),
            ));
        }
        let pose = Pose::from_quaternion([v[4], v[5], v[6], v[7]], crate::geometry::Vec3::new(v[1], v[2], v[3]));
        out.push((v[0], pose));
    }
    Ok(out)
}

/// Appends one JSON object per line.
pub fn json_lines<T: serde::Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("serializable record"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact_on_8bit_values() {
        let mut img = RgbImage::filled(3, 2, [0.0; 3]);
        for (i, c) in img.data.iter_mut().enumerate() {
            *c = [i as f64 / 255.0, (255 - i) as f64 / 255.0, 0.5];
        }
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes, Path::new("x.ppm")).unwrap();
        assert_eq!(encode_ppm(&back), bytes);
        assert_eq!(back.data[1][0], 1.0 / 255.0);
    }

    #[test]
    fn pgm_round_trip_within_scale() {
        let mut d = DepthImage::filled(4, 1, 0.0);
        d.data = vec![0.0, 1.23456, 3.0, 6.5535];
        let bytes = encode_pgm16(&d, DEPTH_SCALE);
        let back = decode_pgm16(&bytes, Path::new("x.pgm")).unwrap();
        for (a, b) in d.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 * DEPTH_SCALE + 1e-12);
        }
        assert_eq!(back.data[0], 0.0);
        assert_eq!(encode_pgm16(&back, DEPTH_SCALE), bytes);
    }

    #[test]
    fn pgm_requires_scale_comment() {
        let bytes = b"P5\n1 1\n65535\n\x00\x01";
        assert!(decode_pgm16(bytes, Path::new("x.pgm")).is_err());
    }

    #[test]
    fn trajectory_round_trip() {
        let p = Pose::rot_z(0.3).compose(&Pose::from_translation([1.0, -2.0, 0.5].into()));
        let text = format_trajectory(&[(0.1, p), (0.2, Pose::identity())]);
        let back = parse_trajectory(&text, Path::new("t.txt")).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[0].1.translation - p.translation).norm() < 1e-8);
        assert!(Pose::between(&back[0].1, &p).rotation_angle() < 1e-8);
        assert!(text.lines().all(|l| l.split_whitespace().count() == 8));
    }

    #[test]
    fn trajectory_rejects_short_lines() {
        assert!(parse_trajectory("0 1 2 3", Path::new("t.txt")).is_err());
    }
}
