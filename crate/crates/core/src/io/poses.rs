//! Pose files: one panorama per line,
//!
//! ```text
//! # name width height qw qx qy qz cx cy cz [lat_min_deg lat_max_deg]
//! view_000 256 128 1 0 0 0 0 0 0
//! ```
//!
//! The quaternion rotates world directions into the camera frame
//! (x right, y down, z forward); `c` is the camera center in world units.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::camera::ErpCamera;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PoseEntry {
    pub name: String,
    pub camera: ErpCamera,
}

pub fn parse_poses(text: &str, path: &Path) -> Result<Vec<PoseEntry>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(path, format!("line {}: {msg}", lineno + 1));
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 10 && toks.len() != 12 {
            return Err(bad(format!("expected 10 or 12 fields, found {}", toks.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad integer '{s}'")));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number '{s}'")));
        let (w, h) = (int(toks[1])?, int(toks[2])?);
        let q = [num(toks[3])?, num(toks[4])?, num(toks[5])?, num(toks[6])?];
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((qn - 1.0).abs() < 1e-3) {
            return Err(bad(format!("quaternion norm {qn} is not 1")));
        }
        let c = Vector3::new(num(toks[7])?, num(toks[8])?, num(toks[9])?);
        let mut camera = ErpCamera::from_quaternion(q.map(|v| v / qn), c, w, h).map_err(|e| bad(e.to_string()))?;
        if toks.len() == 12 {
            let (lo, hi) = (num(toks[10])?, num(toks[11])?);
            camera = camera
                .with_lat_band(lo.to_radians(), hi.to_radians())
                .map_err(|e| bad(e.to_string()))?;
        }
        out.push(PoseEntry {
            name: toks[0].to_string(),
            camera,
        });
    }
    Ok(out)
}

pub fn read_poses(path: &Path) -> Result<Vec<PoseEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}

pub fn format_poses(entries: &[PoseEntry]) -> String {
    let mut s = String::from("# name width height qw qx qy qz cx cy cz [lat_min_deg lat_max_deg]\n");
    for e in entries {
        let c = &e.camera;
        let q = c.quaternion_wxyz();
        let p = c.center();
        let _ = write!(
            s,
            "{} {} {} {} {} {} {} {} {} {}",
            e.name,
            c.width(),
            c.height(),
            q[0],
            q[1],
            q[2],
            q[3],
            p.x,
            p.y,
            p.z
        );
        if let Some((lo, hi)) = c.lat_band() {
            let _ = write!(s, " {} {}", lo.to_degrees(), hi.to_degrees());
        }
        s.push('\n');
    }
    s
}

pub fn write_poses(path: &Path, entries: &[PoseEntry]) -> Result<()> {
    std::fs::write(path, format_poses(entries)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_bands_and_round_trips() {
        let text = "# header\n\nv0 64 32 1 0 0 0 0 0 0\nv1 64 32 0.7071067811865476 0 0.7071067811865476 0 1 2 3 -40 20 # trailing\n";
        let p = Path::new("poses.txt");
        let e = parse_poses(text, p).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[1].camera.center(), &Vector3::new(1.0, 2.0, 3.0));
        let (lo, hi) = e[1].camera.lat_band().unwrap();
        assert!((lo.to_degrees() + 40.0).abs() < 1e-12 && (hi.to_degrees() - 20.0).abs() < 1e-12);
        let back = parse_poses(&format_poses(&e), p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].name, "v0");
        assert!((back[1].camera.rotation() - e[1].camera.rotation()).abs().max() < 1e-12);
        assert_eq!(back[1].camera.lat_band().is_some(), true);
    }

    #[test]
    fn rejects_malformed_lines() {
        let p = Path::new("poses.txt");
        assert!(parse_poses("v0 64 32 1 0 0 0 0 0\n", p).is_err());
        assert!(parse_poses("v0 64 32 2 0 0 0 0 0 0\n", p).is_err());
        assert!(parse_poses("v0 6x4 32 1 0 0 0 0 0 0\n", p).is_err());
        assert!(parse_poses("v0 64 32 1 0 0 0 0 0 0 30 10\n", p).is_err());
    }
}
