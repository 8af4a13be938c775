//! Portable float maps (`Pf` single channel, `PF` three channel).
//!
//! Rows are stored bottom to top; a negative scale marks little-endian data.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Map, RgbMap, ScalarMap};

fn write_raw(path: &Path, magic: &str, w: usize, h: usize, channels: usize, data: impl Fn(usize, usize, usize) -> f64) -> Result<()> {
    let mut bytes = format!("{magic}\n{w} {h}\n-1.0\n").into_bytes();
    bytes.reserve(w * h * channels * 4);
    for v in (0..h).rev() {
        for u in 0..w {
            for c in 0..channels {
                bytes.extend_from_slice(&(data(u, v, c) as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_scalar(path: &Path, map: &ScalarMap) -> Result<()> {
    write_raw(path, "Pf", map.width(), map.height(), 1, |u, v, _| *map.get(u, v))
}

pub fn write_rgb(path: &Path, map: &RgbMap) -> Result<()> {
    write_raw(path, "PF", map.width(), map.height(), 3, |u, v, c| map.get(u, v)[c])
}

struct Raw {
    w: usize,
    h: usize,
    channels: usize,
    /// Top-to-bottom, row-major, interleaved.
    values: Vec<f64>,
}

fn read_raw(path: &Path) -> Result<Raw> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m);
    // three whitespace-terminated header tokens, then a single whitespace byte
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?.to_string());
    }
    pos += 1;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("expected 'Pf' or 'PF' magic")),
    };
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    let n = w * h * channels;
    if bytes.len() < pos + 4 * n {
        return Err(bad("truncated data"));
    }
    let mut values = vec![0.0; n];
    for (i, chunk) in bytes[pos..pos + 4 * n].chunks_exact(4).enumerate() {
        let arr: [u8; 4] = chunk.try_into().unwrap();
        let f = if scale < 0.0 { f32::from_le_bytes(arr) } else { f32::from_be_bytes(arr) };
        // flip rows to top-to-bottom
        let row = i / (w * channels);
        let rest = i % (w * channels);
        values[(h - 1 - row) * w * channels + rest] = f as f64;
    }
    Ok(Raw { w, h, channels, values })
}

pub fn read_scalar(path: &Path) -> Result<ScalarMap> {
    let raw = read_raw(path)?;
    if raw.channels != 1 {
        return Err(Error::format(path, "expected a single-channel map"));
    }
    Map::from_vec(raw.w, raw.h, raw.values)
}

pub fn read_rgb(path: &Path) -> Result<RgbMap> {
    let raw = read_raw(path)?;
    let data = match raw.channels {
        3 => raw.values.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        _ => raw.values.iter().map(|&v| [v; 3]).collect(),
    };
    Map::from_vec(raw.w, raw.h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_round_trip_keeps_row_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pfm");
        let m = Map::from_fn(5, 3, |u, v| (u + 10 * v) as f64 + 0.25);
        write_scalar(&p, &m).unwrap();
        assert_eq!(read_scalar(&p).unwrap(), m);
        // first stored row is the bottom one
        let bytes = std::fs::read(&p).unwrap();
        let header_len = "Pf\n5 3\n-1.0\n".len();
        let first = f32::from_le_bytes(bytes[header_len..header_len + 4].try_into().unwrap());
        assert_eq!(first, 20.25);
    }

    #[test]
    fn rgb_round_trip_and_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pfm");
        let m = Map::from_fn(4, 2, |u, v| [u as f64, v as f64, 0.5]);
        write_rgb(&p, &m).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), m);

        let mut bytes = b"Pf\n2 1\n1.0\n".to_vec();
        for v in [1.5f32, -2.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(&p, bytes).unwrap();
        assert_eq!(read_scalar(&p).unwrap().data(), &[1.5, -2.0]);
        assert!(read_rgb(&p).is_ok());
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pfm");
        std::fs::write(&p, b"P6\n1 1\n255\n").unwrap();
        assert!(read_scalar(&p).is_err());
        std::fs::write(&p, b"Pf\n4 4\n-1.0\n\0\0").unwrap();
        assert!(read_scalar(&p).is_err());
    }
}
