//! 8-bit PNG images as `[0, 1]` maps.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::image::{Map, NormalMap, RgbMap};

pub fn read_rgb(path: &Path) -> Result<RgbMap> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    Map::from_vec(w, h, data)
}

pub fn write_rgb(path: &Path, map: &RgbMap) -> Result<()> {
    let bytes: Vec<u8> = map
        .data()
        .iter()
        .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let img = image::RgbImage::from_raw(map.width() as u32, map.height() as u32, bytes)
        .expect("buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

/// Normals mapped from `[-1, 1]` to colors.
pub fn write_normals(path: &Path, map: &NormalMap) -> Result<()> {
    write_rgb(path, &map.map(|n: &Vector3<f64>| [0, 1, 2].map(|k| 0.5 * (n[k] + 1.0))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_quantizes_to_8_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let m = Map::from_fn(7, 3, |u, v| [u as f64 / 6.0, v as f64 / 2.0, 0.3]);
        write_rgb(&p, &m).unwrap();
        let back = read_rgb(&p).unwrap();
        assert_eq!((back.width(), back.height()), (7, 3));
        for (a, b) in m.data().iter().zip(back.data()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(read_rgb(Path::new("/nonexistent/x.png")).is_err());
    }
}
