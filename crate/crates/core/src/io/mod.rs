//! File formats: PLY scenes and point clouds, PFM float maps, PNG images,
//! pose files, and posed image datasets.

pub mod pfm;
pub mod ply;
pub mod png;
pub mod poses;

use std::path::{Path, PathBuf};

use crate::camera::ErpCamera;
use crate::error::{Error, Result};
use crate::image::RgbMap;

/// A posed panorama.
#[derive(Clone, Debug)]
pub struct View {
    pub name: String,
    pub camera: ErpCamera,
    pub rgb: RgbMap,
}

/// Finds `<dir>/<name>`, or `<dir>/<name>.png` when `name` has no extension.
fn image_path(dir: &Path, name: &str) -> PathBuf {
    let direct = dir.join(name);
    if direct.extension().is_some() && direct.exists() {
        direct
    } else {
        dir.join(format!("{name}.png"))
    }
}

/// Loads every image listed in the pose file and checks its size.
pub fn load_views(images: &Path, poses: &Path) -> Result<Vec<View>> {
    let entries = poses::read_poses(poses)?;
    entries
        .into_iter()
        .map(|e| {
            let path = image_path(images, &e.name);
            let rgb = png::read_rgb(&path)?;
            if rgb.width() != e.camera.width() || rgb.height() != e.camera.height() {
                return Err(Error::format(
                    &path,
                    format!(
                        "image is {}x{} but the pose says {}x{}",
                        rgb.width(),
                        rgb.height(),
                        e.camera.width(),
                        e.camera.height()
                    ),
                ));
            }
            Ok(View {
                name: e.name,
                camera: e.camera,
                rgb,
            })
        })
        .collect()
}
