use std::num::NonZeroUsize;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Vector3;

use crate::camera::ErpCamera;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian3D, GaussianScene};
use crate::io::ply::PointCloud;

pub const INIT_OPACITY: f64 = 0.1;
const MIN_SCALE: f64 = 1e-7;

/// Mean distance of every point to its (up to) three nearest neighbours.
pub fn mean_knn_distance(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    if points.len() < 2 {
        return vec![MIN_SCALE; points.len()];
    }
    let entries: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree = ImmutableKdTree::new_from_slice(&entries).expect("nonempty point set");
    let want = NonZeroUsize::new((k + 1).min(points.len())).unwrap();
    entries
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let hits = tree.query(p).nearest_n::<SquaredEuclidean<f64>>(want).execute();
            let mut sum = 0.0;
            let mut n = 0;
            for h in hits.iter().filter(|h| h.item as usize != i).take(k) {
                sum += h.distance.sqrt();
                n += 1;
            }
            if n == 0 { MIN_SCALE } else { (sum / n as f64).max(MIN_SCALE) }
        })
        .collect()
}

/// Isotropic Gaussians at the points: scale from the 3-NN mean distance,
/// opacity 0.1, point color or mid gray.
pub fn init_from_points(cloud: &PointCloud, sh_degree: usize) -> Result<GaussianScene> {
    if cloud.positions.is_empty() {
        return Err(Error::config("initial point cloud is empty"));
    }
    let scales = mean_knn_distance(&cloud.positions, 3);
    let gaussians = cloud
        .positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let rgb = cloud.colors.as_ref().map_or([0.5; 3], |c| c[i].map(|v| v.clamp(0.0, 1.0)));
            Gaussian3D::isotropic(*p, scales[i], INIT_OPACITY, rgb)
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianScene::new(gaussians, sh_degree)
}

/// 1.1 times the 90th-percentile distance of the points from the mean
/// camera center, floored by the camera spread.
pub fn scene_extent(cams: &[ErpCamera], points: &[Vector3<f64>]) -> f64 {
    if cams.is_empty() {
        return 1.0;
    }
    let centroid = cams.iter().map(|c| c.center()).sum::<Vector3<f64>>() / cams.len() as f64;
    let spread = cams.iter().map(|c| (c.center() - centroid).norm()).fold(0.0, f64::max);
    let mut d: Vec<f64> = points.iter().map(|p| (p - centroid).norm()).collect();
    let reach = if d.is_empty() {
        0.0
    } else {
        d.sort_by(f64::total_cmp);
        d[((d.len() - 1) as f64 * 0.9).round() as usize]
    };
    let e = 1.1 * reach.max(spread);
    if e > 0.0 { e } else { 1.0 }
}
