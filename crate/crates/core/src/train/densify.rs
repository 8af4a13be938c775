use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::backward::SceneGrad;
use crate::camera::{dir_to_angles, latitude_weight, ErpCamera};
use crate::gaussian::{Gaussian3D, GaussianScene};
use crate::optim::Adam;

const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// Accumulated densification scores since the last structural event.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    /// Sum of latitude-weighted projected-mean gradient norms.
    pub score: Vec<f64>,
    pub count: Vec<u32>,
    /// Sum of mean gradients, used to nudge clones.
    pub grad_sum: Vec<Vector3<f64>>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            score: vec![0.0; n],
            count: vec![0; n],
            grad_sum: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }

    pub fn mean_score(&self, i: usize) -> f64 {
        if self.count[i] == 0 { 0.0 } else { self.score[i] / self.count[i] as f64 }
    }
}

/// Gradient of the loss with respect to the continuous pixel position of
/// the projected mean, and the mean's latitude in `cam`.
pub fn projected_mean_grad(g_mean: &Vector3<f64>, mean: &Vector3<f64>, cam: &ErpCamera) -> Option<([f64; 2], f64)> {
    let x = cam.world_to_camera(mean);
    let r = x.norm();
    let a = dir_to_angles(&x).ok()?;
    let (u, v) = cam.project_point(mean).ok()?;
    let (du, dv) = cam.ray_pixel_jacobian(u, v);
    Some(([r * g_mean.dot(&du), r * g_mean.dot(&dv)], a.lat))
}

/// Pixel gradient expressed per half image size (`u` spans `[-1, 1]`), the
/// scale the clone/split threshold is stated in.
pub fn to_ndc_grad(pixel_grad: [f64; 2], cam: &ErpCamera) -> [f64; 2] {
    [pixel_grad[0] * cam.width() as f64 / 2.0, pixel_grad[1] * cam.height() as f64 / 2.0]
}

/// Score of one observation: `|dL/du| * w_lat(lat)`.
pub fn observation_score(pixel_grad: [f64; 2], lat: f64, lat_eps: f64) -> f64 {
    pixel_grad[0].hypot(pixel_grad[1]) * latitude_weight(lat, lat_eps)
}

/// Adds one view's contribution for every visible Gaussian.
pub fn accumulate_densify_stats(stats: &mut DensifyStats, grads: &SceneGrad, scene: &GaussianScene, cam: &ErpCamera, lat_eps: f64) {
    for (i, g) in scene.gaussians.iter().enumerate() {
        if !grads.visible[i] {
            continue;
        }
        let gm = grads.gaussians[i].mean;
        if let Some((pg, lat)) = projected_mean_grad(&gm, &g.mean, cam) {
            stats.score[i] += observation_score(to_ndc_grad(pg, cam), lat, lat_eps);
            stats.count[i] += 1;
            stats.grad_sum[i] += gm;
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

pub struct DensifyParams {
    pub grad_threshold: f64,
    /// Absolute scene-unit size boundary between clone and split.
    pub size_threshold: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
}

/// Clones small and splits large high-score Gaussians, then prunes
/// transparent ones. Optimizer state follows the survivors; new primitives
/// start with zero moments. Filter radii of new primitives are left to the
/// caller.
pub fn densify_and_prune(
    scene: &mut GaussianScene,
    stats: &DensifyStats,
    p: &DensifyParams,
    rng: &mut impl Rng,
    adam: Option<&mut Adam>,
) -> DensifyReport {
    let n = scene.len();
    let mut report = DensifyReport::default();
    let transparent: Vec<bool> = scene.gaussians.iter().map(|g| g.opacity() < p.prune_opacity).collect();

    let mut cand: Vec<usize> = (0..n)
        .filter(|&i| !transparent[i] && stats.mean_score(i) >= p.grad_threshold)
        .collect();
    // highest scores first when the budget is short
    cand.sort_by(|&a, &b| stats.mean_score(b).total_cmp(&stats.mean_score(a)).then(a.cmp(&b)));
    cand.truncate(p.max_gaussians.saturating_sub(n));
    cand.sort_unstable();

    let mut keep = transparent.iter().map(|t| !t).collect::<Vec<_>>();
    let mut added = Vec::new();
    for &i in &cand {
        let g = &scene.gaussians[i];
        if g.inflated_scales().max() <= p.size_threshold {
            let mut c = g.clone();
            let gs = stats.grad_sum[i];
            if gs.norm() > 0.0 {
                c.mean -= gs.normalize() * (0.5 * g.inflated_scales().min());
            }
            added.push(c);
            report.cloned += 1;
        } else {
            let s = g.scales();
            let r = g.rotation_matrix();
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                let mut c = g.clone();
                c.mean = g.mean + r * s.component_mul(&z);
                c.log_scales = (s / SPLIT_SCALE_DIVISOR).map(f64::ln);
                added.push(c);
            }
            keep[i] = false;
            report.split += 1;
        }
    }
    report.pruned = transparent.iter().filter(|t| **t).count();

    let old = std::mem::take(&mut scene.gaussians);
    scene.gaussians = old.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(g, _)| g).collect();
    let n_added = added.len();
    scene.gaussians.extend(added);
    if let Some(adam) = adam {
        adam.retain(&keep);
        adam.grow(n_added);
    }
    report
}

/// Whether every primitive satisfies its invariants.
pub fn all_valid(gaussians: &[Gaussian3D]) -> bool {
    gaussians.iter().all(|g| g.check_invariants().is_ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backward::PARAMS_PER_GAUSSIAN;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> DensifyParams {
        DensifyParams {
            grad_threshold: 2e-4,
            size_threshold: 0.1,
            prune_opacity: 0.005,
            max_gaussians: 1000,
        }
    }

    fn scene_of(gs: Vec<Gaussian3D>) -> GaussianScene {
        GaussianScene::new(gs, 0).unwrap()
    }

    #[test]
    fn latitude_weight_on_scores() {
        let g = 3.0;
        assert!((observation_score([g, 0.0], 0.0, 0.1) - g).abs() < 1e-12);
        assert!((observation_score([0.0, g], 1.5707, 0.1) - 0.1 * g).abs() < 1e-12);
    }

    #[test]
    fn projected_gradient_matches_finite_differences() {
        let cam = ErpCamera::identity(Vector3::new(0.1, 0.0, -0.2), 64, 32).unwrap();
        let mean = Vector3::new(1.0, -0.7, 2.0);
        let gm = Vector3::new(0.3, -0.2, 0.5);
        let (pg, _) = projected_mean_grad(&gm, &mean, &cam).unwrap();
        // L(x) = gm . x; move the mean along the ray for pixel (u + h, v) at fixed range
        let (u, v) = cam.project_point(&mean).unwrap();
        let r = (mean - cam.center()).norm();
        let h = 1e-6;
        let at = |u: f64, v: f64| gm.dot(&(cam.center() + cam.ray_through(u, v) * r));
        let fd_u = (at(u + h, v) - at(u - h, v)) / (2.0 * h);
        let fd_v = (at(u, v + h) - at(u, v - h)) / (2.0 * h);
        assert!((pg[0] - fd_u).abs() < 1e-6 && (pg[1] - fd_v).abs() < 1e-6);
    }

    #[test]
    fn invisible_untouched_and_views_add() {
        let scene = scene_of(vec![
            Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.5, [0.5; 3]).unwrap(),
            Gaussian3D::isotropic(Vector3::new(1.0, 0.0, 2.0), 0.1, 0.5, [0.5; 3]).unwrap(),
        ]);
        let cam = ErpCamera::identity(Vector3::zeros(), 64, 32).unwrap();
        let mut grads = SceneGrad::zeros(2);
        grads.visible[0] = true;
        grads.gaussians[0].mean = Vector3::new(0.01, 0.0, 0.0);
        grads.gaussians[1].mean = Vector3::new(5.0, 5.0, 5.0);
        let mut stats = DensifyStats::new(2);
        accumulate_densify_stats(&mut stats, &grads, &scene, &cam, 0.1);
        let once = stats.score[0];
        assert!(once > 0.0);
        let (pg, lat) = projected_mean_grad(&grads.gaussians[0].mean, &scene.gaussians[0].mean, &cam).unwrap();
        assert!((once - observation_score([pg[0] * 32.0, pg[1] * 16.0], lat, 0.1)).abs() < 1e-15);
        assert_eq!((stats.score[1], stats.count[1]), (0.0, 0));
        let cam2 = ErpCamera::identity(Vector3::new(0.0, 0.5, 0.0), 64, 32).unwrap();
        let mut single = DensifyStats::new(2);
        accumulate_densify_stats(&mut single, &grads, &scene, &cam2, 0.1);
        accumulate_densify_stats(&mut stats, &grads, &scene, &cam2, 0.1);
        assert!((stats.score[0] - (once + single.score[0])).abs() < 1e-15);
        assert_eq!(stats.count[0], 2);
    }

    #[test]
    fn low_scores_only_prune() {
        let mut scene = scene_of(vec![
            Gaussian3D::isotropic(Vector3::zeros(), 0.05, 0.5, [0.5; 3]).unwrap(),
            Gaussian3D::isotropic(Vector3::x(), 0.5, 1e-4, [0.5; 3]).unwrap(),
            Gaussian3D::isotropic(Vector3::y(), 0.5, 0.3, [0.5; 3]).unwrap(),
        ]);
        let mut stats = DensifyStats::new(3);
        stats.score = vec![1e-5, 1.0, 1e-6];
        stats.count = vec![1, 1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut adam = Adam::for_gaussians(3);
        adam.m[2 * PARAMS_PER_GAUSSIAN] = 7.0;
        let rep = densify_and_prune(&mut scene, &stats, &params(), &mut rng, Some(&mut adam));
        assert_eq!(rep, DensifyReport { cloned: 0, split: 0, pruned: 1 });
        assert_eq!(scene.len(), 2);
        assert_eq!(scene.gaussians[1].mean, Vector3::y());
        assert_eq!(adam.m.len(), 2 * PARAMS_PER_GAUSSIAN);
        assert_eq!(adam.m[PARAMS_PER_GAUSSIAN], 7.0);
    }

    #[test]
    fn large_high_score_splits_in_two() {
        let mut g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.4, 0.6, [0.2, 0.3, 0.4]).unwrap();
        g.log_scales = Vector3::new(0.4f64.ln(), 0.2f64.ln(), 0.3f64.ln());
        g.rotation = [0.9, 0.1, -0.3, 0.2];
        let n = g.rotation.iter().map(|x| x * x).sum::<f64>().sqrt();
        g.rotation = g.rotation.map(|x| x / n);
        let mut scene = scene_of(vec![g.clone()]);
        let mut stats = DensifyStats::new(1);
        stats.score[0] = 1.0;
        stats.count[0] = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut adam = Adam::for_gaussians(1);
        let rep = densify_and_prune(&mut scene, &stats, &params(), &mut rng, Some(&mut adam));
        assert_eq!(rep.split, 1);
        assert_eq!(scene.len(), 2);
        assert_eq!(adam.m.len(), 2 * PARAMS_PER_GAUSSIAN);
        for c in &scene.gaussians {
            let ratio = g.scales().component_div(&c.scales());
            assert!(ratio.iter().all(|r| (r - 1.6).abs() < 1e-12));
            assert_eq!(c.opacity_logit, g.opacity_logit);
            assert_ne!(c.mean, g.mean);
            // within 5 sigma of the parent
            let local = g.rotation_matrix().transpose() * (c.mean - g.mean);
            assert!(local.component_div(&g.scales()).norm() < 5.0);
        }
        assert!(all_valid(&scene.gaussians));
    }

    #[test]
    fn small_high_score_clones_along_descent() {
        let g = Gaussian3D::isotropic(Vector3::new(0.0, 0.0, 3.0), 0.02, 0.6, [0.5; 3]).unwrap();
        let mut scene = scene_of(vec![g.clone()]);
        let mut stats = DensifyStats::new(1);
        stats.score[0] = 1.0;
        stats.count[0] = 1;
        stats.grad_sum[0] = Vector3::new(0.0, 0.0, 2.0);
        let rep = densify_and_prune(&mut scene, &stats, &params(), &mut ChaCha8Rng::seed_from_u64(2), None);
        assert_eq!(rep.cloned, 1);
        assert_eq!(scene.gaussians[0], g);
        assert!((scene.gaussians[1].mean.z - (3.0 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn budget_limits_growth() {
        let gs: Vec<_> = (0..4)
            .map(|i| Gaussian3D::isotropic(Vector3::new(i as f64, 0.0, 0.0), 0.02, 0.5, [0.5; 3]).unwrap())
            .collect();
        let mut scene = scene_of(gs);
        let mut stats = DensifyStats::new(4);
        stats.score = vec![1.0, 4.0, 3.0, 2.0];
        stats.count = vec![1; 4];
        let p = DensifyParams { max_gaussians: 6, ..params() };
        let rep = densify_and_prune(&mut scene, &stats, &p, &mut ChaCha8Rng::seed_from_u64(3), None);
        assert_eq!(rep.cloned, 2);
        assert_eq!(scene.len(), 6);
        assert_eq!(scene.gaussians[4].mean.x, 1.0);
        assert_eq!(scene.gaussians[5].mean.x, 2.0);
    }
}
