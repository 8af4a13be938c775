//! Optimization of a Gaussian scene against posed panoramas.

mod config;
pub mod densify;
pub mod init;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{LearningRates, TrainConfig};
pub use densify::{accumulate_densify_stats, densify_and_prune, DensifyParams, DensifyReport, DensifyStats};

use crate::backward::backward;
use crate::camera::ErpCamera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::io::ply::{self, PointCloud};
use crate::io::View;
use crate::losses::{total_loss_grad, LossBreakdown};
use crate::optim::Adam;
use crate::render::{RenderContext, RenderOptions};

/// Record of one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub view: usize,
    pub loss: LossBreakdown,
    pub gaussians: usize,
    pub densify: Option<DensifyReport>,
}

pub struct Trainer<'a> {
    views: &'a [View],
    cams: Vec<ErpCamera>,
    cfg: TrainConfig,
    scene: GaussianScene,
    adam: Adam,
    stats: DensifyStats,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    iteration: usize,
    extent: f64,
}

impl<'a> Trainer<'a> {
    /// Starts from an existing scene; `extent` sets the position rate and
    /// the clone/split size boundary.
    pub fn new(views: &'a [View], mut scene: GaussianScene, extent: f64, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if views.is_empty() {
            return Err(Error::config("training needs at least one view"));
        }
        if scene.is_empty() {
            return Err(Error::config("training needs a nonempty initial scene"));
        }
        for v in views {
            if v.rgb.width() != v.camera.width() || v.rgb.height() != v.camera.height() {
                return Err(Error::config(format!("view {} image does not match its camera", v.name)));
            }
        }
        scene.sh_degree = cfg.sh_degree;
        let cams: Vec<ErpCamera> = views.iter().map(|v| v.camera.clone()).collect();
        scene.update_filter_radii(&cams, cfg.kappa);
        let n = scene.len();
        Ok(Self {
            views,
            cams,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            scene,
            adam: Adam::for_gaussians(n),
            stats: DensifyStats::new(n),
            order: Vec::new(),
            cursor: 0,
            iteration: 0,
            extent,
        })
    }

    /// Initializes from a point cloud (see [`init::init_from_points`]).
    pub fn from_points(views: &'a [View], cloud: &PointCloud, cfg: TrainConfig) -> Result<Self> {
        let scene = init::init_from_points(cloud, cfg.sh_degree)?;
        let cams: Vec<ErpCamera> = views.iter().map(|v| v.camera.clone()).collect();
        let extent = init::scene_extent(&cams, &cloud.positions);
        Self::new(views, scene, extent, cfg)
    }

    pub fn scene(&self) -> &GaussianScene {
        &self.scene
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    pub fn into_scene(self) -> GaussianScene {
        self.scene
    }

    fn next_view(&mut self) -> usize {
        if self.cursor >= self.order.len() {
            self.order = (0..self.views.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn render_options(&self) -> RenderOptions {
        RenderOptions {
            tile_size: self.cfg.tile_size,
            ..RenderOptions::default()
        }
    }

    /// One forward/backward/update step on the next shuffled view.
    pub fn step(&mut self) -> Result<IterationLog> {
        let it = self.iteration;
        let vi = self.next_view();
        let view = &self.views[vi];
        let schedule = self.cfg.schedule(it);
        let ctx = RenderContext::new(&self.scene, &view.camera, self.render_options())?;
        let out = ctx.render();
        let (loss, up) = total_loss_grad(&out, &view.rgb, &view.camera, &self.cfg.loss, schedule)?;
        let grads = backward(&ctx, &up)?;
        drop(ctx);

        if it < self.cfg.densify_until {
            accumulate_densify_stats(&mut self.stats, &grads, &self.scene, &view.camera, self.cfg.loss.lat_eps);
        }
        let lr_pos = self.cfg.lr.position_at(it, self.cfg.iterations) * self.extent;
        let lrs = self.cfg.lr.flat(lr_pos);
        self.adam.step_scene(&mut self.scene, &grads, &lrs)?;

        let mut densify = None;
        if self.cfg.densify_now(it) {
            let p = DensifyParams {
                grad_threshold: self.cfg.densify_grad_threshold,
                size_threshold: self.cfg.size_threshold * self.extent,
                prune_opacity: self.cfg.prune_opacity,
                max_gaussians: self.cfg.max_gaussians,
            };
            let rep = densify_and_prune(&mut self.scene, &self.stats, &p, &mut self.rng, Some(&mut self.adam));
            self.scene.update_filter_radii(&self.cams, self.cfg.kappa);
            self.stats = DensifyStats::new(self.scene.len());
            log::debug!("iteration {}: {rep:?}, {} Gaussians", it + 1, self.scene.len());
            densify = Some(rep);
        }
        self.iteration += 1;
        Ok(IterationLog {
            iteration: it,
            view: vi,
            loss,
            gaussians: self.scene.len(),
            densify,
        })
    }

    /// Runs the remaining iterations, handing every log entry to `observe`.
    pub fn run(&mut self, mut observe: impl FnMut(&Self, &IterationLog) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let log = self.step()?;
            observe(self, &log)?;
        }
        Ok(())
    }

    /// Scene PLY plus the optimizer sidecar next to it (`.adam`).
    pub fn save_checkpoint(&self, ply_path: &Path) -> Result<()> {
        ply::write_scene(ply_path, &self.scene)?;
        self.adam.save(&ply_path.with_extension("adam"))
    }
}

pub const LOSS_LOG_HEADER: [&str; 10] = [
    "iteration", "view", "total", "rgb", "dn", "jump1", "jump2", "valid_px", "gaussians", "seconds",
];

/// Trains and writes `loss.csv`, periodic `checkpoints/iter_<n>.ply` and the
/// final `scene.ply` (each with an `.adam` sidecar) under `out`.
pub fn train_to_dir(views: &[View], cloud: &PointCloud, cfg: &TrainConfig, out: &Path) -> Result<GaussianScene> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join("loss.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::format(&csv_path, e.to_string());
    csv.write_record(LOSS_LOG_HEADER).map_err(csv_err)?;

    let mut trainer = Trainer::from_points(views, cloud, cfg.clone())?;
    let ckpt_dir = out.join("checkpoints");
    let start = Instant::now();
    trainer.run(|t, l| {
        let b = &l.loss;
        csv.write_record([
            l.iteration.to_string(),
            l.view.to_string(),
            b.total.to_string(),
            b.rgb.to_string(),
            b.dn.to_string(),
            b.jump1.to_string(),
            b.jump2.to_string(),
            b.valid_pixel_count.to_string(),
            l.gaussians.to_string(),
            format!("{:.3}", start.elapsed().as_secs_f64()),
        ])
        .map_err(csv_err)?;
        let n = l.iteration + 1;
        if n % 100 == 0 {
            log::info!("iteration {n}: loss {:.5}, {} Gaussians", b.total, l.gaussians);
        }
        if t.cfg.checkpoint_interval > 0 && n % t.cfg.checkpoint_interval == 0 && n < t.cfg.iterations {
            std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
            t.save_checkpoint(&ckpt_dir.join(format!("iter_{n}.ply")))?;
        }
        Ok(())
    })?;
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    trainer.save_checkpoint(&out.join("scene.ply"))?;
    Ok(trainer.into_scene())
}

#[cfg(test)]
mod tests;
