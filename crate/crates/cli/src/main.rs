use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use omnisplat::eval::metrics::ViewPairSpec;
use omnisplat::eval::synth::SyntheticScene;
use omnisplat::eval::{evaluate, rotation_eval, write_metrics_csv, EvalInputs};
use omnisplat::io::{load_views, pfm, ply, png, poses};
use omnisplat::train::{train_to_dir, TrainConfig};
use omnisplat::{Error, RenderOptions, Result};

#[derive(Parser)]
#[command(name = "omnisplat", version, about = "Ray-space Gaussian splatting for equirectangular panoramas")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a scene at every pose: images/, depth/, normals/, alpha/.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        tile_size: usize,
    },
    /// Fit Gaussians to posed panoramas.
    Train {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        points: PathBuf,
        /// TOML training config; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the default schedule compressed to this many iterations.
        #[arg(long, conflicts_with = "config")]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM against references and DRE/CIR of predicted depths.
    Eval {
        /// Directory with images/<name>.png and depth/<name>.pfm.
        #[arg(long)]
        pred: PathBuf,
        /// Directory with images/<name>.png.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// `adjacent:K`, `all`, or `i-j,k-l`.
        #[arg(long, default_value = "adjacent:2")]
        pairs: String,
        #[arg(long, default_value_t = 2.0)]
        tau_cyc: f64,
        #[arg(long, default_value_t = 1.0)]
        dre_clamp: f64,
        #[arg(long, default_value = "scene")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset from a scene spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics under random camera rotations, references traced from the spec.
    RotateEval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Scene spec that produced the data; supplies ground truth.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,60,90")]
        thetas: Vec<f64>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "adjacent:2")]
        pairs: String,
        #[arg(long, default_value = "rotation_metrics.csv")]
        out: PathBuf,
    },
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Render { scene, poses: pose_file, out, tile_size } => {
            let scene = ply::read_scene(&scene)?;
            let entries = poses::read_poses(&pose_file)?;
            let opts = RenderOptions { tile_size, ..RenderOptions::default() };
            for sub in ["images", "depth", "normals", "alpha"] {
                mkdir(&out.join(sub))?;
            }
            for e in &entries {
                let r = omnisplat::render(&scene, &e.camera, &opts)?;
                png::write_rgb(&out.join("images").join(format!("{}.png", e.name)), &r.rgb)?;
                pfm::write_scalar(&out.join("depth").join(format!("{}.pfm", e.name)), &r.depth)?;
                png::write_normals(&out.join("normals").join(format!("{}.png", e.name)), &r.normal)?;
                pfm::write_scalar(&out.join("alpha").join(format!("{}.pfm", e.name)), &r.alpha)?;
                log::info!("rendered {}", e.name);
            }
            Ok(())
        }
        Cmd::Train { images, poses: pose_file, points, config, iterations, out } => {
            let cfg = match (config, iterations) {
                (Some(p), _) => TrainConfig::load(&p)?,
                (None, Some(n)) => TrainConfig::scaled(n),
                (None, None) => TrainConfig::default(),
            };
            let views = load_views(&images, &pose_file)?;
            let cloud = ply::read_point_cloud(&points)?;
            mkdir(&out)?;
            std::fs::write(out.join("config.toml"), cfg.to_toml_string()).map_err(|e| Error::io(&out, e))?;
            let scene = train_to_dir(&views, &cloud, &cfg, &out)?;
            log::info!("trained {} Gaussians into {}", scene.len(), out.join("scene.ply").display());
            Ok(())
        }
        Cmd::Eval { pred, gt, poses: pose_file, pairs, tau_cyc, dre_clamp, name, out } => {
            let entries = poses::read_poses(&pose_file)?;
            let cams: Vec<_> = entries.iter().map(|e| e.camera.clone()).collect();
            let mut pred_rgb = Vec::new();
            let mut pred_depth = Vec::new();
            let mut gt_rgb = Vec::new();
            for e in &entries {
                pred_rgb.push(png::read_rgb(&pred.join("images").join(format!("{}.png", e.name)))?);
                pred_depth.push(pfm::read_scalar(&pred.join("depth").join(format!("{}.pfm", e.name)))?);
                gt_rgb.push(png::read_rgb(&gt.join("images").join(format!("{}.png", e.name)))?);
            }
            let mut spec = ViewPairSpec::parse(&pairs, cams.len())?;
            spec.tau_cyc = tau_cyc;
            spec.error_clamp = dre_clamp;
            let inp = EvalInputs { cams: &cams, pred_rgb: &pred_rgb, pred_depth: &pred_depth, gt_rgb: &gt_rgb };
            let row = evaluate(&name, 0.0, &inp, &spec)?;
            println!("psnr {:.3} ssim {:.4} dre {:.5} cir {:.2} valid_px {}", row.psnr, row.ssim, row.dre, row.cir, row.valid_px);
            write_metrics_csv(&out, &[row], dre_clamp)
        }
        Cmd::Synth { spec, out } => {
            let scene = SyntheticScene::load(&spec)?;
            let ds = scene.generate()?;
            ds.write(&out)?;
            log::info!("{} training and {} held-out views in {}", ds.train.len(), ds.test.len(), out.display());
            Ok(())
        }
        Cmd::RotateEval { scene, poses: pose_file, spec, thetas, seed, pairs, out } => {
            let scene = ply::read_scene(&scene)?;
            let truth = SyntheticScene::load(&spec)?;
            let cams: Vec<_> = poses::read_poses(&pose_file)?.into_iter().map(|e| e.camera).collect();
            let pair_spec = ViewPairSpec::parse(&pairs, cams.len())?;
            let rows = rotation_eval(&scene, &truth, &cams, &thetas, seed, &RenderOptions::default(), &pair_spec)?;
            for r in &rows {
                println!("theta {:>5} psnr {:.3} ssim {:.4} dre {:.5} cir {:.2}", r.theta_deg, r.psnr, r.ssim, r.dre, r.cir);
            }
            write_metrics_csv(&out, &rows, pair_spec.error_clamp)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
