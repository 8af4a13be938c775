//! Image, geometry and rotation-robustness metrics plus synthetic scenes.

pub mod metrics;
pub mod synth;

use std::path::Path;

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::ErpCamera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianScene;
use crate::image::{Map, Mask, RgbMap, ScalarMap};
use crate::losses::band_mask;
use crate::render::{render, RenderOptions};
use metrics::{consistency, psnr, ssim, ViewPairSpec};
use synth::SyntheticScene;

/// One row of a metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub scene: String,
    pub theta_deg: f64,
    /// Mean over views.
    pub psnr: f64,
    pub ssim: f64,
    pub dre: f64,
    pub cir: f64,
    pub valid_px: usize,
}

pub const METRICS_HEADER: [&str; 9] = ["scene", "theta", "psnr", "ssim", "lpips", "dre", "cir", "valid_px", "dre_clamp"];

/// Predicted and reference images plus predicted depths for a set of cameras.
pub struct EvalInputs<'a> {
    pub cams: &'a [ErpCamera],
    pub pred_rgb: &'a [RgbMap],
    pub pred_depth: &'a [ScalarMap],
    pub gt_rgb: &'a [RgbMap],
}

/// PSNR and SSIM against the references (PSNR inside each latitude band)
/// and DRE/CIR of the predicted depths.
pub fn evaluate(scene: &str, theta_deg: f64, inp: &EvalInputs, pairs: &ViewPairSpec) -> Result<MetricRow> {
    let n = inp.cams.len();
    if n == 0 || inp.pred_rgb.len() != n || inp.pred_depth.len() != n || inp.gt_rgb.len() != n {
        return Err(Error::Shape {
            expected: format!("{n} views of every kind"),
            actual: format!("{} rgb, {} depth, {} references", inp.pred_rgb.len(), inp.pred_depth.len(), inp.gt_rgb.len()),
        });
    }
    let mut p = 0.0;
    let mut s = 0.0;
    for k in 0..n {
        let band: Mask = band_mask(&inp.cams[k]);
        p += psnr(&inp.pred_rgb[k], &inp.gt_rgb[k], Some(&band))?;
        s += ssim(&inp.pred_rgb[k], &inp.gt_rgb[k])?;
    }
    let c = if n > 1 {
        consistency(inp.pred_depth, inp.cams, pairs)?
    } else {
        metrics::Consistency { dre: f64::NAN, cir: f64::NAN, valid_px: 0 }
    };
    Ok(MetricRow {
        scene: scene.to_string(),
        theta_deg,
        psnr: p / n as f64,
        ssim: s / n as f64,
        dre: c.dre,
        cir: c.cir,
        valid_px: c.valid_px,
    })
}

/// Random rotation: axis uniform on the sphere, angle uniform in `[0, max]`.
pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation3<f64> {
    let axis = loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 1e-9 {
            break Unit::new_normalize(v);
        }
    };
    let angle = if max_angle > 0.0 { rng.random_range(0.0..=max_angle) } else { 0.0 };
    Rotation3::from_axis_angle(&axis, angle)
}

/// Cameras rotated in place by seeded random rotations of at most `theta_deg`.
pub fn rotated_cameras(cams: &[ErpCamera], theta_deg: f64, seed: u64) -> Vec<ErpCamera> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cams.iter()
        .map(|c| c.rotated_in_place(random_rotation(&mut rng, theta_deg.to_radians()).matrix()))
        .collect()
}

/// Renders `scene` and traces references at every rotated pose, for each angle bound.
pub fn rotation_eval(
    scene: &GaussianScene,
    truth: &SyntheticScene,
    cams: &[ErpCamera],
    thetas_deg: &[f64],
    seed: u64,
    opts: &RenderOptions,
    pairs: &ViewPairSpec,
) -> Result<Vec<MetricRow>> {
    let name = if truth.spec.name.is_empty() { "synthetic" } else { truth.spec.name.as_str() };
    thetas_deg
        .iter()
        .map(|&theta| {
            let rc = rotated_cameras(cams, theta, seed);
            let mut pred_rgb = Vec::new();
            let mut pred_depth = Vec::new();
            let mut gt_rgb = Vec::new();
            for c in &rc {
                let out = render(scene, c, opts)?;
                pred_rgb.push(out.rgb);
                pred_depth.push(out.depth);
                gt_rgb.push(truth.render(c)?.rgb);
            }
            let inp = EvalInputs { cams: &rc, pred_rgb: &pred_rgb, pred_depth: &pred_depth, gt_rgb: &gt_rgb };
            evaluate(name, theta, &inp, pairs)
        })
        .collect()
}

fn fmt_metric(x: f64) -> String {
    if x.is_nan() { "NA".to_string() } else { format!("{x:.6}") }
}

/// Writes rows with [`METRICS_HEADER`]; LPIPS is not computed and reported as `NA`.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow], dre_clamp: f64) -> Result<()> {
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(METRICS_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.scene.clone(),
            format!("{}", r.theta_deg),
            fmt_metric(r.psnr),
            fmt_metric(r.ssim),
            "NA".to_string(),
            fmt_metric(r.dre),
            fmt_metric(r.cir),
            r.valid_px.to_string(),
            format!("{dre_clamp}"),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Unused pixels of a depth map (background) are 0.
pub fn depth_mask(depth: &ScalarMap) -> Mask {
    Map::from_fn(depth.width(), depth.height(), |u, v| *depth.get(u, v) > 0.0)
}
