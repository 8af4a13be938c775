//! Photometric and cross-view geometric metrics.

use nalgebra::Vector3;

use crate::camera::ErpCamera;
use crate::error::{Error, Result};
use crate::image::{Mask, RgbMap, ScalarMap};

pub use crate::ssim::ssim;

/// Reported for identical images.
pub const PSNR_MAX: f64 = 100.0;

/// `10 log10(1 / MSE)` over masked pixels and all channels, peak 1.
pub fn psnr(a: &RgbMap, b: &RgbMap, mask: Option<&Mask>) -> Result<f64> {
    a.check_shape(b)?;
    if let Some(m) = mask {
        a.check_shape(m)?;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (pa, pb)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.is_some_and(|m| !m.data()[i]) {
            continue;
        }
        for c in 0..3 {
            sum += (pa[c] - pb[c]).powi(2);
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::domain("PSNR over an empty mask"));
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 { PSNR_MAX } else { (-10.0 * mse.log10()).min(PSNR_MAX) })
}

/// Back-projects pixel `(u, v)` of view i at radial depth `d` and projects it
/// into view j. Returns the continuous pixel in j and the radial depth there.
pub fn reproject(u: f64, v: f64, d: f64, cam_i: &ErpCamera, cam_j: &ErpCamera) -> Option<((f64, f64), f64)> {
    let p = cam_i.center() + cam_i.ray_through(u, v) * d;
    let dist = (p - cam_j.center()).norm();
    if !(dist > 0.0) {
        return None;
    }
    let px = cam_j.project_point(&p).ok()?;
    Some((px, dist))
}

/// Bilinear depth lookup at continuous pixel coordinates, wrapping in `u`
/// and clamping rows. `None` when any of the four taps has no depth.
pub fn sample_depth(depth: &ScalarMap, u: f64, v: f64) -> Option<f64> {
    let (w, h) = (depth.width(), depth.height());
    let x = u - 0.5;
    let y = (v - 0.5).clamp(0.0, (h - 1) as f64);
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let xi0 = (x0 as i64).rem_euclid(w as i64) as usize;
    let xi1 = (xi0 + 1) % w;
    let yi0 = y0 as usize;
    let yi1 = (yi0 + 1).min(h - 1);
    let taps = [
        (*depth.get(xi0, yi0), (1.0 - fx) * (1.0 - fy)),
        (*depth.get(xi1, yi0), fx * (1.0 - fy)),
        (*depth.get(xi0, yi1), (1.0 - fx) * fy),
        (*depth.get(xi1, yi1), fx * fy),
    ];
    let mut acc = 0.0;
    for (d, wt) in taps {
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        acc += d * wt;
    }
    Some(acc)
}

/// Ordered view pairs and thresholds for DRE and CIR.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPairSpec {
    pub pairs: Vec<(usize, usize)>,
    /// Floor in the denominator of the relative error.
    pub eps_dre: f64,
    /// Per-pixel relative errors are clamped to this before averaging.
    pub error_clamp: f64,
    /// Cycle inlier radius in pixels.
    pub tau_cyc: f64,
}

pub const DEFAULT_EPS_DRE: f64 = 1e-6;
pub const DEFAULT_TAU_CYC: f64 = 2.0;

impl ViewPairSpec {
    pub fn new(pairs: Vec<(usize, usize)>, views: usize) -> Result<Self> {
        for &(i, j) in &pairs {
            if i == j || i >= views || j >= views {
                return Err(Error::config(format!("invalid view pair ({i}, {j}) for {views} views")));
            }
        }
        Ok(Self {
            pairs,
            eps_dre: DEFAULT_EPS_DRE,
            error_clamp: 1.0,
            tau_cyc: DEFAULT_TAU_CYC,
        })
    }

    /// Every ordered pair with `1 <= |i - j| <= k`.
    pub fn adjacent(views: usize, k: usize) -> Self {
        let mut pairs = Vec::new();
        for i in 0..views {
            for j in 0..views {
                if i != j && i.abs_diff(j) <= k {
                    pairs.push((i, j));
                }
            }
        }
        Self::new(pairs, views).expect("adjacent pairs are valid")
    }

    /// Parses `adjacent:K`, `all`, or a comma list like `0-1,2-0`.
    pub fn parse(text: &str, views: usize) -> Result<Self> {
        let text = text.trim();
        if let Some(k) = text.strip_prefix("adjacent:") {
            let k: usize = k.parse().map_err(|_| Error::config(format!("bad pair spec {text:?}")))?;
            return Ok(Self::adjacent(views, k));
        }
        if text == "all" {
            return Ok(Self::adjacent(views, views));
        }
        let pairs = text
            .split(',')
            .map(|p| {
                let (a, b) = p.split_once('-').ok_or_else(|| Error::config(format!("bad pair {p:?}")))?;
                let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::config(format!("bad pair {p:?}")));
                Ok((parse(a)?, parse(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pairs, views)
    }
}

/// Pooled DRE and CIR over the valid pixels of all pairs. Both are NaN when
/// nothing is valid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Consistency {
    pub dre: f64,
    /// Percentage in `[0, 100]`.
    pub cir: f64,
    pub valid_px: usize,
}

fn wrapped_pixel_distance(a: (f64, f64), b: (f64, f64), width: usize) -> f64 {
    let w = width as f64;
    let mut du = (a.0 - b.0).rem_euclid(w);
    if du > w / 2.0 {
        du = w - du;
    }
    du.hypot(a.1 - b.1)
}

struct PairSums {
    err: f64,
    inliers: usize,
    valid: usize,
}

fn pair_sums(di: &ScalarMap, dj: &ScalarMap, ci: &ErpCamera, cj: &ErpCamera, spec: &ViewPairSpec) -> PairSums {
    let mut s = PairSums { err: 0.0, inliers: 0, valid: 0 };
    for v in 0..di.height() {
        if !ci.row_in_band(v) {
            continue;
        }
        for u in 0..di.width() {
            let d = *di.get(u, v);
            if !(d > 0.0 && d.is_finite()) {
                continue;
            }
            let (uc, vc) = (u as f64 + 0.5, v as f64 + 0.5);
            let Some(((uj, vj), d_proj)) = reproject(uc, vc, d, ci, cj) else { continue };
            if let Some((lo, hi)) = cj.lat_band() {
                let lat = (cj.height() as f64 / 2.0 - vj) * std::f64::consts::PI / cj.height() as f64;
                if lat < lo || lat > hi {
                    continue;
                }
            }
            let Some(d_j) = sample_depth(dj, uj, vj) else { continue };
            let Some((back, _)) = reproject(uj, vj, d_j, cj, ci) else { continue };
            s.valid += 1;
            s.err += ((d_proj - d_j).abs() / (d_j + spec.eps_dre)).min(spec.error_clamp);
            if wrapped_pixel_distance(back, (uc, vc), di.width()) < spec.tau_cyc {
                s.inliers += 1;
            }
        }
    }
    s
}

/// Depth reprojection error and cycle inlier ratio over `spec.pairs`.
pub fn consistency(depths: &[ScalarMap], cams: &[ErpCamera], spec: &ViewPairSpec) -> Result<Consistency> {
    if depths.len() != cams.len() {
        return Err(Error::Shape {
            expected: format!("{} depth maps", cams.len()),
            actual: depths.len().to_string(),
        });
    }
    for (d, c) in depths.iter().zip(cams) {
        if d.width() != c.width() || d.height() != c.height() {
            return Err(Error::Shape {
                expected: format!("{}x{}", c.width(), c.height()),
                actual: format!("{}x{}", d.width(), d.height()),
            });
        }
    }
    ViewPairSpec::new(spec.pairs.clone(), cams.len())?;
    use rayon::prelude::*;
    let sums: Vec<PairSums> = spec
        .pairs
        .par_iter()
        .map(|&(i, j)| pair_sums(&depths[i], &depths[j], &cams[i], &cams[j], spec))
        .collect();
    let (mut err, mut inl, mut valid) = (0.0, 0, 0);
    for s in &sums {
        err += s.err;
        inl += s.inliers;
        valid += s.valid;
    }
    if valid == 0 {
        return Ok(Consistency { dre: f64::NAN, cir: f64::NAN, valid_px: 0 });
    }
    Ok(Consistency {
        dre: err / valid as f64,
        cir: 100.0 * inl as f64 / valid as f64,
        valid_px: valid,
    })
}

pub fn dre(depths: &[ScalarMap], cams: &[ErpCamera], spec: &ViewPairSpec) -> Result<f64> {
    Ok(consistency(depths, cams, spec)?.dre)
}

pub fn cir(depths: &[ScalarMap], cams: &[ErpCamera], spec: &ViewPairSpec) -> Result<f64> {
    Ok(consistency(depths, cams, spec)?.cir)
}

/// Point at radial depth `d` along the ray through pixel `(u, v)`.
pub fn back_project(cam: &ErpCamera, u: f64, v: f64, d: f64) -> Vector3<f64> {
    cam.center() + cam.ray_through(u, v) * d
}
