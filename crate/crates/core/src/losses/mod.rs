//! Training objective: photometric loss plus latitude-weighted depth-normal
//! consistency and first/second-order log-depth jump hinges.
//!
//! Geometric terms are evaluated on the opacity-valid set and normalized to
//! latitude-weighted means. Every term can also return its gradient with
//! respect to the rendered maps it reads.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::backward::PixelGrads;
use crate::camera::{latitude_weight, ErpCamera};
use crate::error::{Error, Result};
use crate::image::{Map, Mask, NormalMap, RgbMap, ScalarMap};
use crate::render::RenderOutput;
use crate::ssim::weighted_ssim;

/// Floor inside the log of depth.
pub const LOG_DEPTH_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_dn: f64,
    pub lambda_j1: f64,
    pub lambda_j2: f64,
    /// Opacity threshold of the valid mask.
    pub tau: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// Edge-aware weight sharpness.
    pub beta: f64,
    pub ssim_mix: f64,
    /// Floor of the latitude weight and of the horizontal ERP correction.
    pub lat_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dn: 0.03,
            lambda_j1: 0.45,
            lambda_j2: 0.32,
            tau: 0.5,
            tau1: 0.05,
            tau2: 0.02,
            beta: 10.0,
            ssim_mix: 0.2,
            lat_eps: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_dn,
            self.lambda_j1,
            self.lambda_j2,
            self.tau1,
            self.tau2,
            self.beta,
            self.ssim_mix,
            self.lat_eps,
        ];
        if all.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.ssim_mix > 1.0 || self.lat_eps > 1.0 {
            return Err(Error::config("ssim_mix and lat_eps must not exceed 1"));
        }
        Ok(())
    }
}

/// Multipliers applied on top of the loss weights at the current iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    pub jump: f64,
    pub dn: f64,
}

impl ScheduleState {
    pub const FULL: ScheduleState = ScheduleState { jump: 1.0, dn: 1.0 };
    pub const RGB_ONLY: ScheduleState = ScheduleState { jump: 0.0, dn: 0.0 };
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub rgb: f64,
    pub dn: f64,
    pub jump1: f64,
    pub jump2: f64,
    pub valid_pixel_count: usize,
}

/// Rows inside the camera's latitude band.
pub fn band_mask(cam: &ErpCamera) -> Mask {
    Map::from_fn(cam.width(), cam.height(), |_, v| cam.row_in_band(v))
}

/// Pixels with accumulated opacity above `tau`, inside the latitude band.
pub fn valid_mask(alpha: &ScalarMap, tau: f64, cam: &ErpCamera) -> Mask {
    Map::from_fn(alpha.width(), alpha.height(), |u, v| *alpha.get(u, v) > tau && cam.row_in_band(v))
}

fn lat_weights(height: usize, eps: f64) -> Vec<f64> {
    (0..height)
        .map(|v| latitude_weight(crate::camera::row_latitude(v, height), eps))
        .collect()
}

/// `(1 - mix) L1 + mix (1 - SSIM)` over `mask`, with the gradient with respect to `render`.
pub fn rgb_loss_grad(render: &RgbMap, gt: &RgbMap, mask: &Mask, ssim_mix: f64) -> Result<(f64, RgbMap)> {
    render.check_shape(gt)?;
    render.check_shape(mask)?;
    let mut grad = Map::filled(render.width(), render.height(), [0.0; 3]);
    let count = mask.count();
    if count == 0 {
        return Ok((0.0, grad));
    }
    let inv = 1.0 / count as f64;
    let mut l1 = 0.0;
    for i in 0..render.len() {
        if !mask.data()[i] {
            continue;
        }
        let (x, y) = (render.data()[i], gt.data()[i]);
        for c in 0..3 {
            let d = x[c] - y[c];
            l1 += d.abs();
            grad.data_mut()[i][c] = (1.0 - ssim_mix) * d.signum() * inv / 3.0;
        }
    }
    l1 *= inv / 3.0;
    let mut loss = (1.0 - ssim_mix) * l1;
    if ssim_mix > 0.0 {
        let weights = mask.map(|&m| if m { inv } else { 0.0 });
        let (s, g) = weighted_ssim(render, gt, &weights, true)?;
        loss += ssim_mix * (1.0 - s).max(0.0);
        let g = g.expect("gradient requested");
        for (a, b) in grad.data_mut().iter_mut().zip(g.data()) {
            for c in 0..3 {
                a[c] -= ssim_mix * b[c];
            }
        }
    }
    Ok((loss, grad))
}

pub fn rgb_loss(render: &RgbMap, gt: &RgbMap, mask: &Mask, ssim_mix: f64) -> Result<f64> {
    Ok(rgb_loss_grad(render, gt, mask, ssim_mix)?.0)
}

/// Depth-induced normals and the pixels where they are defined.
#[derive(Clone, Debug)]
pub struct DepthNormals {
    pub normal: NormalMap,
    pub valid: Mask,
    /// Unnormalized cross products, oriented like `normal`.
    cross: Vec<Vector3<f64>>,
    points: Vec<Vector3<f64>>,
    rays: Vec<Vector3<f64>>,
}

/// Normals of the point cloud `center + depth * ray` from forward differences
/// (longitude wraps), oriented toward the camera. Pixels whose stencil leaves
/// `mask` or the image are invalid.
pub fn depth_to_normal(depth: &ScalarMap, cam: &ErpCamera, mask: &Mask) -> Result<DepthNormals> {
    depth.check_shape(mask)?;
    if depth.width() != cam.width() || depth.height() != cam.height() {
        return Err(Error::Shape {
            expected: format!("{}x{}", cam.width(), cam.height()),
            actual: format!("{}x{}", depth.width(), depth.height()),
        });
    }
    let (w, h) = (cam.width(), cam.height());
    let rays: Vec<Vector3<f64>> = (0..w * h)
        .map(|i| cam.ray_through((i % w) as f64 + 0.5, (i / w) as f64 + 0.5))
        .collect();
    let points: Vec<Vector3<f64>> = (0..w * h).map(|i| cam.center() + rays[i] * depth.data()[i]).collect();
    let mut normal = Map::filled(w, h, Vector3::zeros());
    let mut valid = Map::filled(w, h, false);
    let mut cross = vec![Vector3::zeros(); w * h];
    for v in 0..h.saturating_sub(1) {
        for u in 0..w {
            let i = v * w + u;
            let right = v * w + (u + 1) % w;
            let down = i + w;
            if !(mask.data()[i] && mask.data()[right] && mask.data()[down]) {
                continue;
            }
            let dx = points[right] - points[i];
            let dy = points[down] - points[i];
            let mut c = dx.cross(&dy);
            let n = c.norm();
            if !(n > 1e-12) {
                continue;
            }
            if c.dot(&rays[i]) > 0.0 {
                c = -c;
            }
            cross[i] = c;
            normal.data_mut()[i] = c / n;
            valid.data_mut()[i] = true;
        }
    }
    Ok(DepthNormals {
        normal,
        valid,
        cross,
        points,
        rays,
    })
}

/// Latitude-weighted mean of `1 - |N . N^d|` over the valid depth normals,
/// with gradients with respect to `normal` and `depth`.
pub fn dn_loss_grad(
    normal: &NormalMap,
    dnorm: &DepthNormals,
    lat_eps: f64,
) -> Result<(f64, NormalMap, ScalarMap)> {
    normal.check_shape(&dnorm.normal)?;
    let (w, h) = (normal.width(), normal.height());
    let lat = lat_weights(h, lat_eps);
    let mut g_n = Map::filled(w, h, Vector3::zeros());
    let mut g_d = Map::filled(w, h, 0.0);
    let norm: f64 = (0..w * h).filter(|&i| dnorm.valid.data()[i]).map(|i| lat[i / w]).sum();
    if norm == 0.0 {
        return Ok((0.0, g_n, g_d));
    }
    let mut g_p = vec![Vector3::zeros(); w * h];
    let mut loss = 0.0;
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if !dnorm.valid.data()[i] {
                continue;
            }
            let wt = lat[v] / norm;
            let n = normal.data()[i];
            let nd = dnorm.normal.data()[i];
            let dot = n.dot(&nd);
            loss += wt * (1.0 - dot.abs());
            let s = -wt * dot.signum();
            g_n.data_mut()[i] = nd * s;
            // through the normalized cross product c = dx x dy (orientation folded into c)
            let c = dnorm.cross[i];
            let cn = c.norm();
            let mut g_c = (n - nd * nd.dot(&n)) * (s / cn);
            let right = v * w + (u + 1) % w;
            let down = i + w;
            let dx = dnorm.points[right] - dnorm.points[i];
            let dy = dnorm.points[down] - dnorm.points[i];
            if dx.cross(&dy).dot(&c) < 0.0 {
                g_c = -g_c;
            }
            let g_dx = dy.cross(&g_c);
            let g_dy = g_c.cross(&dx);
            g_p[right] += g_dx;
            g_p[down] += g_dy;
            g_p[i] -= g_dx + g_dy;
        }
    }
    for i in 0..w * h {
        g_d.data_mut()[i] = dnorm.rays[i].dot(&g_p[i]);
    }
    Ok((loss, g_n, g_d))
}

pub fn dn_loss(normal: &NormalMap, dnorm: &DepthNormals, lat_eps: f64) -> Result<f64> {
    Ok(dn_loss_grad(normal, dnorm, lat_eps)?.0)
}

/// Inputs shared by both jump terms.
pub struct JumpInputs<'a> {
    pub depth: &'a ScalarMap,
    /// Ground-truth panorama for the edge-aware weights.
    pub image: &'a RgbMap,
    pub mask: &'a Mask,
    pub beta: f64,
    pub lat_eps: f64,
}

struct JumpPrep {
    w: usize,
    h: usize,
    z: Vec<f64>,
    /// dz/dD
    dz: Vec<f64>,
    wx: Vec<f64>,
    wy: Vec<f64>,
    lat: Vec<f64>,
    /// 1 / max(cos lat, eps) per row
    corr: Vec<f64>,
}

fn jump_prep(inp: &JumpInputs) -> Result<JumpPrep> {
    inp.depth.check_shape(inp.image)?;
    inp.depth.check_shape(inp.mask)?;
    let (w, h) = (inp.depth.width(), inp.depth.height());
    let z = inp.depth.data().iter().map(|&d| d.max(LOG_DEPTH_EPS).ln()).collect();
    let dz = inp
        .depth
        .data()
        .iter()
        .map(|&d| if d > LOG_DEPTH_EPS { 1.0 / d } else { 0.0 })
        .collect();
    let gray = inp.image.gray();
    let g = gray.data();
    let mut wx = vec![0.0; w * h];
    let mut wy = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            wx[i] = (-inp.beta * (g[v * w + (u + 1) % w] - g[i]).abs()).exp();
            if v + 1 < h {
                wy[i] = (-inp.beta * (g[i + w] - g[i]).abs()).exp();
            }
        }
    }
    let lat: Vec<f64> = (0..h)
        .map(|v| crate::camera::row_latitude(v, h))
        .collect();
    Ok(JumpPrep {
        w,
        h,
        z,
        dz,
        wx,
        wy,
        corr: lat.iter().map(|l| 1.0 / l.cos().max(inp.lat_eps)).collect(),
        lat: lat.iter().map(|&l| latitude_weight(l, inp.lat_eps)).collect(),
    })
}

/// Hinge `max(|x| - tau, 0)` and its derivative.
fn hinge(x: f64, tau: f64) -> (f64, f64) {
    if x.abs() > tau {
        (x.abs() - tau, x.signum())
    } else {
        (0.0, 0.0)
    }
}

/// First-order log-depth jump hinge with its gradient with respect to depth.
pub fn jump1_loss_grad(inp: &JumpInputs, tau1: f64) -> Result<(f64, ScalarMap)> {
    let p = jump_prep(inp)?;
    let (w, h) = (p.w, p.h);
    let m = inp.mask.data();
    let mut total = 0.0;
    let mut norm = 0.0;
    let mut terms: Vec<(usize, usize, f64)> = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if !m[i] {
                continue;
            }
            let right = v * w + (u + 1) % w;
            let mut any = false;
            let mut value = 0.0;
            if m[right] {
                any = true;
                let (e, s) = hinge((p.z[right] - p.z[i]) * p.corr[v], tau1);
                value += p.wx[i] * e;
                terms.push((right, i, p.lat[v] * p.wx[i] * s * p.corr[v]));
            }
            if v + 1 < h && m[i + w] {
                any = true;
                let (e, s) = hinge(p.z[i + w] - p.z[i], tau1);
                value += p.wy[i] * e;
                terms.push((i + w, i, p.lat[v] * p.wy[i] * s));
            }
            if any {
                total += p.lat[v] * value;
                norm += p.lat[v];
            }
        }
    }
    finish_jump(&p, total, norm, &terms)
}

/// Second-order log-depth jump hinge with its gradient with respect to depth.
pub fn jump2_loss_grad(inp: &JumpInputs, tau2: f64) -> Result<(f64, ScalarMap)> {
    let p = jump_prep(inp)?;
    let (w, h) = (p.w, p.h);
    let m = inp.mask.data();
    let mut total = 0.0;
    let mut norm = 0.0;
    let mut terms: Vec<(usize, usize, usize, f64)> = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if !m[i] {
                continue;
            }
            let right = v * w + (u + 1) % w;
            let left = v * w + (u + w - 1) % w;
            let mut any = false;
            let mut value = 0.0;
            if m[right] && m[left] {
                any = true;
                let (e, s) = hinge((p.z[right] - 2.0 * p.z[i] + p.z[left]) * p.corr[v], tau2);
                value += p.wx[i] * e;
                terms.push((right, left, i, p.lat[v] * p.wx[i] * s * p.corr[v]));
            }
            if v > 0 && v + 1 < h && m[i + w] && m[i - w] {
                any = true;
                let (e, s) = hinge(p.z[i + w] - 2.0 * p.z[i] + p.z[i - w], tau2);
                value += p.wy[i] * e;
                terms.push((i + w, i - w, i, p.lat[v] * p.wy[i] * s));
            }
            if any {
                total += p.lat[v] * value;
                norm += p.lat[v];
            }
        }
    }
    let pairs: Vec<(usize, usize, f64)> = terms
        .iter()
        .flat_map(|&(a, b, c, g)| [(a, c, g), (b, c, g)])
        .collect();
    finish_jump(&p, total, norm, &pairs)
}

/// Normalizes and scatters `(plus, minus, coeff)` difference terms into a depth gradient.
fn finish_jump(
    p: &JumpPrep,
    total: f64,
    norm: f64,
    terms: &[(usize, usize, f64)],
) -> Result<(f64, ScalarMap)> {
    if norm == 0.0 {
        return Ok((0.0, Map::filled(p.w, p.h, 0.0)));
    }
    let mut gz = vec![0.0; p.w * p.h];
    for &(plus, minus, g) in terms {
        gz[plus] += g / norm;
        gz[minus] -= g / norm;
    }
    let grad = gz.iter().zip(&p.dz).map(|(g, d)| g * d).collect();
    Ok((total / norm, Map::from_vec(p.w, p.h, grad)?))
}

pub fn jump1_loss(inp: &JumpInputs, tau1: f64) -> Result<f64> {
    Ok(jump1_loss_grad(inp, tau1)?.0)
}

pub fn jump2_loss(inp: &JumpInputs, tau2: f64) -> Result<f64> {
    Ok(jump2_loss_grad(inp, tau2)?.0)
}

/// Full objective for one view and its gradient with respect to the render.
pub fn total_loss_grad(
    render: &RenderOutput,
    gt: &RgbMap,
    cam: &ErpCamera,
    weights: &LossWeights,
    schedule: ScheduleState,
) -> Result<(LossBreakdown, PixelGrads)> {
    let (w, h) = (render.width(), render.height());
    let mut grads = PixelGrads::zeros(w, h);
    let band = band_mask(cam);
    let omega = valid_mask(&render.alpha, weights.tau, cam);

    let (rgb, g_rgb) = rgb_loss_grad(&render.rgb, gt, &band, weights.ssim_mix)?;
    grads.rgb = g_rgb;

    let dnorm = depth_to_normal(&render.depth, cam, &omega)?;
    let (dn, g_n, g_dd) = dn_loss_grad(&render.normal, &dnorm, weights.lat_eps)?;
    let k_dn = schedule.dn * weights.lambda_dn;
    if k_dn > 0.0 {
        for i in 0..w * h {
            grads.normal.data_mut()[i] = g_n.data()[i] * k_dn;
            grads.depth.data_mut()[i] += g_dd.data()[i] * k_dn;
        }
    }

    let inp = JumpInputs {
        depth: &render.depth,
        image: gt,
        mask: &omega,
        beta: weights.beta,
        lat_eps: weights.lat_eps,
    };
    let (jump1, g_j1) = jump1_loss_grad(&inp, weights.tau1)?;
    let (jump2, g_j2) = jump2_loss_grad(&inp, weights.tau2)?;
    let (k1, k2) = (schedule.jump * weights.lambda_j1, schedule.jump * weights.lambda_j2);
    if k1 > 0.0 || k2 > 0.0 {
        for i in 0..w * h {
            grads.depth.data_mut()[i] += k1 * g_j1.data()[i] + k2 * g_j2.data()[i];
        }
    }

    let breakdown = LossBreakdown {
        total: rgb + k_dn * dn + k1 * jump1 + k2 * jump2,
        rgb,
        dn,
        jump1,
        jump2,
        valid_pixel_count: omega.count(),
    };
    Ok((breakdown, grads))
}

pub fn total_loss(
    render: &RenderOutput,
    gt: &RgbMap,
    cam: &ErpCamera,
    weights: &LossWeights,
    schedule: ScheduleState,
) -> Result<LossBreakdown> {
    Ok(total_loss_grad(render, gt, cam, weights, schedule)?.0)
}

#[cfg(test)]
mod tests;
