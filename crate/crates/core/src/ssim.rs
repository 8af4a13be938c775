//! Structural similarity with an 11x11 Gaussian window (sigma 1.5),
//! zero-padded "same" filtering, and its gradient.

use crate::error::Result;
use crate::image::{Map, RgbMap, ScalarMap};

const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - RADIUS as f64;
        *v = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter with zeros outside the image.
fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = kernel();
    let r = RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (i, kv) in k.iter().enumerate() {
            let yy = y as isize + i as isize - r;
            if yy < 0 || yy as usize >= h {
                continue;
            }
            let src_row = &tmp[yy as usize * w..(yy as usize + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] += kv * src_row[x];
            }
        }
    }
    out
}

struct Stats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn stats(x: &[f64], y: &[f64], w: usize, h: usize) -> Stats {
    let mu_x = blur(x, w, h);
    let mu_y = blur(y, w, h);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let var_x = blur(&xx, w, h).iter().zip(&mu_x).map(|(e, m)| e - m * m).collect();
    let var_y = blur(&yy, w, h).iter().zip(&mu_y).map(|(e, m)| e - m * m).collect();
    let cov = blur(&xy, w, h)
        .iter()
        .zip(mu_x.iter().zip(&mu_y))
        .map(|(e, (a, b))| e - a * b)
        .collect();
    Stats { mu_x, mu_y, var_x, var_y, cov }
}

/// Per-pixel SSIM of two single-channel images.
pub fn ssim_map(x: &ScalarMap, y: &ScalarMap) -> Result<ScalarMap> {
    x.check_shape(y)?;
    let (w, h) = (x.width(), x.height());
    let s = stats(x.data(), y.data(), w, h);
    let data = (0..w * h)
        .map(|i| {
            let a1 = 2.0 * s.mu_x[i] * s.mu_y[i] + C1;
            let a2 = 2.0 * s.cov[i] + C2;
            let b1 = s.mu_x[i] * s.mu_x[i] + s.mu_y[i] * s.mu_y[i] + C1;
            let b2 = s.var_x[i] + s.var_y[i] + C2;
            a1 * a2 / (b1 * b2)
        })
        .collect();
    Map::from_vec(w, h, data)
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(x: &RgbMap, y: &RgbMap) -> Result<f64> {
    let weights = Map::filled(x.width(), x.height(), 1.0 / x.len() as f64);
    Ok(weighted_ssim(x, y, &weights, false)?.0)
}

/// `sum_p weights(p) * mean_c SSIM_c(p)` and, when requested, its gradient
/// with respect to `x`.
pub fn weighted_ssim(x: &RgbMap, y: &RgbMap, weights: &ScalarMap, want_grad: bool) -> Result<(f64, Option<RgbMap>)> {
    x.check_shape(y)?;
    x.check_shape(weights)?;
    let (w, h) = (x.width(), x.height());
    let n = w * h;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Map::filled(w, h, [0.0; 3]));
    for c in 0..3 {
        let xc: Vec<f64> = x.data().iter().map(|p| p[c]).collect();
        let yc: Vec<f64> = y.data().iter().map(|p| p[c]).collect();
        let s = stats(&xc, &yc, w, h);
        let mut ga = vec![0.0; n];
        let mut gb = vec![0.0; n];
        let mut gc = vec![0.0; n];
        for i in 0..n {
            let wt = weights.data()[i] / 3.0;
            if wt == 0.0 {
                continue;
            }
            let (mx, my) = (s.mu_x[i], s.mu_y[i]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * s.cov[i] + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = s.var_x[i] + s.var_y[i] + C2;
            let val = a1 * a2 / (b1 * b2);
            total += wt * val;
            if grad.is_some() {
                let d_mu = 2.0 * my * a2 / (b1 * b2) - val * 2.0 * mx / b1;
                let d_var = -val / b2;
                let d_cov = 2.0 * a1 / (b1 * b2);
                ga[i] = wt * (d_mu - 2.0 * mx * d_var - my * d_cov);
                gb[i] = wt * d_var;
                gc[i] = wt * d_cov;
            }
        }
        if let Some(g) = grad.as_mut() {
            // the symmetric kernel makes the adjoint filter the same filter
            let (ba, bb, bc) = (blur(&ga, w, h), blur(&gb, w, h), blur(&gc, w, h));
            for i in 0..n {
                g.data_mut()[i][c] = ba[i] + 2.0 * xc[i] * bb[i] + yc[i] * bc[i];
            }
        }
    }
    Ok((total, grad))
}
