//! Analytic gradients of per-pixel render outputs with respect to every
//! trained Gaussian parameter.
//!
//! Each ray is re-composited front to back to recover its contributions and
//! then walked in reverse with suffix sums of the composited features. Per
//! tile partial sums are reduced in tile order, so results do not depend on
//! the thread count. Filter radii are treated as constants.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::Result;
use crate::gaussian::{sh_color_raw, sigmoid, Gaussian3D};
use crate::image::{Map, NormalMap, RgbMap, ScalarMap};
use crate::render::{composite, Contribution, RenderContext};
use crate::sh::{self, MAX_COEFFS};

/// Number of scalar parameters per Gaussian in the flat layout used by
/// [`param_mut`] and [`GaussianGrad::get`]: mean (3), quaternion (4),
/// log-scales (3), opacity logit (1), SH (16 x 3).
pub const PARAMS_PER_GAUSSIAN: usize = 11 + 3 * MAX_COEFFS;

/// Flat index ranges of each parameter group.
pub const MEAN: std::ops::Range<usize> = 0..3;
pub const ROTATION: std::ops::Range<usize> = 3..7;
pub const LOG_SCALES: std::ops::Range<usize> = 7..10;
pub const OPACITY: std::ops::Range<usize> = 10..11;
pub const SH_DC: std::ops::Range<usize> = 11..14;
pub const SH_REST: std::ops::Range<usize> = 14..PARAMS_PER_GAUSSIAN;

/// Mutable access to parameter `k` of `g` in the flat layout.
pub fn param_mut(g: &mut Gaussian3D, k: usize) -> &mut f64 {
    match k {
        0..3 => &mut g.mean[k],
        3..7 => &mut g.rotation[k - 3],
        7..10 => &mut g.log_scales[k - 7],
        10 => &mut g.opacity_logit,
        _ => {
            let j = k - 11;
            &mut g.sh[j / 3][j % 3]
        }
    }
}

/// Upstream gradients of the loss with respect to the rendered maps.
#[derive(Clone, Debug)]
pub struct PixelGrads {
    pub rgb: RgbMap,
    /// With respect to median depth.
    pub depth: ScalarMap,
    /// With respect to the normalized rendered normal.
    pub normal: NormalMap,
    pub alpha: ScalarMap,
}

impl PixelGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            rgb: Map::filled(width, height, [0.0; 3]),
            depth: Map::filled(width, height, 0.0),
            normal: Map::filled(width, height, Vector3::zeros()),
            alpha: Map::filled(width, height, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrad {
    pub mean: Vector3<f64>,
    pub rotation: [f64; 4],
    pub log_scales: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: [[f64; 3]; MAX_COEFFS],
}

impl Default for GaussianGrad {
    fn default() -> Self {
        Self {
            mean: Vector3::zeros(),
            rotation: [0.0; 4],
            log_scales: Vector3::zeros(),
            opacity_logit: 0.0,
            sh: [[0.0; 3]; MAX_COEFFS],
        }
    }
}

impl GaussianGrad {
    pub fn get(&self, k: usize) -> f64 {
        match k {
            0..3 => self.mean[k],
            3..7 => self.rotation[k - 3],
            7..10 => self.log_scales[k - 7],
            10 => self.opacity_logit,
            _ => {
                let j = k - 11;
                self.sh[j / 3][j % 3]
            }
        }
    }

    pub fn add_assign(&mut self, other: &GaussianGrad) {
        self.mean += other.mean;
        for k in 0..4 {
            self.rotation[k] += other.rotation[k];
        }
        self.log_scales += other.log_scales;
        self.opacity_logit += other.opacity_logit;
        for (a, b) in self.sh.iter_mut().zip(&other.sh) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        (0..PARAMS_PER_GAUSSIAN).all(|k| self.get(k).is_finite())
    }
}

/// Gradients for every Gaussian of a scene from one view.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGrad {
    pub gaussians: Vec<GaussianGrad>,
    /// Whether the Gaussian contributed to at least one pixel.
    pub visible: Vec<bool>,
}

impl SceneGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            gaussians: vec![GaussianGrad::default(); n],
            visible: vec![false; n],
        }
    }

    pub fn add_assign(&mut self, other: &SceneGrad) {
        for (a, b) in self.gaussians.iter_mut().zip(&other.gaussians) {
            a.add_assign(b);
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= b;
        }
    }
}

/// Intermediate sums, one per candidate slot of a tile.
#[derive(Clone, Copy, Default)]
struct Acc {
    /// dL/d o_loc
    g_o: Vector3<f64>,
    /// sum of dL/d r_loc (x) d
    g_mr: Matrix3<f64>,
    /// dL/d effective opacity
    g_opacity: f64,
    g_color: [f64; 3],
    /// dL/d of the unsigned normal axis
    g_normal: Vector3<f64>,
    hit: bool,
}

impl Acc {
    fn add(&mut self, o: &Acc) {
        self.g_o += o.g_o;
        self.g_mr += o.g_mr;
        self.g_opacity += o.g_opacity;
        for c in 0..3 {
            self.g_color[c] += o.g_color[c];
        }
        self.g_normal += o.g_normal;
        self.hit |= o.hit;
    }
}

/// Backpropagates `up` through the render described by `ctx`.
pub fn backward(ctx: &RenderContext, up: &PixelGrads) -> Result<SceneGrad> {
    let (w, h) = (ctx.cam.width(), ctx.cam.height());
    let shape = Map::filled(w, h, ());
    shape.check_shape(&up.rgb)?;
    shape.check_shape(&up.depth)?;
    shape.check_shape(&up.normal)?;
    shape.check_shape(&up.alpha)?;

    let per_tile: Vec<Vec<Acc>> = (0..ctx.tiles.lists.len())
        .into_par_iter()
        .map(|t| tile_backward(ctx, t, up))
        .collect();

    let n = ctx.scene.len();
    let mut acc = vec![Acc::default(); n];
    for (t, slots) in per_tile.iter().enumerate() {
        for (slot, a) in slots.iter().enumerate() {
            if a.hit {
                acc[ctx.ids[t][slot] as usize].add(a);
            }
        }
    }

    let mut out = SceneGrad::zeros(n);
    for (id, a) in acc.iter().enumerate() {
        if a.hit {
            out.gaussians[id] = finalize(ctx, id, a);
            out.visible[id] = true;
        }
    }
    Ok(out)
}

fn tile_backward(ctx: &RenderContext, t: usize, up: &PixelGrads) -> Vec<Acc> {
    let ids = &ctx.ids[t];
    let mut slots = vec![Acc::default(); ids.len()];
    if ids.is_empty() {
        return slots;
    }
    let mut contribs: Vec<Contribution> = Vec::new();
    let w = ctx.cam.width();
    for (u, v) in ctx.tile_pixels(t) {
        let i = v * w + u;
        let dc = up.rgb.data()[i];
        let dd = up.depth.data()[i];
        let dn = up.normal.data()[i];
        let da = up.alpha.data()[i];
        if dc == [0.0; 3] && dd == 0.0 && dn == Vector3::zeros() && da == 0.0 {
            continue;
        }
        let dir = ctx.cam.ray_through(u as f64 + 0.5, v as f64 + 0.5);
        let s = composite(&ctx.prepared, ids, &dir, &ctx.opts, Some(&mut contribs));
        if s.count == 0 {
            continue;
        }
        let n_len = s.normal_raw.norm();
        let g_nraw = if n_len > 1e-12 {
            (dn - s.normal * s.normal.dot(&dn)) / n_len
        } else {
            Vector3::zeros()
        };
        let t_final = 1.0 - s.alpha;
        let mut suffix_c = [0.0; 3];
        let mut suffix_n = Vector3::zeros();
        for (j, ct) in contribs.iter().enumerate().rev() {
            let hit = &ct.hit;
            let p = &ctx.prepared[ids[hit.slot as usize] as usize];
            let weight = hit.alpha * ct.trans;
            let acc = &mut slots[hit.slot as usize];
            acc.hit = true;
            for c in 0..3 {
                acc.g_color[c] += weight * dc[c];
            }
            acc.g_normal += g_nraw * (weight * hit.sign);

            let f_dot = (0..3).map(|c| dc[c] * p.color[c]).sum::<f64>() + g_nraw.dot(&hit.normal);
            let s_dot = (0..3).map(|c| dc[c] * suffix_c[c]).sum::<f64>() + g_nraw.dot(&suffix_n);
            let inv = 1.0 / (1.0 - hit.alpha);
            let d_alpha = ct.trans * f_dot - s_dot * inv + da * t_final * inv;
            for c in 0..3 {
                suffix_c[c] += weight * p.color[c];
            }
            suffix_n += hit.normal * weight;

            let mut d_q = 0.0;
            if !hit.capped {
                acc.g_opacity += d_alpha * hit.g;
                d_q = -0.5 * d_alpha * p.opacity * hit.g;
            }
            let d_t = if s.depth_index == Some(j) { dd } else { 0.0 };
            if d_q == 0.0 && d_t == 0.0 {
                continue;
            }
            let (a, b) = (hit.a, hit.b);
            let a2 = a * a;
            let d_a = d_q * b * b / a2 + d_t * b / a2;
            let d_b = -2.0 * d_q * b / a - d_t / a;
            let d_c = d_q;
            let d_r = hit.r_loc * (2.0 * d_a) + p.o_loc * d_b;
            acc.g_o += hit.r_loc * d_b + p.o_loc * (2.0 * d_c);
            acc.g_mr += d_r * dir.transpose();
        }
    }
    slots
}

/// Partial derivatives of the rotation matrix with respect to a unit quaternion `(w, x, y, z)`.
fn rotation_partials(q: &[f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = *q;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

fn finalize(ctx: &RenderContext, id: usize, a: &Acc) -> GaussianGrad {
    let g = &ctx.scene.gaussians[id];
    let p = &ctx.prepared[id];
    let origin = ctx.cam.center();
    let degree = ctx.scene.sh_degree;
    let mut out = GaussianGrad::default();

    let rel = origin - g.mean;
    let d_m = a.g_mr + a.g_o * rel.transpose();
    out.mean = -(p.m.transpose() * a.g_o);

    // view-dependent color
    let view = g.mean - origin;
    let len = view.norm();
    let vdir = if len > 0.0 { view / len } else { Vector3::z() };
    let mut basis = [0.0; MAX_COEFFS];
    sh::basis(&vdir, degree, &mut basis);
    let raw = sh_color_raw(&g.sh, &basis, degree);
    let gc: [f64; 3] = std::array::from_fn(|c| if (0.0..=1.0).contains(&raw[c]) { a.g_color[c] } else { 0.0 });
    let nk = sh::num_coeffs(degree);
    for k in 0..nk {
        for c in 0..3 {
            out.sh[k][c] = gc[c] * basis[k];
        }
    }
    if degree > 0 && len > 0.0 {
        let mut grads = [[0.0; 3]; MAX_COEFFS];
        sh::basis_grad(&vdir, degree, &mut grads);
        let mut d_v = Vector3::zeros();
        for k in 1..nk {
            let wk: f64 = (0..3).map(|c| gc[c] * g.sh[k][c]).sum();
            d_v += Vector3::from(grads[k]) * wk;
        }
        out.mean += (d_v - vdir * vdir.dot(&d_v)) / len;
    }

    // M = S~^-1 R^T, so M_ij = R_ji / s~_i
    let s = g.scales();
    let st = g.inflated_scales();
    let f2 = g.filter_radius * g.filter_radius;
    let mut d_r = Matrix3::<f64>::zeros();
    let mut d_st = Vector3::<f64>::zeros();
    for i in 0..3 {
        for j in 0..3 {
            d_st[i] -= d_m[(i, j)] * p.m[(i, j)] / st[i];
            d_r[(j, i)] = d_m[(i, j)] / st[i];
        }
    }
    let axis = g.normal_axis();
    for r in 0..3 {
        d_r[(r, axis)] += a.g_normal[r];
    }

    let o_eff = p.opacity;
    for i in 0..3 {
        let via_scale = d_st[i] * s[i] / st[i];
        let via_opacity = a.g_opacity * o_eff * f2 / (s[i] * st[i] * st[i]);
        out.log_scales[i] = s[i] * (via_scale + via_opacity);
    }
    out.opacity_logit = a.g_opacity * o_eff * (1.0 - sigmoid(g.opacity_logit));

    let qn = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let qh = g.rotation.map(|v| v / qn);
    let partials = rotation_partials(&qh);
    let d_qh: [f64; 4] = std::array::from_fn(|k| d_r.component_mul(&partials[k]).sum());
    let proj: f64 = (0..4).map(|k| qh[k] * d_qh[k]).sum();
    for k in 0..4 {
        out.rotation[k] = (d_qh[k] - qh[k] * proj) / qn;
    }
    out
}
