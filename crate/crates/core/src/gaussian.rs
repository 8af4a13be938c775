//! Gaussian primitives and their evaluation along rays.
//!
//! Each primitive has density `exp(-0.5 (x - mu)^T Sigma^-1 (x - mu))` with
//! `Sigma = R S S^T R^T`. A ray `o + t d` is mapped into the primitive's
//! whitened frame, `o_loc = S^-1 R^T (o - mu)`, `r_loc = S^-1 R^T d`, where the
//! density restricted to the ray becomes `exp(-0.5 (A t^2 + 2 B t + C))`.

use nalgebra::{Matrix3, Vector3};

use crate::camera::ErpCamera;
use crate::error::{Error, Result};
use crate::sh::{self, MAX_COEFFS, MAX_DEGREE};

/// One anisotropic Gaussian primitive.
///
/// Scales and opacity are stored in their unconstrained forms (log and
/// logit); the filter radius is an isotropic inflation term, not a trained
/// parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    /// Unit quaternion `(w, x, y, z)`; its columns are the principal axes.
    pub rotation: [f64; 4],
    pub log_scales: Vector3<f64>,
    pub opacity_logit: f64,
    /// Spherical-harmonic coefficients per RGB channel.
    pub sh: [[f64; 3]; MAX_COEFFS],
    pub filter_radius: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian3D {
    /// Builds a primitive from activated parameters and a base RGB color.
    pub fn new(
        mean: Vector3<f64>,
        rotation: [f64; 4],
        scales: Vector3<f64>,
        opacity: f64,
        rgb: [f64; 3],
    ) -> Result<Self> {
        if !scales.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::domain(format!("scales must be positive, got {scales:?}")));
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(Error::domain(format!("opacity must lie in (0, 1), got {opacity}")));
        }
        let qn = rotation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if !(qn > 0.0 && qn.is_finite()) {
            return Err(Error::domain("rotation quaternion must be nonzero"));
        }
        let mut sh = [[0.0; 3]; MAX_COEFFS];
        for c in 0..3 {
            sh[0][c] = sh::rgb_to_dc(rgb[c]);
        }
        Ok(Self {
            mean,
            rotation: rotation.map(|q| q / qn),
            log_scales: scales.map(f64::ln),
            opacity_logit: logit(opacity),
            sh,
            filter_radius: 0.0,
        })
    }

    /// Axis-aligned isotropic primitive; handy in tests.
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, rgb: [f64; 3]) -> Result<Self> {
        Self::new(mean, [1.0, 0.0, 0.0, 0.0], Vector3::repeat(scale), opacity, rgb)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scales.map(f64::exp)
    }

    /// Scales after isotropic inflation by the filter radius.
    pub fn inflated_scales(&self) -> Vector3<f64> {
        inflate_scales(&self.scales(), self.filter_radius)
    }

    /// Activated opacity before filter compensation.
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// Opacity used for compositing: activated, then rescaled for the filter's volume change.
    pub fn effective_opacity(&self) -> f64 {
        let s = self.scales();
        compensate_opacity(self.opacity(), &s, &inflate_scales(&s, self.filter_radius))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    /// Index of the principal axis with the smallest inflated scale.
    pub fn normal_axis(&self) -> usize {
        let s = self.log_scales;
        if s.x <= s.y && s.x <= s.z {
            0
        } else if s.y <= s.z {
            1
        } else {
            2
        }
    }

    /// Radius of the bounding sphere at `sigmas` standard deviations.
    pub fn support_radius(&self, sigmas: f64) -> f64 {
        sigmas * self.inflated_scales().max()
    }

    /// Matrix taking world offsets into the whitened local frame, `S^-1 R^T`.
    pub fn world_to_local(&self) -> Matrix3<f64> {
        let inv = self.inflated_scales().map(|s| 1.0 / s);
        Matrix3::from_diagonal(&inv) * self.rotation_matrix().transpose()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let finite = self.mean.iter().all(|x| x.is_finite())
            && self.log_scales.iter().all(|x| x.is_finite())
            && self.opacity_logit.is_finite()
            && self.filter_radius.is_finite()
            && self.sh.iter().flatten().all(|x| x.is_finite());
        if !finite {
            return Err(Error::domain("non-finite Gaussian parameter"));
        }
        let qn = self.rotation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if (qn - 1.0).abs() > 1e-6 {
            return Err(Error::domain(format!("quaternion norm {qn}")));
        }
        if self.filter_radius < 0.0 {
            return Err(Error::domain("negative filter radius"));
        }
        let o = self.opacity();
        if !(o > 0.0 && o < 1.0) {
            return Err(Error::domain(format!("opacity {o} outside (0, 1)")));
        }
        Ok(())
    }
}

/// Rotation matrix of a (not necessarily normalized) quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Ray expressed in a Gaussian's whitened frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalRay {
    pub o_loc: Vector3<f64>,
    pub r_loc: Vector3<f64>,
    /// `r_loc . r_loc`
    pub a: f64,
    /// `o_loc . r_loc`
    pub b: f64,
    /// `o_loc . o_loc`
    pub c: f64,
}

/// Maximum of the 1D response along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeakResponse {
    pub t_star: f64,
    pub g_max: f64,
    /// Squared Mahalanobis distance of the ray's closest point, `C - B^2/A`.
    pub mahalanobis_sq: f64,
}

impl LocalRay {
    pub fn from_parts(o_loc: Vector3<f64>, r_loc: Vector3<f64>) -> Self {
        Self {
            o_loc,
            r_loc,
            a: r_loc.dot(&r_loc),
            b: o_loc.dot(&r_loc),
            c: o_loc.dot(&o_loc),
        }
    }

    pub fn peak(&self) -> Result<PeakResponse> {
        if !(self.a > 0.0) {
            return Err(Error::domain(format!("ray quadratic needs A > 0, got {}", self.a)));
        }
        Ok(peak_from_coeffs(self.a, self.b, self.c))
    }

    /// `exp(-0.5 (A t^2 + 2 B t + C))`
    pub fn response_at(&self, t: f64) -> f64 {
        (-0.5 * (self.a * t * t + 2.0 * self.b * t + self.c)).exp()
    }
}

#[inline]
pub(crate) fn peak_from_coeffs(a: f64, b: f64, c: f64) -> PeakResponse {
    let t_star = -b / a;
    let q = (c - b * b / a).max(0.0);
    PeakResponse {
        t_star,
        g_max: (-0.5 * q).exp(),
        mahalanobis_sq: q,
    }
}

/// Transforms a world ray into `g`'s whitened frame (using inflated scales).
pub fn to_local_ray(g: &Gaussian3D, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Result<LocalRay> {
    let s = g.inflated_scales();
    if !s.iter().all(|&v| v > 0.0 && v.is_finite()) {
        return Err(Error::domain(format!("degenerate scales {s:?}")));
    }
    let m = g.world_to_local();
    Ok(LocalRay::from_parts(m * (origin - g.mean), m * dir))
}

/// Peak of the response along a ray.
pub fn peak_response(lr: &LocalRay) -> Result<PeakResponse> {
    lr.peak()
}

/// Isotropic filter radius from the angular pixel footprint of every camera.
pub fn filter_radius(g: &Gaussian3D, cams: &[ErpCamera], kappa: f64) -> Result<f64> {
    if cams.is_empty() {
        return Err(Error::domain("filter radius needs at least one camera"));
    }
    let mut best: Option<f64> = None;
    for cam in cams {
        if let Some(f) = footprint_candidate(&g.mean, cam) {
            best = Some(best.map_or(f, |b: f64| b.max(f)));
        }
    }
    best.map(|f| kappa * f)
        .ok_or_else(|| Error::domain("Gaussian coincides with every camera center"))
}

fn footprint_candidate(mean: &Vector3<f64>, cam: &ErpCamera) -> Option<f64> {
    let x = cam.world_to_camera(mean);
    let r = x.norm();
    if !(r > 0.0) {
        return None;
    }
    let lat = (-x.y / r).clamp(-1.0, 1.0).asin();
    let d_lat = std::f64::consts::PI / cam.height() as f64;
    let d_lon = std::f64::consts::TAU / cam.width() as f64 * lat.cos();
    Some(r * d_lat.max(d_lon))
}

/// `sqrt(s^2 + f^2)` per component.
pub fn inflate_scales(s: &Vector3<f64>, f: f64) -> Vector3<f64> {
    s.map(|v| (v * v + f * f).sqrt())
}

/// Rescales opacity by the volume ratio of the original and inflated scales.
pub fn compensate_opacity(o: f64, s: &Vector3<f64>, inflated: &Vector3<f64>) -> f64 {
    o * (s.x / inflated.x) * (s.y / inflated.y) * (s.z / inflated.z)
}

/// View-dependent color, clamped to `[0, 1]`.
pub fn eval_sh_color(g: &Gaussian3D, view_dir: &Vector3<f64>, degree: usize) -> Result<[f64; 3]> {
    if degree > MAX_DEGREE {
        return Err(Error::domain(format!(
            "SH degree {degree} exceeds stored degree {MAX_DEGREE}"
        )));
    }
    let mut basis = [0.0; MAX_COEFFS];
    sh::basis(view_dir, degree, &mut basis);
    Ok(sh_color_raw(&g.sh, &basis, degree).map(|c| c.clamp(0.0, 1.0)))
}

/// Unclamped `sum_k coeff_k Y_k + 0.5`.
pub(crate) fn sh_color_raw(
    coeffs: &[[f64; 3]; MAX_COEFFS],
    basis: &[f64; MAX_COEFFS],
    degree: usize,
) -> [f64; 3] {
    let mut out = [0.5; 3];
    for k in 0..sh::num_coeffs(degree) {
        for c in 0..3 {
            out[c] += coeffs[k][c] * basis[k];
        }
    }
    out
}

/// An ordered collection of primitives; ids are indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian3D>,
    pub sh_degree: usize,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian3D>, sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_DEGREE {
            return Err(Error::domain(format!("SH degree {sh_degree} > {MAX_DEGREE}")));
        }
        Ok(Self { gaussians, sh_degree })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Recomputes every filter radius from the given cameras.
    pub fn update_filter_radii(&mut self, cams: &[ErpCamera], kappa: f64) {
        for g in &mut self.gaussians {
            g.filter_radius = filter_radius(g, cams, kappa).unwrap_or(0.0);
        }
    }
}
