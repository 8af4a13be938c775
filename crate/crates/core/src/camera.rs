//! Equirectangular (ERP) camera model.
//!
//! Camera frame: `z` forward, `x` right, `y` down. Longitude is measured from
//! `z` towards `x`, latitude is positive above the horizon (towards `-y`).
//! Pixel `(u, v)` covers `[u, u+1) x [v, v+1)`; rays are cast through pixel
//! centers.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Longitude/latitude of a direction, in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalAngles {
    /// In `[-pi, pi]`.
    pub lon: f64,
    /// In `[-pi/2, pi/2]`.
    pub lat: f64,
}

/// A posed equirectangular camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ErpCamera {
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
    width: usize,
    height: usize,
    lat_band: Option<(f64, f64)>,
}

impl ErpCamera {
    /// `rotation` maps world directions into the camera frame.
    pub fn new(
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if width < 2 || height < 1 {
            return Err(Error::domain(format!(
                "ERP resolution must be at least 2x1, got {width}x{height}"
            )));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) || rotation.determinant() < 0.0 {
            return Err(Error::domain("camera rotation is not a proper rotation"));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(Error::domain("camera center is not finite"));
        }
        Ok(Self {
            rotation,
            center,
            width,
            height,
            lat_band: None,
        })
    }

    /// Camera at `center` with the identity orientation.
    pub fn identity(center: Vector3<f64>, width: usize, height: usize) -> Result<Self> {
        Self::new(Matrix3::identity(), center, width, height)
    }

    /// Builds a camera from a world-to-camera quaternion `(w, x, y, z)`.
    pub fn from_quaternion(
        q_wxyz: [f64; 4],
        center: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let q = Quaternion::new(q_wxyz[0], q_wxyz[1], q_wxyz[2], q_wxyz[3]);
        let norm = q.norm();
        if !(norm.is_finite() && (norm - 1.0).abs() < 1e-4) {
            return Err(Error::domain(format!(
                "pose quaternion must be unit length, got norm {norm}"
            )));
        }
        let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
        Self::new(*rot.matrix(), center, width, height)
    }

    /// Restricts losses and metrics to rows whose center latitude lies in `[lat_min, lat_max]`.
    pub fn with_lat_band(mut self, lat_min: f64, lat_max: f64) -> Result<Self> {
        if !(-FRAC_PI_2 <= lat_min && lat_min < lat_max && lat_max <= FRAC_PI_2) {
            return Err(Error::domain(format!(
                "invalid latitude band [{lat_min}, {lat_max}]"
            )));
        }
        self.lat_band = Some((lat_min, lat_max));
        Ok(self)
    }

    pub fn without_lat_band(mut self) -> Self {
        self.lat_band = None;
        self
    }

    /// Same camera with an extra rotation applied in its own frame
    /// (`R' = extra * R`); the center is unchanged.
    pub fn rotated_in_place(&self, extra: &Matrix3<f64>) -> Self {
        let mut out = self.clone();
        out.rotation = extra * self.rotation;
        out
    }

    /// Rotates the camera about its vertical axis by `angle` radians; pixel
    /// `u` of `self` sees what pixel `u + angle * W / 2pi` of the result sees.
    pub fn yawed(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let yaw = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        self.rotated_in_place(&yaw)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn lat_band(&self) -> Option<(f64, f64)> {
        self.lat_band
    }

    /// World-to-camera quaternion `(w, x, y, z)`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        [q.w, q.i, q.j, q.k]
    }

    pub fn world_to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (x - self.center)
    }

    /// Latitude of the center of pixel row `v`.
    pub fn row_latitude(&self, v: usize) -> f64 {
        row_latitude(v, self.height)
    }

    /// Whether row `v` lies inside the valid-latitude band (always true without a band).
    pub fn row_in_band(&self, v: usize) -> bool {
        match self.lat_band {
            None => true,
            Some((lo, hi)) => {
                let lat = self.row_latitude(v);
                lat >= lo && lat <= hi
            }
        }
    }

    /// World-space unit direction through the center of pixel `(u, v)`.
    pub fn pixel_to_ray(&self, u: usize, v: usize) -> Result<Vector3<f64>> {
        if u >= self.width || v >= self.height {
            return Err(Error::domain(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(self.ray_through(u as f64 + 0.5, v as f64 + 0.5))
    }

    /// World-space unit direction through continuous pixel coordinates.
    pub fn ray_through(&self, u: f64, v: f64) -> Vector3<f64> {
        let a = pixel_to_angles(u, v, self.width, self.height);
        self.rotation.transpose() * angles_to_dir(a)
    }

    /// Continuous pixel coordinates of a world point.
    pub fn project_point(&self, x: &Vector3<f64>) -> Result<(f64, f64)> {
        let d = self.world_to_camera(x);
        let a = dir_to_angles(&d)?;
        Ok(angles_to_pixel(a, self.width, self.height))
    }

    /// Derivatives of the world ray direction with respect to continuous
    /// pixel coordinates `u` and `v`.
    pub fn ray_pixel_jacobian(&self, u: f64, v: f64) -> (Vector3<f64>, Vector3<f64>) {
        let a = pixel_to_angles(u, v, self.width, self.height);
        let (slon, clon) = a.lon.sin_cos();
        let (slat, clat) = a.lat.sin_cos();
        let d_lon = Vector3::new(clon * clat, 0.0, -slon * clat) * (TAU / self.width as f64);
        let d_lat = Vector3::new(-slon * slat, -clat, -clon * slat) * (-PI / self.height as f64);
        let rt = self.rotation.transpose();
        (rt * d_lon, rt * d_lat)
    }
}

/// Longitude/latitude of a camera-frame direction. Exact poles get longitude 0.
pub fn dir_to_angles(d: &Vector3<f64>) -> Result<SphericalAngles> {
    let n = d.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::domain("direction must be a nonzero finite vector"));
    }
    let lat = (-d.y / n).clamp(-1.0, 1.0).asin();
    let lon = if d.x == 0.0 && d.z == 0.0 {
        0.0
    } else {
        d.x.atan2(d.z)
    };
    Ok(SphericalAngles { lon, lat })
}

/// Unit camera-frame direction for the given angles.
pub fn angles_to_dir(a: SphericalAngles) -> Vector3<f64> {
    let (slon, clon) = a.lon.sin_cos();
    let (slat, clat) = a.lat.sin_cos();
    Vector3::new(slon * clat, -slat, clon * clat)
}

/// Continuous ERP pixel coordinates of the given angles.
pub fn angles_to_pixel(a: SphericalAngles, width: usize, height: usize) -> (f64, f64) {
    let w = width as f64;
    let h = height as f64;
    (w / TAU * a.lon + w / 2.0, -h / PI * a.lat + h / 2.0)
}

/// Inverse of [`angles_to_pixel`].
pub fn pixel_to_angles(u: f64, v: f64, width: usize, height: usize) -> SphericalAngles {
    let w = width as f64;
    let h = height as f64;
    SphericalAngles {
        lon: (u - w / 2.0) * TAU / w,
        lat: (h / 2.0 - v) * PI / h,
    }
}

/// Latitude of the center of row `v` in an image of `height` rows.
pub fn row_latitude(v: usize, height: usize) -> f64 {
    (0.5 - (v as f64 + 0.5) / height as f64) * PI
}

/// Latitude weight `clamp(cos(lat), eps, 1)`.
pub fn latitude_weight(lat: f64, eps: f64) -> f64 {
    lat.cos().clamp(eps, 1.0)
}

/// Longitude coverage of a [`CapBounds`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LonRange {
    Full,
    /// `lo`, `hi` in `[-pi, pi]`; when `lo > hi` the interval wraps through `+-pi`.
    Interval { lo: f64, hi: f64 },
}

impl LonRange {
    pub fn contains(&self, lon: f64) -> bool {
        match *self {
            LonRange::Full => true,
            LonRange::Interval { lo, hi } if lo <= hi => lon >= lo && lon <= hi,
            LonRange::Interval { lo, hi } => lon >= lo || lon <= hi,
        }
    }

    pub fn wraps(&self) -> bool {
        matches!(*self, LonRange::Interval { lo, hi } if lo > hi)
    }
}

/// Latitude/longitude box enclosing a spherical cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CapBounds {
    pub lat_range: (f64, f64),
    pub lon_range: LonRange,
    /// The camera lies inside the bounding sphere; every direction is covered.
    pub full_sphere: bool,
}

impl CapBounds {
    pub fn everything() -> Self {
        Self {
            lat_range: (-FRAC_PI_2, FRAC_PI_2),
            lon_range: LonRange::Full,
            full_sphere: true,
        }
    }

    pub fn contains(&self, a: SphericalAngles) -> bool {
        self.full_sphere
            || (a.lat >= self.lat_range.0
                && a.lat <= self.lat_range.1
                && self.lon_range.contains(a.lon))
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(TAU) - PI;
    if x < -PI {
        x += TAU;
    }
    x
}

/// Conservative lat/lon bounds of a sphere of `radius` whose center is seen
/// along `center_dir` at distance `dist`.
pub fn cap_bounds(center_dir: &Vector3<f64>, dist: f64, radius: f64) -> Result<CapBounds> {
    if !(radius > 0.0) {
        return Err(Error::domain(format!("cap radius must be positive, got {radius}")));
    }
    if !(dist >= 0.0) {
        return Err(Error::domain(format!("cap distance must be nonnegative, got {dist}")));
    }
    if dist <= radius {
        return Ok(CapBounds::everything());
    }
    let c = dir_to_angles(center_dir)?;
    let beta = (radius / dist).asin();
    let lat_range = (
        (c.lat - beta).max(-FRAC_PI_2),
        (c.lat + beta).min(FRAC_PI_2),
    );
    let lon_range = if c.lat.abs() + beta >= FRAC_PI_2 {
        LonRange::Full
    } else {
        let ratio = beta.sin() / c.lat.cos();
        if ratio >= 1.0 {
            LonRange::Full
        } else {
            let half = ratio.asin();
            if half >= PI {
                LonRange::Full
            } else {
                LonRange::Interval {
                    lo: wrap_angle(c.lon - half),
                    hi: wrap_angle(c.lon + half),
                }
            }
        }
    };
    Ok(CapBounds {
        lat_range,
        lon_range,
        full_sphere: false,
    })
}
