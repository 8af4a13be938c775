//! Real spherical-harmonic basis (degrees 0..=3) in the ordering and sign
//! convention used by common Gaussian-splat files.

use nalgebra::Vector3;

pub const MAX_DEGREE: usize = 3;
pub const MAX_COEFFS: usize = 16;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients for a given degree.
pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values at the unit direction `d`.
pub fn basis(d: &Vector3<f64>, degree: usize, out: &mut [f64; MAX_COEFFS]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = SH_C0;
    if degree < 1 {
        return;
    }
    out[1] = -SH_C1 * y;
    out[2] = SH_C1 * z;
    out[3] = -SH_C1 * x;
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = SH_C2[0] * x * y;
    out[5] = SH_C2[1] * y * z;
    out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    out[7] = SH_C2[3] * x * z;
    out[8] = SH_C2[4] * (xx - yy);
    if degree < 3 {
        return;
    }
    out[9] = SH_C3[0] * y * (3.0 * xx - yy);
    out[10] = SH_C3[1] * x * y * z;
    out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = SH_C3[5] * z * (xx - yy);
    out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
}

/// Partial derivatives of each basis polynomial with respect to `(x, y, z)`,
/// evaluated at `d` (no projection onto the sphere's tangent plane).
pub fn basis_grad(d: &Vector3<f64>, degree: usize, out: &mut [[f64; 3]; MAX_COEFFS]) {
    let (x, y, z) = (d.x, d.y, d.z);
    out[0] = [0.0; 3];
    if degree < 1 {
        return;
    }
    out[1] = [0.0, -SH_C1, 0.0];
    out[2] = [0.0, 0.0, SH_C1];
    out[3] = [-SH_C1, 0.0, 0.0];
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
    out[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
    out[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
    out[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
    out[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    if degree < 3 {
        return;
    }
    out[9] = [
        SH_C3[0] * 6.0 * x * y,
        SH_C3[0] * (3.0 * xx - 3.0 * yy),
        0.0,
    ];
    out[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
    out[11] = [
        SH_C3[2] * (-2.0 * x * y),
        SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
        SH_C3[2] * 8.0 * y * z,
    ];
    out[12] = [
        SH_C3[3] * (-6.0 * x * z),
        SH_C3[3] * (-6.0 * y * z),
        SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
    ];
    out[13] = [
        SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
        SH_C3[4] * (-2.0 * x * y),
        SH_C3[4] * 8.0 * x * z,
    ];
    out[14] = [SH_C3[5] * 2.0 * x * z, -SH_C3[5] * 2.0 * y * z, SH_C3[5] * (xx - yy)];
    out[15] = [
        SH_C3[6] * (3.0 * xx - 3.0 * yy),
        SH_C3[6] * (-6.0 * x * y),
        0.0,
    ];
}

/// Converts an RGB color to the degree-0 coefficient.
pub fn rgb_to_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}
