//! Real spherical-harmonic color evaluation in the usual splatting convention.

use crate::error::{Error, Result};
use crate::gaussian::sh_len;
use crate::math::Vec3;

pub const C0: f32 = 0.282_094_8;
pub const C1: f32 = 0.488_602_5;
pub const C2: [f32; 5] = [1.092_548_4, -1.092_548_4, 0.315_391_57, -1.092_548_4, 0.546_274_2];
pub const C3: [f32; 7] = [
    -0.590_043_6,
    2.890_611_4,
    -0.457_045_8,
    0.373_176_33,
    -0.457_045_8,
    1.445_305_7,
    -0.590_043_6,
];

/// Basis values `Y_k(dir)` for `k < sh_len(degree)`.
pub fn basis(dir: Vec3, degree: u8, out: &mut [f32; 16]) {
    let [x, y, z] = dir;
    out[0] = C0;
    if degree < 1 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = C2[0] * x * y;
    out[5] = C2[1] * y * z;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * x * z;
    out[8] = C2[4] * (xx - yy);
    if degree < 3 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * x * y * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

/// Gradients `∂Y_k/∂dir` matching [`basis`].
pub fn basis_grad(dir: Vec3, degree: u8, out: &mut [Vec3; 16]) {
    let [x, y, z] = dir;
    out[0] = [0.0; 3];
    if degree < 1 {
        return;
    }
    out[1] = [0.0, -C1, 0.0];
    out[2] = [0.0, 0.0, C1];
    out[3] = [-C1, 0.0, 0.0];
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = [C2[0] * y, C2[0] * x, 0.0];
    out[5] = [0.0, C2[1] * z, C2[1] * y];
    out[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
    out[7] = [C2[3] * z, 0.0, C2[3] * x];
    out[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    if degree < 3 {
        return;
    }
    out[9] = [6.0 * C3[0] * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
    out[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
    out[11] = [-2.0 * C3[2] * x * y, C3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * C3[2] * y * z];
    out[12] = [-6.0 * C3[3] * x * z, -6.0 * C3[3] * y * z, C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)];
    out[13] = [C3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * C3[4] * x * y, 8.0 * C3[4] * x * z];
    out[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)];
    out[15] = [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0];
}

/// Unclamped `0.5 + Σ c_k Y_k` per channel using the first `sh_len(degree)`
/// coefficients of each channel block of length `stride`.
pub fn eval_raw(coeffs: &[f32], stride: usize, dir: Vec3, degree: u8) -> Vec3 {
    let mut y = [0.0; 16];
    basis(dir, degree, &mut y);
    let k = sh_len(degree);
    let mut rgb = [0.5; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let block = &coeffs[c * stride..c * stride + k];
        *out += block.iter().zip(&y[..k]).map(|(a, b)| a * b).sum::<f32>();
    }
    rgb
}

/// `clamp(0.5 + Σ c_k Y_k(dir), 0, 1)` per channel. `coeffs` is the
/// channel-major block of one primitive stored at `stored_degree`.
pub fn sh_to_color(coeffs: &[f32], dir: Vec3, degree: u8, stored_degree: u8) -> Result<Vec3> {
    if degree > stored_degree {
        return Err(Error::ShDegree {
            requested: degree,
            stored: stored_degree,
        });
    }
    let stride = sh_len(stored_degree);
    if coeffs.len() != 3 * stride {
        return Err(Error::ShapeMismatch {
            expected: vec![3, stride],
            got: vec![coeffs.len()],
        });
    }
    let rgb = eval_raw(coeffs, stride, dir, degree);
    Ok(rgb.map(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dc_only() {
        let c = [0.7, -0.3, 10.0];
        let rgb = sh_to_color(&c, [0.0, 0.0, 1.0], 0, 0).unwrap();
        assert!((rgb[0] - (0.5 + C0 * 0.7)).abs() < 1e-7);
        assert!((rgb[1] - (0.5 - C0 * 0.3)).abs() < 1e-7);
        assert_eq!(rgb[2], 1.0);
    }

    #[test]
    fn zero_coefficients_are_gray() {
        let rgb = sh_to_color(&[0.0; 12], [0.6, 0.0, 0.8], 1, 1).unwrap();
        assert_eq!(rgb, [0.5; 3]);
    }

    #[test]
    fn degree_above_stored_is_rejected() {
        assert!(matches!(sh_to_color(&[0.0; 3], [0.0, 0.0, 1.0], 1, 0), Err(Error::ShDegree { .. })));
    }
}
