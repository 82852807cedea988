//! Real spherical harmonics for view-dependent colour, degrees 0..=3.
//!
//! Basis ordering and normalization constants follow the splatting
//! ecosystem's convention: within degree `l` the orders run m = -l..=l, so the
//! flat index of (l, m) is `l*(l+1) + m`.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Maximum supported degree.
pub const MAX_DEGREE: usize = 3;

/// Y_00; the inverse (2*sqrt(pi)) converts an RGB value into its DC
/// coefficient.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions at `degree`.
pub fn basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluate the real SH basis at a unit direction. Only the first
/// `basis_count(degree)` entries are written.
pub fn sh_basis(degree: usize, dir: &Vector3<f64>) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut out = [0.0; 16];
    out[0] = SH_C0;
    if degree >= 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[9] = SH_C3[0] * y * (3.0 * xx - yy);
        out[10] = SH_C3[1] * x * y * z;
        out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        out[14] = SH_C3[5] * z * (xx - yy);
        out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
    out
}

/// Gradients of each basis function with respect to the direction components.
/// Entry `k` is `(dY_k/dx, dY_k/dy, dY_k/dz)`.
pub fn sh_basis_grad(degree: usize, dir: &Vector3<f64>) -> [[f64; 3]; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut g = [[0.0; 3]; 16];
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[9] = [SH_C3[0] * 6.0 * x * y, SH_C3[0] * 3.0 * (xx - yy), 0.0];
        g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
        g[11] = [
            -2.0 * SH_C3[2] * x * y,
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * SH_C3[2] * y * z,
        ];
        g[12] = [
            -6.0 * SH_C3[3] * x * z,
            -6.0 * SH_C3[3] * y * z,
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        g[13] = [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * SH_C3[4] * x * y,
            8.0 * SH_C3[4] * x * z,
        ];
        g[14] = [2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)];
        g[15] = [SH_C3[6] * 3.0 * (xx - yy), -6.0 * SH_C3[6] * x * y, 0.0];
    }
    g
}

/// RGB spherical-harmonic coefficients, stored channel-major:
/// `coeffs[channel * basis_count + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShCoefficients {
    degree: usize,
    coeffs: Vec<f64>,
}

impl ShCoefficients {
    pub fn new(degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(Error::Domain(format!("sh degree {degree} exceeds maximum {MAX_DEGREE}")));
        }
        let expected = 3 * basis_count(degree);
        if coeffs.len() != expected {
            return Err(Error::Dimension(format!(
                "degree {degree} needs {expected} coefficients, got {}",
                coeffs.len()
            )));
        }
        if !coeffs.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain("non-finite sh coefficient".into()));
        }
        Ok(Self { degree, coeffs })
    }

    pub fn zeros(degree: usize) -> Self {
        Self { degree, coeffs: vec![0.0; 3 * basis_count(degree)] }
    }

    /// Degree-0 coefficients whose evaluated colour equals `rgb` exactly.
    pub fn from_rgb(rgb: [f64; 3]) -> Self {
        Self { degree: 0, coeffs: vec![rgb[0] / SH_C0, rgb[1] / SH_C0, rgb[2] / SH_C0] }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }
}

fn check_unit(dir: &Vector3<f64>) -> Result<()> {
    let n = dir.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("direction must be unit length, |dir| = {n}")));
    }
    Ok(())
}

/// Evaluate the SH expansion per channel without any clamping.
pub fn eval_sh_raw(c: &ShCoefficients, dir: &Vector3<f64>) -> Result<[f64; 3]> {
    check_unit(dir)?;
    let nb = basis_count(c.degree);
    let basis = sh_basis(c.degree, dir);
    let mut out = [0.0; 3];
    for ch in 0..3 {
        let row = &c.coeffs[ch * nb..(ch + 1) * nb];
        out[ch] = row.iter().zip(basis.iter()).map(|(c, b)| c * b).sum();
    }
    Ok(out)
}

/// View-dependent colour: the SH expansion clamped to non-negative radiance.
pub fn eval_sh(c: &ShCoefficients, dir: &Vector3<f64>) -> Result<[f64; 3]> {
    let raw = eval_sh_raw(c, dir)?;
    Ok([raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)])
}
