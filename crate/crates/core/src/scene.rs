//! The Gaussian mixture representation and its parameter storage.
//!
//! Storage is structure-of-arrays per field for rasterizer throughput;
//! [`Gaussian3D`] is the per-element view used at the API boundary.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{quat_normalize, quat_to_matrix};
use crate::sh::{basis_count, ShCoefficients};

/// One anisotropic 3D Gaussian primitive.
///
/// `scale` holds the eigenvalues of the covariance (variances, meters^2);
/// positivity is enforced upstream by the activation functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    /// Mean, world frame, meters.
    pub mean: Vector3<f64>,
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    /// Per-axis variances, meters^2.
    pub scale: Vector3<f64>,
    /// Opacity in `[0, 1)`.
    pub opacity: f64,
    pub colour: ShCoefficients,
}

impl Gaussian3D {
    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("non-finite gaussian mean".into()));
        }
        if !(self.scale.x > 0.0 && self.scale.y > 0.0 && self.scale.z > 0.0)
            || !self.scale.iter().all(|v| v.is_finite())
        {
            return Err(Error::Domain(format!("scale components must be positive, got {:?}", self.scale)));
        }
        if !(0.0..1.0).contains(&self.opacity) {
            return Err(Error::Domain(format!("opacity must lie in [0, 1), got {}", self.opacity)));
        }
        let n2: f64 = self.rotation.iter().map(|v| v * v).sum();
        if (n2.sqrt() - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "rotation quaternion must be unit length, |q| = {}",
                n2.sqrt()
            )));
        }
        Ok(())
    }
}

/// Covariance of a Gaussian: `Sigma = R(theta)^T diag(s) R(theta)`.
///
/// Symmetric positive-definite by construction, with eigenvalues equal to the
/// scale entries.
pub fn covariance_of(g: &Gaussian3D) -> Matrix3<f64> {
    let q = quat_normalize(g.rotation).expect("validated quaternion");
    let r = quat_to_matrix(q);
    let d = Matrix3::from_diagonal(&g.scale);
    r.transpose() * d * r
}

/// An ordered set of Gaussians sharing one SH degree.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    sh_degree: usize,
    means: Vec<Vector3<f64>>,
    rotations: Vec<[f64; 4]>,
    scales: Vec<Vector3<f64>>,
    opacities: Vec<f64>,
    /// Flat channel-major coefficients, `3 * basis_count` per Gaussian.
    coeffs: Vec<f64>,
}

impl GaussianScene {
    pub fn new(sh_degree: usize) -> Self {
        Self {
            sh_degree,
            means: Vec::new(),
            rotations: Vec::new(),
            scales: Vec::new(),
            opacities: Vec::new(),
            coeffs: Vec::new(),
        }
    }

    pub fn with_capacity(sh_degree: usize, n: usize) -> Self {
        Self {
            sh_degree,
            means: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            scales: Vec::with_capacity(n),
            opacities: Vec::with_capacity(n),
            coeffs: Vec::with_capacity(n * 3 * basis_count(sh_degree)),
        }
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn coeffs_per_gaussian(&self) -> usize {
        3 * basis_count(self.sh_degree)
    }

    pub fn push(&mut self, g: Gaussian3D) -> Result<()> {
        g.validate()?;
        if g.colour.degree() != self.sh_degree {
            return Err(Error::Dimension(format!(
                "gaussian sh degree {} does not match scene degree {}",
                g.colour.degree(),
                self.sh_degree
            )));
        }
        self.means.push(g.mean);
        self.rotations.push(g.rotation);
        self.scales.push(g.scale);
        self.opacities.push(g.opacity);
        self.coeffs.extend_from_slice(g.colour.coeffs());
        Ok(())
    }

    pub fn get(&self, i: usize) -> Gaussian3D {
        let nc = self.coeffs_per_gaussian();
        Gaussian3D {
            mean: self.means[i],
            rotation: self.rotations[i],
            scale: self.scales[i],
            opacity: self.opacities[i],
            colour: ShCoefficients::new(
                self.sh_degree,
                self.coeffs[i * nc..(i + 1) * nc].to_vec(),
            )
            .expect("stored coefficients are valid"),
        }
    }

    pub fn means(&self) -> &[Vector3<f64>] {
        &self.means
    }

    pub fn rotations(&self) -> &[[f64; 4]] {
        &self.rotations
    }

    pub fn scales(&self) -> &[Vector3<f64>] {
        &self.scales
    }

    pub fn opacities(&self) -> &[f64] {
        &self.opacities
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficient slice of Gaussian `i`, channel-major.
    pub fn coeffs_of(&self, i: usize) -> &[f64] {
        let nc = self.coeffs_per_gaussian();
        &self.coeffs[i * nc..(i + 1) * nc]
    }
}

/// Parameter classes of a scene, used by the gradient checker and optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Mean,
    Rotation,
    Scale,
    Opacity,
    Coeffs,
}

impl ParamClass {
    pub const ALL: [ParamClass; 5] = [
        ParamClass::Mean,
        ParamClass::Rotation,
        ParamClass::Scale,
        ParamClass::Opacity,
        ParamClass::Coeffs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamClass::Mean => "mean",
            ParamClass::Rotation => "rotation",
            ParamClass::Scale => "scale",
            ParamClass::Opacity => "opacity",
            ParamClass::Coeffs => "coeffs",
        }
    }
}

impl GaussianScene {
    /// Number of scalar components per Gaussian in a class.
    pub fn components_of(&self, class: ParamClass) -> usize {
        match class {
            ParamClass::Mean | ParamClass::Scale => 3,
            ParamClass::Rotation => 4,
            ParamClass::Opacity => 1,
            ParamClass::Coeffs => self.coeffs_per_gaussian(),
        }
    }

    /// Read one scalar parameter. Used by diagnostics such as the
    /// finite-difference checker.
    pub fn param(&self, class: ParamClass, g: usize, comp: usize) -> f64 {
        match class {
            ParamClass::Mean => self.means[g][comp],
            ParamClass::Rotation => self.rotations[g][comp],
            ParamClass::Scale => self.scales[g][comp],
            ParamClass::Opacity => self.opacities[g],
            ParamClass::Coeffs => self.coeffs[g * self.coeffs_per_gaussian() + comp],
        }
    }

    /// Write one scalar parameter without invariant checks; intended for the
    /// finite-difference checker, which perturbs within valid ranges.
    pub fn set_param(&mut self, class: ParamClass, g: usize, comp: usize, v: f64) {
        match class {
            ParamClass::Mean => self.means[g][comp] = v,
            ParamClass::Rotation => self.rotations[g][comp] = v,
            ParamClass::Scale => self.scales[g][comp] = v,
            ParamClass::Opacity => self.opacities[g] = v,
            ParamClass::Coeffs => {
                let nc = self.coeffs_per_gaussian();
                self.coeffs[g * nc + comp] = v;
            }
        }
    }
}

/// Concatenate two scenes of equal SH degree, preserving order (`a` then `b`).
pub fn concat_scenes(a: &GaussianScene, b: &GaussianScene) -> Result<GaussianScene> {
    if a.sh_degree != b.sh_degree {
        return Err(Error::Dimension(format!(
            "cannot concatenate scenes of sh degree {} and {}",
            a.sh_degree, b.sh_degree
        )));
    }
    let mut out = GaussianScene::with_capacity(a.sh_degree, a.len() + b.len());
    for src in [a, b] {
        out.means.extend_from_slice(&src.means);
        out.rotations.extend_from_slice(&src.rotations);
        out.scales.extend_from_slice(&src.scales);
        out.opacities.extend_from_slice(&src.opacities);
        out.coeffs.extend_from_slice(&src.coeffs);
    }
    Ok(out)
}
