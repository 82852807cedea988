//! Analytic backward pass of the renderer, plus a finite-difference verifier.
//!
//! The backward replays the forward compositing per pixel (same sort, same
//! clamps, same early exit) and runs a reverse scan over the recorded
//! contributions, so clamped alphas contribute zero opacity gradient and
//! culled Gaussians receive zero gradient. Per-Gaussian accumulation is
//! race-free and deterministic: each tile accumulates locally and tiles are
//! merged in a fixed order, never through atomic floats.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::image::ImageRgb;
use crate::render::{
    composite_pixel, prepare_scene, projection_jacobian, Contribution, RenderOptions, RenderOutput,
};
use crate::scene::{GaussianScene, ParamClass};
use crate::sh::{basis_count, eval_sh_raw, sh_basis, sh_basis_grad, ShCoefficients};

/// Gradients of a scalar loss with respect to every Gaussian parameter.
///
/// Quaternion gradients live in the 4-dim ambient space; the optimizer steps
/// there and renormalizes.
#[derive(Debug, Clone)]
pub struct SceneGradients {
    pub d_mean: Vec<Vector3<f64>>,
    pub d_rotation: Vec<[f64; 4]>,
    pub d_scale: Vec<Vector3<f64>>,
    pub d_opacity: Vec<f64>,
    /// Flat channel-major coefficient gradients, `3 * basis_count` each.
    pub d_coeffs: Vec<f64>,
    sh_degree: usize,
}

impl SceneGradients {
    pub fn zeros(scene: &GaussianScene) -> Self {
        let n = scene.len();
        Self {
            d_mean: vec![Vector3::zeros(); n],
            d_rotation: vec![[0.0; 4]; n],
            d_scale: vec![Vector3::zeros(); n],
            d_opacity: vec![0.0; n],
            d_coeffs: vec![0.0; n * 3 * basis_count(scene.sh_degree())],
            sh_degree: scene.sh_degree(),
        }
    }

    pub fn len(&self) -> usize {
        self.d_opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_opacity.is_empty()
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    pub fn coeffs_of(&self, i: usize) -> &[f64] {
        let nc = 3 * basis_count(self.sh_degree);
        &self.d_coeffs[i * nc..(i + 1) * nc]
    }

    pub fn add_assign(&mut self, other: &SceneGradients) {
        assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.d_mean[i] += other.d_mean[i];
            for c in 0..4 {
                self.d_rotation[i][c] += other.d_rotation[i][c];
            }
            self.d_scale[i] += other.d_scale[i];
            self.d_opacity[i] += other.d_opacity[i];
        }
        for (a, b) in self.d_coeffs.iter_mut().zip(&other.d_coeffs) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_mean.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_rotation.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_scale.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_opacity.iter().all(|x| x.is_finite())
            && self.d_coeffs.iter().all(|x| x.is_finite())
    }

    pub fn param(&self, class: ParamClass, g: usize, comp: usize) -> f64 {
        match class {
            ParamClass::Mean => self.d_mean[g][comp],
            ParamClass::Rotation => self.d_rotation[g][comp],
            ParamClass::Scale => self.d_scale[g][comp],
            ParamClass::Opacity => self.d_opacity[g],
            ParamClass::Coeffs => self.d_coeffs[g * 3 * basis_count(self.sh_degree) + comp],
        }
    }
}

/// Derivatives of the rotation matrix with respect to the (unit) quaternion
/// components `[w, x, y, z]`.
fn rotation_matrix_derivatives(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0,
    ]
}

/// Per-splat screen-space gradient accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Grad2D {
    d_mean2d: [f64; 2],
    /// dL/d(conic) as a symmetric matrix: [xx, xy, yy] entries.
    d_conic: [f64; 3],
    d_opacity: f64,
    d_colour: [f64; 3],
}

impl Grad2D {
    fn add(&mut self, o: &Grad2D) {
        self.d_mean2d[0] += o.d_mean2d[0];
        self.d_mean2d[1] += o.d_mean2d[1];
        for k in 0..3 {
            self.d_conic[k] += o.d_conic[k];
            self.d_colour[k] += o.d_colour[k];
        }
        self.d_opacity += o.d_opacity;
    }
}

/// Adjoint of [`crate::render::render`] for the colour output: given
/// `dL/d(colour)` per pixel, returns `dL/d(params)` for every Gaussian.
pub fn render_backward(
    scene: &GaussianScene,
    cam: &CameraIntrinsics,
    pose: &Pose,
    grad_colour: &ImageRgb,
    opts: &RenderOptions,
) -> Result<SceneGradients> {
    if grad_colour.width() != cam.width || grad_colour.height() != cam.height {
        return Err(Error::Dimension(format!(
            "gradient image {}x{} does not match camera {}x{}",
            grad_colour.width(),
            grad_colour.height(),
            cam.width,
            cam.height
        )));
    }
    if !grad_colour.is_finite() {
        return Err(Error::Domain("non-finite colour gradient".into()));
    }

    let splats = prepare_scene(scene, cam, pose, opts);

    // Bin by image row: the accumulation order (row-major pixels, merged in
    // row order) is canonical, so gradients are bit-identical for any worker
    // count and do not depend on the forward pass's tile size.
    let mut row_bins: Vec<Vec<u32>> = vec![Vec::new(); cam.height];
    for (i, s) in splats.iter().enumerate() {
        for row in row_bins.iter_mut().take(s.px_hi.1 + 1).skip(s.px_lo.1) {
            row.push(i as u32);
        }
    }

    let row_grads: Vec<Vec<Grad2D>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            let list = &row_bins[y];
            let mut local = vec![Grad2D::default(); list.len()];
            if list.is_empty() {
                return local;
            }
            let py = y as f64 + 0.5;
            let mut contribs: Vec<Contribution> = Vec::with_capacity(64);
            for x in 0..cam.width {
                let px = x as f64 + 0.5;
                contribs.clear();
                let comp = composite_pixel(
                    list.iter().enumerate().filter_map(|(k, &i)| {
                        let s = &splats[i as usize];
                        // cheap column precheck; outside the footprint box
                        // the cutoff test would reject anyway
                        (s.px_lo.0 <= x && x <= s.px_hi.0).then_some((k as u32, s))
                    }),
                    px,
                    py,
                    opts,
                    &mut contribs,
                );
                if contribs.is_empty() {
                    continue;
                }
                // Upstream gradient, masked where the final [0, 1] clamp is
                // active (raw output above 1).
                let g_up = grad_colour.get(x, y);
                let mut go = [0.0; 3];
                for ch in 0..3 {
                    let raw = comp.rgb[ch] + comp.transmittance * opts.background[ch];
                    go[ch] = if raw > 1.0 { 0.0 } else { g_up[ch] };
                }
                // dL/dT_final from the background term.
                let mut g_t = go[0] * opts.background[0]
                    + go[1] * opts.background[1]
                    + go[2] * opts.background[2];
                for c in contribs.iter().rev() {
                    let s = &splats[list[c.list_idx as usize] as usize];
                    let lg = &mut local[c.list_idx as usize];
                    let w_k = c.alpha * c.t_before;
                    let mut direct = 0.0;
                    for ch in 0..3 {
                        lg.d_colour[ch] += go[ch] * w_k;
                        direct += go[ch] * s.colour[ch];
                    }
                    let d_alpha = direct * c.t_before - g_t * c.t_before;
                    g_t = direct * c.alpha + g_t * (1.0 - c.alpha);
                    if !c.clamped {
                        lg.d_opacity += d_alpha * c.e;
                        let d_m = -0.5 * d_alpha * s.opacity * c.e;
                        let mx = 2.0 * (s.conic[0] * c.dx + s.conic[1] * c.dy);
                        let my = 2.0 * (s.conic[1] * c.dx + s.conic[2] * c.dy);
                        lg.d_mean2d[0] -= d_m * mx;
                        lg.d_mean2d[1] -= d_m * my;
                        lg.d_conic[0] += d_m * c.dx * c.dx;
                        lg.d_conic[1] += d_m * c.dx * c.dy;
                        lg.d_conic[2] += d_m * c.dy * c.dy;
                    }
                }
            }
            local
        })
        .collect();

    // Fixed-order reduction into per-splat gradients.
    let mut grads2d = vec![Grad2D::default(); splats.len()];
    for (y, local) in row_grads.iter().enumerate() {
        for (k, g) in row_bins[y].iter().zip(local) {
            grads2d[*k as usize].add(g);
        }
    }

    // Chain from screen space to the 3D parameters, independently per splat.
    let rot_w = pose.rotation_matrix();
    let cam_center = pose.camera_center();
    let degree = scene.sh_degree();
    let nb = basis_count(degree);

    struct SplatGrad {
        source: usize,
        d_mean: Vector3<f64>,
        d_rotation: [f64; 4],
        d_scale: Vector3<f64>,
        d_opacity: f64,
        d_coeffs: Vec<f64>,
    }

    let per_splat: Vec<SplatGrad> = splats
        .par_iter()
        .zip(&grads2d)
        .map(|(s, g2)| {
            let gi = s.source_index;
            let mean = scene.means()[gi];
            let q_raw = scene.rotations()[gi];
            let scale = scene.scales()[gi];
            let coeffs = scene.coeffs_of(gi);

            let mut d_mean = Vector3::zeros();
            let mut d_coeffs = vec![0.0; 3 * nb];

            // Colour path: coefficients and the view-direction term.
            let dir_raw = cam_center - mean;
            let r = dir_raw.norm();
            let dir = dir_raw / r;
            let sh = ShCoefficients::new(degree, coeffs.to_vec()).expect("valid coeffs");
            let raw_rgb = eval_sh_raw(&sh, &dir).expect("unit direction");
            let basis = sh_basis(degree, &dir);
            let basis_grad = sh_basis_grad(degree, &dir);
            let mut d_dir = Vector3::zeros();
            for ch in 0..3 {
                if raw_rgb[ch] <= 0.0 {
                    continue;
                }
                let gc = g2.d_colour[ch];
                for k in 0..nb {
                    d_coeffs[ch * nb + k] += gc * basis[k];
                    let bg = basis_grad[k];
                    let c = coeffs[ch * nb + k];
                    d_dir.x += gc * c * bg[0];
                    d_dir.y += gc * c * bg[1];
                    d_dir.z += gc * c * bg[2];
                }
            }
            // d(dir)/d(mean) = -(I - dir dir^T)/r, symmetric
            let proj = Matrix3::identity() - dir * dir.transpose();
            d_mean += -(proj * d_dir) / r;

            // Geometry paths share the projection intermediates.
            let v = rot_w * mean + pose.translation();
            let j = projection_jacobian(cam, &v);
            let b_rot = crate::geometry::quat_to_matrix(
                crate::geometry::quat_normalize(q_raw).expect("non-zero quaternion"),
            );
            let sigma = b_rot.transpose() * Matrix3::from_diagonal(&scale) * b_rot;
            let m_view = rot_w * sigma * rot_w.transpose();

            let mut cov = Matrix2::zeros();
            for row in 0..2 {
                for col in 0..2 {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        let mut jm = 0.0;
                        for l in 0..3 {
                            jm += j[row][l] * m_view[(l, k)];
                        }
                        acc += jm * j[col][k];
                    }
                    cov[(row, col)] = acc;
                }
            }
            cov[(0, 0)] += opts.blur;
            cov[(1, 1)] += opts.blur;
            let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
            let lambda = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;

            // dL/dC = -Lambda G_Lambda Lambda
            let g_lambda = Matrix2::new(g2.d_conic[0], g2.d_conic[1], g2.d_conic[1], g2.d_conic[2]);
            let g_c = -(lambda * g_lambda * lambda);

            // Covariance path: G_M = J^T G_C J, G_Sigma = W^T G_M W.
            let mut g_m = Matrix3::zeros();
            for a in 0..3 {
                for b in 0..3 {
                    let mut acc = 0.0;
                    for r2 in 0..2 {
                        for c2 in 0..2 {
                            acc += j[r2][a] * g_c[(r2, c2)] * j[c2][b];
                        }
                    }
                    g_m[(a, b)] = acc;
                }
            }
            let g_sigma = rot_w.transpose() * g_m * rot_w;

            // Jacobian path: dL/dJ = 2 G_C J M (G_C and M symmetric).
            let mut jm = [[0.0; 3]; 2];
            for r2 in 0..2 {
                for a in 0..3 {
                    let mut acc = 0.0;
                    for l in 0..3 {
                        acc += j[r2][l] * m_view[(l, a)];
                    }
                    jm[r2][a] = acc;
                }
            }
            let mut d_j = [[0.0; 3]; 2];
            for r2 in 0..2 {
                for a in 0..3 {
                    d_j[r2][a] = 2.0 * (g_c[(r2, 0)] * jm[0][a] + g_c[(r2, 1)] * jm[1][a]);
                }
            }

            // View-space gradient: screen-mean path plus Jacobian dependence.
            let gm2d = Vector2::new(g2.d_mean2d[0], g2.d_mean2d[1]);
            let mut d_v = Vector3::new(
                j[0][0] * gm2d.x + j[1][0] * gm2d.y,
                j[0][1] * gm2d.x + j[1][1] * gm2d.y,
                j[0][2] * gm2d.x + j[1][2] * gm2d.y,
            );
            let inv_z = 1.0 / v.z;
            let inv_z2 = inv_z * inv_z;
            let inv_z3 = inv_z2 * inv_z;
            d_v.x += d_j[0][2] * (-cam.fx * inv_z2);
            d_v.y += d_j[1][2] * (-cam.fy * inv_z2);
            d_v.z += d_j[0][0] * (-cam.fx * inv_z2)
                + d_j[0][2] * (2.0 * cam.fx * v.x * inv_z3)
                + d_j[1][1] * (-cam.fy * inv_z2)
                + d_j[1][2] * (2.0 * cam.fy * v.y * inv_z3);
            d_mean += rot_w.transpose() * d_v;

            // Scale: dL/ds_k = (B G_Sigma B^T)_kk.
            let bgb = b_rot * g_sigma * b_rot.transpose();
            let d_scale = Vector3::new(bgb[(0, 0)], bgb[(1, 1)], bgb[(2, 2)]);

            // Rotation: dL/dB = D B (G + G^T), then through dB/dq and the
            // normalization Jacobian.
            let d_mat = Matrix3::from_diagonal(&scale);
            let d_b = d_mat * b_rot * (g_sigma + g_sigma.transpose());
            let q_hat = crate::geometry::quat_normalize(q_raw).expect("non-zero quaternion");
            let dr = rotation_matrix_derivatives(q_hat);
            let mut d_qhat = [0.0; 4];
            for (c, drc) in dr.iter().enumerate() {
                let mut acc = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        acc += d_b[(a, b)] * drc[(a, b)];
                    }
                }
                d_qhat[c] = acc;
            }
            let q_norm: f64 = q_raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let mut d_rotation = [0.0; 4];
            for c in 0..4 {
                let mut acc = 0.0;
                for d in 0..4 {
                    let delta = if c == d { 1.0 } else { 0.0 };
                    acc += (delta - q_hat[c] * q_hat[d]) * d_qhat[d];
                }
                d_rotation[c] = acc / q_norm;
            }

            SplatGrad {
                source: gi,
                d_mean,
                d_rotation,
                d_scale,
                d_opacity: g2.d_opacity,
                d_coeffs,
            }
        })
        .collect();

    let mut out = SceneGradients::zeros(scene);
    for sg in per_splat {
        out.d_mean[sg.source] += sg.d_mean;
        for c in 0..4 {
            out.d_rotation[sg.source][c] += sg.d_rotation[c];
        }
        out.d_scale[sg.source] += sg.d_scale;
        out.d_opacity[sg.source] += sg.d_opacity;
        let nc = 3 * nb;
        for (k, v) in sg.d_coeffs.iter().enumerate() {
            out.d_coeffs[sg.source * nc + k] += v;
        }
    }
    Ok(out)
}

/// A scalar loss on render output, with its gradient w.r.t. the colour image.
pub trait RenderLoss: Sync {
    fn value(&self, out: &RenderOutput) -> f64;
    fn colour_gradient(&self, out: &RenderOutput) -> ImageRgb;
}

/// `L = sum(weights * colour)`: the probe loss used by the gradient checker.
pub struct WeightedColourLoss {
    pub weights: ImageRgb,
}

impl RenderLoss for WeightedColourLoss {
    fn value(&self, out: &RenderOutput) -> f64 {
        self.weights.data().iter().zip(out.colour.data()).map(|(w, c)| w * c).sum()
    }

    fn colour_gradient(&self, _out: &RenderOutput) -> ImageRgb {
        self.weights.clone()
    }
}

/// Worst-case comparison for one parameter class.
#[derive(Debug, Clone)]
pub struct ClassCheck {
    pub class: ParamClass,
    /// Largest |analytic - numeric| normalized by the class gradient scale.
    pub rel_err: f64,
    pub worst_gaussian: usize,
    pub worst_component: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    /// Normalization: largest gradient magnitude seen in the class.
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub checks: Vec<ClassCheck>,
    pub step: f64,
}

impl FiniteDiffReport {
    pub fn class(&self, class: ParamClass) -> &ClassCheck {
        self.checks.iter().find(|c| c.class == class).expect("all classes present")
    }

    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> &ClassCheck {
        self.checks.iter().max_by(|a, b| a.rel_err.partial_cmp(&b.rel_err).unwrap()).expect("non-empty")
    }
}

/// Central finite differences of `loss` w.r.t. every scene parameter.
pub fn numeric_gradients(
    scene: &GaussianScene,
    cam: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
    loss: &dyn RenderLoss,
    h: f64,
) -> Result<SceneGradients> {
    let mut work = scene.clone();
    let mut out = SceneGradients::zeros(scene);
    for class in ParamClass::ALL {
        let comps = scene.components_of(class);
        for g in 0..scene.len() {
            for c in 0..comps {
                let orig = work.param(class, g, c);
                work.set_param(class, g, c, orig + h);
                let plus = loss.value(&crate::render::render(&work, cam, pose, opts)?);
                work.set_param(class, g, c, orig - h);
                let minus = loss.value(&crate::render::render(&work, cam, pose, opts)?);
                work.set_param(class, g, c, orig);
                let fd = (plus - minus) / (2.0 * h);
                match class {
                    ParamClass::Mean => out.d_mean[g][c] = fd,
                    ParamClass::Rotation => out.d_rotation[g][c] = fd,
                    ParamClass::Scale => out.d_scale[g][c] = fd,
                    ParamClass::Opacity => out.d_opacity[g] = fd,
                    ParamClass::Coeffs => {
                        let nc = 3 * basis_count(scene.sh_degree());
                        out.d_coeffs[g * nc + c] = fd;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Compare two gradient sets per parameter class. Errors are normalized by
/// the largest gradient magnitude of the class, so classes with uniformly
/// tiny gradients do not produce spurious blowups.
pub fn gradient_report(
    analytic: &SceneGradients,
    numeric: &SceneGradients,
    step: f64,
) -> FiniteDiffReport {
    assert_eq!(analytic.len(), numeric.len());
    let n = analytic.len();
    let mut checks = Vec::new();
    for class in ParamClass::ALL {
        let comps = match class {
            ParamClass::Mean | ParamClass::Scale => 3,
            ParamClass::Rotation => 4,
            ParamClass::Opacity => 1,
            ParamClass::Coeffs => 3 * basis_count(analytic.sh_degree),
        };
        let mut scale = 0.0f64;
        for g in 0..n {
            for c in 0..comps {
                scale = scale.max(analytic.param(class, g, c).abs());
                scale = scale.max(numeric.param(class, g, c).abs());
            }
        }
        let denom = scale.max(1e-12);
        let mut worst = (0.0f64, 0usize, 0usize, 0.0f64, 0.0f64);
        for g in 0..n {
            for c in 0..comps {
                let a = analytic.param(class, g, c);
                let b = numeric.param(class, g, c);
                let rel = (a - b).abs() / denom;
                if rel > worst.0 {
                    worst = (rel, g, c, a, b);
                }
            }
        }
        checks.push(ClassCheck {
            class,
            rel_err: worst.0,
            worst_gaussian: worst.1,
            worst_component: worst.2,
            analytic_at_worst: worst.3,
            numeric_at_worst: worst.4,
            scale,
        });
    }
    FiniteDiffReport { checks, step }
}

/// Seeded random scene for gradient checking: Gaussians inside the frustum
/// of a +z camera, with parameters kept clear of clamp boundaries so the
/// finite-difference comparison stays meaningful.
pub fn random_check_scene(seed: u64, n: usize, degree: usize) -> GaussianScene {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    let mut rng = StdRng::seed_from_u64(seed);
    let mut scene = GaussianScene::new(degree);
    let nb = basis_count(degree);
    for _ in 0..n {
        let z = rng.random_range(1.5..6.0);
        let mean =
            Vector3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.35..0.35) * z, z);
        let q = crate::geometry::quat_normalize([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ])
        .expect("non-zero quaternion");
        let scale = Vector3::new(
            rng.random_range(5e-4..6e-3),
            rng.random_range(5e-4..6e-3),
            rng.random_range(5e-4..6e-3),
        );
        let mut coeffs = vec![0.0; 3 * nb];
        for ch in 0..3 {
            coeffs[ch * nb] = rng.random_range(0.7..2.6);
            for k in 1..nb {
                coeffs[ch * nb + k] = rng.random_range(-0.1..0.1);
            }
        }
        scene
            .push(crate::scene::Gaussian3D {
                mean,
                rotation: q,
                scale,
                opacity: rng.random_range(0.1..0.9),
                colour: ShCoefficients::new(degree, coeffs).expect("valid coefficients"),
            })
            .expect("valid gaussian");
    }
    scene
}

/// Render, compute analytic gradients, compare against central finite
/// differences, and report the worst offender per parameter class.
pub fn finite_diff_check(
    scene: &GaussianScene,
    cam: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
    loss: &dyn RenderLoss,
    h: f64,
) -> Result<FiniteDiffReport> {
    if scene.len() > 200 {
        return Err(Error::Domain(format!(
            "finite-difference check is limited to 200 gaussians, got {}",
            scene.len()
        )));
    }
    let out = crate::render::render(scene, cam, pose, opts)?;
    let grad_colour = loss.colour_gradient(&out);
    let analytic = render_backward(scene, cam, pose, &grad_colour, opts)?;
    let numeric = numeric_gradients(scene, cam, pose, opts, loss, h)?;
    Ok(gradient_report(&analytic, &numeric, h))
}
