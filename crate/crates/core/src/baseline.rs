//! Depth-unprojection baseline: a soft point cloud of isotropic Gaussians at
//! the predicted depths, with three tunable global hyperparameters.
//!
//! The baseline colours use the SH DC channel (coefficient = alpha * rgb /
//! Y00) so the one splatting renderer serves both systems; a layered scene
//! with one layer, zero offsets, and matching constants renders identically.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::fit::FitConfig;
use crate::geometry::{unproject_pixel, CameraIntrinsics, Pose};
use crate::grad::render_backward;
use crate::image::ImageRgb;
use crate::layered::{logistic, DepthMap, MAX_SCALE_VAR, MIN_SCALE_VAR, OPACITY_CEIL};
use crate::metrics::photometric_loss;
use crate::render::render;
use crate::scene::{Gaussian3D, GaussianScene};
use crate::sh::{ShCoefficients, SH_C0};

/// Whether Gaussian size is a global constant or grows with depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    Fixed,
    DepthDependent,
}

/// Baseline hyperparameters. The defaults are the standard initialisation:
/// colour gain 1, log-scale -4.5, opacity logit 4 (almost opaque), reference
/// depth 10 m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineHyper {
    /// Colour gain: the Gaussian colour is `alpha_colour * rgb`.
    pub alpha_colour: f64,
    /// Log of the scale variance.
    pub s0: f64,
    /// Opacity logit.
    pub sigma0: f64,
    /// Reference depth for the depth-dependent mode, meters.
    pub d0: f64,
    pub mode: ScaleMode,
}

impl Default for BaselineHyper {
    fn default() -> Self {
        Self { alpha_colour: 1.0, s0: -4.5, sigma0: 4.0, d0: 10.0, mode: ScaleMode::Fixed }
    }
}

impl BaselineHyper {
    fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0) {
            return Err(Error::Domain(format!("reference depth must be positive, got {}", self.d0)));
        }
        if !self.alpha_colour.is_finite() || !self.s0.is_finite() || !self.sigma0.is_finite() {
            return Err(Error::Domain("baseline hyperparameters must be finite".into()));
        }
        Ok(())
    }

    fn opacity(&self) -> f64 {
        logistic(self.sigma0).min(OPACITY_CEIL)
    }

    fn variance(&self, depth: f64) -> f64 {
        let base = self.s0.exp();
        let v = match self.mode {
            ScaleMode::Fixed => base,
            ScaleMode::DepthDependent => base * depth / self.d0,
        };
        v.clamp(MIN_SCALE_VAR, MAX_SCALE_VAR)
    }
}

/// One Gaussian per pixel at the unprojected depth, isotropic, fixed opacity,
/// view-independent colour copied (scaled by `alpha_colour`) from the image.
/// The scene lives in the source camera frame, row-major pixel order.
pub fn unproject_baseline(
    image: &ImageRgb,
    depth: &DepthMap,
    cam: &CameraIntrinsics,
    hyper: &BaselineHyper,
) -> Result<GaussianScene> {
    hyper.validate()?;
    if image.width() != cam.width || image.height() != cam.height {
        return Err(Error::Dimension("image does not match camera size".into()));
    }
    if depth.width() != cam.width || depth.height() != cam.height {
        return Err(Error::Dimension("depth map does not match camera size".into()));
    }
    let opacity = hyper.opacity();
    let mut scene = GaussianScene::with_capacity(0, cam.width * cam.height);
    for iy in 0..cam.height {
        for ix in 0..cam.width {
            let d = depth.get(ix, iy);
            let u = cam.pixel_center(ix as isize, iy as isize);
            let mean = unproject_pixel(cam, u, d)?;
            let rgb = image.get(ix, iy);
            let s = hyper.variance(d);
            scene.push(Gaussian3D {
                mean,
                rotation: [1.0, 0.0, 0.0, 0.0],
                scale: Vector3::new(s, s, s),
                opacity,
                colour: ShCoefficients::new(
                    0,
                    vec![
                        hyper.alpha_colour * rgb[0] / SH_C0,
                        hyper.alpha_colour * rgb[1] / SH_C0,
                        hyper.alpha_colour * rgb[2] / SH_C0,
                    ],
                )?,
            })?;
        }
    }
    Ok(scene)
}

/// One scene for baseline tuning: a source view with its exact depth and the
/// target views (poses are camera-from-source-frame).
#[derive(Debug, Clone)]
pub struct BaselineSceneData {
    pub source: ImageRgb,
    pub depth: DepthMap,
    pub targets: Vec<(ImageRgb, Pose)>,
}

/// Gradient-based tuning of (alpha_colour, s0, sigma0) against the
/// photometric loss on the source view plus the target views of every scene.
/// Returns the hyperparameters with the lowest loss seen during the run.
pub fn tune_baseline(
    scenes: &[BaselineSceneData],
    cam: &CameraIntrinsics,
    init: &BaselineHyper,
    cfg: &FitConfig,
) -> Result<BaselineHyper> {
    if scenes.is_empty() {
        return Err(Error::Domain("baseline tuning needs at least one scene".into()));
    }
    init.validate()?;
    let mut hyper = *init;
    let mut m = [0.0f64; 3];
    let mut v = [0.0f64; 3];
    let mut best = (f64::INFINITY, hyper);

    for step in 0..cfg.steps {
        let mut loss_total = 0.0;
        let mut grad = [0.0f64; 3]; // d/d(alpha_colour, s0, sigma0)
        let opacity = hyper.opacity();
        let d_op_d_sigma0 =
            if opacity < OPACITY_CEIL { opacity * (1.0 - opacity) } else { 0.0 };

        for scene_data in scenes {
            let scene = unproject_baseline(&scene_data.source, &scene_data.depth, cam, &hyper)?;
            let mut views: Vec<(&ImageRgb, Pose)> = vec![(&scene_data.source, Pose::identity())];
            for (img, pose) in &scene_data.targets {
                views.push((img, *pose));
            }
            for (img, pose) in views {
                let out = render(&scene, cam, &pose, &cfg.render)?;
                let (loss, grad_img) = photometric_loss(&out.colour, img, &cfg.loss)?;
                loss_total += loss;
                let sg = render_backward(&scene, cam, &pose, &grad_img, &cfg.render)?;
                for (g, gauss) in (0..scene.len()).map(|g| (g, g)) {
                    let iy = gauss / cam.width;
                    let ix = gauss % cam.width;
                    let rgb = scene_data.source.get(ix, iy);
                    let coeff_grads = sg.coeffs_of(g);
                    for ch in 0..3 {
                        grad[0] += coeff_grads[ch] * rgb[ch] / SH_C0;
                    }
                    // ds/ds0 = s in both modes
                    let s = hyper.variance(scene_data.depth.get(ix, iy));
                    if (MIN_SCALE_VAR..=MAX_SCALE_VAR).contains(&s) {
                        grad[1] += (sg.d_scale[g].x + sg.d_scale[g].y + sg.d_scale[g].z) * s;
                    }
                    grad[2] += sg.d_opacity[g] * d_op_d_sigma0;
                }
            }
        }

        if best.0 > loss_total {
            best = (loss_total, hyper);
        }
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFiniteGradient("baseline hyperparameters".into()));
        }

        let t = (step + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let params = [&mut hyper.alpha_colour, &mut hyper.s0, &mut hyper.sigma0];
        for (i, p) in params.into_iter().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            *p -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon);
        }
    }

    // account for the final parameter values as well
    let mut final_loss = 0.0;
    for scene_data in scenes {
        let scene = unproject_baseline(&scene_data.source, &scene_data.depth, cam, &hyper)?;
        let out = render(&scene, cam, &Pose::identity(), &cfg.render)?;
        final_loss += photometric_loss(&out.colour, &scene_data.source, &cfg.loss)?.0;
        for (img, pose) in &scene_data.targets {
            let out = render(&scene, cam, pose, &cfg.render)?;
            final_loss += photometric_loss(&out.colour, img, &cfg.loss)?.0;
        }
    }
    if final_loss < best.0 {
        best = (final_loss, hyper);
    }
    Ok(best.1)
}
