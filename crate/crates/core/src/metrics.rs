//! Photometric training loss (L1 + SSIM) and the evaluation metrics.
//!
//! The combined loss is `(1 - alpha) * L1 + alpha * (1 - SSIM) / 2` with
//! alpha = 0.85, following the established self-supervised photometric-loss
//! convention. SSIM uses an 11x11 Gaussian window (sigma 1.5) with
//! k1 = 0.01, k2 = 0.03 on a dynamic range of 1, computed on the valid
//! (fully-overlapping) region.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::ImageRgb;

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// SSIM weight in the combined loss.
    pub alpha: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub dynamic_range: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl LossConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("loss alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.ssim_window % 2 == 0 || self.ssim_window == 0 {
            return Err(Error::Domain(format!(
                "ssim window must be odd and positive, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_sigma > 0.0) || !(self.dynamic_range > 0.0) {
            return Err(Error::Domain("ssim sigma and dynamic range must be positive".into()));
        }
        Ok(())
    }
}

/// PSNR and SSIM under the cropped evaluation protocol.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub crop_fraction: f64,
}

fn check_dims(pred: &ImageRgb, target: &ImageRgb) -> Result<()> {
    if !pred.same_dims(target) {
        return Err(Error::Dimension(format!(
            "image sizes differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            target.width(),
            target.height()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all pixels and channels,
/// `+inf` for identical images (dynamic range 1).
pub fn psnr(pred: &ImageRgb, target: &ImageRgb) -> Result<f64> {
    check_dims(pred, target)?;
    let n = pred.data().len() as f64;
    let mse: f64 =
        pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as f64;
    let mut k: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - half;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-mode separable convolution of a plane with the kernel in both axes.
fn conv_valid(plane: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let w = kernel.len();
    let vw = width - w + 1;
    let vh = height - w + 1;
    let mut tmp = vec![0.0; vw * height];
    for y in 0..height {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                acc += wk * plane[y * width + x + k];
            }
            tmp[y * vw + x] = acc;
        }
    }
    let mut out = vec![0.0; vw * vh];
    for y in 0..vh {
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                acc += wk * tmp[(y + k) * vw + x];
            }
            out[y * vw + x] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: scatter valid-grid values back onto the input
/// grid through the separable window.
fn conv_valid_adjoint(valid: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let w = kernel.len();
    let vw = width - w + 1;
    let vh = height - w + 1;
    let mut out = vec![0.0; width * height];
    for y in 0..vh {
        for x in 0..vw {
            let v = valid[y * vw + x];
            if v == 0.0 {
                continue;
            }
            for (ky, wy) in kernel.iter().enumerate() {
                let scaled = wy * v;
                let row = (y + ky) * width + x;
                for (kx, wx) in kernel.iter().enumerate() {
                    out[row + kx] += wx * scaled;
                }
            }
        }
    }
    out
}

struct SsimPass {
    mean: f64,
    /// d(mean ssim)/d(pred plane), only filled when requested.
    grad: Option<Vec<f64>>,
}

fn ssim_plane(
    x: &[f64],
    y: &[f64],
    width: usize,
    height: usize,
    cfg: &LossConfig,
    with_grad: bool,
) -> SsimPass {
    let kernel = gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma);
    let w = cfg.ssim_window;
    let vw = width - w + 1;
    let vh = height - w + 1;
    let n_valid = (vw * vh) as f64;
    let c1 = (cfg.ssim_k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.ssim_k2 * cfg.dynamic_range).powi(2);

    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mu_x = conv_valid(x, width, height, &kernel);
    let mu_y = conv_valid(y, width, height, &kernel);
    let s_xx = conv_valid(&xx, width, height, &kernel);
    let s_yy = conv_valid(&yy, width, height, &kernel);
    let s_xy = conv_valid(&xy, width, height, &kernel);

    let mut total = 0.0;
    let mut g_mu = with_grad.then(|| vec![0.0; vw * vh]);
    let mut g_sxx = with_grad.then(|| vec![0.0; vw * vh]);
    let mut g_sxy = with_grad.then(|| vec![0.0; vw * vh]);

    for i in 0..vw * vh {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = s_xx[i] - mx * mx;
        let vy = s_yy[i] - my * my;
        let cxy = s_xy[i] - mx * my;
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * cxy + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = vx + vy + c2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        if with_grad {
            // x enters a1/b1 via mu, a2 via cxy = s_xy - mu_x mu_y, b2 via
            // vx = s_xx - mu_x^2. The factored forms and grouping below make
            // the gradient cancel exactly (bitwise) when x == y, so a
            // fixed-point fit sees a true zero gradient.
            let ds_a1 = a2 / (b1 * b2);
            let ds_a2 = a1 / (b1 * b2);
            let ds_b1 = -ds_a1 * (a1 / b1);
            let ds_b2 = -ds_a2 * (a2 / b2);
            let d_mu = (ds_a1 * (2.0 * my) + ds_b1 * (2.0 * mx))
                + (ds_a2 * (-2.0 * my) + ds_b2 * (-2.0 * mx));
            g_mu.as_mut().unwrap()[i] = d_mu / n_valid;
            g_sxx.as_mut().unwrap()[i] = ds_b2 / n_valid;
            g_sxy.as_mut().unwrap()[i] = ds_a2 * 2.0 / n_valid;
        }
    }
    let mean = total / n_valid;

    let grad = with_grad.then(|| {
        let t1 = conv_valid_adjoint(&g_mu.unwrap(), width, height, &kernel);
        let t2 = conv_valid_adjoint(&g_sxx.unwrap(), width, height, &kernel);
        let t3 = conv_valid_adjoint(&g_sxy.unwrap(), width, height, &kernel);
        (0..width * height).map(|i| t1[i] + 2.0 * x[i] * t2[i] + y[i] * t3[i]).collect()
    });
    SsimPass { mean, grad }
}

fn extract_plane(img: &ImageRgb, ch: usize) -> Vec<f64> {
    img.data().iter().skip(ch).step_by(3).copied().collect()
}

fn ssim_impl(
    pred: &ImageRgb,
    target: &ImageRgb,
    cfg: &LossConfig,
    with_grad: bool,
) -> Result<(f64, Option<ImageRgb>)> {
    check_dims(pred, target)?;
    cfg.validate()?;
    if pred.width() < cfg.ssim_window || pred.height() < cfg.ssim_window {
        return Err(Error::Dimension(format!(
            "image {}x{} smaller than ssim window {}",
            pred.width(),
            pred.height(),
            cfg.ssim_window
        )));
    }
    let (w, h) = (pred.width(), pred.height());
    let mut mean = 0.0;
    let mut grad = with_grad.then(|| ImageRgb::zeros(w, h));
    for ch in 0..3 {
        let x = extract_plane(pred, ch);
        let y = extract_plane(target, ch);
        let pass = ssim_plane(&x, &y, w, h, cfg, with_grad);
        mean += pass.mean / 3.0;
        if let (Some(g), Some(pg)) = (grad.as_mut(), pass.grad) {
            let data = g.data_mut();
            for (i, v) in pg.iter().enumerate() {
                data[i * 3 + ch] = v / 3.0;
            }
        }
    }
    Ok((mean, grad))
}

/// Mean structural similarity over channels and valid window positions.
pub fn ssim(pred: &ImageRgb, target: &ImageRgb, cfg: &LossConfig) -> Result<f64> {
    ssim_impl(pred, target, cfg, false).map(|(v, _)| v)
}

/// Combined photometric loss with its exact gradient w.r.t. `pred`:
/// `(1 - alpha) * mean|pred - target| + alpha * (1 - SSIM) / 2`.
pub fn photometric_loss(
    pred: &ImageRgb,
    target: &ImageRgb,
    cfg: &LossConfig,
) -> Result<(f64, ImageRgb)> {
    check_dims(pred, target)?;
    let n = pred.data().len() as f64;
    let l1: f64 =
        pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let (ssim_val, ssim_grad) = ssim_impl(pred, target, cfg, true)?;
    let loss = (1.0 - cfg.alpha) * l1 + cfg.alpha * (1.0 - ssim_val) / 2.0;

    let mut grad = ImageRgb::zeros(pred.width(), pred.height());
    let gd = grad.data_mut();
    let sg = ssim_grad.expect("gradient requested");
    for (i, (a, b)) in pred.data().iter().zip(target.data()).enumerate() {
        let sign = if a > b {
            1.0
        } else if a < b {
            -1.0
        } else {
            0.0
        };
        gd[i] = (1.0 - cfg.alpha) * sign / n - cfg.alpha / 2.0 * sg.data()[i];
    }
    Ok((loss, grad))
}

/// Crop rectangle of the evaluation protocol: floor(fraction * H) rows from
/// top and bottom, floor(fraction * W) columns from left and right.
pub fn crop_rect(width: usize, height: usize, fraction: f64) -> (usize, usize, usize, usize) {
    let mx = (fraction * width as f64).floor() as usize;
    let my = (fraction * height as f64).floor() as usize;
    (mx, my, width - 2 * mx, height - 2 * my)
}

/// Metrics on the border-cropped region (the protocol crops 5% per side).
pub fn eval_pair(pred: &ImageRgb, gt: &ImageRgb, crop_fraction: f64) -> Result<MetricsReport> {
    check_dims(pred, gt)?;
    if !(0.0..0.5).contains(&crop_fraction) {
        return Err(Error::Domain(format!("crop fraction must be in [0, 0.5), got {crop_fraction}")));
    }
    let (x0, y0, w, h) = crop_rect(pred.width(), pred.height(), crop_fraction);
    if w == 0 || h == 0 {
        return Err(Error::Dimension("crop leaves an empty image".into()));
    }
    let pc = pred.crop(x0, y0, w, h)?;
    let gc = gt.crop(x0, y0, w, h)?;
    let cfg = LossConfig::default();
    Ok(MetricsReport { psnr_db: psnr(&pc, &gc)?, ssim: ssim(&pc, &gc, &cfg)?, crop_fraction })
}
