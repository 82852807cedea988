//! Forward splatting renderer: project Gaussians to 2D footprints, bin into
//! tiles, depth-sort, and alpha-composite front to back.
//!
//! Determinism contract: output is bit-identical for any tile size and worker
//! count. Splats are globally sorted by (view depth, source index) and each
//! pixel composites the same splats in the same order regardless of tiling,
//! because per-pixel inclusion depends only on the splat's own footprint
//! cutoff (`m <= m_cut`), never on tile membership.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, Pose};
use crate::image::{ImageGray, ImageRgb};
use crate::scene::{covariance_of, Gaussian3D, GaussianScene};
use crate::sh::eval_sh;

/// Contributions with alpha below this threshold are dropped. The per-splat
/// footprint bound `m_cut` is derived from it, so the mass lost per pixel is
/// bounded by the splat count times `ALPHA_MIN`.
pub const ALPHA_MIN: f64 = 1e-12;

/// Renderer configuration; every field is surfaced as a CLI flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub tile_size: usize,
    /// Background colour composited behind the scene, linear RGB in [0, 1].
    pub background: [f64; 3],
    /// View-space near plane; splats at or behind it are culled.
    pub z_near: f64,
    /// Per-splat alpha clamp.
    pub alpha_max: f64,
    /// Stop compositing a pixel once transmittance falls below this.
    pub early_exit_transmittance: f64,
    /// Anti-alias blur added to the projected covariance diagonal, px^2.
    pub blur: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            tile_size: 16,
            background: [0.0, 0.0, 0.0],
            z_near: 0.01,
            alpha_max: 0.99,
            early_exit_transmittance: 1e-4,
            blur: 0.3,
        }
    }
}

impl RenderOptions {
    fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::Domain("tile size must be at least 1".into()));
        }
        if !(self.z_near > 0.0) {
            return Err(Error::Domain(format!("z_near must be positive, got {}", self.z_near)));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max <= 1.0) {
            return Err(Error::Domain(format!(
                "alpha_max must be in (0, 1], got {}",
                self.alpha_max
            )));
        }
        if !(0.0..1.0).contains(&self.early_exit_transmittance) {
            return Err(Error::Domain(format!(
                "early-exit transmittance must be in [0, 1), got {}",
                self.early_exit_transmittance
            )));
        }
        if !(self.blur >= 0.0) {
            return Err(Error::Domain(format!("blur must be non-negative, got {}", self.blur)));
        }
        if !self.background.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Domain(format!(
                "background colour must lie in [0, 1], got {:?}",
                self.background
            )));
        }
        Ok(())
    }
}

/// A Gaussian projected into screen space.
#[derive(Debug, Clone)]
pub struct Splat2D {
    /// Projected mean, standard image coordinates (pixels).
    pub mean2d: Vector2<f64>,
    /// Projected covariance including the anti-alias blur, px^2.
    pub cov2d: Matrix2<f64>,
    /// View-space z of the 3D mean, meters.
    pub view_depth: f64,
    /// Post-SH colour toward the camera, clamped non-negative.
    pub colour: [f64; 3],
    pub opacity: f64,
    /// Index of the source Gaussian in the scene; compositing tie-break.
    pub source_index: usize,
}

/// One render pass: colour, accumulated alpha, and alpha-weighted expected
/// depth (zero where nothing was hit).
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub colour: ImageRgb,
    pub alpha: ImageGray,
    pub expected_depth: ImageGray,
}

/// Projection Jacobian of the pinhole map at a view-space point.
pub(crate) fn projection_jacobian(cam: &CameraIntrinsics, v: &Vector3<f64>) -> [[f64; 3]; 2] {
    let inv_z = 1.0 / v.z;
    [
        [cam.fx * inv_z, 0.0, -cam.fx * v.x * inv_z * inv_z],
        [0.0, cam.fy * inv_z, -cam.fy * v.y * inv_z * inv_z],
    ]
}

/// Footprint cutoff: alpha stays above `ALPHA_MIN` inside `m <= m_cut`.
#[inline]
pub(crate) fn footprint_cut(opacity: f64) -> f64 {
    2.0 * (opacity / ALPHA_MIN).ln()
}

#[allow(clippy::too_many_arguments)]
fn splat_from_parts(
    mean: &Vector3<f64>,
    rotation: [f64; 4],
    scale: &Vector3<f64>,
    opacity: f64,
    colour: [f64; 3],
    source_index: usize,
    cam: &CameraIntrinsics,
    pose: &Pose,
    rot_w: &Matrix3<f64>,
    opts: &RenderOptions,
) -> Option<Splat2D> {
    if opacity <= ALPHA_MIN {
        return None;
    }
    let (mean2d, view_depth) = project_point(cam, pose, mean, opts.z_near)?;
    let v = rot_w * mean + pose.translation();

    let sigma = covariance_of(&Gaussian3D {
        mean: *mean,
        rotation,
        scale: *scale,
        opacity,
        colour: crate::sh::ShCoefficients::zeros(0),
    });
    let m_view = rot_w * sigma * rot_w.transpose();
    let j = projection_jacobian(cam, &v);

    // cov2d = J M J^T + blur I
    let mut cov = Matrix2::zeros();
    for r in 0..2 {
        for c in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                let mut jm = 0.0;
                for l in 0..3 {
                    jm += j[r][l] * m_view[(l, k)];
                }
                acc += jm * j[c][k];
            }
            cov[(r, c)] = acc;
        }
    }
    cov[(0, 0)] += opts.blur;
    cov[(1, 1)] += opts.blur;

    let m_cut = footprint_cut(opacity);
    let half_x = (m_cut * cov[(0, 0)]).sqrt();
    let half_y = (m_cut * cov[(1, 1)]).sqrt();
    if mean2d.x + half_x < 0.0
        || mean2d.x - half_x > cam.width as f64
        || mean2d.y + half_y < 0.0
        || mean2d.y - half_y > cam.height as f64
    {
        return None;
    }

    Some(Splat2D { mean2d, cov2d: cov, view_depth, colour, opacity, source_index })
}

/// Project one Gaussian; `None` means it was culled (behind the near plane or
/// its footprint misses the image), which is a normal outcome.
pub fn project_gaussian(
    g: &Gaussian3D,
    cam: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
) -> Option<Splat2D> {
    g.validate().ok()?;
    let rot_w = pose.rotation_matrix();
    let cam_center = pose.camera_center();
    let dir_raw = cam_center - g.mean;
    let dir = dir_raw / dir_raw.norm();
    let colour = eval_sh(&g.colour, &dir).ok()?;
    splat_from_parts(
        &g.mean,
        g.rotation,
        &g.scale,
        g.opacity,
        colour,
        0,
        cam,
        pose,
        &rot_w,
        opts,
    )
}

/// Splat prepared for compositing: inverse covariance and pixel bounds.
#[derive(Debug, Clone)]
pub(crate) struct CompositeSplat {
    pub mean: Vector2<f64>,
    /// Inverse of cov2d: [a, b, c] with m = a dx^2 + 2 b dx dy + c dy^2.
    pub conic: [f64; 3],
    pub m_cut: f64,
    pub colour: [f64; 3],
    pub opacity: f64,
    pub view_depth: f64,
    pub source_index: usize,
    /// Inclusive pixel index bounds of the footprint, clamped to the image.
    pub px_lo: (usize, usize),
    pub px_hi: (usize, usize),
}

fn to_composite(s: &Splat2D, width: usize, height: usize) -> Option<CompositeSplat> {
    let det = s.cov2d[(0, 0)] * s.cov2d[(1, 1)] - s.cov2d[(0, 1)] * s.cov2d[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let inv_det = 1.0 / det;
    let conic =
        [s.cov2d[(1, 1)] * inv_det, -s.cov2d[(0, 1)] * inv_det, s.cov2d[(0, 0)] * inv_det];
    let m_cut = footprint_cut(s.opacity);
    let half_x = (m_cut * s.cov2d[(0, 0)]).sqrt();
    let half_y = (m_cut * s.cov2d[(1, 1)]).sqrt();

    // Pixel centers sit at integer + 0.5.
    let lo_x = (s.mean2d.x - half_x - 0.5).ceil().max(0.0);
    let hi_x = (s.mean2d.x + half_x - 0.5).floor().min(width as f64 - 1.0);
    let lo_y = (s.mean2d.y - half_y - 0.5).ceil().max(0.0);
    let hi_y = (s.mean2d.y + half_y - 0.5).floor().min(height as f64 - 1.0);
    if lo_x > hi_x || lo_y > hi_y {
        return None;
    }
    Some(CompositeSplat {
        mean: s.mean2d,
        conic,
        m_cut,
        colour: s.colour,
        opacity: s.opacity,
        view_depth: s.view_depth,
        source_index: s.source_index,
        px_lo: (lo_x as usize, lo_y as usize),
        px_hi: (hi_x as usize, hi_y as usize),
    })
}

/// Project and cull every Gaussian of a scene; result is sorted front to back
/// by (view depth, source index).
pub(crate) fn prepare_scene(
    scene: &GaussianScene,
    cam: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
) -> Vec<CompositeSplat> {
    let rot_w = pose.rotation_matrix();
    let cam_center = pose.camera_center();
    let nc = scene.coeffs_per_gaussian();
    let degree = scene.sh_degree();
    let mut splats: Vec<CompositeSplat> = (0..scene.len())
        .into_par_iter()
        .filter_map(|i| {
            let mean = &scene.means()[i];
            let dir_raw = cam_center - mean;
            let norm = dir_raw.norm();
            if !(norm > 0.0) {
                return None;
            }
            let colour = eval_sh(
                &crate::sh::ShCoefficients::new(
                    degree,
                    scene.coeffs()[i * nc..(i + 1) * nc].to_vec(),
                )
                .ok()?,
                &(dir_raw / norm),
            )
            .ok()?;
            let s = splat_from_parts(
                mean,
                scene.rotations()[i],
                &scene.scales()[i],
                scene.opacities()[i],
                colour,
                i,
                cam,
                pose,
                &rot_w,
                opts,
            )?;
            to_composite(&s, cam.width, cam.height)
        })
        .collect();
    splats.sort_unstable_by(|a, b| {
        a.view_depth
            .partial_cmp(&b.view_depth)
            .expect("view depths are finite")
            .then(a.source_index.cmp(&b.source_index))
    });
    splats
}

/// Per-pixel compositing totals.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelComposite {
    pub rgb: [f64; 3],
    pub alpha: f64,
    pub depth_sum: f64,
    pub transmittance: f64,
}

/// Record of one splat's contribution to one pixel, for the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    /// Index into the splat list passed to the compositor.
    pub list_idx: u32,
    pub dx: f64,
    pub dy: f64,
    /// exp(-m/2) before the opacity product.
    pub e: f64,
    /// Composited alpha, after the alpha_max clamp.
    pub alpha: f64,
    /// Transmittance before this contribution.
    pub t_before: f64,
    pub clamped: bool,
}

pub(crate) trait ContribSink {
    fn record(&mut self, c: Contribution);
}

impl ContribSink for () {
    #[inline]
    fn record(&mut self, _c: Contribution) {}
}

impl ContribSink for Vec<Contribution> {
    #[inline]
    fn record(&mut self, c: Contribution) {
        self.push(c);
    }
}

/// Composite depth-sorted splats at pixel center `(px, py)`, front to back
/// with early exit. The forward semantics here define the compositing model;
/// the backward pass replays exactly this recurrence via the recorded
/// contributions.
#[inline]
pub(crate) fn composite_pixel<'a, I, S>(
    candidates: I,
    px: f64,
    py: f64,
    opts: &RenderOptions,
    sink: &mut S,
) -> PixelComposite
where
    I: Iterator<Item = (u32, &'a CompositeSplat)>,
    S: ContribSink,
{
    let mut rgb = [0.0; 3];
    let mut alpha_sum = 0.0;
    let mut depth_sum = 0.0;
    let mut t = 1.0;
    for (list_idx, s) in candidates {
        let dx = px - s.mean.x;
        let dy = py - s.mean.y;
        let m = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
        if m > s.m_cut || m < 0.0 {
            continue;
        }
        let e = (-0.5 * m).exp();
        let alpha_raw = s.opacity * e;
        let clamped = alpha_raw > opts.alpha_max;
        let alpha = if clamped { opts.alpha_max } else { alpha_raw };
        let w = alpha * t;
        rgb[0] += s.colour[0] * w;
        rgb[1] += s.colour[1] * w;
        rgb[2] += s.colour[2] * w;
        alpha_sum += w;
        depth_sum += s.view_depth * w;
        sink.record(Contribution { list_idx, dx, dy, e, alpha, t_before: t, clamped });
        t *= 1.0 - alpha;
        if t < opts.early_exit_transmittance {
            break;
        }
    }
    PixelComposite { rgb, alpha: alpha_sum, depth_sum, transmittance: t }
}

pub(crate) fn finalize_pixel(c: &PixelComposite, opts: &RenderOptions) -> ([f64; 3], f64, f64) {
    let colour = [
        (c.rgb[0] + c.transmittance * opts.background[0]).clamp(0.0, 1.0),
        (c.rgb[1] + c.transmittance * opts.background[1]).clamp(0.0, 1.0),
        (c.rgb[2] + c.transmittance * opts.background[2]).clamp(0.0, 1.0),
    ];
    let depth = if c.alpha > 0.0 { c.depth_sum / c.alpha } else { 0.0 };
    (colour, c.alpha, depth)
}

/// Tile decomposition with per-tile splat lists in global sorted order.
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub tile_size: usize,
    pub bins: Vec<Vec<u32>>,
}

pub(crate) fn bin_tiles(
    splats: &[CompositeSplat],
    width: usize,
    height: usize,
    tile_size: usize,
) -> TileBins {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        let tx0 = s.px_lo.0 / tile_size;
        let tx1 = s.px_hi.0 / tile_size;
        let ty0 = s.px_lo.1 / tile_size;
        let ty1 = s.px_hi.1 / tile_size;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    TileBins { tiles_x, tile_size, bins }
}

struct TileBuf {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    rgb: Vec<f64>,
    alpha: Vec<f64>,
    depth: Vec<f64>,
}

fn render_prepared(
    splats: &[CompositeSplat],
    cam: &CameraIntrinsics,
    opts: &RenderOptions,
) -> RenderOutput {
    let (width, height) = (cam.width, cam.height);
    let bins = bin_tiles(splats, width, height, opts.tile_size);

    let tiles: Vec<TileBuf> = (0..bins.bins.len())
        .into_par_iter()
        .map(|tile_idx| {
            let tx = tile_idx % bins.tiles_x;
            let ty = tile_idx / bins.tiles_x;
            let x0 = tx * bins.tile_size;
            let y0 = ty * bins.tile_size;
            let w = (width - x0).min(bins.tile_size);
            let h = (height - y0).min(bins.tile_size);
            let mut buf = TileBuf {
                x0,
                y0,
                w,
                h,
                rgb: vec![0.0; w * h * 3],
                alpha: vec![0.0; w * h],
                depth: vec![0.0; w * h],
            };
            let list = &bins.bins[tile_idx];
            // gather the tile's splats into a dense local array so the
            // per-pixel loop streams contiguous cache lines
            let tile_splats: Vec<CompositeSplat> =
                list.iter().map(|&i| splats[i as usize].clone()).collect();
            for yy in 0..h {
                let py = (y0 + yy) as f64 + 0.5;
                for xx in 0..w {
                    let px = (x0 + xx) as f64 + 0.5;
                    let comp = composite_pixel(
                        tile_splats.iter().enumerate().map(|(k, s)| (k as u32, s)),
                        px,
                        py,
                        opts,
                        &mut (),
                    );
                    let (colour, alpha, depth) = finalize_pixel(&comp, opts);
                    let o = yy * w + xx;
                    buf.rgb[o * 3..o * 3 + 3].copy_from_slice(&colour);
                    buf.alpha[o] = alpha;
                    buf.depth[o] = depth;
                }
            }
            buf
        })
        .collect();

    let mut colour = ImageRgb::zeros(width, height);
    let mut alpha = ImageGray::zeros(width, height);
    let mut expected_depth = ImageGray::zeros(width, height);
    for t in &tiles {
        for yy in 0..t.h {
            for xx in 0..t.w {
                let o = yy * t.w + xx;
                colour.set(t.x0 + xx, t.y0 + yy, [t.rgb[o * 3], t.rgb[o * 3 + 1], t.rgb[o * 3 + 2]]);
                alpha.set(t.x0 + xx, t.y0 + yy, t.alpha[o]);
                expected_depth.set(t.x0 + xx, t.y0 + yy, t.depth[o]);
            }
        }
    }
    RenderOutput { colour, alpha, expected_depth }
}

/// Diagnostic: run projection/culling/sorting only, returning the kept count.
pub fn prepare_scene_timing(
    scene: &GaussianScene,
    cam: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
) -> usize {
    prepare_scene(scene, cam, pose, opts).len()
}

fn check_render_inputs(cam: &CameraIntrinsics, opts: &RenderOptions) -> Result<()> {
    opts.validate()?;
    if cam.width == 0 || cam.height == 0 {
        return Err(Error::Dimension("cannot render a zero-size image".into()));
    }
    Ok(())
}

/// Render a scene from a viewpoint: tiled, parallel over tiles, deterministic.
pub fn render(
    scene: &GaussianScene,
    cam: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    check_render_inputs(cam, opts)?;
    let splats = prepare_scene(scene, cam, pose, opts);
    Ok(render_prepared(&splats, cam, opts))
}

/// Reference renderer: identical contract to [`render`], but every pixel
/// loops over the full splat list with no tiling. Oracle for the tiled path.
pub fn render_reference(
    scene: &GaussianScene,
    cam: &CameraIntrinsics,
    pose: &Pose,
    opts: &RenderOptions,
) -> Result<RenderOutput> {
    check_render_inputs(cam, opts)?;
    let splats = prepare_scene(scene, cam, pose, opts);
    let mut colour = ImageRgb::zeros(cam.width, cam.height);
    let mut alpha = ImageGray::zeros(cam.width, cam.height);
    let mut expected_depth = ImageGray::zeros(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let comp = composite_pixel(
                splats.iter().enumerate().map(|(i, s)| (i as u32, s)),
                x as f64 + 0.5,
                y as f64 + 0.5,
                opts,
                &mut (),
            );
            let (c, a, d) = finalize_pixel(&comp, opts);
            colour.set(x, y, c);
            alpha.set(x, y, a);
            expected_depth.set(x, y, d);
        }
    }
    Ok(RenderOutput { colour, alpha, expected_depth })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::sh::ShCoefficients;

    pub use crate::grad::random_check_scene as random_scene;

    /// A splat whose projected Gaussian evaluates to exactly 1 at the center
    /// of pixel (ix, iy).
    pub fn splat_on_pixel(
        cam: &CameraIntrinsics,
        ix: usize,
        iy: usize,
        z: f64,
        opacity: f64,
        rgb: [f64; 3],
    ) -> Gaussian3D {
        let u = cam.pixel_center(ix as isize, iy as isize);
        let mean = crate::geometry::unproject_pixel(cam, u, z).unwrap();
        Gaussian3D {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: Vector3::new(1e-4, 1e-4, 1e-4),
            opacity,
            colour: ShCoefficients::from_rgb(rgb),
        }
    }

    pub fn test_cam() -> CameraIntrinsics {
        CameraIntrinsics::new(80.0, 80.0, 48.0, 32.0, 96, 64).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::{random_scene, splat_on_pixel, test_cam};
    use super::*;
    use crate::sh::ShCoefficients;
    use approx::assert_relative_eq;

    fn gaussian_at(mean: Vector3<f64>, variance: f64, opacity: f64, rgb: [f64; 3]) -> Gaussian3D {
        Gaussian3D {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            scale: Vector3::new(variance, variance, variance),
            opacity,
            colour: ShCoefficients::from_rgb(rgb),
        }
    }

    #[test]
    fn empty_scene_renders_background() {
        let cam = test_cam();
        let opts = RenderOptions { background: [0.2, 0.4, 0.6], ..Default::default() };
        let out = render(&GaussianScene::new(0), &cam, &Pose::identity(), &opts).unwrap();
        for y in 0..cam.height {
            for x in 0..cam.width {
                assert_eq!(out.colour.get(x, y), [0.2, 0.4, 0.6]);
                assert_eq!(out.alpha.get(x, y), 0.0);
                assert_eq!(out.expected_depth.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn on_axis_projection_closed_form() {
        let cam = test_cam();
        let opts = RenderOptions::default();
        let s = 2e-3;
        let z = 2.0;
        let g = gaussian_at(Vector3::new(0.0, 0.0, z), s, 0.8, [0.5, 0.5, 0.5]);
        let splat = project_gaussian(&g, &cam, &Pose::identity(), &opts).unwrap();
        assert_relative_eq!(splat.mean2d.x, cam.cx, epsilon = 1e-12);
        assert_relative_eq!(splat.mean2d.y, cam.cy, epsilon = 1e-12);
        let expect = cam.fx * cam.fx * s / (z * z);
        assert_relative_eq!(splat.cov2d[(0, 0)], expect + opts.blur, epsilon = 1e-12);
        assert_relative_eq!(splat.cov2d[(1, 1)], expect + opts.blur, epsilon = 1e-12);
        assert_relative_eq!(splat.cov2d[(0, 1)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(splat.view_depth, z, epsilon = 1e-15);

        // doubling the depth quarters the Jacobian part of the footprint
        let g2 = gaussian_at(Vector3::new(0.0, 0.0, 2.0 * z), s, 0.8, [0.5, 0.5, 0.5]);
        let splat2 = project_gaussian(&g2, &cam, &Pose::identity(), &opts).unwrap();
        assert_relative_eq!(
            splat2.cov2d[(0, 0)] - opts.blur,
            (splat.cov2d[(0, 0)] - opts.blur) / 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = test_cam();
        let g = gaussian_at(Vector3::new(0.0, 0.0, -1.0), 1e-3, 0.8, [1.0, 0.0, 0.0]);
        assert!(project_gaussian(&g, &cam, &Pose::identity(), &RenderOptions::default()).is_none());
    }

    #[test]
    fn footprint_outside_image_is_culled() {
        let cam = test_cam();
        let g = gaussian_at(Vector3::new(100.0, 0.0, 2.0), 1e-4, 0.8, [1.0, 0.0, 0.0]);
        assert!(project_gaussian(&g, &cam, &Pose::identity(), &RenderOptions::default()).is_none());
    }

    #[test]
    fn single_splat_compositing_closed_form() {
        let cam = test_cam();
        let mut scene = GaussianScene::new(0);
        let c = [0.5, 0.25, 1.0];
        scene.push(splat_on_pixel(&cam, 20, 30, 2.0, 0.9, c)).unwrap();
        let out = render(&scene, &cam, &Pose::identity(), &RenderOptions::default()).unwrap();
        let got = out.colour.get(20, 30);
        for ch in 0..3 {
            assert_relative_eq!(got[ch], 0.9 * c[ch], epsilon = 1e-9);
        }
        assert_relative_eq!(out.alpha.get(20, 30), 0.9, epsilon = 1e-9);
        assert_relative_eq!(out.expected_depth.get(20, 30), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn two_splat_compositing_closed_form() {
        let cam = test_cam();
        let mut scene = GaussianScene::new(0);
        scene.push(splat_on_pixel(&cam, 40, 20, 2.0, 0.6, [1.0, 0.0, 0.0])).unwrap();
        scene.push(splat_on_pixel(&cam, 40, 20, 4.0, 0.8, [0.0, 1.0, 0.0])).unwrap();
        let out = render(&scene, &cam, &Pose::identity(), &RenderOptions::default()).unwrap();
        let got = out.colour.get(40, 20);
        assert_relative_eq!(got[0], 0.6, epsilon = 1e-9);
        assert_relative_eq!(got[1], 0.4 * 0.8, epsilon = 1e-9);
        assert_relative_eq!(got[2], 0.0, epsilon = 1e-12);
        assert_relative_eq!(out.alpha.get(40, 20), 0.92, epsilon = 1e-9);
    }

    #[test]
    fn monotone_occlusion_on_two_splat_fixture() {
        let cam = test_cam();
        let mut back_contrib = f64::INFINITY;
        for front_op in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let mut scene = GaussianScene::new(0);
            scene.push(splat_on_pixel(&cam, 40, 20, 2.0, front_op, [1.0, 0.0, 0.0])).unwrap();
            scene.push(splat_on_pixel(&cam, 40, 20, 4.0, 0.8, [0.0, 1.0, 0.0])).unwrap();
            let out = render(&scene, &cam, &Pose::identity(), &RenderOptions::default()).unwrap();
            let green = out.colour.get(40, 20)[1];
            assert!(
                green <= back_contrib + 1e-15,
                "back contribution grew: {green} > {back_contrib}"
            );
            back_contrib = green;
        }
    }

    #[test]
    fn alpha_plus_transmittance_telescopes() {
        let cam = test_cam();
        let scene = random_scene(99, 200, 0);
        let opts = RenderOptions::default();
        let splats = prepare_scene(&scene, &cam, &Pose::identity(), &opts);
        for (x, y) in [(5, 5), (48, 32), (90, 60), (20, 40)] {
            let comp = composite_pixel(
                splats.iter().enumerate().map(|(i, s)| (i as u32, s)),
                x as f64 + 0.5,
                y as f64 + 0.5,
                &opts,
                &mut (),
            );
            assert!((comp.alpha + comp.transmittance - 1.0).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&comp.alpha));
        }
    }

    #[test]
    fn deterministic_across_tile_sizes_and_threads() {
        let cam = test_cam();
        let scene = random_scene(7, 300, 1);
        let base = render(
            &scene,
            &cam,
            &Pose::identity(),
            &RenderOptions { tile_size: 16, ..Default::default() },
        )
        .unwrap();
        for tile in [8, 32] {
            let out = render(
                &scene,
                &cam,
                &Pose::identity(),
                &RenderOptions { tile_size: tile, ..Default::default() },
            )
            .unwrap();
            assert_eq!(base.colour, out.colour, "tile size {tile}");
            assert_eq!(base.alpha, out.alpha);
            assert_eq!(base.expected_depth, out.expected_depth);
        }
        for threads in [1usize, 4] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let out = pool.install(|| {
                render(
                    &scene,
                    &cam,
                    &Pose::identity(),
                    &RenderOptions { tile_size: 16, ..Default::default() },
                )
                .unwrap()
            });
            assert_eq!(base.colour, out.colour, "threads {threads}");
        }
    }

    #[test]
    fn tiled_matches_reference_oracle() {
        let cam = test_cam();
        for seed in [1, 2, 3] {
            let scene = random_scene(seed, 250, 1);
            let opts = RenderOptions::default();
            let tiled = render(&scene, &cam, &Pose::identity(), &opts).unwrap();
            let reference = render_reference(&scene, &cam, &Pose::identity(), &opts).unwrap();
            let max_diff = tiled
                .colour
                .data()
                .iter()
                .zip(reference.colour.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_diff < 1e-6, "seed {seed}: max diff {max_diff}");
        }
    }

    #[test]
    fn zero_size_image_is_rejected() {
        let cam = CameraIntrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, width: 0, height: 4 };
        let err =
            render(&GaussianScene::new(0), &cam, &Pose::identity(), &RenderOptions::default());
        assert!(err.is_err());
    }

    #[test]
    fn output_stays_in_range_with_bright_colours() {
        let cam = test_cam();
        let mut scene = GaussianScene::new(0);
        // SH colour above 1; the final clamp keeps the output in range
        scene.push(splat_on_pixel(&cam, 48, 32, 2.0, 0.95, [1.9, 0.2, 0.4])).unwrap();
        let out = render(&scene, &cam, &Pose::identity(), &RenderOptions::default()).unwrap();
        assert!(out.colour.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(out.colour.get(48, 32)[0], 1.0);
    }
}
