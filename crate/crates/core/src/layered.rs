//! Layered per-pixel scene construction: map a raw per-pixel, per-layer
//! parameter tensor plus a depth map into a Gaussian scene with depth-ordered
//! layers and a border padding band.
//!
//! Layer 1 of every pixel is anchored at the depth map value; each deeper
//! layer sits behind the previous one by a non-negative softplus offset, so
//! depth ordering holds by construction. Padding-band pixels take their base
//! depth from the nearest interior pixel (clamp-to-edge).

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{quat_normalize, unproject_pixel, CameraIntrinsics, Pose};
use crate::grad::SceneGradients;
use crate::image::{ImageGray, ImageRgb};
use crate::scene::{Gaussian3D, GaussianScene};
use crate::sh::{basis_count, ShCoefficients, SH_C0};

/// Largest activated opacity; stays strictly below 1 after an f32 round-trip.
pub const OPACITY_CEIL: f64 = 1.0 - 2e-7;
/// Smallest activated scale variance, meters^2.
pub const MIN_SCALE_VAR: f64 = 1e-12;
/// Largest activated scale variance, meters^2.
pub const MAX_SCALE_VAR: f64 = 1e12;

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`], for building fixtures: `ln(e^y - 1)`.
pub fn softplus_inverse(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

/// Positive depth map in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "depth buffer of {} values does not match {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if !data.iter().all(|d| d.is_finite() && *d > 0.0) {
            return Err(Error::Domain("depth map entries must be positive and finite".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Base depth for a padded-grid coordinate: clamp-to-edge lookup.
    #[inline]
    pub fn get_clamped(&self, ix: isize, iy: isize) -> f64 {
        let x = ix.clamp(0, self.width as isize - 1) as usize;
        let y = iy.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }
}

/// Grid geometry of a layered parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayeredShape {
    pub k_layers: usize,
    /// Padding band width in pixels on each side.
    pub padding: usize,
    pub interior_width: usize,
    pub interior_height: usize,
    pub sh_degree: usize,
}

impl LayeredShape {
    pub fn new(
        k_layers: usize,
        padding: usize,
        interior_width: usize,
        interior_height: usize,
        sh_degree: usize,
    ) -> Result<Self> {
        if k_layers < 1 {
            return Err(Error::Domain("layer count must be at least 1".into()));
        }
        if interior_width == 0 || interior_height == 0 {
            return Err(Error::Domain("interior grid must be non-empty".into()));
        }
        Ok(Self { k_layers, padding, interior_width, interior_height, sh_degree })
    }

    pub fn padded_width(&self) -> usize {
        self.interior_width + 2 * self.padding
    }

    pub fn padded_height(&self) -> usize {
        self.interior_height + 2 * self.padding
    }

    /// Pixels per layer on the padded grid.
    pub fn pixels(&self) -> usize {
        self.padded_width() * self.padded_height()
    }

    /// Total Gaussians emitted: K * (H + 2P) * (W + 2P).
    pub fn gaussian_count(&self) -> usize {
        self.k_layers * self.pixels()
    }

    /// Raw channels per layer, counting the depth-offset channel only for
    /// layers past the first: 11 + 3 (L+1)^2 for layer 1.
    pub fn channels_of_layer(&self, layer: usize) -> usize {
        let base = 1 + 3 + 3 + 4 + 3 * basis_count(self.sh_degree);
        if layer == 0 {
            base
        } else {
            base + 1
        }
    }
}

/// Parameter field kinds inside the raw tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamField {
    Opacity,
    DeltaDepth,
    Offset,
    Scale,
    Rotation,
    Colour,
}

impl ParamField {
    pub fn name(&self) -> &'static str {
        match self {
            ParamField::Opacity => "opacity",
            ParamField::DeltaDepth => "delta_depth",
            ParamField::Offset => "offset",
            ParamField::Scale => "scale",
            ParamField::Rotation => "rotation",
            ParamField::Colour => "colour",
        }
    }
}

/// One contiguous field block in the flat raw layout.
#[derive(Debug, Clone, Copy)]
pub struct FieldRange {
    pub layer: usize,
    pub field: ParamField,
    pub start: usize,
    pub len: usize,
}

/// The raw per-pixel, per-layer parameter tensor: the optimization variable
/// standing in for a network's output. Flat storage, layer-major; within a
/// layer the fields are stored as contiguous planar blocks in the order
/// opacity, delta-depth (layers past the first), offset, scale, rotation,
/// colour.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLayeredParams {
    shape: LayeredShape,
    data: Vec<f64>,
}

impl RawLayeredParams {
    pub fn zeros(shape: LayeredShape) -> Self {
        let len: usize = (0..shape.k_layers)
            .map(|l| shape.channels_of_layer(l) * shape.pixels())
            .sum();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn shape(&self) -> LayeredShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Field blocks in storage order.
    pub fn field_ranges(&self) -> Vec<FieldRange> {
        let n = self.shape.pixels();
        let nb = basis_count(self.shape.sh_degree);
        let mut out = Vec::new();
        let mut at = 0;
        for layer in 0..self.shape.k_layers {
            let mut push = |field: ParamField, len: usize, at: &mut usize| {
                out.push(FieldRange { layer, field, start: *at, len });
                *at += len;
            };
            push(ParamField::Opacity, n, &mut at);
            if layer > 0 {
                push(ParamField::DeltaDepth, n, &mut at);
            }
            push(ParamField::Offset, 3 * n, &mut at);
            push(ParamField::Scale, 3 * n, &mut at);
            push(ParamField::Rotation, 4 * n, &mut at);
            push(ParamField::Colour, 3 * nb * n, &mut at);
        }
        debug_assert_eq!(at, self.data.len());
        out
    }

    fn range(&self, layer: usize, field: ParamField) -> Option<FieldRange> {
        self.field_ranges().into_iter().find(|r| r.layer == layer && r.field == field)
    }

    pub fn field(&self, layer: usize, field: ParamField) -> Option<&[f64]> {
        self.range(layer, field).map(|r| &self.data[r.start..r.start + r.len])
    }

    pub fn field_mut(&mut self, layer: usize, field: ParamField) -> Option<&mut [f64]> {
        self.range(layer, field).map(move |r| &mut self.data[r.start..r.start + r.len])
    }
}

/// Activation configuration for the raw-to-scene mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationConfig {
    /// Multiplier applied to the raw spatial offset.
    pub offset_scale: f64,
    /// Optional clamp on the offset norm, meters. Off by default.
    pub max_offset_norm: Option<f64>,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self { offset_scale: 1.0, max_offset_norm: None }
    }
}

/// Activated per-pixel, per-layer parameters on the padded grid.
/// Indexing is `layer * pixels + pixel` with row-major pixels.
#[derive(Debug, Clone)]
pub struct ActivatedPixelParams {
    pub shape: LayeredShape,
    /// Opacity in (0, 1).
    pub opacity: Vec<f64>,
    /// Depth offsets; exactly 0 for the first layer, positive after.
    pub delta: Vec<f64>,
    /// Spatial offset, camera frame, meters; 3 per entry.
    pub offset: Vec<f64>,
    /// Scale variances, meters^2; 3 per entry.
    pub scale: Vec<f64>,
    /// Unit quaternions, 4 per entry.
    pub rotation: Vec<f64>,
    /// SH coefficients, `3 * basis_count` per entry.
    pub colour: Vec<f64>,
}

/// Apply the activation functions: logistic opacity, softplus depth offsets
/// (layer 1 pinned at zero), exp scales, normalized rotations, scaled spatial
/// offsets, colour passthrough.
pub fn activate_params(raw: &RawLayeredParams, cfg: &ActivationConfig) -> Result<ActivatedPixelParams> {
    if !raw.is_finite() {
        return Err(Error::Domain("raw parameters must be finite".into()));
    }
    let shape = raw.shape();
    let n = shape.pixels();
    let k = shape.k_layers;
    let nb = basis_count(shape.sh_degree);
    let mut out = ActivatedPixelParams {
        shape,
        opacity: vec![0.0; k * n],
        delta: vec![0.0; k * n],
        offset: vec![0.0; k * n * 3],
        scale: vec![0.0; k * n * 3],
        rotation: vec![0.0; k * n * 4],
        colour: vec![0.0; k * n * 3 * nb],
    };
    for layer in 0..k {
        let op = raw.field(layer, ParamField::Opacity).expect("layout");
        for p in 0..n {
            out.opacity[layer * n + p] = logistic(op[p]).min(OPACITY_CEIL);
        }
        if layer > 0 {
            let dd = raw.field(layer, ParamField::DeltaDepth).expect("layout");
            for p in 0..n {
                out.delta[layer * n + p] = softplus(dd[p]);
            }
        }
        let off = raw.field(layer, ParamField::Offset).expect("layout");
        for p in 0..n {
            let mut d = [
                off[3 * p] * cfg.offset_scale,
                off[3 * p + 1] * cfg.offset_scale,
                off[3 * p + 2] * cfg.offset_scale,
            ];
            if let Some(max) = cfg.max_offset_norm {
                let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if norm > max {
                    let f = max / norm;
                    d = [d[0] * f, d[1] * f, d[2] * f];
                }
            }
            out.offset[(layer * n + p) * 3..(layer * n + p) * 3 + 3].copy_from_slice(&d);
        }
        let sc = raw.field(layer, ParamField::Scale).expect("layout");
        for (i, v) in sc.iter().enumerate() {
            out.scale[layer * n * 3 + i] = v.exp().clamp(MIN_SCALE_VAR, MAX_SCALE_VAR);
        }
        let rot = raw.field(layer, ParamField::Rotation).expect("layout");
        for p in 0..n {
            let q = [rot[4 * p], rot[4 * p + 1], rot[4 * p + 2], rot[4 * p + 3]];
            let qn = quat_normalize(q).map_err(|_| {
                Error::Domain(format!("zero-norm raw rotation at layer {layer}, pixel {p}"))
            })?;
            out.rotation[(layer * n + p) * 4..(layer * n + p) * 4 + 4].copy_from_slice(&qn);
        }
        let col = raw.field(layer, ParamField::Colour).expect("layout");
        out.colour[layer * n * 3 * nb..(layer + 1) * n * 3 * nb].copy_from_slice(col);
    }
    Ok(out)
}

fn check_depth_dims(shape: &LayeredShape, depth: &DepthMap, cam: &CameraIntrinsics) -> Result<()> {
    if depth.width() != shape.interior_width || depth.height() != shape.interior_height {
        return Err(Error::Dimension(format!(
            "depth map {}x{} does not match interior grid {}x{}",
            depth.width(),
            depth.height(),
            shape.interior_width,
            shape.interior_height
        )));
    }
    if cam.width != shape.interior_width || cam.height != shape.interior_height {
        return Err(Error::Dimension(format!(
            "camera {}x{} does not match interior grid {}x{}",
            cam.width, cam.height, shape.interior_width, shape.interior_height
        )));
    }
    Ok(())
}

/// Per-pixel, per-layer depths on the padded grid: `d_i = D + sum delta_j`.
fn layer_depths(depth: &DepthMap, act: &ActivatedPixelParams) -> Vec<f64> {
    let shape = act.shape;
    let n = shape.pixels();
    let p = shape.padding as isize;
    let wp = shape.padded_width();
    let mut depths = vec![0.0; shape.k_layers * n];
    for py in 0..shape.padded_height() {
        for px in 0..wp {
            let pix = py * wp + px;
            depths[pix] = depth.get_clamped(px as isize - p, py as isize - p);
        }
    }
    for layer in 1..shape.k_layers {
        for pix in 0..n {
            depths[layer * n + pix] = depths[(layer - 1) * n + pix] + act.delta[layer * n + pix];
        }
    }
    depths
}

/// Build the Gaussian scene from a depth map and raw parameters. Gaussians
/// are emitted layer-major, row-major; means are anchored on the padded-grid
/// pixel rays at the per-layer depth, offset by delta, and mapped into the
/// world frame by the inverse of `source_pose`.
pub fn build_layered_scene(
    depth: &DepthMap,
    raw: &RawLayeredParams,
    cam: &CameraIntrinsics,
    source_pose: &Pose,
    cfg: &ActivationConfig,
) -> Result<GaussianScene> {
    let shape = raw.shape();
    check_depth_dims(&shape, depth, cam)?;
    let act = activate_params(raw, cfg)?;
    build_scene_from_activated(depth, &act, cam, source_pose)
}

/// Scene construction from already-activated parameters.
pub fn build_scene_from_activated(
    depth: &DepthMap,
    act: &ActivatedPixelParams,
    cam: &CameraIntrinsics,
    source_pose: &Pose,
) -> Result<GaussianScene> {
    let shape = act.shape;
    check_depth_dims(&shape, depth, cam)?;
    let n = shape.pixels();
    let nb = basis_count(shape.sh_degree);
    let pad = shape.padding as isize;
    let wp = shape.padded_width();
    let depths = layer_depths(depth, act);
    let world_from_cam = source_pose.inverse();

    let mut scene = GaussianScene::with_capacity(shape.sh_degree, shape.gaussian_count());
    for layer in 0..shape.k_layers {
        for py in 0..shape.padded_height() {
            for px in 0..wp {
                let pix = py * wp + px;
                let idx = layer * n + pix;
                let u = cam.pixel_center(px as isize - pad, py as isize - pad);
                let d = depths[idx];
                let ray_point = unproject_pixel(cam, u, d)?;
                let off = &act.offset[idx * 3..idx * 3 + 3];
                let mean_cam = ray_point + Vector3::new(off[0], off[1], off[2]);
                let mean = world_from_cam.transform(&mean_cam);
                let rot = &act.rotation[idx * 4..idx * 4 + 4];
                let sc = &act.scale[idx * 3..idx * 3 + 3];
                let colour = ShCoefficients::new(
                    shape.sh_degree,
                    act.colour[idx * 3 * nb..(idx + 1) * 3 * nb].to_vec(),
                )?;
                scene.push(Gaussian3D {
                    mean,
                    rotation: [rot[0], rot[1], rot[2], rot[3]],
                    scale: Vector3::new(sc[0], sc[1], sc[2]),
                    opacity: act.opacity[idx],
                    colour,
                })?;
            }
        }
    }
    Ok(scene)
}

/// Per-layer diagnostic maps on the padded grid: (depth, opacity) per layer.
pub fn layer_depth_report(
    depth: &DepthMap,
    act: &ActivatedPixelParams,
) -> Vec<(ImageGray, ImageGray)> {
    let shape = act.shape;
    let n = shape.pixels();
    let (wp, hp) = (shape.padded_width(), shape.padded_height());
    let depths = layer_depths(depth, act);
    (0..shape.k_layers)
        .map(|layer| {
            let d = ImageGray::from_data(wp, hp, depths[layer * n..(layer + 1) * n].to_vec())
                .expect("consistent dims");
            let o = ImageGray::from_data(wp, hp, act.opacity[layer * n..(layer + 1) * n].to_vec())
                .expect("consistent dims");
            (d, o)
        })
        .collect()
}

/// Initial raw parameters for fitting: layer 1 reproduces the unprojected
/// source image (opacity ~0.88, one-pixel footprints, source colours);
/// deeper layers start transparent and grey, directly behind it.
pub fn init_raw_params(
    source: &ImageRgb,
    depth: &DepthMap,
    cam: &CameraIntrinsics,
    shape: LayeredShape,
) -> Result<RawLayeredParams> {
    if source.width() != shape.interior_width || source.height() != shape.interior_height {
        return Err(Error::Dimension(format!(
            "source image {}x{} does not match interior grid {}x{}",
            source.width(),
            source.height(),
            shape.interior_width,
            shape.interior_height
        )));
    }
    check_depth_dims(&shape, depth, cam)?;
    let mut raw = RawLayeredParams::zeros(shape);
    let n = shape.pixels();
    let nb = basis_count(shape.sh_degree);
    let pad = shape.padding as isize;
    let wp = shape.padded_width();
    let f = 0.5 * (cam.fx + cam.fy);

    for layer in 0..shape.k_layers {
        if let Some(op) = raw.field_mut(layer, ParamField::Opacity) {
            op.fill(if layer == 0 { 2.0 } else { 0.0 });
        }
        // scale: 1-sigma footprint of about one pixel at the anchored depth
        let scale = raw.field_mut(layer, ParamField::Scale).expect("layout");
        for py in 0..shape.padded_height() {
            for px in 0..wp {
                let pix = py * wp + px;
                let d = depth.get_clamped(px as isize - pad, py as isize - pad);
                let log_var = 2.0 * (d / f).ln();
                scale[3 * pix] = log_var;
                scale[3 * pix + 1] = log_var;
                scale[3 * pix + 2] = log_var;
            }
        }
        let rot = raw.field_mut(layer, ParamField::Rotation).expect("layout");
        for p in 0..n {
            rot[4 * p] = 1.0;
        }
        let colour = raw.field_mut(layer, ParamField::Colour).expect("layout");
        if layer == 0 {
            for py in 0..shape.padded_height() {
                for px in 0..wp {
                    let pix = py * wp + px;
                    let ix = (px as isize - pad).clamp(0, source.width() as isize - 1) as usize;
                    let iy = (py as isize - pad).clamp(0, source.height() as isize - 1) as usize;
                    let rgb = source.get(ix, iy);
                    for ch in 0..3 {
                        colour[pix * 3 * nb + ch * nb] = rgb[ch] / SH_C0;
                    }
                }
            }
        } else {
            for p in 0..n {
                for ch in 0..3 {
                    colour[p * 3 * nb + ch * nb] = 0.5 / SH_C0;
                }
            }
        }
    }
    Ok(raw)
}

/// Chain scene-space gradients back to the raw tensor through the activation
/// functions and the depth-anchored mean construction.
pub fn raw_gradients(
    depth: &DepthMap,
    raw: &RawLayeredParams,
    cam: &CameraIntrinsics,
    source_pose: &Pose,
    cfg: &ActivationConfig,
    scene_grads: &SceneGradients,
) -> Result<Vec<f64>> {
    let shape = raw.shape();
    check_depth_dims(&shape, depth, cam)?;
    if scene_grads.len() != shape.gaussian_count() {
        return Err(Error::Dimension(format!(
            "scene gradients for {} gaussians do not match layered count {}",
            scene_grads.len(),
            shape.gaussian_count()
        )));
    }
    let n = shape.pixels();
    let k = shape.k_layers;
    let nb = basis_count(shape.sh_degree);
    let pad = shape.padding as isize;
    let wp = shape.padded_width();
    let rot_src = source_pose.rotation_matrix();

    let mut out = vec![0.0; raw.len()];
    // per-layer slices of the raw tensor (avoid repeated range lookups)
    let ranges = raw.field_ranges();
    let find = |layer: usize, field: ParamField| -> usize {
        ranges.iter().find(|r| r.layer == layer && r.field == field).expect("layout").start
    };

    for py in 0..shape.padded_height() {
        for px in 0..wp {
            let pix = py * wp + px;
            let u = cam.pixel_center(px as isize - pad, py as isize - pad);
            let ray = Vector3::new(u.u_x / cam.fx, u.u_y / cam.fy, 1.0);

            // dL/d(mean_cam) per layer, and its projection on the pixel ray
            let mut gd = vec![0.0; k];
            for layer in 0..k {
                let g = layer * n + pix;
                let d_cam = rot_src * scene_grads.d_mean[g];
                gd[layer] = d_cam.dot(&ray);

                // spatial offset
                let off_start = find(layer, ParamField::Offset);
                let raw_off = [
                    raw.data()[off_start + 3 * pix],
                    raw.data()[off_start + 3 * pix + 1],
                    raw.data()[off_start + 3 * pix + 2],
                ];
                let mut d_off = [d_cam.x, d_cam.y, d_cam.z];
                if let Some(max) = cfg.max_offset_norm {
                    let dv = [
                        raw_off[0] * cfg.offset_scale,
                        raw_off[1] * cfg.offset_scale,
                        raw_off[2] * cfg.offset_scale,
                    ];
                    let norm = (dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2]).sqrt();
                    if norm > max {
                        // clamp jacobian: (max/norm) (I - u u^T)
                        let inv = 1.0 / norm;
                        let uhat = [dv[0] * inv, dv[1] * inv, dv[2] * inv];
                        let dot =
                            d_off[0] * uhat[0] + d_off[1] * uhat[1] + d_off[2] * uhat[2];
                        let f = max * inv;
                        for c in 0..3 {
                            d_off[c] = f * (d_off[c] - dot * uhat[c]);
                        }
                    }
                }
                for c in 0..3 {
                    out[off_start + 3 * pix + c] += d_off[c] * cfg.offset_scale;
                }

                // opacity through the logistic
                let op_start = find(layer, ParamField::Opacity);
                let raw_op = raw.data()[op_start + pix];
                let sig = logistic(raw_op);
                let d_sig = if sig < OPACITY_CEIL { sig * (1.0 - sig) } else { 0.0 };
                out[op_start + pix] += scene_grads.d_opacity[layer * n + pix] * d_sig;

                // scale through exp (zero past the clamp)
                let sc_start = find(layer, ParamField::Scale);
                for c in 0..3 {
                    let raw_sc = raw.data()[sc_start + 3 * pix + c];
                    let s = raw_sc.exp();
                    let ds = if (MIN_SCALE_VAR..=MAX_SCALE_VAR).contains(&s) { s } else { 0.0 };
                    out[sc_start + 3 * pix + c] += scene_grads.d_scale[g][c] * ds;
                }

                // rotation through normalization
                let rot_start = find(layer, ParamField::Rotation);
                let q_raw = [
                    raw.data()[rot_start + 4 * pix],
                    raw.data()[rot_start + 4 * pix + 1],
                    raw.data()[rot_start + 4 * pix + 2],
                    raw.data()[rot_start + 4 * pix + 3],
                ];
                let norm: f64 = q_raw.iter().map(|x| x * x).sum::<f64>().sqrt();
                let qh = [q_raw[0] / norm, q_raw[1] / norm, q_raw[2] / norm, q_raw[3] / norm];
                let dg = scene_grads.d_rotation[g];
                for c in 0..4 {
                    let mut acc = 0.0;
                    for d2 in 0..4 {
                        let delta = if c == d2 { 1.0 } else { 0.0 };
                        acc += (delta - qh[c] * qh[d2]) * dg[d2];
                    }
                    out[rot_start + 4 * pix + c] += acc / norm;
                }

                // colour passthrough
                let col_start = find(layer, ParamField::Colour);
                let src = scene_grads.coeffs_of(g);
                for c in 0..3 * nb {
                    out[col_start + pix * 3 * nb + c] += src[c];
                }
            }

            // depth offsets: delta_j moves layers j.. along the ray
            let mut suffix = 0.0;
            for layer in (1..k).rev() {
                suffix += gd[layer];
                let dd_start = find(layer, ParamField::DeltaDepth);
                let raw_dd = raw.data()[dd_start + pix];
                out[dd_start + pix] += suffix * logistic(raw_dd);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_point;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tiny_cam(w: usize, h: usize, f: f64) -> CameraIntrinsics {
        CameraIntrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    #[test]
    fn activation_closed_forms() {
        assert_relative_eq!(logistic(0.0), 0.5);
        assert_relative_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(softplus(softplus_inverse(0.7)), 0.7, epsilon = 1e-12);

        let shape = LayeredShape::new(2, 0, 2, 2, 0).unwrap();
        let raw = RawLayeredParams::zeros(shape);
        let mut raw = raw;
        // default rotation of all zeros must error
        assert!(activate_params(&raw, &ActivationConfig::default()).is_err());
        for layer in 0..2 {
            let rot = raw.field_mut(layer, ParamField::Rotation).unwrap();
            for p in 0..4 {
                rot[4 * p] = 1.0;
            }
        }
        let act = activate_params(&raw, &ActivationConfig::default()).unwrap();
        assert_relative_eq!(act.opacity[0], 0.5);
        assert_relative_eq!(act.scale[0], 1.0);
        assert_relative_eq!(act.delta[4], std::f64::consts::LN_2, epsilon = 1e-15);
        assert_eq!(act.delta[0], 0.0);
    }

    #[test]
    fn gaussian_counts() {
        let shape = LayeredShape::new(2, 0, 2, 2, 0).unwrap();
        assert_eq!(shape.gaussian_count(), 8);
        let shape = LayeredShape::new(2, 1, 2, 2, 0).unwrap();
        assert_eq!(shape.gaussian_count(), 32);
    }

    #[test]
    fn channel_counts_match_contract() {
        for degree in 0..=3 {
            let shape = LayeredShape::new(2, 1, 4, 4, degree).unwrap();
            let expected = 11 + 3 * basis_count(degree);
            assert_eq!(shape.channels_of_layer(0), expected);
            assert_eq!(shape.channels_of_layer(1), expected + 1);
        }
    }

    fn params_with_identity_rotation(shape: LayeredShape) -> RawLayeredParams {
        let mut raw = RawLayeredParams::zeros(shape);
        for layer in 0..shape.k_layers {
            let rot = raw.field_mut(layer, ParamField::Rotation).unwrap();
            for p in 0..shape.pixels() {
                rot[4 * p] = 1.0;
            }
        }
        raw
    }

    #[test]
    fn layer2_mean_follows_depth_offset() {
        // single pixel at the principal point with f = 1
        let cam = CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 1, 1).unwrap();
        let depth = DepthMap::constant(1, 1, 3.0).unwrap();
        let shape = LayeredShape::new(2, 0, 1, 1, 0).unwrap();
        let mut raw = params_with_identity_rotation(shape);
        raw.field_mut(1, ParamField::DeltaDepth).unwrap()[0] = softplus_inverse(0.7);
        let scene =
            build_layered_scene(&depth, &raw, &cam, &Pose::identity(), &ActivationConfig::default())
                .unwrap();
        assert_eq!(scene.len(), 2);
        assert_relative_eq!(scene.means()[0], Vector3::new(0.0, 0.0, 3.0), epsilon = 1e-12);
        assert_relative_eq!(scene.means()[1], Vector3::new(0.0, 0.0, 3.7), epsilon = 1e-12);
    }

    #[test]
    fn depth_ordering_holds_everywhere() {
        let cam = tiny_cam(6, 4, 10.0);
        let mut rng = StdRng::seed_from_u64(2);
        let depth = DepthMap::new(
            6,
            4,
            (0..24).map(|_| rng.random_range(1.0..5.0)).collect(),
        )
        .unwrap();
        let shape = LayeredShape::new(3, 1, 6, 4, 0).unwrap();
        let mut raw = params_with_identity_rotation(shape);
        for layer in 1..3 {
            for v in raw.field_mut(layer, ParamField::DeltaDepth).unwrap() {
                *v = rng.random_range(-4.0..2.0);
            }
        }
        let act = activate_params(&raw, &ActivationConfig::default()).unwrap();
        let report = layer_depth_report(&depth, &act);
        assert_eq!(report.len(), 3);
        for layer in 1..3 {
            for y in 0..report[0].0.height() {
                for x in 0..report[0].0.width() {
                    let prev = report[layer - 1].0.get(x, y);
                    let cur = report[layer].0.get(x, y);
                    assert!(cur > prev, "strict ordering: {cur} vs {prev}");
                }
            }
        }
    }

    #[test]
    fn depth_report_closed_forms() {
        let cam = tiny_cam(4, 3, 8.0);
        let depth =
            DepthMap::new(4, 3, (0..12).map(|i| 2.0 + 0.1 * i as f64).collect()).unwrap();
        // K = 1: single layer, depths equal D
        let shape = LayeredShape::new(1, 0, 4, 3, 0).unwrap();
        let raw = params_with_identity_rotation(shape);
        let act = activate_params(&raw, &ActivationConfig::default()).unwrap();
        let report = layer_depth_report(&depth, &act);
        assert_eq!(report.len(), 1);
        for y in 0..3 {
            for x in 0..4 {
                assert_eq!(report[0].0.get(x, y), depth.get(x, y));
            }
        }
        let _ = cam;

        // strongly negative raw opacities saturate to ~0
        let shape = LayeredShape::new(1, 0, 4, 3, 0).unwrap();
        let mut raw = params_with_identity_rotation(shape);
        raw.field_mut(0, ParamField::Opacity).unwrap().fill(-40.0);
        let act = activate_params(&raw, &ActivationConfig::default()).unwrap();
        let report = layer_depth_report(&depth, &act);
        assert!(report[0].1.data().iter().all(|v| *v < 1e-15));

        // delta = 1 everywhere shifts layer 2 by exactly 1
        let shape = LayeredShape::new(2, 0, 4, 3, 0).unwrap();
        let mut raw = params_with_identity_rotation(shape);
        raw.field_mut(1, ParamField::DeltaDepth).unwrap().fill(softplus_inverse(1.0));
        let act = activate_params(&raw, &ActivationConfig::default()).unwrap();
        let report = layer_depth_report(&depth, &act);
        for y in 0..3 {
            for x in 0..4 {
                assert_relative_eq!(report[1].0.get(x, y), depth.get(x, y) + 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn layer1_projects_back_to_its_pixel() {
        let cam = tiny_cam(8, 6, 12.0);
        let mut rng = StdRng::seed_from_u64(5);
        let depth =
            DepthMap::new(8, 6, (0..48).map(|_| rng.random_range(1.0..6.0)).collect()).unwrap();
        let shape = LayeredShape::new(1, 0, 8, 6, 0).unwrap();
        let raw = params_with_identity_rotation(shape);
        let scene =
            build_layered_scene(&depth, &raw, &cam, &Pose::identity(), &ActivationConfig::default())
                .unwrap();
        for iy in 0..6 {
            for ix in 0..8 {
                let g = iy * 8 + ix;
                let (px, d) =
                    project_point(&cam, &Pose::identity(), &scene.means()[g], 0.01).unwrap();
                assert_relative_eq!(px.x, ix as f64 + 0.5, epsilon = 1e-6);
                assert_relative_eq!(px.y, iy as f64 + 0.5, epsilon = 1e-6);
                assert_relative_eq!(d, depth.get(ix, iy), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn padded_band_uses_edge_depth_and_nonidentity_pose() {
        let cam = tiny_cam(4, 4, 6.0);
        let depth = DepthMap::new(
            4,
            4,
            (0..16).map(|i| 1.0 + i as f64 * 0.25).collect(),
        )
        .unwrap();
        let shape = LayeredShape::new(1, 2, 4, 4, 0).unwrap();
        let raw = params_with_identity_rotation(shape);
        let pose = Pose::new([0.98, 0.1, -0.05, 0.05], Vector3::new(0.2, -0.1, 0.3)).unwrap();
        let scene = build_layered_scene(&depth, &raw, &cam, &pose, &ActivationConfig::default())
            .unwrap();
        assert_eq!(scene.len(), 64);
        // corner padding pixel anchors at the corner interior depth, on the
        // padded pixel's own ray, in the world frame
        let u = cam.pixel_center(-2, -2);
        let expect_cam = unproject_pixel(&cam, u, depth.get(0, 0)).unwrap();
        let expect_world = pose.inverse().transform(&expect_cam);
        assert_relative_eq!(scene.means()[0], expect_world, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cam = tiny_cam(4, 4, 6.0);
        let depth = DepthMap::constant(5, 4, 2.0).unwrap();
        let shape = LayeredShape::new(1, 0, 4, 4, 0).unwrap();
        let raw = params_with_identity_rotation(shape);
        assert!(build_layered_scene(
            &depth,
            &raw,
            &cam,
            &Pose::identity(),
            &ActivationConfig::default()
        )
        .is_err());
    }

    #[test]
    fn raw_gradient_chain_matches_finite_differences() {
        use crate::grad::{render_backward, RenderLoss, WeightedColourLoss};
        use crate::render::{render, RenderOptions};

        let cam = tiny_cam(6, 4, 8.0);
        let mut rng = StdRng::seed_from_u64(9);
        let depth =
            DepthMap::new(6, 4, (0..24).map(|_| rng.random_range(1.5..4.0)).collect()).unwrap();
        let shape = LayeredShape::new(2, 1, 6, 4, 0).unwrap();
        let mut raw = RawLayeredParams::zeros(shape);
        for v in raw.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        // keep scales small enough to render quickly and rotations off zero
        for layer in 0..2 {
            for v in raw.field_mut(layer, ParamField::Scale).unwrap() {
                *v = rng.random_range(-5.0..-3.5);
            }
            let rot = raw.field_mut(layer, ParamField::Rotation).unwrap();
            for p in 0..shape.pixels() {
                rot[4 * p] += 1.5;
            }
            let col = raw.field_mut(layer, ParamField::Colour).unwrap();
            for v in col.iter_mut() {
                *v = rng.random_range(0.5..2.5);
            }
        }

        let acfg = ActivationConfig::default();
        let opts = RenderOptions::default();
        let pose = Pose::identity();
        let mut weights = ImageRgb::zeros(cam.width, cam.height);
        for v in weights.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let loss = WeightedColourLoss { weights };

        let scene = build_layered_scene(&depth, &raw, &cam, &pose, &acfg).unwrap();
        let out = render(&scene, &cam, &pose, &opts).unwrap();
        let scene_grads =
            render_backward(&scene, &cam, &pose, &loss.colour_gradient(&out), &opts).unwrap();
        let analytic = raw_gradients(&depth, &raw, &cam, &pose, &acfg, &scene_grads).unwrap();

        let h = 1e-5;
        let mut work = raw.clone();
        let mut max_err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..raw.len() {
            let orig = work.data()[i];
            work.data_mut()[i] = orig + h;
            let sp = build_layered_scene(&depth, &work, &cam, &pose, &acfg).unwrap();
            let lp = loss.value(&render(&sp, &cam, &pose, &opts).unwrap());
            work.data_mut()[i] = orig - h;
            let sm = build_layered_scene(&depth, &work, &cam, &pose, &acfg).unwrap();
            let lm = loss.value(&render(&sm, &cam, &pose, &opts).unwrap());
            work.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            max_err = max_err.max((fd - analytic[i]).abs());
            scale = scale.max(fd.abs()).max(analytic[i].abs());
        }
        let rel = max_err / scale.max(1e-9);
        assert!(rel < 1e-3, "raw-level finite differences disagree: rel {rel}");
    }

    #[test]
    fn init_matches_source_colours_on_layer1() {
        let cam = tiny_cam(4, 4, 6.0);
        let mut source = ImageRgb::zeros(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                source.set(x, y, [x as f64 / 4.0, y as f64 / 4.0, 0.5]);
            }
        }
        let depth = DepthMap::constant(4, 4, 2.0).unwrap();
        let shape = LayeredShape::new(2, 1, 4, 4, 0).unwrap();
        let raw = init_raw_params(&source, &depth, &cam, shape).unwrap();
        let act = activate_params(&raw, &ActivationConfig::default()).unwrap();
        // interior pixel (1, 2) on the padded grid is (2, 3)
        let pix = 3 * shape.padded_width() + 2;
        let nb = 1;
        let dc = act.colour[pix * 3 * nb];
        assert_relative_eq!(dc * SH_C0, 0.25, epsilon = 1e-12);
        // layer 1 nearly opaque, layer 2 at half
        assert_relative_eq!(act.opacity[pix], logistic(2.0), epsilon = 1e-12);
        assert_relative_eq!(act.opacity[shape.pixels() + pix], 0.5, epsilon = 1e-12);
        // footprint of about one pixel: variance (d/f)^2
        assert_relative_eq!(act.scale[pix * 3], (2.0f64 / 6.0).powi(2), epsilon = 1e-12);
    }
}
