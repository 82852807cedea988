//! Python bindings: cameras, poses, Gaussian scenes, the splatting renderer,
//! layered fitting, metrics, scale alignment, and the synthetic benchmark.
//!
//! Images cross the boundary as float64 numpy arrays: colour is (H, W, 3) in
//! [0, 1], depth and alpha are (H, W).

use numpy::{IntoPyArray, PyArray1, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use layersplat::align;
use layersplat::baseline;
use layersplat::fit;
use layersplat::geometry;
use layersplat::grad;
use layersplat::image::{ImageGray, ImageRgb};
use layersplat::io;
use layersplat::layered::DepthMap;
use layersplat::metrics;
use layersplat::render;
use layersplat::scene::GaussianScene;
use layersplat::synthetic;

fn err(e: layersplat::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn image_from_array(arr: PyReadonlyArray3<'_, f64>) -> PyResult<ImageRgb> {
    let shape = arr.as_array().shape().to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(PyValueError::new_err(format!(
            "colour image must have shape (H, W, 3), got {shape:?}"
        )));
    }
    let data: Vec<f64> = arr.as_array().iter().copied().collect();
    ImageRgb::from_data(shape[1], shape[0], data).map_err(err)
}

fn depth_from_array(arr: PyReadonlyArray2<'_, f64>) -> PyResult<DepthMap> {
    let shape = arr.as_array().shape().to_vec();
    let data: Vec<f64> = arr.as_array().iter().copied().collect();
    DepthMap::new(shape[1], shape[0], data).map_err(err)
}

fn image_to_array<'py>(py: Python<'py>, img: &ImageRgb) -> Bound<'py, PyArray3<f64>> {
    let arr = numpy::ndarray::Array3::from_shape_vec(
        (img.height(), img.width(), 3),
        img.data().to_vec(),
    )
    .expect("image buffer matches its dims");
    arr.into_pyarray(py)
}

fn gray_to_array<'py>(py: Python<'py>, img: &ImageGray) -> Bound<'py, PyArray2<f64>> {
    let arr =
        numpy::ndarray::Array2::from_shape_vec((img.height(), img.width()), img.data().to_vec())
            .expect("image buffer matches its dims");
    arr.into_pyarray(py)
}

/// Pinhole camera intrinsics in pixel units.
#[pyclass(name = "Camera", from_py_object)]
#[derive(Clone)]
struct PyCamera {
    inner: geometry::CameraIntrinsics,
}

#[pymethods]
impl PyCamera {
    #[new]
    #[pyo3(signature = (fx, fy, cx, cy, width, height))]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> PyResult<Self> {
        Ok(Self { inner: geometry::CameraIntrinsics::new(fx, fy, cx, cy, width, height).map_err(err)? })
    }

    /// Single focal length, principal point at the image center.
    #[staticmethod]
    fn centered(f: f64, width: usize, height: usize) -> PyResult<Self> {
        Ok(Self { inner: geometry::CameraIntrinsics::centered(f, width, height).map_err(err)? })
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.inner.fx
    }

    #[getter]
    fn fy(&self) -> f64 {
        self.inner.fy
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.inner.cx
    }

    #[getter]
    fn cy(&self) -> f64 {
        self.inner.cy
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    fn __repr__(&self) -> String {
        format!(
            "Camera(fx={}, fy={}, cx={}, cy={}, width={}, height={})",
            self.inner.fx, self.inner.fy, self.inner.cx, self.inner.cy, self.inner.width,
            self.inner.height
        )
    }
}

/// Rigid camera-from-world transform.
#[pyclass(name = "Pose", from_py_object)]
#[derive(Clone)]
struct PyPose {
    inner: geometry::Pose,
}

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (quaternion, translation))]
    fn new(quaternion: [f64; 4], translation: [f64; 3]) -> PyResult<Self> {
        Ok(Self {
            inner: geometry::Pose::new(
                quaternion,
                nalgebra::Vector3::new(translation[0], translation[1], translation[2]),
            )
            .map_err(err)?,
        })
    }

    #[staticmethod]
    fn identity() -> Self {
        Self { inner: geometry::Pose::identity() }
    }

    /// From 12 row-major values of the 3x4 camera-from-world matrix.
    #[staticmethod]
    fn from_matrix(values: Vec<f64>) -> PyResult<Self> {
        if values.len() != 12 {
            return Err(PyValueError::new_err("expected 12 row-major values"));
        }
        Ok(Self { inner: io::trajectory::pose_from_rows(&values, 0).map_err(err)? })
    }

    fn inverse(&self) -> Self {
        Self { inner: self.inner.inverse() }
    }

    fn compose(&self, other: &PyPose) -> Self {
        Self { inner: self.inner.compose(&other.inner) }
    }

    #[getter]
    fn quaternion(&self) -> [f64; 4] {
        self.inner.rotation_quat()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        let t = self.inner.translation();
        [t.x, t.y, t.z]
    }

    fn transform(&self, point: [f64; 3]) -> [f64; 3] {
        let p = self.inner.transform(&nalgebra::Vector3::new(point[0], point[1], point[2]));
        [p.x, p.y, p.z]
    }

    fn __repr__(&self) -> String {
        let q = self.inner.rotation_quat();
        let t = self.inner.translation();
        format!("Pose(quaternion={q:?}, translation=[{}, {}, {}])", t.x, t.y, t.z)
    }
}

/// An ordered set of 3D Gaussians.
#[pyclass(name = "Scene")]
struct PyScene {
    inner: GaussianScene,
}

#[pymethods]
impl PyScene {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn sh_degree(&self) -> usize {
        self.inner.sh_degree()
    }

    /// Means as an (N, 3) array.
    fn means<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        let n = self.inner.len();
        let mut data = Vec::with_capacity(n * 3);
        for m in self.inner.means() {
            data.extend_from_slice(&[m.x, m.y, m.z]);
        }
        numpy::ndarray::Array2::from_shape_vec((n, 3), data)
            .expect("shape matches")
            .into_pyarray(py)
    }

    /// Opacities as an (N,) array.
    fn opacities<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        numpy::ndarray::Array1::from_vec(self.inner.opacities().to_vec()).into_pyarray(py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: io::read_scene(path).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_scene(path, &self.inner).map_err(err)
    }

    fn export_ply(&self, path: &str) -> PyResult<()> {
        io::export_ply(path, &self.inner).map_err(err)
    }

    #[staticmethod]
    fn import_ply(path: &str) -> PyResult<Self> {
        Ok(Self { inner: io::import_ply(path).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Scene({} gaussians, sh_degree={})", self.inner.len(), self.inner.sh_degree())
    }
}

fn render_options(tile_size: usize, background: [f64; 3]) -> render::RenderOptions {
    render::RenderOptions { tile_size, background, ..Default::default() }
}

/// Render a scene; returns (colour (H,W,3), alpha (H,W), expected_depth (H,W)).
#[pyfunction]
#[pyo3(signature = (scene, camera, pose, tile_size = 16, background = [0.0, 0.0, 0.0], reference = false))]
fn render_scene<'py>(
    py: Python<'py>,
    scene: &PyScene,
    camera: &PyCamera,
    pose: &PyPose,
    tile_size: usize,
    background: [f64; 3],
    reference: bool,
) -> PyResult<(Bound<'py, PyArray3<f64>>, Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>)> {
    let opts = render_options(tile_size, background);
    let out = if reference {
        render::render_reference(&scene.inner, &camera.inner, &pose.inner, &opts).map_err(err)?
    } else {
        render::render(&scene.inner, &camera.inner, &pose.inner, &opts).map_err(err)?
    };
    Ok((
        image_to_array(py, &out.colour),
        gray_to_array(py, &out.alpha),
        gray_to_array(py, &out.expected_depth),
    ))
}

/// Soft point cloud at the given depths: one Gaussian per pixel.
#[pyfunction]
#[pyo3(signature = (image, depth, camera, alpha = 1.0, s0 = -4.5, sigma0 = 4.0, d0 = 10.0, depth_dependent = false))]
#[allow(clippy::too_many_arguments)]
fn unproject_baseline(
    image: PyReadonlyArray3<'_, f64>,
    depth: PyReadonlyArray2<'_, f64>,
    camera: &PyCamera,
    alpha: f64,
    s0: f64,
    sigma0: f64,
    d0: f64,
    depth_dependent: bool,
) -> PyResult<PyScene> {
    let img = image_from_array(image)?;
    let d = depth_from_array(depth)?;
    let hyper = baseline::BaselineHyper {
        alpha_colour: alpha,
        s0,
        sigma0,
        d0,
        mode: if depth_dependent {
            baseline::ScaleMode::DepthDependent
        } else {
            baseline::ScaleMode::Fixed
        },
    };
    Ok(PyScene { inner: baseline::unproject_baseline(&img, &d, &camera.inner, &hyper).map_err(err)? })
}

/// Fit the layered representation; returns (scene, loss_history, metrics).
#[pyfunction]
#[pyo3(signature = (source, depth, target_images, target_poses, camera, steps = 500,
    learning_rate = 1e-2, k_layers = 2, padding = 2, sh_degree = 0, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fit_layered_scene<'py>(
    py: Python<'py>,
    source: PyReadonlyArray3<'_, f64>,
    depth: PyReadonlyArray2<'_, f64>,
    target_images: Vec<PyReadonlyArray3<'py, f64>>,
    target_poses: Vec<PyPose>,
    camera: &PyCamera,
    steps: usize,
    learning_rate: f64,
    k_layers: usize,
    padding: usize,
    sh_degree: usize,
    seed: u64,
) -> PyResult<(PyScene, Vec<f64>, Vec<Bound<'py, PyDict>>)> {
    if target_images.len() != target_poses.len() {
        return Err(PyValueError::new_err("target image and pose counts differ"));
    }
    let src = image_from_array(source)?;
    let d = depth_from_array(depth)?;
    let mut targets = Vec::with_capacity(target_images.len());
    for (img, pose) in target_images.into_iter().zip(&target_poses) {
        targets.push((image_from_array(img)?, pose.inner));
    }
    let cfg = fit::FitConfig {
        learning_rate,
        steps,
        seed,
        k_layers,
        padding,
        sh_degree,
        ..Default::default()
    };
    let outcome = fit::fit_scene(&src, &d, &targets, &camera.inner, &cfg).map_err(err)?;
    let scene = layersplat::layered::build_layered_scene(
        &d,
        &outcome.raw,
        &camera.inner,
        &geometry::Pose::identity(),
        &cfg.activation,
    )
    .map_err(err)?;
    let mut metrics_out = Vec::new();
    for m in &outcome.target_metrics {
        let dict = PyDict::new(py);
        dict.set_item("psnr_db", m.psnr_db)?;
        dict.set_item("ssim", m.ssim)?;
        dict.set_item("crop_fraction", m.crop_fraction)?;
        metrics_out.push(dict);
    }
    Ok((PyScene { inner: scene }, outcome.loss_history, metrics_out))
}

#[pyfunction]
fn psnr(pred: PyReadonlyArray3<'_, f64>, target: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    metrics::psnr(&image_from_array(pred)?, &image_from_array(target)?).map_err(err)
}

#[pyfunction]
fn ssim(pred: PyReadonlyArray3<'_, f64>, target: PyReadonlyArray3<'_, f64>) -> PyResult<f64> {
    metrics::ssim(&image_from_array(pred)?, &image_from_array(target)?, &Default::default())
        .map_err(err)
}

/// Cropped-protocol metrics; returns {"psnr_db", "ssim", "crop_fraction"}.
#[pyfunction]
#[pyo3(signature = (pred, target, crop_fraction = 0.05))]
fn eval_pair<'py>(
    py: Python<'py>,
    pred: PyReadonlyArray3<'_, f64>,
    target: PyReadonlyArray3<'_, f64>,
    crop_fraction: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = metrics::eval_pair(&image_from_array(pred)?, &image_from_array(target)?, crop_fraction)
        .map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("psnr_db", m.psnr_db)?;
    dict.set_item("ssim", m.ssim)?;
    dict.set_item("crop_fraction", m.crop_fraction)?;
    Ok(dict)
}

/// Combined L1 + SSIM loss and its gradient image.
#[pyfunction]
fn photometric_loss<'py>(
    py: Python<'py>,
    pred: PyReadonlyArray3<'_, f64>,
    target: PyReadonlyArray3<'_, f64>,
) -> PyResult<(f64, Bound<'py, PyArray3<f64>>)> {
    let (loss, grad) = metrics::photometric_loss(
        &image_from_array(pred)?,
        &image_from_array(target)?,
        &Default::default(),
    )
    .map_err(err)?;
    Ok((loss, image_to_array(py, &grad)))
}

/// Geometric-mean scale aligning predicted to reference depths.
#[pyfunction]
fn scale_lsq(d_pred: Vec<f64>, d_ref: Vec<f64>) -> PyResult<f64> {
    let pairs = make_pairs(d_pred, d_ref)?;
    align::scale_lsq(&pairs).map_err(err)
}

fn make_pairs(d_pred: Vec<f64>, d_ref: Vec<f64>) -> PyResult<Vec<align::DepthPair>> {
    if d_pred.len() != d_ref.len() {
        return Err(PyValueError::new_err("depth lists must have equal length"));
    }
    d_pred
        .into_iter()
        .zip(d_ref)
        .map(|(p, r)| align::DepthPair::new(p, r).map_err(err))
        .collect()
}

/// RANSAC-robust scale estimation; returns (scale, inlier_indices).
#[pyfunction]
#[pyo3(signature = (d_pred, d_ref, sample_size = 5, iterations = 1000, threshold = 0.1, seed = 0))]
fn scale_ransac(
    d_pred: Vec<f64>,
    d_ref: Vec<f64>,
    sample_size: usize,
    iterations: usize,
    threshold: f64,
    seed: u64,
) -> PyResult<(f64, Vec<usize>)> {
    let pairs = make_pairs(d_pred, d_ref)?;
    let cfg = align::RansacConfig { sample_size, iterations, threshold, seed };
    align::scale_ransac(&pairs, &cfg).map_err(err)
}

/// Generate the seeded two-plane benchmark; returns a dict with the camera,
/// images, depth, and poses.
#[pyfunction]
#[pyo3(signature = (width = 96, height = 64, focal = 96.0, seed = 0, baseline_step = 0.12, n_targets = 3))]
fn make_two_plane<'py>(
    py: Python<'py>,
    width: usize,
    height: usize,
    focal: f64,
    seed: u64,
    baseline_step: f64,
    n_targets: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = synthetic::SyntheticConfig {
        width,
        height,
        focal,
        seed,
        baseline_step,
        n_targets,
        ..Default::default()
    };
    let s = synthetic::make_two_plane(&cfg).map_err(err)?;
    let dict = PyDict::new(py);
    dict.set_item("camera", PyCamera { inner: s.cam })?;
    dict.set_item("source", image_to_array(py, &s.source))?;
    let depth_gray = ImageGray::from_data(s.depth.width(), s.depth.height(), s.depth.data().to_vec())
        .expect("consistent dims");
    dict.set_item("depth", gray_to_array(py, &depth_gray))?;
    dict.set_item("gt_scene", PyScene { inner: s.gt_scene })?;
    dict.set_item("source_pose", PyPose { inner: s.source_pose })?;
    let targets: Vec<(Bound<'py, PyArray3<f64>>, PyPose)> = s
        .targets
        .iter()
        .map(|(img, pose)| (image_to_array(py, img), PyPose { inner: *pose }))
        .collect();
    dict.set_item("targets", targets)?;
    dict.set_item("heldout", (image_to_array(py, &s.heldout.0), PyPose { inner: s.heldout.1 }))?;
    Ok(dict)
}

/// Analytic-vs-numeric gradient check; returns {class: rel_err}.
#[pyfunction]
#[pyo3(signature = (seed = 0, gaussians = 20, degree = 1, step = 1e-5))]
fn gradcheck<'py>(
    py: Python<'py>,
    seed: u64,
    gaussians: usize,
    degree: usize,
    step: f64,
) -> PyResult<Bound<'py, PyDict>> {
    use rand::Rng;
    use rand::SeedableRng;

    let cam = geometry::CameraIntrinsics::new(80.0, 80.0, 48.0, 32.0, 96, 64).map_err(err)?;
    let scene = grad::random_check_scene(seed, gaussians, degree);
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed ^ 0x5eed);
    let mut weights = ImageRgb::zeros(cam.width, cam.height);
    for v in weights.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let loss = grad::WeightedColourLoss { weights };
    let report = grad::finite_diff_check(
        &scene,
        &cam,
        &geometry::Pose::identity(),
        &Default::default(),
        &loss,
        step,
    )
    .map_err(err)?;
    let dict = PyDict::new(py);
    for check in &report.checks {
        dict.set_item(check.class.name(), check.rel_err)?;
    }
    Ok(dict)
}

#[pymodule]
fn layersplat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCamera>()?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(render_scene, m)?)?;
    m.add_function(wrap_pyfunction!(unproject_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(fit_layered_scene, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(eval_pair, m)?)?;
    m.add_function(wrap_pyfunction!(photometric_loss, m)?)?;
    m.add_function(wrap_pyfunction!(scale_lsq, m)?)?;
    m.add_function(wrap_pyfunction!(scale_ransac, m)?)?;
    m.add_function(wrap_pyfunction!(make_two_plane, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
