//! Python bindings: load, encode, decode, render and measure scenes.

use omg_core::cameras::{load_cameras as core_load_cameras, parse_cameras};
use omg_core::field::export_decoded;
use omg_core::image::{save_pfm, save_png, Image as CoreImage};
use omg_core::metrics;
use omg_core::pipeline::{self, PipelineConfig, Preset};
use omg_core::raster::{self, RenderOptions};
use omg_core::synth::{ring_cameras, synth_scene, SynthSpec};
use omg_core::{ply, ErrorKind, SourceGaussianSet};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

create_exception!(omg, DataError, PyException, "Malformed or corrupt input data.");

fn to_py(e: omg_core::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Config => PyValueError::new_err(e.to_string()),
        ErrorKind::Io => PyOSError::new_err(e.to_string()),
        ErrorKind::Data => DataError::new_err(e.to_string()),
    }
}

/// A Gaussian scene in the standard 3DGS layout (activated opacities).
#[pyclass(module = "omg")]
struct Scene {
    inner: SourceGaussianSet,
}

#[pymethods]
impl Scene {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Scene({} Gaussians)", self.inner.len())
    }

    #[getter]
    fn positions(&self) -> Vec<[f32; 3]> {
        self.inner.positions.clone()
    }

    #[getter]
    fn log_scales(&self) -> Vec<[f32; 3]> {
        self.inner.log_scales.clone()
    }

    #[getter]
    fn rotations(&self) -> Vec<[f32; 4]> {
        self.inner.rotations.clone()
    }

    #[getter]
    fn opacities(&self) -> Vec<f64> {
        self.inner.opacities.clone()
    }

    #[getter]
    fn sh_dc(&self) -> Vec<[f32; 3]> {
        self.inner.sh_dc.clone()
    }

    #[getter]
    fn sh_rest(&self) -> Vec<Vec<f32>> {
        self.inner.sh_rest.iter().map(|r| r.to_vec()).collect()
    }

    fn save_ply(&self, path: &str) -> PyResult<()> {
        ply::write_ply(&self.inner, path).map_err(to_py)
    }

    #[pyo3(signature = (camera, background=None))]
    fn render(&self, py: Python<'_>, camera: &Camera, background: Option<[f64; 3]>) -> Image {
        let opts = RenderOptions { background: background.unwrap_or_default(), ..RenderOptions::default() };
        Image { inner: py.detach(|| raster::render(&self.inner, &camera.inner, &opts)) }
    }
}

#[pyclass(module = "omg", frozen, from_py_object)]
#[derive(Clone)]
struct Camera {
    inner: omg_core::Camera,
}

#[pymethods]
impl Camera {
    #[new]
    #[pyo3(signature = (width, height, fx, fy, cx, cy, rotation, translation))]
    #[allow(clippy::too_many_arguments)]
    fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64, rotation: [f64; 4], translation: [f64; 3]) -> PyResult<Self> {
        let inner = omg_core::Camera::from_quaternion(fx, fy, cx, cy, rotation, translation, width, height).map_err(to_py)?;
        Ok(Camera { inner })
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    /// World-to-camera quaternion (w, x, y, z).
    #[getter]
    fn rotation(&self) -> [f64; 4] {
        self.inner.quaternion()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.inner.translation
    }

    fn __repr__(&self) -> String {
        format!("Camera({}x{}, fx={:.3})", self.inner.width, self.inner.height, self.inner.fx)
    }
}

/// Linear RGB image, row-major, values nominally in [0, 1].
#[pyclass(module = "omg", frozen)]
struct Image {
    inner: CoreImage,
}

#[pymethods]
impl Image {
    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    /// Flat list of width * height * 3 floats.
    #[getter]
    fn data(&self) -> Vec<f32> {
        self.inner.data.clone()
    }

    fn pixel(&self, x: u32, y: u32) -> PyResult<[f32; 3]> {
        if x >= self.inner.width || y >= self.inner.height {
            return Err(PyValueError::new_err("pixel out of range"));
        }
        Ok(self.inner.pixel(x, y))
    }

    fn save_png(&self, path: &str) -> PyResult<()> {
        save_png(&self.inner, path).map_err(to_py)
    }

    fn save_pfm(&self, path: &str) -> PyResult<()> {
        save_pfm(&self.inner, path).map_err(to_py)
    }
}

#[pyfunction]
fn load_ply(path: &str) -> PyResult<Scene> {
    Ok(Scene { inner: ply::load_ply(path).map_err(to_py)? })
}

#[pyfunction]
fn load_cameras(path: &str) -> PyResult<Vec<Camera>> {
    let list = core_load_cameras(path).map_err(to_py)?;
    Ok(list.cameras().into_iter().map(|inner| Camera { inner }).collect())
}

#[pyfunction]
fn parse_camera_json(text: &str) -> PyResult<Vec<Camera>> {
    let list = parse_cameras(text).map_err(to_py)?;
    Ok(list.cameras().into_iter().map(|inner| Camera { inner }).collect())
}

/// Synthetic scene plus a ring of cameras looking at it.
#[pyfunction]
#[pyo3(signature = (gaussians=10_000, seed=0, cameras=8, width=256, height=256, mean_scale=None))]
fn synth(gaussians: usize, seed: u64, cameras: usize, width: u32, height: u32, mean_scale: Option<f64>) -> PyResult<(Scene, Vec<Camera>)> {
    let mut spec = SynthSpec { gaussians, seed, cameras, width, height, ..SynthSpec::default() };
    if let Some(s) = mean_scale {
        spec.mean_scale = s;
    }
    let scene = synth_scene(&spec).map_err(to_py)?;
    let cams = ring_cameras(&spec).map_err(to_py)?;
    Ok((Scene { inner: scene }, cams.into_iter().map(|inner| Camera { inner }).collect()))
}

/// Compresses a scene and returns the container bytes.
#[pyfunction]
#[pyo3(signature = (scene, cameras=None, *, preset=None, tau=None, lambda_=None, k=None, prune=true, svq=true, iterations=None, seed=0))]
#[allow(clippy::too_many_arguments)]
fn encode<'py>(
    py: Python<'py>,
    scene: &Scene,
    cameras: Option<Vec<Camera>>,
    preset: Option<&str>,
    tau: Option<f64>,
    lambda_: Option<f64>,
    k: Option<usize>,
    prune: bool,
    svq: bool,
    iterations: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyBytes>> {
    let mut cfg = PipelineConfig { prune, svq_enabled: svq, seed, tau, ..PipelineConfig::default() };
    if let Some(p) = preset {
        cfg.preset = Some(p.parse::<Preset>().map_err(to_py)?);
    }
    if let Some(l) = lambda_ {
        cfg.lambda = l;
    }
    if let Some(k) = k {
        cfg.k = k;
    }
    if let Some(it) = iterations {
        cfg.distill.iterations = it;
    }
    let cams: Vec<omg_core::Camera> = cameras.unwrap_or_default().into_iter().map(|c| c.inner).collect();
    let out = py.detach(|| pipeline::encode_scene(&scene.inner, &cams, &cfg)).map_err(to_py)?;
    Ok(PyBytes::new(py, &out.file))
}

/// Expands container bytes into a renderable scene.
#[pyfunction]
fn decode(py: Python<'_>, data: &[u8]) -> PyResult<Scene> {
    let set = py.detach(|| pipeline::decode_scene(data).map(|s| export_decoded(&s))).map_err(to_py)?;
    Ok(Scene { inner: set })
}

/// Size breakdown of container bytes, as JSON text.
#[pyfunction]
fn info(data: &[u8]) -> PyResult<String> {
    Ok(pipeline::size_report(data).map_err(to_py)?.to_json())
}

#[pyfunction]
fn psnr(a: &Image, b: &Image) -> PyResult<f64> {
    metrics::psnr(&a.inner, &b.inner).map(metrics::capped).map_err(to_py)
}

#[pyfunction]
fn ssim(a: &Image, b: &Image) -> PyResult<f64> {
    metrics::ssim(&a.inner, &b.inner).map_err(to_py)
}

#[pymodule]
fn omg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scene>()?;
    m.add_class::<Camera>()?;
    m.add_class::<Image>()?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    for f in [
        wrap_pyfunction!(load_ply, m)?,
        wrap_pyfunction!(load_cameras, m)?,
        wrap_pyfunction!(parse_camera_json, m)?,
        wrap_pyfunction!(synth, m)?,
        wrap_pyfunction!(encode, m)?,
        wrap_pyfunction!(decode, m)?,
        wrap_pyfunction!(info, m)?,
        wrap_pyfunction!(psnr, m)?,
        wrap_pyfunction!(ssim, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
