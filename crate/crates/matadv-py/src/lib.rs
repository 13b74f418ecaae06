//! Python bindings for the MAT-Adv laboratory.
//!
//! Exposes the pieces that are handy from a notebook: synthetic shape
//! sampling, imperceptibility metrics, the point-dropping defenses, the
//! attack's dropout mask, and labeled seed derivation. Heavy work (training,
//! full attack runs) stays behind the `matadv` CLI.

use matadv_core::geom::PointCloud;
use matadv_core::harness::synth::{ShapeClass, ShapeSpec};
use matadv_core::{attack, defense, metrics, seeds};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: matadv_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cloud(points: Vec<[f64; 3]>) -> PyResult<PointCloud> {
    PointCloud::new(points, None).map_err(to_py)
}

/// Crate version string.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Names accepted by `synth_cloud`.
#[pyfunction]
fn shape_classes() -> Vec<&'static str> {
    ShapeClass::ALL.iter().map(|c| c.name()).collect()
}

/// Sample one normalized synthetic cloud; returns an n x 3 list of points.
#[pyfunction]
#[pyo3(signature = (class, points = 256, size_jitter = 0.2, noise_sigma = 0.01, seed = 0))]
fn synth_cloud(
    class: &str,
    points: usize,
    size_jitter: f64,
    noise_sigma: f64,
    seed: u64,
) -> PyResult<Vec<[f64; 3]>> {
    let class: ShapeClass = class.parse().map_err(to_py)?;
    let spec = ShapeSpec { class, size_jitter, noise_sigma, points };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = spec.sample_cloud(0, &mut rng).map_err(to_py)?;
    Ok(cloud.points)
}

/// Squared bidirectional chamfer distance between two clouds.
#[pyfunction]
fn chamfer(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
    metrics::chamfer(&cloud(a)?, &cloud(b)?).map_err(to_py)
}

/// Symmetric Hausdorff distance between two clouds.
#[pyfunction]
fn hausdorff(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
    metrics::hausdorff(&cloud(a)?, &cloud(b)?).map_err(to_py)
}

/// Mean k-nearest-neighbor distance within one cloud.
#[pyfunction]
#[pyo3(signature = (points, k = 8))]
fn knn_mean(points: Vec<[f64; 3]>, k: usize) -> PyResult<f64> {
    metrics::knn_distance(&cloud(points)?, k).map_err(to_py)
}

/// Simple random sampling defense: drop `drop` points at random.
#[pyfunction]
fn srs(points: Vec<[f64; 3]>, drop: usize, seed: u64) -> PyResult<Vec<[f64; 3]>> {
    Ok(defense::srs(&cloud(points)?, drop, seed).map_err(to_py)?.points)
}

/// Statistical outlier removal defense with k neighbors and threshold mean + alpha * std.
#[pyfunction]
#[pyo3(signature = (points, k = 2, alpha = 1.1))]
fn sor(points: Vec<[f64; 3]>, k: usize, alpha: f64) -> PyResult<Vec<[f64; 3]>> {
    Ok(defense::sor(&cloud(points)?, k, alpha).map_err(to_py)?.points)
}

/// Keep-mask over n rows with exactly round(rho * n) entries dropped.
#[pyfunction]
fn dropout_mask(n: usize, rho: f64, seed: u64) -> PyResult<Vec<bool>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    attack::dropout_mask(n, rho, &mut rng).map_err(to_py)
}

/// Derive a stage seed from a label and the master seed.
#[pyfunction]
fn stage_seed(label: &str, master: u64) -> u64 {
    seeds::stage_seed(label, master)
}

/// Derive a per-item seed from a label, a base seed, and an index.
#[pyfunction]
fn stream_seed(label: &str, base: u64, index: u64) -> u64 {
    seeds::stream_seed(label, base, index)
}

#[pymodule]
fn matadv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(shape_classes, m)?)?;
    m.add_function(wrap_pyfunction!(synth_cloud, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(knn_mean, m)?)?;
    m.add_function(wrap_pyfunction!(srs, m)?)?;
    m.add_function(wrap_pyfunction!(sor, m)?)?;
    m.add_function(wrap_pyfunction!(dropout_mask, m)?)?;
    m.add_function(wrap_pyfunction!(stage_seed, m)?)?;
    m.add_function(wrap_pyfunction!(stream_seed, m)?)?;
    Ok(())
}
