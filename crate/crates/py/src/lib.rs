//! Python module `idla_lab`.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use idla::cluster::Cluster as CoreCluster;
use idla::engine::grow;
use idla::error::IdlaError;
use idla::fluctuation::{early_late_scan, iteration_schedule, tentacle_scan};
use idla::green::{compute_green, harmonic_measure_levelset, GreenField as CoreGreen};
use idla::harmonic::{audit, solve_p, HarmonicField as CoreHarmonic};
use idla::lattice::{omega as lattice_omega, LatticeGeometry, Site};
use idla::martingale::run_martingales;
use idla::rng::RngStream;
use idla::sandpile::divisible_sandpile;
use idla::snapshot;
use idla::sweep::{sweep as run_sweep, ExperimentConfig};
use idla::walk::KernelSet;

/// Orbit key, edge count and mass.
type OrbitRow = (Vec<i32>, usize, f64);

fn err(e: IdlaError) -> PyErr {
    match e {
        IdlaError::Io(e) => PyOSError::new_err(e.to_string()),
        IdlaError::Resource(_) | IdlaError::NonConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Serializable value to the equivalent Python object.
fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyfunction]
fn omega(d: i64) -> PyResult<f64> {
    lattice_omega(d).map_err(err)
}

/// A cluster with arrival times.
#[pyclass(module = "idla_lab")]
struct Cluster {
    inner: CoreCluster,
}

#[pymethods]
impl Cluster {
    /// Grow `t` particles from the origin in dimension `d`.
    #[staticmethod]
    #[pyo3(signature = (d, t, seed=0, accel=false, kernel_cap=16))]
    fn grow(d: usize, t: u64, seed: u64, accel: bool, kernel_cap: u32) -> PyResult<Self> {
        let g = LatticeGeometry::new(d).map_err(err)?;
        let kernels = if accel {
            Some(KernelSet::powers_of_two(d, kernel_cap).map_err(err)?)
        } else {
            None
        };
        let mut rng = RngStream::new(seed, 0);
        Ok(Self {
            inner: grow(g, t, &mut rng, kernels.as_ref()),
        })
    }

    #[staticmethod]
    fn restore(path: &str) -> PyResult<Self> {
        let (inner, _) = snapshot::restore(path).map_err(err)?;
        Ok(Self { inner })
    }

    fn snapshot(&self, path: &str) -> PyResult<()> {
        snapshot::snapshot(&self.inner, None, path).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.count() as usize
    }

    fn __contains__(&self, x: Vec<i32>) -> bool {
        x.len() == self.inner.dim() && self.inner.contains(&x)
    }

    fn arrival(&self, x: Vec<i32>) -> Option<u64> {
        (x.len() == self.inner.dim()).then(|| self.inner.arrival(&x)).flatten()
    }

    /// Sites in arrival order.
    fn sites(&self) -> Vec<Vec<i32>> {
        self.inner.sites_by_arrival().map(|x| x.to_vec()).collect()
    }

    /// Early/late report as a dict.
    fn scan<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &early_late_scan(&self.inner).map_err(err)?)
    }

    fn tentacles<'py>(&self, py: Python<'py>, m: u32) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &tentacle_scan(&self.inner, m).map_err(err)?)
    }
}

/// Green function of the simple random walk on a cube.
#[pyclass(module = "idla_lab")]
struct GreenField {
    inner: CoreGreen,
}

#[pymethods]
impl GreenField {
    #[new]
    #[pyo3(signature = (d, radius=40))]
    fn new(d: usize, radius: i32) -> PyResult<Self> {
        Ok(Self {
            inner: compute_green(d, radius).map_err(err)?,
        })
    }

    #[getter]
    fn g0(&self) -> f64 {
        self.inner.g0()
    }

    #[getter]
    fn a_d(&self) -> f64 {
        self.inner.a_d()
    }

    fn __call__(&self, x: Vec<i32>) -> Option<f64> {
        self.inner.get(&x)
    }

    fn fit_a_d(&self, r_min: f64, r_max: f64) -> PyResult<f64> {
        self.inner.fit_a_d(r_min, r_max).map_err(err)
    }

    /// `(total mass, [(orbit key, edges, mass)])` on the level set `g = alpha`.
    fn harmonic_measure(&self, alpha: f64) -> PyResult<(f64, Vec<OrbitRow>)> {
        let hm = harmonic_measure_levelset(&self.inner, alpha).map_err(err)?;
        let orbits = hm.orbit_masses().into_iter().map(|o| (o.key, o.edges, o.p)).collect();
        Ok((hm.total(), orbits))
    }
}

/// Probability that the stopped walk from a site hits `y` first.
#[pyclass(module = "idla_lab")]
struct HarmonicField {
    inner: CoreHarmonic,
}

#[pymethods]
impl HarmonicField {
    #[new]
    #[pyo3(signature = (y, k=1))]
    fn new(y: Vec<i32>, k: u32) -> PyResult<Self> {
        Ok(Self {
            inner: solve_p(&Site::new(y), k).map_err(err)?,
        })
    }

    #[getter]
    fn p0(&self) -> f64 {
        self.inner.p0()
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual()
    }

    fn __call__(&self, x: Vec<i32>) -> Option<f64> {
        self.inner.get(&x)
    }

    #[pyo3(signature = (m=None))]
    fn audit<'py>(&self, py: Python<'py>, m: Option<u32>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &audit(&self.inner, m).map_err(err)?)
    }

    /// Terminal `(M, Shat)` of `runs` martingale runs of `t` particles.
    #[pyo3(signature = (t, runs, seed=0))]
    fn martingale(&self, t: u64, runs: usize, seed: u64) -> PyResult<Vec<(f64, f64)>> {
        let traces = run_martingales(&self.inner, t, runs, seed).map_err(err)?;
        Ok(traces.iter().map(|t| (t.terminal_m(), t.terminal_shat())).collect())
    }
}

/// `(total mass, c_inner, support size)` of the divisible sandpile.
#[pyfunction]
fn sandpile(d: usize, r: f64) -> PyResult<(f64, f64, usize)> {
    let sw = divisible_sandpile(d, r).map_err(err)?;
    Ok((sw.total(), sw.c_inner, sw.support().count()))
}

#[pyfunction]
#[pyo3(name = "iteration_schedule")]
fn schedule<'py>(py: Python<'py>, t: f64, c: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &iteration_schedule(t, c).map_err(err)?)
}

/// Runs a sweep from a JSON config string and returns the summary.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(err)?;
    to_py(py, &run_sweep(&cfg).map_err(err)?.summary)
}

#[pymodule]
fn idla_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cluster>()?;
    m.add_class::<GreenField>()?;
    m.add_class::<HarmonicField>()?;
    m.add_function(wrap_pyfunction!(omega, m)?)?;
    m.add_function(wrap_pyfunction!(sandpile, m)?)?;
    m.add_function(wrap_pyfunction!(schedule, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
