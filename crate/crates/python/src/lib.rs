//! Python bindings. Matrices cross the boundary as nested lists of floats.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mmgm::datamodel::{load_dataset, save_dataset, DatasetInfo};
use mmgm::inference::{self, Estimates, ModelFit, TestOptions};
use mmgm::simulate::{simulate_dataset, GraphKind, SimulationSpec};
use mmgm::spatial::{GammaPolicy, SpatialOptions};
use mmgm::temporal::TemporalOptions;
use mmgm::{Dimensions, EdgeSet, MultiSessionDataset, Trial};

fn to_py(e: mmgm::Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    if e.is_user_error() {
        PyValueError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Multi-session dataset of p × q trials.
#[pyclass(name = "Dataset", module = "mmgm_py")]
struct PyDataset {
    inner: MultiSessionDataset,
}

#[pymethods]
impl PyDataset {
    /// `sessions[l][k]` is trial k of session l as a list of p rows.
    #[new]
    fn new(sessions: Vec<Vec<Vec<Vec<f64>>>>) -> PyResult<Self> {
        let sessions = sessions
            .iter()
            .map(|s| {
                s.iter()
                    .map(|t| Trial::new(from_rows(t)?).map_err(to_py))
                    .collect::<PyResult<Vec<_>>>()
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = MultiSessionDataset::new(sessions, DatasetInfo::default()).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: load_dataset(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_dataset(&self.inner, path).map_err(to_py)
    }

    /// `(m, [n_l], p, q)`
    #[getter]
    fn dims(&self) -> (usize, Vec<usize>, usize, usize) {
        let d = self.inner.dims();
        (d.m(), d.n().to_vec(), d.p(), d.q())
    }

    fn trial(&self, session: usize, k: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .sessions()
            .get(session)
            .and_then(|s| s.get(k))
            .map(|t| to_rows(t.data()))
            .ok_or_else(|| PyValueError::new_err("trial index out of range"))
    }

    /// True partial correlations per session, when simulated.
    fn true_rho(&self) -> Option<Vec<Vec<Vec<f64>>>> {
        self.inner
            .ground_truth
            .as_ref()
            .map(|t| t.rho_s.iter().map(to_rows).collect())
    }

    fn scaled(&self, c: f64) -> Self {
        PyDataset {
            inner: self.inner.scaled(c),
        }
    }

    fn __repr__(&self) -> String {
        let d = self.inner.dims();
        format!("Dataset(m={}, n={:?}, p={}, q={})", d.m(), d.n(), d.p(), d.q())
    }
}

/// Fitted spatial and temporal models.
#[pyclass(name = "Fit", module = "mmgm_py")]
struct PyFit {
    inner: ModelFit,
    estimates: Estimates,
}

#[pymethods]
impl PyFit {
    fn rho(&self, session: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .spatial
            .rho
            .get(session)
            .map(to_rows)
            .ok_or_else(|| PyValueError::new_err("session out of range"))
    }

    fn temporal_sigma(&self, session: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .temporal
            .sessions
            .get(session)
            .map(|s| to_rows(&s.sigma))
            .ok_or_else(|| PyValueError::new_err("session out of range"))
    }

    #[getter]
    fn frob_sq_over_p(&self) -> Vec<f64> {
        self.estimates.frob_sq_over_p.clone()
    }

    /// Two-sided single-edge p-values (q × q, unit diagonal).
    fn pvalues(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&inference::fit_pvalues(&self.estimates).map_err(to_py)?))
    }

    /// Simultaneous sup-norm test. `edges` is a list of `(i, j)` pairs or
    /// None for every off-diagonal pair; `c > 0` gives the c-level test.
    #[pyo3(signature = (edges=None, alpha=0.05, bootstrap=3000, seed=0, c=0.0))]
    fn test<'py>(
        &self,
        py: Python<'py>,
        edges: Option<Vec<(usize, usize)>>,
        alpha: f64,
        bootstrap: usize,
        seed: u64,
        c: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let q = self.estimates.dims.q();
        let edges = match edges {
            None => EdgeSet::off_diagonal(q),
            Some(e) => EdgeSet::new(e, q).map_err(to_py)?,
        };
        let opts = TestOptions {
            alpha,
            bootstrap,
            seed,
        };
        let out = inference::c_level_test(&self.estimates, &edges, c, &opts).map_err(to_py)?;
        let r = &out.result;
        let d = PyDict::new(py);
        d.set_item("sup_norm", r.sup_norm)?;
        d.set_item("statistic", r.statistic)?;
        d.set_item("quantile", r.quantile)?;
        d.set_item("reject", r.reject)?;
        d.set_item("p_value", r.p_value)?;
        d.set_item("num_edges", r.num_edges)?;
        d.set_item("psd_repaired", r.psd_repaired)?;
        d.set_item("t_hat", out.statistic.t_hat.clone())?;
        d.set_item("edges", out.statistic.edges.clone())?;
        Ok(d)
    }
}

/// Simulates a dataset (`kind` is random, hub or chain).
#[pyfunction]
#[pyo3(signature = (kind, m, n, p, q, seed=0))]
fn simulate(kind: &str, m: usize, n: usize, p: usize, q: usize, seed: u64) -> PyResult<PyDataset> {
    let kind: GraphKind = kind.parse().map_err(to_py)?;
    let dims = Dimensions::balanced(m, n, p, q).map_err(to_py)?;
    let spec = SimulationSpec::new(kind, dims, seed);
    Ok(PyDataset {
        inner: simulate_dataset(&spec).map_err(to_py)?,
    })
}

/// Fits both models. `gamma` is a fixed penalty; by default the theory rate
/// times `c0` is used.
#[pyfunction]
#[pyo3(signature = (dataset, gamma=None, c0=0.5, eta=10.0))]
fn fit(dataset: &PyDataset, gamma: Option<f64>, c0: f64, eta: f64) -> PyResult<PyFit> {
    let spatial = SpatialOptions {
        gamma: match gamma {
            Some(g) => GammaPolicy::Fixed(g),
            None => GammaPolicy::Theory { c0 },
        },
        ..SpatialOptions::default()
    };
    let temporal = TemporalOptions {
        eta,
        ..TemporalOptions::default()
    };
    let inner = ModelFit::fit(&dataset.inner, &spatial, &temporal).map_err(to_py)?;
    let estimates = inner.estimates();
    Ok(PyFit { inner, estimates })
}

/// `(1 − α)` bootstrap quantile of `‖Z‖∞` for `Z ~ N(0, S)`.
#[pyfunction]
#[pyo3(signature = (s, alpha=0.05, bootstrap=3000, seed=0))]
fn bootstrap_quantile(s: Vec<Vec<f64>>, alpha: f64, bootstrap: usize, seed: u64) -> PyResult<f64> {
    let s = from_rows(&s)?;
    Ok(inference::bootstrap_quantile(&s, alpha, bootstrap, seed).map_err(to_py)?.0)
}

#[pymodule]
fn mmgm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_quantile, m)?)?;
    Ok(())
}
