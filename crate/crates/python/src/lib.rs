//! Python bindings: kernels, the quantile solver, rate exponents and the
//! verification suites. Inputs are plain nested lists of floats.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use kqr::experiments::example1_series as series;
use kqr::rates::{self, RateParams};
use kqr::suites::{self, CaseRow};
use kqr::{DataSet, Error, FitOptions, Points};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Convergence { .. } | Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn points(rows: Vec<Vec<f64>>) -> PyResult<Points> {
    Points::from_rows(&rows).map_err(to_py)
}

/// Kernel specification; build with the static constructors or from JSON.
#[pyclass(name = "KernelSpec", module = "pykqr", from_py_object)]
#[derive(Clone)]
struct PyKernelSpec {
    inner: kqr::KernelSpec,
}

#[pymethods]
impl PyKernelSpec {
    #[staticmethod]
    fn gaussian(sigma: f64) -> PyResult<Self> {
        Ok(PyKernelSpec {
            inner: kqr::KernelSpec::gaussian(sigma).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn sobolev_min() -> Self {
        PyKernelSpec {
            inner: kqr::KernelSpec::SobolevMin,
        }
    }

    #[staticmethod]
    fn additive(dims: Vec<usize>, components: Vec<PyKernelSpec>) -> PyResult<Self> {
        let layout = kqr::BlockLayout::new(dims).map_err(to_py)?;
        let comps = components.into_iter().map(|c| c.inner).collect();
        Ok(PyKernelSpec {
            inner: kqr::KernelSpec::additive(layout, comps).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn product(dims: Vec<usize>, components: Vec<PyKernelSpec>) -> PyResult<Self> {
        let layout = kqr::BlockLayout::new(dims).map_err(to_py)?;
        let comps = components.into_iter().map(|c| c.inner).collect();
        Ok(PyKernelSpec {
            inner: kqr::KernelSpec::product(layout, comps).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: kqr::KernelSpec =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(PyKernelSpec { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn eval(&self, x: Vec<f64>, xp: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&x, &xp).map_err(to_py)
    }

    fn kappa(&self) -> f64 {
        self.inner.kappa()
    }

    fn gram(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let g = kqr::gram(&self.inner, &points(x)?).map_err(to_py)?;
        let e = g.entries();
        Ok((0..e.nrows()).map(|i| e.row(i).iter().copied().collect()).collect())
    }

    fn __repr__(&self) -> String {
        format!("KernelSpec({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

/// Fitted quantile SVM.
#[pyclass(name = "Model", module = "pykqr")]
struct PyModel {
    inner: kqr::Model,
}

#[pymethods]
impl PyModel {
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        kqr::solver::predict_all(&self.inner, &points(x)?).map_err(to_py)
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha().to_vec()
    }

    #[getter]
    fn gap(&self) -> f64 {
        self.inner.gap()
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau()
    }

    fn rkhs_norm(&self) -> PyResult<f64> {
        self.inner.rkhs_norm().map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.to_json(&mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: kqr::Model::from_json(text.as_bytes()).map_err(to_py)?,
        })
    }
}

/// Minimizes the weighted pinball risk plus `lam |f|_H^2`.
#[pyfunction]
#[pyo3(signature = (kernel, x, y, lam, tau, weights=None, gap_tol=1e-8, max_epochs=10_000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit(
    kernel: &PyKernelSpec,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    lam: f64,
    tau: f64,
    weights: Option<Vec<f64>>,
    gap_tol: f64,
    max_epochs: usize,
    seed: u64,
) -> PyResult<PyModel> {
    let pts = points(x)?;
    let data = match weights {
        Some(w) => DataSet::with_unnormalized_weights(pts, y, w),
        None => DataSet::new(pts, y, None),
    }
    .map_err(to_py)?;
    let opts = FitOptions {
        gap_tol,
        max_epochs,
        seed,
    };
    Ok(PyModel {
        inner: kqr::fit(&kernel.inner, &data, lam, tau, &opts).map_err(to_py)?,
    })
}

#[pyfunction]
fn pinball(tau: f64, y: f64, t: f64) -> PyResult<f64> {
    kqr::pinball(tau, y, t).map_err(to_py)
}

#[pyfunction]
fn shifted(tau: f64, y: f64, t: f64) -> PyResult<f64> {
    kqr::shifted(tau, y, t).map_err(to_py)
}

/// `(value, active_term)` of the general learning-rate exponent.
#[pyfunction]
fn alpha_general(r: f64, beta: f64, theta: f64, zeta: f64) -> PyResult<(f64, usize)> {
    let res = rates::alpha_general(&RateParams::new(r, beta, theta, zeta).map_err(to_py)?).map_err(to_py)?;
    Ok((res.value, res.argmin_term))
}

/// Rows `(r, theta, zeta, alpha)`.
#[pyfunction]
fn table2() -> PyResult<Vec<(f64, f64, f64, f64)>> {
    Ok(rates::table2()
        .map_err(to_py)?
        .into_iter()
        .map(|r| (r.r, r.theta, r.zeta, r.alpha))
        .collect())
}

/// Rows `(d, ours, theirs)`.
#[pyfunction]
fn figure_curve(r: f64, theta: f64, zeta: f64, alpha_smooth: f64, d_max: usize) -> PyResult<Vec<(usize, f64, f64)>> {
    Ok(rates::figure_curve(r, theta, zeta, alpha_smooth, d_max)
        .map_err(to_py)?
        .into_iter()
        .map(|p| (p.d, p.ours, p.theirs))
        .collect())
}

#[pyfunction]
fn example1_series(m: usize) -> (f64, f64) {
    series(m)
}

type Report = (bool, Vec<(String, f64, f64, bool)>);

fn rows_out(rows: Vec<CaseRow>) -> Report {
    let pass = suites::all_pass(&rows);
    (pass, rows.into_iter().map(|r| (r.case, r.lhs, r.rhs, r.pass)).collect())
}

/// Runs a verification suite; returns `(all_pass, [(case, lhs, rhs, pass)])`.
#[pyfunction]
#[pyo3(signature = (suite, seed=0))]
fn verify(suite: &str, seed: u64) -> PyResult<Report> {
    let rows = match suite {
        "lemma2" => suites::lemma2_suite(seed, 100),
        "approx" => suites::approx_suite(seed, 10),
        "solver" => suites::solver_suite(seed),
        "example1" => suites::example1_suite(),
        "capacity" => {
            let v = suites::capacity_suite(seed, None, 1.0).map_err(to_py)?;
            let pass = v.pass();
            let (_, rows) = rows_out(v.coverage);
            return Ok((pass, rows));
        }
        other => return Err(PyValueError::new_err(format!("unknown suite {other:?}"))),
    }
    .map_err(to_py)?;
    Ok(rows_out(rows))
}

#[pymodule]
fn pykqr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernelSpec>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(pinball, m)?)?;
    m.add_function(wrap_pyfunction!(shifted, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_general, m)?)?;
    m.add_function(wrap_pyfunction!(table2, m)?)?;
    m.add_function(wrap_pyfunction!(figure_curve, m)?)?;
    m.add_function(wrap_pyfunction!(example1_series, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
