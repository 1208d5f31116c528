//! Python bindings. Matrices cross the boundary as lists of rows and vectors
//! as flat lists of floats.

use ::admm_dad::admm_ref::{self, AdmmParams};
use ::admm_dad::bounds::{BoundInputs, BoundReport, YNormSource};
use ::admm_dad::data;
use ::admm_dad::model::{self, AnalysisOperator, MeasurementModel};
use ::admm_dad::training::{self, TrainConfig};
use ::admm_dad::unfolded::UnfoldedDecoder;
use ::admm_dad::{Error, Matrix, Vector};
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix: rows differ in length"));
    }
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn vector(v: Vec<f64>) -> Vector {
    Array1::from(v)
}

/// Redundant analysis operator with its frame bounds.
#[pyclass(name = "AnalysisOperator", frozen)]
struct PyAnalysisOperator {
    inner: AnalysisOperator,
}

#[pymethods]
impl PyAnalysisOperator {
    #[new]
    fn new(phi: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = model::build_analysis_operator(matrix(phi)?).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    #[getter]
    fn s_inverse_norm(&self) -> f64 {
        self.inner.s_inverse_norm()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.phi().dim()
    }

    fn phi(&self) -> Vec<Vec<f64>> {
        rows(self.inner.phi())
    }

    fn sinv_s_residual(&self) -> PyResult<f64> {
        model::sinv_s_residual(&self.inner).map_err(to_py)
    }

    fn assumption2_value(&self, measurement: &PyMeasurementModel, rho: f64) -> f64 {
        model::assumption2_value(&self.inner, &measurement.inner, rho)
    }
}

#[pyclass(name = "MeasurementModel", frozen)]
struct PyMeasurementModel {
    inner: MeasurementModel,
}

#[pymethods]
impl PyMeasurementModel {
    #[new]
    #[pyo3(signature = (a, noise_std = 0.0))]
    fn new(a: Vec<Vec<f64>>, noise_std: f64) -> PyResult<Self> {
        let inner = MeasurementModel::new(matrix(a)?, noise_std).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Gaussian matrix with `N(0, 1/m)` entries.
    #[staticmethod]
    fn sample(m: usize, n: usize, seed: u64) -> PyResult<Self> {
        let inner = model::sample_measurement_matrix(m, n, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn a_norm(&self) -> f64 {
        self.inner.a_norm()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.m(), self.inner.n())
    }

    fn a(&self) -> Vec<Vec<f64>> {
        rows(self.inner.a())
    }

    /// `A X + E` for signals given as columns of `x`.
    #[pyo3(signature = (x, noise_std = 0.0, seed = 0))]
    fn measure(&self, x: Vec<Vec<f64>>, noise_std: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let y = data::measure(matrix(x)?.view(), &self.inner, noise_std, seed).map_err(to_py)?;
        Ok(rows(&y))
    }
}

/// The unrolled decoder.
#[pyclass(name = "Decoder")]
struct PyDecoder {
    inner: UnfoldedDecoder,
}

#[pymethods]
impl PyDecoder {
    #[new]
    #[pyo3(signature = (phi, measurement, depth, lam = 1e-4, rho = 0.1, b_out = 1e6))]
    fn new(
        phi: Vec<Vec<f64>>,
        measurement: &PyMeasurementModel,
        depth: usize,
        lam: f64,
        rho: f64,
        b_out: f64,
    ) -> PyResult<Self> {
        let op = model::build_analysis_operator(matrix(phi)?).map_err(to_py)?;
        let params = AdmmParams::new(lam, rho).map_err(to_py)?;
        let inner = UnfoldedDecoder::new(op, measurement.inner.clone(), depth, params, b_out).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    fn phi(&self) -> Vec<Vec<f64>> {
        rows(self.inner.operator().phi())
    }

    fn set_phi(&mut self, phi: Vec<Vec<f64>>) -> PyResult<()> {
        self.inner.set_phi(matrix(phi)?).map_err(to_py)
    }

    /// Decodes one measurement vector.
    fn forward(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        let out = self.inner.forward(vector(y).view()).map_err(to_py)?;
        Ok(out.x_hat.to_vec())
    }

    /// Decodes the columns of `y`.
    fn forward_batch(&self, y: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let out = self.inner.forward_batch(matrix(y)?.view()).map_err(to_py)?;
        Ok(rows(&out))
    }

    fn train_mse(&self, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
        training::train_mse(&self.inner, matrix(x)?.view(), matrix(y)?.view()).map_err(to_py)
    }

    /// Gradient of the training MSE with respect to `Phi`.
    fn loss_gradient(&self, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let g = training::loss_gradient(&self.inner, matrix(x)?.view(), matrix(y)?.view()).map_err(to_py)?;
        Ok(rows(&g))
    }

    /// Trains `Phi` in place and returns the per-epoch history.
    #[pyo3(signature = (x_train, x_test, lr = 1e-4, max_epochs = 100, patience = 10, batch_size = 128, noise_std = 1e-4, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        x_train: Vec<Vec<f64>>,
        x_test: Vec<Vec<f64>>,
        lr: f64,
        max_epochs: usize,
        patience: usize,
        batch_size: usize,
        noise_std: f64,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mm = self.inner.measurement().clone();
        let prov = data::Provenance::Synthetic { seed };
        let train = data::Dataset::new(matrix(x_train)?, data::Split::Train, prov.clone())
            .measured(&mm, noise_std, seed.wrapping_add(1))
            .map_err(to_py)?;
        let test = data::Dataset::new(matrix(x_test)?, data::Split::Test, prov)
            .measured(&mm, noise_std, seed.wrapping_add(2))
            .map_err(to_py)?;
        let cfg = TrainConfig {
            learning_rate: lr,
            max_epochs,
            early_stop_patience: patience,
            batch_size,
            seed,
            ..TrainConfig::default()
        };
        let result = training::fit(self.inner.clone(), &train, &test, &cfg).map_err(to_py)?;
        self.inner = result.decoder;
        result
            .history
            .iter()
            .map(|rec| {
                let d = PyDict::new(py);
                d.set_item("epoch", rec.epoch)?;
                d.set_item("train_mse", rec.train_mse)?;
                d.set_item("test_mse", rec.test_mse)?;
                d.set_item("ege", rec.ege)?;
                d.set_item("sinv_s_residual", rec.sinv_s_residual)?;
                d.set_item("assumption2_value", rec.assumption2_value)?;
                Ok(d)
            })
            .collect()
    }
}

#[pyfunction]
fn soft_threshold(x: Vec<f64>, tau: f64) -> Vec<f64> {
    admm_ref::soft_threshold(vector(x).view(), tau).to_vec()
}

/// Solves the generalized LASSO with ADMM; returns `(x, objective_history)`.
#[pyfunction]
#[pyo3(signature = (op, measurement, y, lam, rho, max_iter = 5000, tol = 1e-8))]
fn solve_generalized_lasso(
    op: &PyAnalysisOperator,
    measurement: &PyMeasurementModel,
    y: Vec<f64>,
    lam: f64,
    rho: f64,
    max_iter: usize,
    tol: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let params = AdmmParams::new(lam, rho).map_err(to_py)?;
    let sol = admm_ref::solve_generalized_lasso(&op.inner, &measurement.inner, vector(y).view(), &params, max_iter, tol)
        .map_err(to_py)?;
    Ok((sol.x.to_vec(), sol.history))
}

#[pyfunction]
fn he_init(n: usize, big_n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&training::he_init(n, big_n, seed).map_err(to_py)?))
}

/// Standard normal train/test signals, each as an `n x count` matrix.
#[pyfunction]
fn generate_synthetic(n: usize, s_train: usize, s_test: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let (train, test) = data::generate_synthetic(n, s_train, s_test, seed).map_err(to_py)?;
    Ok((rows(train.signals()), rows(test.signals())))
}

/// Every bound constant for one configuration, as a dict.
#[pyfunction]
#[pyo3(signature = (alpha, beta, rho, a_norm, y_frob, b_in, b_out, n, big_n, s, depth, lam = 1e-4, delta = 0.05))]
#[allow(clippy::too_many_arguments)]
fn bound_report<'py>(
    py: Python<'py>,
    alpha: f64,
    beta: f64,
    rho: f64,
    a_norm: f64,
    y_frob: f64,
    b_in: f64,
    b_out: f64,
    n: usize,
    big_n: usize,
    s: usize,
    depth: usize,
    lam: f64,
    delta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let inputs = BoundInputs {
        alpha,
        beta,
        rho,
        lambda: lam,
        a_norm,
        ata_norm: a_norm * a_norm,
        y_frob,
        y_frob_source: YNormSource::Measured,
        b_in,
        b_out,
        n,
        big_n,
        s,
        depth,
        delta,
    };
    let r = BoundReport::compute(&inputs).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("q", r.q)?;
    d.set_item("g", r.g)?;
    d.set_item("k_l", r.k_l)?;
    d.set_item("sigma_l", r.sigma_l)?;
    d.set_item("log_sigma_l", r.log_sigma_l)?;
    d.set_item("output_bound", r.output_bound)?;
    d.set_item("rademacher_estimate", r.rademacher_estimate)?;
    d.set_item("theorem4_excess", r.theorem4_excess)?;
    d.set_item("theorem5_excess", r.theorem5_excess)?;
    Ok(d)
}

#[pymodule]
fn admm_dad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAnalysisOperator>()?;
    m.add_class::<PyMeasurementModel>()?;
    m.add_class::<PyDecoder>()?;
    m.add_function(wrap_pyfunction!(soft_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(solve_generalized_lasso, m)?)?;
    m.add_function(wrap_pyfunction!(he_init, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(bound_report, m)?)?;
    Ok(())
}
