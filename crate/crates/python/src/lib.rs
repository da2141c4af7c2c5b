//! Python bindings: datasets, model fitting and prediction, metrics, the
//! simulator and survival stacking.
//!
//! Invalid input raises `ValueError`; numerical failures (divergence, zero
//! censoring weights, degenerate curves) raise `ArithmeticError`.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use survkit::curves::{PredictionBundle, SurvivalModel, SurvivalPredictions};
use survkit::datamodel::{load_csv, write_csv, CsvSchema, SurvivalDataset, TimeGrid};
use survkit::metrics::{antolini_ctd, brier, d_calibration, harrell_cindex, ibs, CensorModel};
use survkit::nonparam::kaplan_meier;
use survkit::registry::{fit_model, FitSpec, SavedModel};
use survkit::simulate::{generate, Scenario};
use survkit::SurvError;

fn to_py(e: SurvError) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for survkit::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Labelled survival data: features, observed times and event codes (0 = censored).
#[pyclass(name = "Dataset", module = "survkit_py", frozen)]
pub struct Dataset {
    inner: SurvivalDataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (features, times, events, num_events=1))]
    fn new(features: Vec<Vec<f64>>, times: Vec<f64>, events: Vec<u32>, num_events: u32) -> PyResult<Self> {
        let inner = SurvivalDataset::from_columns_k(features, &times, &events, num_events).py_err()?;
        Ok(Dataset { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, num_events=1, time_col="time", event_col="event"))]
    fn from_csv(path: &str, num_events: u32, time_col: &str, event_col: &str) -> PyResult<Self> {
        let schema = CsvSchema {
            time_col: time_col.into(),
            event_col: event_col.into(),
            feature_cols: None,
            num_events,
        };
        Ok(Dataset {
            inner: load_csv(path, &schema).py_err()?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        write_csv(&self.inner, path, None).py_err()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn num_events(&self) -> u32 {
        self.inner.num_events()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    #[getter]
    fn events(&self) -> Vec<u32> {
        self.inner.events()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, dim={}, deaths={})", self.inner.len(), self.inner.dim(), self.inner.num_deaths())
    }
}

/// A fitted model of any supported family.
#[pyclass(name = "Model", module = "survkit_py", frozen)]
pub struct Model {
    inner: SavedModel,
}

fn curve_dict(b: &PredictionBundle) -> BTreeMap<&'static str, Vec<f64>> {
    let mut out = BTreeMap::from([
        ("time", b.grid.times().to_vec()),
        ("survival", b.survival.clone()),
        ("hazard", b.hazard.clone()),
        ("cumhaz", b.cumhaz.clone()),
    ]);
    if let Some(p) = &b.pmf {
        out.insert("pmf", p.clone());
    }
    out
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Model {
            inner: SavedModel::from_json(text).py_err()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py_err()
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyValueError::new_err(format!("cannot read {path}: {e}")))?;
        Self::from_json(&text)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| PyValueError::new_err(format!("cannot write {path}: {e}")))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn is_competing(&self) -> bool {
        self.inner.is_competing()
    }

    /// The model's own time grid, or None for grid-free families.
    #[getter]
    fn grid(&self) -> Option<Vec<f64>> {
        self.inner.natural_grid().map(|g| g.times().to_vec())
    }

    fn survival(&self, x: Vec<f64>, t: f64) -> PyResult<f64> {
        self.inner.survival_at(&x, t).py_err()
    }

    /// Curves for one input as a dict of lists keyed by time, survival, hazard and cumhaz.
    #[pyo3(signature = (x, times=None))]
    fn predict(&self, x: Vec<f64>, times: Option<Vec<f64>>) -> PyResult<BTreeMap<&'static str, Vec<f64>>> {
        let grid = match times {
            Some(t) => TimeGrid::new(t).py_err()?,
            None => self
                .inner
                .natural_grid()
                .ok_or_else(|| PyValueError::new_err("this model has no time grid of its own; pass times"))?,
        };
        Ok(curve_dict(&self.inner.predict(&x, &grid).py_err()?))
    }

    /// Cumulative incidence values per event type on the model grid.
    fn cif(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.cif(&x).py_err()?.into_iter().map(|c| c.values).collect())
    }

    fn __repr__(&self) -> String {
        let tag = serde_json::to_value(&self.inner)
            .ok()
            .and_then(|v| v.get("model").and_then(|m| m.as_str()).map(str::to_owned))
            .unwrap_or_default();
        format!("Model({tag}, dim={})", self.inner.dim())
    }
}

fn spec_from(py: Python<'_>, spec: Option<&str>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<FitSpec> {
    let mut value: serde_json::Value = match spec {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => serde_json::json!({}),
    };
    if let Some(kw) = kwargs {
        let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
        let extra: serde_json::Value = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        if let (Some(base), Some(extra)) = (value.as_object_mut(), extra.as_object()) {
            base.extend(extra.clone());
        }
    }
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// fit(dataset, spec=None, **kwargs) -> (Model, losses)
///
/// `spec` is a JSON object of fit settings; keyword arguments override it,
/// e.g. `fit(ds, model="deephit", epochs=50)`.
#[pyfunction]
#[pyo3(signature = (dataset, spec=None, **kwargs))]
fn fit(py: Python<'_>, dataset: &Dataset, spec: Option<&str>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<(Model, Vec<f64>)> {
    let spec = spec_from(py, spec, kwargs)?;
    let (m, trace) = py.detach(|| fit_model(&spec, &dataset.inner)).py_err()?;
    Ok((Model { inner: m }, trace.epochs))
}

/// Kaplan-Meier estimate as (times, survival).
#[pyfunction]
fn kaplan_meier_curve(dataset: &Dataset) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let km = kaplan_meier(&dataset.inner).py_err()?;
    Ok((km.grid().times().to_vec(), km.survival().to_vec()))
}

/// Survival predictions of a model on each record of a dataset.
struct Preds<'a> {
    model: &'a SavedModel,
    data: &'a SurvivalDataset,
}

impl SurvivalPredictions for Preds<'_> {
    fn len(&self) -> usize {
        self.data.len()
    }
    fn survival(&self, record: usize, t: f64) -> f64 {
        self.model.survival(&self.data.record(record).features, t)
    }
}

fn check_dims(model: &Model, ds: &Dataset) -> PyResult<()> {
    if model.inner.dim() != ds.inner.dim() {
        return Err(to_py(SurvError::DimensionMismatch {
            expected: model.inner.dim(),
            got: ds.inner.dim(),
        }));
    }
    Ok(())
}

/// Harrell's c-index of an arbitrary risk score (higher = earlier event).
#[pyfunction]
fn cindex(risk: Vec<f64>, dataset: &Dataset) -> PyResult<Option<f64>> {
    harrell_cindex(&risk, &dataset.inner).py_err()
}

/// Antolini's time-dependent concordance of a model.
#[pyfunction]
fn concordance_td(model: &Model, dataset: &Dataset) -> PyResult<Option<f64>> {
    check_dims(model, dataset)?;
    antolini_ctd(&Preds { model: &model.inner, data: &dataset.inner }, &dataset.inner).py_err()
}

/// Censoring-weighted Brier score at t; weights come from `train`.
#[pyfunction]
fn brier_score(model: &Model, dataset: &Dataset, train: &Dataset, t: f64) -> PyResult<f64> {
    check_dims(model, dataset)?;
    let censor = CensorModel::fit(&train.inner).py_err()?;
    brier(&Preds { model: &model.inner, data: &dataset.inner }, &dataset.inner, &censor, t).py_err()
}

#[pyfunction]
fn integrated_brier_score(model: &Model, dataset: &Dataset, train: &Dataset, t_min: f64, t_max: f64) -> PyResult<f64> {
    check_dims(model, dataset)?;
    let censor = CensorModel::fit(&train.inner).py_err()?;
    ibs(&Preds { model: &model.inner, data: &dataset.inner }, &dataset.inner, &censor, t_min, t_max).py_err()
}

/// D-calibration as a dict with proportions, chi2, p_value and calibrated.
#[pyfunction]
#[pyo3(signature = (model, dataset, bins=10))]
fn d_calibration_test<'py>(py: Python<'py>, model: &Model, dataset: &Dataset, bins: usize) -> PyResult<Bound<'py, PyDict>> {
    check_dims(model, dataset)?;
    let d = d_calibration(&Preds { model: &model.inner, data: &dataset.inner }, &dataset.inner, bins).py_err()?;
    let out = PyDict::new(py);
    out.set_item("proportions", d.proportions)?;
    out.set_item("chi2", d.chi2)?;
    out.set_item("p_value", d.p_value)?;
    out.set_item("calibrated", d.calibrated)?;
    Ok(out)
}

/// simulate(scenario_json) -> (Dataset, oracle_json)
#[pyfunction]
fn simulate(scenario: &str) -> PyResult<(Dataset, String)> {
    let sc: Scenario = serde_json::from_str(scenario).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (ds, oracle) = generate(&sc).py_err()?;
    Ok((Dataset { inner: ds }, oracle.to_json().py_err()?))
}

/// stack(dataset, times) -> (rows, labels) for the survival-stacked classification problem.
#[pyfunction]
fn stack(dataset: &Dataset, times: Vec<f64>) -> PyResult<(Vec<Vec<f64>>, Vec<u32>)> {
    let grid = TimeGrid::new(times).py_err()?;
    let p = survkit::stacking::stack(&dataset.inner, &grid).py_err()?;
    let rows = (0..p.rows()).map(|r| p.row(r)).collect();
    Ok((rows, p.labels.iter().map(|&y| u32::from(y)).collect()))
}

#[pymodule]
mod survkit_py {
    #[pymodule_export]
    use super::{
        brier_score, cindex, concordance_td, d_calibration_test, fit, integrated_brier_score, kaplan_meier_curve, simulate, stack, Dataset,
        Model,
    };
}
