//! Python bindings. Reports cross the boundary as plain dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use repurpose_core::impact::{self, ImpactConfig};
use repurpose_core::links::{self, CorrelationMethod, CorrelationOptions, MissingMeans};
use repurpose_core::monitor::{DriftTest, MonitorConfig, MonitorState};
use repurpose_core::probe::{predictability_probe, Attribute, ProbeConfig};
use repurpose_core::registry::{AssessorVerdict, Criterion, OverallDecision, Purpose, Registry as CoreRegistry};
use repurpose_core::safeguards::{self, AdversaryModel, KnownPairs};
use repurpose_core::{dataset_stats, parse_generic, parse_movielens_with, Error, RatingRecord, RatingsDataset};
use serde::Serialize;

const DEFAULT_SEED: u64 = 20240601;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::MissingFile(_) | Error::Io(_) => PyOSError::new_err(e.to_string()),
        e if e.is_data_error() => PyValueError::new_err(e.to_string()),
        Error::InvalidArgument(_) | Error::CriteriaNotAssessed(_) | Error::LinkEvidenceRequired => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Serializes through JSON and decodes with Python's own `json` module.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A validated ratings catalogue.
#[pyclass(frozen, name = "Dataset")]
struct PyDataset {
    inner: Arc<RatingsDataset>,
}

#[pymethods]
impl PyDataset {
    /// Reads a MovieLens-100k style directory (u.data, u.item, u.user, u.genre).
    #[staticmethod]
    #[pyo3(signature = (path, min_ratings = 20))]
    fn movielens(path: PathBuf, min_ratings: usize) -> PyResult<Self> {
        let ds = parse_movielens_with(&path, min_ratings).map_err(py_err)?;
        Ok(PyDataset { inner: Arc::new(ds) })
    }

    /// Reads ratings.csv, items.csv and (if present) users.csv from `path`.
    #[staticmethod]
    #[pyo3(signature = (path, min_ratings = 1))]
    fn generic(path: PathBuf, min_ratings: usize) -> PyResult<Self> {
        let users = path.join("users.csv");
        let ds = parse_generic(
            path.join("ratings.csv"),
            path.join("items.csv"),
            users.exists().then_some(users.as_path()),
            min_ratings,
        )
        .map_err(py_err)?;
        Ok(PyDataset { inner: Arc::new(ds) })
    }

    #[getter]
    fn n_ratings(&self) -> usize {
        self.inner.ratings().len()
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.user_count()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.items().len()
    }

    /// Analysis genres, i.e. every genre except "unknown".
    #[getter]
    fn genres(&self) -> Vec<String> {
        self.inner.analysis_genre_names()
    }

    #[getter]
    fn fingerprint(&self) -> &str {
        self.inner.fingerprint()
    }

    fn stats(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &dataset_stats(&self.inner))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(ratings={}, users={}, items={})",
            self.inner.ratings().len(),
            self.inner.user_count(),
            self.inner.items().len()
        )
    }
}

/// Link matrix for `measure` ("conditional" or "jaccard"); `values[r][c]`
/// of the conditional matrix is P(r | c).
#[pyfunction]
#[pyo3(signature = (ds, measure = "conditional"))]
fn link_matrix(py: Python<'_>, ds: &PyDataset, measure: &str) -> PyResult<Py<PyAny>> {
    let m = match measure {
        "conditional" => links::genre_overlap_matrix(&ds.inner),
        "jaccard" => links::jaccard_matrix(&ds.inner),
        other => return Err(PyValueError::new_err(format!("unknown measure {other:?}"))),
    };
    to_py(py, &m)
}

/// P(new | existing) over the item catalogue.
#[pyfunction]
fn link(ds: &PyDataset, existing: &str, new: &str) -> PyResult<Option<f64>> {
    links::genre_overlap_matrix(&ds.inner)
        .link(existing, new)
        .map_err(py_err)
}

/// Threshold decision for adding `new` next to `existing`.
#[pyfunction]
#[pyo3(signature = (ds, existing, new, threshold = links::DEFAULT_THRESHOLD))]
fn decide(py: Python<'_>, ds: &PyDataset, existing: &str, new: &str, threshold: f64) -> PyResult<Py<PyAny>> {
    let m = links::genre_overlap_matrix(&ds.inner);
    to_py(
        py,
        &links::decide_compatibility(&m, existing, new, threshold).map_err(py_err)?,
    )
}

/// Genre rating correlations with Bonferroni-adjusted p-values.
#[pyfunction]
#[pyo3(signature = (ds, method = "spearman", missing = "pairwise", min_pair_users = links::DEFAULT_MIN_PAIR_USERS))]
fn correlations(
    py: Python<'_>,
    ds: &PyDataset,
    method: &str,
    missing: &str,
    min_pair_users: usize,
) -> PyResult<Py<PyAny>> {
    let opts = CorrelationOptions {
        min_pair_users,
        method: match method {
            "spearman" => CorrelationMethod::Spearman,
            "pearson" => CorrelationMethod::Pearson,
            other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
        },
        missing: match missing {
            "pairwise" => MissingMeans::PairwiseComplete,
            "zero" => MissingMeans::ZeroFill,
            other => return Err(PyValueError::new_err(format!("unknown missing-mean rule {other:?}"))),
        },
        ..CorrelationOptions::default()
    };
    let out = py
        .detach(|| links::rating_correlation_matrix(&ds.inner, &opts))
        .map_err(py_err)?;
    to_py(py, &out)
}

#[pyfunction]
#[pyo3(signature = (ds, old, new, attribute = "gender", neighbors = 15, folds = 5, seed = DEFAULT_SEED))]
#[allow(clippy::too_many_arguments)]
fn probe(
    py: Python<'_>,
    ds: &PyDataset,
    old: Vec<String>,
    new: Vec<String>,
    attribute: &str,
    neighbors: usize,
    folds: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let cfg = ProbeConfig {
        attribute: match attribute {
            "gender" => Attribute::Gender,
            "age_band" | "age-band" => Attribute::AgeBand,
            other => return Err(PyValueError::new_err(format!("unknown attribute {other:?}"))),
        },
        genre_set_old: old,
        genre_set_new: new,
        neighbors,
        folds,
        seed,
    };
    let rep = py.detach(|| predictability_probe(&ds.inner, &cfg)).map_err(py_err)?;
    to_py(py, &rep)
}

/// Reidentification risk; `known_pairs=None` means the full profile.
#[pyfunction]
#[pyo3(signature = (ds, known_pairs = None, tolerance = 0, trials = safeguards::DEFAULT_TRIALS, seed = DEFAULT_SEED))]
fn reidentification_risk(
    py: Python<'_>,
    ds: &PyDataset,
    known_pairs: Option<usize>,
    tolerance: u8,
    trials: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let adv = AdversaryModel {
        known_pairs: known_pairs.map_or(KnownPairs::FullProfile, KnownPairs::Count),
        rating_tolerance: tolerance,
        trials,
        seed,
    };
    let rep = py
        .detach(|| safeguards::reidentification_risk(&ds.inner, &adv))
        .map_err(py_err)?;
    to_py(py, &rep)
}

#[pyfunction]
#[pyo3(signature = (ds, ks, tolerance = 0, trials = safeguards::DEFAULT_TRIALS, seed = DEFAULT_SEED))]
fn risk_curve(
    py: Python<'_>,
    ds: &PyDataset,
    ks: Vec<usize>,
    tolerance: u8,
    trials: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let pts = py
        .detach(|| safeguards::risk_curve(&ds.inner, &ks, tolerance, trials, seed))
        .map_err(py_err)?;
    to_py(py, &pts)
}

/// Recommendations before and after adding `new` to the `old` genres.
#[pyfunction]
#[pyo3(signature = (ds, old, new, k_top = impact::DEFAULT_TOP_K, holdout = impact::DEFAULT_HOLDOUT,
                    neighbors = impact::DEFAULT_NEIGHBORS, seed = DEFAULT_SEED))]
#[allow(clippy::too_many_arguments)]
fn expand_and_compare(
    py: Python<'_>,
    ds: &PyDataset,
    old: Vec<String>,
    new: String,
    k_top: usize,
    holdout: f64,
    neighbors: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let cfg = ImpactConfig {
        old_genres: old,
        new_genre: new,
        k_top,
        holdout_fraction: holdout,
        neighbor_count: neighbors,
        seed,
    };
    let rep = py
        .detach(|| impact::expand_and_compare(&ds.inner, &cfg))
        .map_err(py_err)?;
    to_py(py, &rep)
}

/// Drift monitor over rating batches given as `(user, item, rating, timestamp)` tuples.
#[pyclass(name = "Monitor")]
struct PyMonitor {
    state: MonitorState,
}

#[pymethods]
impl PyMonitor {
    #[new]
    #[pyo3(signature = (ds, alpha = 0.01, window = 5, min_batch = 200, test = "mean_shift_z"))]
    fn new(ds: &PyDataset, alpha: f64, window: usize, min_batch: usize, test: &str) -> PyResult<Self> {
        let config = MonitorConfig {
            reference_window: window,
            alpha,
            min_batch_size: min_batch,
            test: match test {
                "mean_shift_z" => DriftTest::MeanShiftZ,
                "ks" => DriftTest::KsTwoSample,
                other => return Err(PyValueError::new_err(format!("unknown test {other:?}"))),
            },
            ..MonitorConfig::default()
        };
        Ok(PyMonitor {
            state: MonitorState::new(config, ds.inner.clone()).map_err(py_err)?,
        })
    }

    /// Feeds one batch and returns the alerts it raised.
    fn feed(&mut self, py: Python<'_>, batch: Vec<(u32, u32, u8, u64)>) -> PyResult<Py<PyAny>> {
        let batch: Vec<RatingRecord> = batch
            .into_iter()
            .map(|(user_id, item_id, rating, timestamp)| RatingRecord {
                user_id,
                item_id,
                rating,
                timestamp,
            })
            .collect();
        let alerts = self.state.feed_batch(&batch).map_err(py_err)?;
        to_py(py, &alerts)
    }

    #[getter]
    fn status(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.state.status())
    }
}

fn criterion(s: &str) -> PyResult<Criterion> {
    Criterion::parse(s).ok_or_else(|| PyValueError::new_err(format!("unknown criterion {s:?}")))
}

/// Assessment record store on disk.
#[pyclass(unsendable, name = "Registry")]
struct PyRegistry {
    inner: CoreRegistry,
}

#[pymethods]
impl PyRegistry {
    /// Opens (or creates) a store and registers the built-in purposes.
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        let mut inner = CoreRegistry::open(&path).map_err(py_err)?;
        inner.seed_builtin_purposes().map_err(py_err)?;
        Ok(PyRegistry { inner })
    }

    fn purposes(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let all: Vec<&Purpose> = self.inner.purposes().collect();
        to_py(py, &all)
    }

    /// Registers a purpose bound to a set of recommended genres.
    fn add_genre_purpose(&mut self, id: &str, genres: Vec<String>) -> PyResult<()> {
        self.inner
            .add_purpose(Purpose::genre_recommendation(id, &genres))
            .map_err(py_err)
    }

    /// Opens a pending assessment and returns its record id.
    fn open_assessment(&mut self, old: &str, new: &str, assessor: &str) -> PyResult<String> {
        Ok(self
            .inner
            .open_assessment(old, new, assessor)
            .map_err(py_err)?
            .record_id)
    }

    /// Records the assessor's verdict on one criterion: "favors_compatible",
    /// "favors_incompatible" or "neutral".
    fn set_manual(&mut self, record_id: &str, criterion_name: &str, text: &str, verdict: &str) -> PyResult<u32> {
        let verdict = AssessorVerdict::parse(verdict)
            .ok_or_else(|| PyValueError::new_err(format!("unknown verdict {verdict:?}")))?;
        let rec = self
            .inner
            .set_manual(record_id, criterion(criterion_name)?, text, verdict)
            .map_err(py_err)?;
        Ok(rec.version)
    }

    /// Decides a record ("compatible" or "incompatible").
    fn decide(&mut self, record_id: &str, decision: &str) -> PyResult<u32> {
        let decision = match decision {
            "compatible" => OverallDecision::Compatible,
            "incompatible" => OverallDecision::Incompatible,
            other => return Err(PyValueError::new_err(format!("unknown decision {other:?}"))),
        };
        Ok(self.inner.decide(record_id, decision).map_err(py_err)?.version)
    }

    fn unassessed(&self, record_id: &str) -> PyResult<Vec<String>> {
        let rec = self.inner.latest(record_id).map_err(py_err)?;
        Ok(rec.unassessed().iter().map(|c| c.name().to_string()).collect())
    }

    fn latest(&self, py: Python<'_>, record_id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.latest(record_id).map_err(py_err)?)
    }

    fn list(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.list())
    }
}

#[pymodule]
fn repurpose(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyMonitor>()?;
    m.add_class::<PyRegistry>()?;
    m.add_function(wrap_pyfunction!(link_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(link, m)?)?;
    m.add_function(wrap_pyfunction!(decide, m)?)?;
    m.add_function(wrap_pyfunction!(correlations, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add_function(wrap_pyfunction!(reidentification_risk, m)?)?;
    m.add_function(wrap_pyfunction!(risk_curve, m)?)?;
    m.add_function(wrap_pyfunction!(expand_and_compare, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
