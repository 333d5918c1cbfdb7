//! Python bindings: thin wrappers over the core frame/report/engine types
//! plus the protocol entry points, built as the `evifuse_py` module.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use evifuse::annealer::SolverConfig;
use evifuse::evidence as ev;
use evifuse::harness;
use evifuse::memory::MemoryConfig;
use evifuse::tracker::{self, TrackView};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Frame {
    inner: ev::Frame,
}

#[pymethods]
impl Frame {
    #[new]
    fn new(targets: usize) -> PyResult<Self> {
        Ok(Frame {
            inner: ev::Frame::new(targets).map_err(value_err)?,
        })
    }

    #[getter]
    fn target_count(&self) -> usize {
        self.inner.target_count()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    fn report(&self, id: u64, focal: &str, bpn: f64) -> PyResult<Report> {
        let focal = self.inner.parse_focal(focal).map_err(value_err)?;
        Ok(Report {
            inner: ev::Report::new(&self.inner, id, focal, bpn).map_err(value_err)?,
            frame: self.inner.clone(),
        })
    }

    fn parse_line(&self, line: &str) -> PyResult<Report> {
        Ok(Report {
            inner: ev::parse_report_line(&self.inner, line).map_err(value_err)?,
            frame: self.inner.clone(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Frame(targets={})", self.inner.target_count())
    }
}

#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct Report {
    inner: ev::Report,
    frame: ev::Frame,
}

#[pymethods]
impl Report {
    #[getter]
    fn id(&self) -> u64 {
        self.inner.id()
    }

    #[getter]
    fn focal(&self) -> String {
        self.frame.format_focal(self.inner.focal())
    }

    #[getter]
    fn bpn(&self) -> f64 {
        self.inner.bpn()
    }

    fn line(&self) -> String {
        ev::format_report_line(&self.frame, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(id={}, focal='{}', bpn={})",
            self.inner.id(),
            self.focal(),
            self.inner.bpn()
        )
    }
}

fn view_to_dict(py: Python<'_>, view: &TrackView) -> PyResult<Py<PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("step", view.step)?;
    let tracks = PyList::empty(py);
    for t in &view.tracks {
        let entry = PyDict::new(py);
        entry.set_item("track", t.track)?;
        entry.set_item("permanent", t.permanent.clone())?;
        entry.set_item("tentative", t.tentative.clone())?;
        tracks.append(entry)?;
    }
    dict.set_item("tracks", tracks)?;
    dict.set_item("solver_error", view.solver_error.clone())?;
    Ok(dict.unbind())
}

#[pyclass]
struct Engine {
    inner: tracker::Engine,
    frame: ev::Frame,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (targets, clusters, stm, ltm, seed=0))]
    fn new(targets: usize, clusters: usize, stm: usize, ltm: usize, seed: u64) -> PyResult<Self> {
        let frame = ev::Frame::new(targets).map_err(value_err)?;
        let inner = tracker::Engine::new(
            frame.clone(),
            tracker::EngineConfig {
                clusters,
                memory: MemoryConfig {
                    short_term_capacity: stm,
                    long_term_capacity: ltm,
                },
                solver: SolverConfig {
                    rng_seed: seed,
                    ..SolverConfig::for_cluster_count(clusters)
                },
                prototypes: None,
            },
        )
        .map_err(value_err)?;
        Ok(Engine { inner, frame })
    }

    /// Ingest one report and return the updated track view.
    fn process(&mut self, py: Python<'_>, report: &Report) -> PyResult<Py<PyDict>> {
        let view = self
            .inner
            .process_report(report.inner)
            .map_err(runtime_err)?;
        view_to_dict(py, &view)
    }

    /// Ingest a report given as an `id,focal,bpn` line.
    fn process_line(&mut self, py: Python<'_>, line: &str) -> PyResult<Py<PyDict>> {
        let report = ev::parse_report_line(&self.frame, line).map_err(value_err)?;
        let view = self.inner.process_report(report).map_err(runtime_err)?;
        view_to_dict(py, &view)
    }

    fn current_tracks(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        view_to_dict(py, &self.inner.current_tracks())
    }

    fn permanent_view(&self, py: Python<'_>) -> PyResult<Py<PyDict>> {
        view_to_dict(py, &self.inner.permanent_view())
    }

    /// Text dump of the memory tiers with their assignments.
    fn snapshot(&self) -> String {
        self.inner.memory().snapshot(&self.frame)
    }

    fn __repr__(&self) -> String {
        format!(
            "Engine(targets={}, steps={})",
            self.frame.target_count(),
            self.inner.steps()
        )
    }
}

#[pyfunction]
fn pair_count(targets: usize) -> u64 {
    harness::pair_count(targets)
}

#[pyfunction]
fn conflicting_pair_count(targets: usize) -> u64 {
    harness::conflicting_pair_count(targets)
}

#[pyfunction]
fn conflict_probability(targets: usize) -> f64 {
    harness::conflict_probability(targets)
}

#[pyfunction]
fn weight_of_conflict(conflict: f64) -> PyResult<f64> {
    ev::weight_of_conflict(conflict).map_err(value_err)
}

#[pyfunction]
fn pairwise_conflict(a: &Report, b: &Report) -> f64 {
    ev::pairwise_conflict(&a.inner, &b.inner)
}

#[pyfunction]
fn coupling(a: &Report, b: &Report) -> f64 {
    ev::coupling(&a.inner, &b.inner)
}

#[pyfunction]
fn subset_conflict(reports: Vec<Report>) -> f64 {
    let plain: Vec<ev::Report> = reports.iter().map(|r| r.inner).collect();
    ev::subset_conflict(&plain)
}

#[pyfunction]
fn metaconflict(reports: Vec<Report>, assignments: Vec<usize>, clusters: usize) -> PyResult<f64> {
    if reports.len() != assignments.len() {
        return Err(value_err("one assignment per report required"));
    }
    let mut partition = ev::Partition::new(clusters);
    for (r, &c) in reports.iter().zip(&assignments) {
        partition.assign(r.inner.id(), c).map_err(value_err)?;
    }
    let plain: Vec<ev::Report> = reports.iter().map(|r| r.inner).collect();
    ev::metaconflict(&plain, &partition).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (targets=7, window=100))]
fn error_rate_constants(py: Python<'_>, targets: usize, window: usize) -> PyResult<Py<PyDict>> {
    let c = harness::error_rate_constants(targets, window);
    let dict = PyDict::new(py);
    dict.set_item("expected_pair_weight", c.expected_pair_weight)?;
    dict.set_item("reports_per_cluster", c.reports_per_cluster)?;
    dict.set_item("pairs_per_cluster", c.pairs_per_cluster)?;
    dict.set_item("weight_per_misclassification", c.weight_per_misclassification)?;
    Ok(dict.unbind())
}

#[pyfunction]
#[pyo3(signature = (total_weight, clusters=7, window=100))]
fn classification_error_rate(total_weight: f64, clusters: usize, window: usize) -> f64 {
    harness::classification_error_rate(total_weight, clusters, window)
}

#[pyfunction]
#[pyo3(signature = (seed=0, targets=7, count=harness::DATASET_SIZE))]
fn generate_dataset(seed: u64, targets: usize, count: usize) -> PyResult<Vec<Report>> {
    let dataset = harness::generate_dataset(seed, targets, count).map_err(value_err)?;
    Ok(dataset
        .reports
        .iter()
        .map(|r| Report {
            inner: *r,
            frame: dataset.frame.clone(),
        })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (seed, stm, ltm, targets=7))]
fn run_config(
    py: Python<'_>,
    seed: u64,
    stm: usize,
    ltm: usize,
    targets: usize,
) -> PyResult<Py<PyDict>> {
    let dataset = harness::generate_dataset(seed, targets, harness::DATASET_SIZE)
        .map_err(value_err)?;
    let solver = SolverConfig::for_cluster_count(targets);
    let outcome = harness::run_config(&dataset, stm, ltm, &solver).map_err(runtime_err)?;
    let dict = PyDict::new(py);
    dict.set_item("stm", outcome.record.stm)?;
    dict.set_item("ltm", outcome.record.ltm)?;
    dict.set_item("error_pct", outcome.record.error_pct)?;
    dict.set_item("time_s", outcome.record.time_s)?;
    dict.set_item("weight", outcome.record.weight)?;
    dict.set_item("invocations", outcome.record.invocations)?;
    dict.set_item("step_weights", outcome.step_weights.clone())?;
    Ok(dict.unbind())
}

/// One-shot partitioner: stream the reports through a fresh engine sized to
/// hold them all and return the cluster index per report, in input order.
#[pyfunction]
#[pyo3(signature = (reports, clusters, seed=0))]
fn cluster_reports(reports: Vec<Report>, clusters: usize, seed: u64) -> PyResult<Vec<usize>> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    let frame = first.frame.clone();
    let mut engine = tracker::Engine::new(
        frame,
        tracker::EngineConfig {
            clusters,
            memory: MemoryConfig {
                short_term_capacity: reports.len(),
                long_term_capacity: 0,
            },
            solver: SolverConfig {
                rng_seed: seed,
                ..SolverConfig::for_cluster_count(clusters)
            },
            prototypes: None,
        },
    )
    .map_err(value_err)?;
    for r in &reports {
        engine.process_report(r.inner).map_err(runtime_err)?;
    }
    let view = engine.current_tracks();
    let mut assignment = std::collections::HashMap::new();
    for t in &view.tracks {
        for id in t.permanent.iter().chain(&t.tentative) {
            assignment.insert(*id, t.track);
        }
    }
    reports
        .iter()
        .map(|r| {
            assignment
                .get(&r.inner.id())
                .copied()
                .ok_or_else(|| runtime_err(format!("report {} left unassigned", r.inner.id())))
        })
        .collect()
}

#[pymodule]
fn evifuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Frame>()?;
    m.add_class::<Report>()?;
    m.add_class::<Engine>()?;
    m.add_function(wrap_pyfunction!(pair_count, m)?)?;
    m.add_function(wrap_pyfunction!(conflicting_pair_count, m)?)?;
    m.add_function(wrap_pyfunction!(conflict_probability, m)?)?;
    m.add_function(wrap_pyfunction!(weight_of_conflict, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_conflict, m)?)?;
    m.add_function(wrap_pyfunction!(coupling, m)?)?;
    m.add_function(wrap_pyfunction!(subset_conflict, m)?)?;
    m.add_function(wrap_pyfunction!(metaconflict, m)?)?;
    m.add_function(wrap_pyfunction!(error_rate_constants, m)?)?;
    m.add_function(wrap_pyfunction!(classification_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_reports, m)?)?;
    Ok(())
}
