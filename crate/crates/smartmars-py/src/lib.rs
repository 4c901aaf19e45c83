//! Python bindings for the smartmars core: model handling, task mapping,
//! schedulability analysis and the navigation scenario runner.
//!
//! Build with `cargo build -p smartmars-py --release` and place the
//! resulting `libsmartmars_py.so` on `PYTHONPATH` as `smartmars_py.so`
//! (see `python/smoke_test.py`).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use smartmars::analysis::{
    self, AnalysisTask, AnalysisTaskSet, BoundVerdict, ExportFormat, ResponseTime, SimVerdict,
};
use smartmars::deploy;
use smartmars::model::{self, PlatformDescription, TaskSpec};
use smartmars::task::TaskMapping;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parse a model and return its violations as strings; an empty list
/// means the model is valid. Syntax errors raise `ValueError`.
#[pyfunction]
fn validate_model(text: &str) -> PyResult<Vec<String>> {
    let m = model::parse_model(text).map_err(value_err)?;
    Ok(model::validate_model(&m).iter().map(|v| v.to_string()).collect())
}

/// Canonical text form of a model (stable field order and formatting).
#[pyfunction]
fn canonicalize(text: &str) -> PyResult<String> {
    let m = model::parse_model(text).map_err(value_err)?;
    Ok(model::serialize_model(&m))
}

/// Map one platform-independent task onto a platform. Returns the mapping
/// name; an invalid spec or missing capability raises `ValueError`.
#[pyfunction]
#[pyo3(signature = (realtime, periodic, wcet_ms=None, period_ms=None, platform_realtime=false))]
fn map_task(
    realtime: bool,
    periodic: bool,
    wcet_ms: Option<u64>,
    period_ms: Option<u64>,
    platform_realtime: bool,
) -> PyResult<String> {
    let spec = TaskSpec {
        name: "task".into(),
        is_realtime: realtime,
        is_periodic: periodic,
        period_ms,
        wcet_ms,
        priority: 0,
    };
    let platform = PlatformDescription {
        name: "platform".into(),
        supports_realtime: platform_realtime,
        memory_mb: 1,
        devices: Default::default(),
        cpu_count: 1,
    };
    let psm = smartmars::task::map_task(&spec, &platform).map_err(value_err)?;
    Ok(match psm.mapping {
        TaskMapping::RealtimeTask => "RealtimeTask",
        TaskMapping::EmulatedPeriodicTask => "EmulatedPeriodicTask",
        TaskMapping::FreeRunningTask => "FreeRunningTask",
    }
    .to_string())
}

fn task_set(tasks: Vec<(String, u64, u64, Option<i64>)>) -> Vec<AnalysisTask> {
    tasks
        .into_iter()
        .map(|(name, wcet_ms, period_ms, priority)| AnalysisTask {
            name,
            wcet_ms,
            period_ms,
            priority,
            emulated: false,
        })
        .collect()
}

/// Total processor utilization of `(name, wcet_ms, period_ms, priority)`
/// tuples, as a float.
#[pyfunction]
fn utilization(tasks: Vec<(String, u64, u64, Option<i64>)>) -> f64 {
    let u = analysis::utilization(&task_set(tasks));
    *u.numer() as f64 / *u.denom() as f64
}

/// Liu–Layland utilization bound for `n` tasks.
#[pyfunction]
fn utilization_bound(n: usize) -> PyResult<f64> {
    if n == 0 {
        return Err(PyValueError::new_err("n must be positive"));
    }
    Ok(analysis::utilization_bound(n))
}

/// Bound-test verdict: "schedulable" or "inconclusive".
#[pyfunction]
fn bound_test(tasks: Vec<(String, u64, u64, Option<i64>)>) -> PyResult<String> {
    let v = analysis::bound_test(&task_set(tasks)).map_err(value_err)?;
    Ok(match v {
        BoundVerdict::Schedulable => "schedulable",
        BoundVerdict::Inconclusive => "inconclusive",
    }
    .to_string())
}

/// Exact worst-case response times; tasks without priorities get
/// rate-monotonic ones first. `None` marks an unbounded response.
#[pyfunction]
fn response_times(
    tasks: Vec<(String, u64, u64, Option<i64>)>,
) -> PyResult<Vec<(String, Option<u64>)>> {
    let tasks = analysis::assign_rm_priorities(&task_set(tasks)).map_err(value_err)?;
    let rta = analysis::response_times(&tasks).map_err(value_err)?;
    Ok(rta
        .into_iter()
        .map(|(name, r)| {
            (
                name,
                match r {
                    ResponseTime::Ms(ms) => Some(ms),
                    ResponseTime::Unbounded => None,
                },
            )
        })
        .collect())
}

/// Hyperperiod simulation oracle. Returns
/// `("schedulable", [(name, worst_response_ms), ...])`,
/// `("miss", [(name, release_ms)])` or `("too_long", [])`.
#[pyfunction]
fn simulate(
    tasks: Vec<(String, u64, u64, Option<i64>)>,
) -> PyResult<(String, Vec<(String, u64)>)> {
    let tasks = analysis::assign_rm_priorities(&task_set(tasks)).map_err(value_err)?;
    let v = analysis::simulate_hyperperiod(&tasks).map_err(value_err)?;
    Ok(match v {
        SimVerdict::Schedulable(worst) => ("schedulable".to_string(), worst),
        SimVerdict::Miss(name, release) => {
            ("miss".to_string(), vec![(name, release as u64)])
        }
        SimVerdict::TooLong(_) => ("too_long".to_string(), Vec::new()),
    })
}

/// Transform a deployed model and export its per-platform analysis task
/// sets. `format` is "native" or "cheddar"; returns (platform, text)
/// pairs.
#[pyfunction]
fn export_analysis(text: &str, format: &str) -> PyResult<Vec<(String, String)>> {
    let fmt = match format {
        "native" => ExportFormat::Native,
        "cheddar" => ExportFormat::CheddarXml,
        other => return Err(PyValueError::new_err(format!("unknown format '{other}'"))),
    };
    let m = model::parse_model(text).map_err(value_err)?;
    let psm = deploy::transform(&m).map_err(|errs| {
        let msgs: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
        PyValueError::new_err(msgs.join("; "))
    })?;
    deploy::extract_analysis_model(&psm)
        .into_iter()
        .map(|set| {
            let tasks = analysis::assign_rm_priorities(&set.tasks).map_err(value_err)?;
            let set = AnalysisTaskSet { platform: set.platform.clone(), tasks };
            Ok((set.platform.clone(), analysis::export_analysis_model(&set, fmt)))
        })
        .collect()
}

/// Run the navigation scenario on the virtual clock until `until_ms` and
/// return the deterministic run report.
#[pyfunction]
fn run_navigation(text: &str, until_ms: u64) -> PyResult<String> {
    let m = model::parse_model(text).map_err(value_err)?;
    smartmars::cli::cmd_run(&m, true, until_ms).map_err(value_err)
}

/// The bundled navigation demo model, for smoke tests.
#[pyfunction]
fn navigation_model() -> &'static str {
    smartmars::scenario::NAVIGATION_MODEL
}

#[pymodule]
fn smartmars_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(validate_model, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(map_task, m)?)?;
    m.add_function(wrap_pyfunction!(utilization, m)?)?;
    m.add_function(wrap_pyfunction!(utilization_bound, m)?)?;
    m.add_function(wrap_pyfunction!(bound_test, m)?)?;
    m.add_function(wrap_pyfunction!(response_times, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(export_analysis, m)?)?;
    m.add_function(wrap_pyfunction!(run_navigation, m)?)?;
    m.add_function(wrap_pyfunction!(navigation_model, m)?)?;
    Ok(())
}
