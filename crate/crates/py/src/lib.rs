//! Python bindings, importable as `pcss`.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use pcss::analysis;
use pcss::trace::TraceRecord;
use pcss::workload::{self, ExecRange, GenParams};
use pcss::{Policy, Rational, RunConfig, StealPolicy};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn fraction<'py>(py: Python<'py>, r: Rational) -> PyResult<Bound<'py, PyAny>> {
    py.import("fractions")?
        .getattr("Fraction")?
        .call1((*r.numer(), *r.denom()))
}

/// Accept an int, a `p/q` string, or anything with `numerator`/`denominator`.
fn to_rational(obj: &Bound<'_, PyAny>) -> PyResult<Rational> {
    if let Ok(s) = obj.extract::<String>() {
        return workload::parse_rational(&s).map_err(value_err);
    }
    if let Ok(n) = obj.extract::<i64>() {
        return Ok(Rational::from_integer(n));
    }
    let num: i64 = obj.getattr("numerator")?.extract()?;
    let den: i64 = obj.getattr("denominator")?.extract()?;
    if den == 0 {
        return Err(PyValueError::new_err("zero denominator"));
    }
    Ok(Rational::new(num, den))
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// A validated set of server-backed tasks.
#[pyclass(name = "TaskSet", module = "pcss", frozen)]
struct PyTaskSet {
    inner: pcss::TaskSet,
}

#[pymethods]
impl PyTaskSet {
    /// Parse a task set from TOML text.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyTaskSet {
            inner: workload::load_spec(text).map_err(value_err)?,
        })
    }

    /// Read a task-set file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_toml(&text)
    }

    /// Seeded random task set whose utilizations sum exactly to `utilization`.
    #[staticmethod]
    #[pyo3(signature = (n, utilization, cores=1, pjobs=(0, 3), periods=(10, 1000), isolated_pct=50, sporadic_pct=50, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        n: usize,
        utilization: &Bound<'_, PyAny>,
        cores: u16,
        pjobs: (u32, u32),
        periods: (u64, u64),
        isolated_pct: u32,
        sporadic_pct: u32,
        seed: u64,
    ) -> PyResult<Self> {
        let params = GenParams {
            n_tasks: n,
            total_utilization: to_rational(utilization)?,
            cores,
            pjobs,
            periods,
            isolated_pct,
            sporadic_pct,
            seed,
        };
        Ok(PyTaskSet {
            inner: workload::generate(&params).map_err(value_err)?,
        })
    }

    fn to_toml(&self) -> String {
        workload::to_spec(&self.inner)
    }

    /// One dict per task: id, Q, T, isolated, arrival, segments.
    fn tasks<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let list = PyList::empty(py);
        for t in self.inner.tasks() {
            let d = PyDict::new(py);
            d.set_item("id", t.id.0)?;
            d.set_item("Q", t.budget)?;
            d.set_item("T", t.period)?;
            d.set_item("isolated", t.isolated)?;
            d.set_item("arrival", to_py(py, &t.arrival)?)?;
            d.set_item("segments", to_py(py, &t.body.segments)?)?;
            list.append(d)?;
        }
        Ok(list)
    }

    #[getter]
    fn utilization<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        fraction(py, self.inner.total_utilization())
    }

    #[getter]
    fn max_period(&self) -> u64 {
        self.inner.max_period()
    }

    /// Global-EDF sufficient utilization test on `cores` processors.
    fn gfb(&self, cores: u16) -> bool {
        analysis::gfb_sufficient_test(&self.inner, cores)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("TaskSet(n={}, U={})", self.inner.len(), self.inner.total_utilization())
    }
}

/// Simulation trace.
#[pyclass(name = "Trace", module = "pcss", frozen)]
struct PyTrace {
    inner: pcss::Trace,
}

fn record_dict<'py>(py: Python<'py>, r: &TraceRecord) -> PyResult<Bound<'py, PyAny>> {
    let d = PyDict::new(py);
    d.set_item("start", r.start)?;
    d.set_item("end", r.end)?;
    d.set_item("worker", r.worker.map(|w| w.0))?;
    d.set_item("kind", r.kind.as_str())?;
    d.set_item("unit", r.unit.map(|u| u.to_string()))?;
    d.set_item("server", r.server.map(|s| s.0))?;
    d.set_item("source_kind", r.source.map(|s| s.0.as_str()))?;
    d.set_item("source", r.source.map(|s| s.1 .0))?;
    d.set_item("deadline", r.deadline)?;
    Ok(d.into_any())
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyTrace {
            inner: pcss::Trace::parse(text).map_err(value_err)?,
        })
    }

    /// Canonical text form; identical runs give identical text.
    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    /// All records as dicts.
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let list = PyList::empty(py);
        for r in &self.inner.records {
            list.append(record_dict(py, r)?)?;
        }
        Ok(list)
    }

    /// Merged execution intervals only.
    fn schedule<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let list = PyList::empty(py);
        for r in &self.inner.schedule() {
            list.append(record_dict(py, r)?)?;
        }
        Ok(list)
    }

    #[getter]
    fn events(&self) -> u64 {
        self.inner.events
    }

    #[getter]
    fn cores(&self) -> u16 {
        self.inner.meta.cores
    }

    #[getter]
    fn horizon(&self) -> u64 {
        self.inner.meta.horizon
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace({} records, {} events)",
            self.inner.records.len(),
            self.inner.events
        )
    }
}

/// Simulate `taskset`. `horizon` defaults to 100 times the longest period.
#[pyfunction]
#[pyo3(signature = (taskset, cores=1, horizon=None, seed=0, policy="pcss", steal="on", exec=(50, 100), audit=false))]
#[allow(clippy::too_many_arguments)]
fn run(
    py: Python<'_>,
    taskset: &PyTaskSet,
    cores: u16,
    horizon: Option<u64>,
    seed: u64,
    policy: &str,
    steal: &str,
    exec: (u32, u32),
    audit: bool,
) -> PyResult<PyTrace> {
    let cfg = RunConfig {
        cores,
        horizon: horizon.unwrap_or(100 * taskset.inner.max_period()),
        seed,
        policy: policy.parse::<Policy>().map_err(value_err)?,
        steal: steal.parse::<StealPolicy>().map_err(value_err)?,
        exec: ExecRange {
            lo_pct: exec.0,
            hi_pct: exec.1,
        },
        audit,
    };
    let set = &taskset.inner;
    let trace = py.detach(|| pcss::run(set, &cfg)).map_err(|e| match e {
        pcss::EngineError::Config(_) => value_err(e),
        other => PyRuntimeError::new_err(other.to_string()),
    })?;
    Ok(PyTrace { inner: trace })
}

/// Per-window budget and steal-victim checks; returns a report dict.
#[pyfunction]
fn check_isolation<'py>(py: Python<'py>, trace: &PyTrace, taskset: &PyTaskSet) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analysis::check_isolation(&trace.inner, &taskset.inner))
}

/// EDF order, deque discipline, and work conservation by trace replay.
#[pyfunction]
fn check_schedule<'py>(py: Python<'py>, trace: &PyTrace) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analysis::check_schedule(&trace.inner))
}

/// Per-task tardiness summaries.
#[pyfunction]
fn tardiness<'py>(py: Python<'py>, trace: &PyTrace) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &analysis::tardiness(&trace.inner))
}

/// Metrics document, as written by the command line `--metrics`.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, trace: &PyTrace) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &analysis::metrics_json(&trace.inner, serde_json::Value::Null))
}

/// Ratio of mean response times of `task`, sequential over parallel.
#[pyfunction]
fn speedup<'py>(py: Python<'py>, parallel: &PyTrace, sequential: &PyTrace, task: u32) -> PyResult<Bound<'py, PyAny>> {
    let r = analysis::speedup(&parallel.inner, &sequential.inner, pcss::ServerId(task)).map_err(value_err)?;
    fraction(py, r)
}

/// Global-EDF sufficient utilization test.
#[pyfunction]
fn gfb(taskset: &PyTaskSet, cores: u16) -> bool {
    analysis::gfb_sufficient_test(&taskset.inner, cores)
}

/// Exact `budget / period`.
#[pyfunction]
fn utilization(py: Python<'_>, budget: u64, period: u64) -> PyResult<Bound<'_, PyAny>> {
    let u = pcss::model::utilization(budget, period).map_err(value_err)?;
    fraction(py, u)
}

#[pymodule]
#[pyo3(name = "pcss")]
fn pcss_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaskSet>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(check_isolation, m)?)?;
    m.add_function(wrap_pyfunction!(check_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(tardiness, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(speedup, m)?)?;
    m.add_function(wrap_pyfunction!(gfb, m)?)?;
    m.add_function(wrap_pyfunction!(utilization, m)?)?;
    Ok(())
}
