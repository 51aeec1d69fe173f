//! Python bindings. Structured results come back as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use arena_core::arena::{self, Arena as CoreArena, ArenaError, ArenaOptions, CONSERVATION_TOL};
use arena_core::backtest::{agent_from_config, run_backtest, BacktestConfig};
use arena_core::config::RunConfig;
use arena_core::data::{align, load_data_dir};
use arena_core::eventlog::EventLog;
use arena_core::market as mkt;
use arena_core::metrics::MetricSet;
use arena_core::report::build_report;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Parses a TOML config. Relative paths inside resolve against `base_dir` when given.
fn parse_config(config_toml: &str, base_dir: Option<PathBuf>) -> PyResult<RunConfig> {
    let mut cfg = RunConfig::from_toml_str(config_toml).map_err(value_err)?;
    if let Some(base) = base_dir {
        for p in [&mut cfg.prompts_dir, &mut cfg.memory_dir, &mut cfg.data_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(cfg)
}

fn arena_err(e: ArenaError) -> PyErr {
    match e {
        ArenaError::Config(_) => value_err(e),
        e => runtime_err(e),
    }
}

fn parse_log(log_jsonl: &str) -> PyResult<EventLog> {
    Ok(EventLog::parse(log_jsonl).map_err(value_err)?.log)
}

/// Runs a full arena simulation and returns the event log as JSONL text.
#[pyfunction]
#[pyo3(signature = (config_toml, base_dir=None))]
fn run_arena(config_toml: &str, base_dir: Option<PathBuf>) -> PyResult<String> {
    let cfg = parse_config(config_toml, base_dir)?;
    let outcome = arena::run_arena(&cfg, ArenaOptions::default()).map_err(arena_err)?;
    Ok(outcome.log.to_jsonl())
}

/// Re-executes a JSONL log and returns the final state.
#[pyfunction]
fn replay<'py>(py: Python<'py>, log_jsonl: &str) -> PyResult<Bound<'py, PyAny>> {
    let state = arena::replay(&parse_log(log_jsonl)?).map_err(runtime_err)?;
    to_py(py, &state)
}

/// Cash identity residuals at every day boundary; raises if any exceeds `tol`.
#[pyfunction]
#[pyo3(signature = (log_jsonl, tol=CONSERVATION_TOL))]
fn audit_conservation<'py>(py: Python<'py>, log_jsonl: &str, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let points = arena::audit_conservation(&parse_log(log_jsonl)?, tol).map_err(runtime_err)?;
    to_py(py, &points)
}

/// Per-agent metrics table for a JSONL log.
#[pyfunction]
fn report<'py>(py: Python<'py>, log_jsonl: &str) -> PyResult<Bound<'py, PyAny>> {
    let r = build_report(&parse_log(log_jsonl)?).map_err(runtime_err)?;
    to_py(py, &r)
}

/// Same table rendered as aligned text.
#[pyfunction]
fn report_text(log_jsonl: &str) -> PyResult<String> {
    Ok(build_report(&parse_log(log_jsonl)?).map_err(runtime_err)?.render())
}

/// Post-trade price before the daily cap is applied.
#[pyfunction]
fn price_impact(price_curr: f64, price_deal: f64, qty: f64, fluctuation_const: f64, qty_total: f64) -> PyResult<f64> {
    mkt::apply_price_impact(price_curr, price_deal, qty, fluctuation_const, qty_total).map_err(value_err)
}

#[pyfunction]
fn clamp_to_daily_cap(candidate: f64, day_ref: f64, cap_pct: f64) -> f64 {
    mkt::clamp_to_daily_cap(candidate, day_ref, cap_pct)
}

/// TR, mean, std, WR (all in percent) and SR of a wealth curve.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, wealth: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &MetricSet::from_wealth(&wealth).map_err(value_err)?)
}

/// Backtests every configured agent on the CSVs in `data_dir`.
#[pyfunction]
#[pyo3(signature = (config_toml, data_dir, base_dir=None))]
fn backtest<'py>(py: Python<'py>, config_toml: &str, data_dir: PathBuf, base_dir: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse_config(config_toml, base_dir)?;
    cfg.validate_common().map_err(value_err)?;
    let mut series = load_data_dir(&data_dir, &cfg.data.tickers, &cfg.data.columns).map_err(value_err)?;
    align(&mut series);
    let mut reports = Vec::new();
    for a in &cfg.agents {
        let mut agent = agent_from_config(&cfg, a, a.modality, None).map_err(runtime_err)?;
        let bt = BacktestConfig { window: cfg.window, capital: a.capital.unwrap_or(cfg.initial_capital), start: None };
        reports.push(run_backtest(&series, agent.as_mut(), &bt).map_err(runtime_err)?);
    }
    to_py(py, &reports)
}

/// Step-by-step arena for interactive use.
#[pyclass(name = "Arena", unsendable)]
struct PyArena {
    inner: CoreArena,
}

#[pymethods]
impl PyArena {
    #[new]
    #[pyo3(signature = (config_toml, base_dir=None))]
    fn new(config_toml: &str, base_dir: Option<PathBuf>) -> PyResult<Self> {
        let cfg = parse_config(config_toml, base_dir)?;
        Ok(Self { inner: CoreArena::new(cfg, ArenaOptions::default()).map_err(arena_err)? })
    }

    #[getter]
    fn run_id(&self) -> String {
        self.inner.run_id().to_string()
    }

    fn run_day(&mut self) -> PyResult<()> {
        self.inner.run_day().map_err(arena_err)
    }

    fn accounts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.accounts())
    }

    fn ledger<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.ledger())
    }

    fn final_state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.final_state())
    }

    fn log_jsonl(&self) -> String {
        self.inner.log().to_jsonl()
    }
}

#[pymodule]
fn agent_arena(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArena>()?;
    m.add_function(wrap_pyfunction!(run_arena, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(audit_conservation, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(report_text, m)?)?;
    m.add_function(wrap_pyfunction!(price_impact, m)?)?;
    m.add_function(wrap_pyfunction!(clamp_to_daily_cap, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(backtest, m)?)?;
    Ok(())
}
