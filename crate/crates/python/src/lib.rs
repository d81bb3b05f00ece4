//! Python bindings. Results cross the boundary as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use dyndml::data::{validate_dataset, PanelDataset, RawColumns, TreatmentSequence};
use dyndml::effects::{
    estimate_ate, estimate_placebo, estimate_weighted_ate, EffectEstimate, PlaceboOptions,
    PlaceboSpec,
};
use dyndml::folds::make_folds;
use dyndml::nuisance::{cross_fit_many, LearnerConfig};
use dyndml::scores::{score_psi, score_psi_weighted};
use dyndml::simulation::{
    confounding_audit, run_monte_carlo, simulate_dgp, Cell, DgpConfig, MonteCarloConfig,
    NuisanceSource,
};

fn py_err(e: dyndml::Error) -> PyErr {
    PyValueError::new_err(format!("[{}] {e}", e.kind()))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[allow(clippy::too_many_arguments)]
fn panel(
    y2: Vec<f64>,
    d1: Vec<i64>,
    d2: Vec<i64>,
    x0: Vec<Vec<f64>>,
    x1: Vec<Vec<f64>>,
    folds: usize,
) -> PyResult<PanelDataset> {
    validate_dataset(
        RawColumns {
            y2,
            d1,
            d2,
            x0,
            x1,
            ..Default::default()
        },
        folds,
    )
    .map_err(py_err)
}

fn seq((d1, d2): (u32, u32)) -> TreatmentSequence {
    TreatmentSequence::new(d1, d2)
}

/// Draws a sample from the simulation design; returns a dict of columns.
#[pyfunction]
#[pyo3(signature = (n, p, seed=1))]
fn simulate(py: Python<'_>, n: usize, p: usize, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    let data = py
        .detach(|| simulate_dgp(&DgpConfig::new(n, p, seed)))
        .map_err(py_err)?;
    let raw = data.to_raw();
    to_py(
        py,
        &serde_json::json!({
            "y2": raw.y2, "d1": raw.d1, "d2": raw.d2, "x0": raw.x0, "x1": raw.x1,
        }),
    )
}

/// Cross-fitted effect of sequence `arm_a` against `arm_b`. With
/// `subgroup` (0/1 per row) the effect is conditional on `S = 1`.
#[pyfunction]
#[pyo3(signature = (y2, d1, d2, x0, x1, arm_a=(1, 1), arm_b=(0, 0), folds=3, seed=1, trim=0.01, subgroup=None))]
#[allow(clippy::too_many_arguments)]
fn estimate(
    py: Python<'_>,
    y2: Vec<f64>,
    d1: Vec<i64>,
    d2: Vec<i64>,
    x0: Vec<Vec<f64>>,
    x1: Vec<Vec<f64>>,
    arm_a: (u32, u32),
    arm_b: (u32, u32),
    folds: usize,
    seed: u64,
    trim: f64,
    subgroup: Option<Vec<bool>>,
) -> PyResult<Bound<'_, PyAny>> {
    let data = panel(y2, d1, d2, x0, x1, folds)?;
    let arms = [seq(arm_a), seq(arm_b)];
    dyndml::cli::validate_contrast(arms[0], arms[1]).map_err(py_err)?;
    let effect: EffectEstimate = py
        .detach(|| -> dyndml::Result<EffectEstimate> {
            let plan = make_folds(data.n(), folds, seed)?;
            let cfg = LearnerConfig::default();
            let fits = cross_fit_many(&data, &arms, &plan, &cfg, subgroup.as_deref())?;
            match &subgroup {
                Some(s) => estimate_weighted_ate(
                    &score_psi_weighted(&data, &fits[0], s, trim)?,
                    &score_psi_weighted(&data, &fits[1], s, trim)?,
                ),
                None => estimate_ate(
                    &score_psi(&data, &fits[0], trim)?,
                    &score_psi(&data, &fits[1], trim)?,
                ),
            }
        })
        .map_err(py_err)?;
    to_py(py, &effect)
}

/// Static AIPW effect of a binary pseudo-treatment `t` given `x0`.
#[pyfunction]
#[pyo3(signature = (y2, d1, d2, x0, x1, t, folds=3, seed=1, trim=0.01))]
#[allow(clippy::too_many_arguments)]
fn placebo(
    py: Python<'_>,
    y2: Vec<f64>,
    d1: Vec<i64>,
    d2: Vec<i64>,
    x0: Vec<Vec<f64>>,
    x1: Vec<Vec<f64>>,
    t: Vec<bool>,
    folds: usize,
    seed: u64,
    trim: f64,
) -> PyResult<Bound<'_, PyAny>> {
    let data = panel(y2, d1, d2, x0, x1, folds)?;
    let opts = PlaceboOptions {
        folds,
        seed,
        threshold: trim,
    };
    let effect = py
        .detach(|| {
            estimate_placebo(
                &data,
                &PlaceboSpec::Column(t),
                &LearnerConfig::default(),
                &opts,
            )
        })
        .map_err(py_err)?;
    to_py(py, &effect)
}

/// Monte Carlo summary rows for one `(p, n)` cell.
#[pyfunction]
#[pyo3(signature = (p, n, reps, seed=20_240_101, oracle=false))]
fn monte_carlo(
    py: Python<'_>,
    p: usize,
    n: usize,
    reps: usize,
    seed: u64,
    oracle: bool,
) -> PyResult<Bound<'_, PyAny>> {
    let cfg = MonteCarloConfig {
        cells: vec![Cell { p, n, reps }],
        seed,
        nuisance: if oracle {
            NuisanceSource::Oracle
        } else {
            NuisanceSource::CrossFit
        },
        ..MonteCarloConfig::default()
    };
    let out = py.detach(|| run_monte_carlo(&cfg)).map_err(py_err)?;
    to_py(py, &out.reports)
}

/// Confounding strength: outcome R-squared and treatment pseudo-R-squared.
#[pyfunction]
fn audit(
    py: Python<'_>,
    y2: Vec<f64>,
    d1: Vec<i64>,
    d2: Vec<i64>,
    x0: Vec<Vec<f64>>,
    x1: Vec<Vec<f64>>,
) -> PyResult<Bound<'_, PyAny>> {
    let data = panel(y2, d1, d2, x0, x1, 2)?;
    let report = py.detach(|| confounding_audit(&data)).map_err(py_err)?;
    to_py(py, &report)
}

#[pymodule]
fn dyndml_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(placebo, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
