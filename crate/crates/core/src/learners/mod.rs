//! Supervised learners used as nuisance estimators.
//!
//! Three learners sit behind one prediction interface:
//! l1-penalized least squares ([`lasso`]), l1-penalized logistic regression
//! ([`logistic`]) and a bagged CART regression forest ([`forest`]).
//! The penalized solvers work on internally standardized columns
//! (mean 0, population SD 1); the penalty applies on that scale and the
//! coefficients are mapped back to the raw scale for prediction.

pub mod forest;
pub mod lasso;
pub mod logistic;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{fit_forest, ForestParams};
pub use lasso::fit_lasso;
pub use logistic::fit_logistic_lasso;

/// Penalty level: fixed, or chosen by internal cross-validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    #[default]
    Cv,
    Fixed(f64),
}

/// Numerical settings shared by the penalized solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Convergence tolerance on the largest (standardized) coefficient change.
    pub tol: f64,
    pub max_sweeps: usize,
    pub cv_folds: usize,
    pub grid_size: usize,
    /// `lambda_min / lambda_max` along the CV grid.
    pub lambda_ratio: f64,
    /// Probability clipping band `[p_min, 1 - p_min]`.
    pub p_min: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 10_000,
            cv_folds: 5,
            grid_size: 50,
            lambda_ratio: 1e-3,
            p_min: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    Lasso,
    LogisticLasso,
    Forest,
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso" => Ok(LearnerKind::Lasso),
            "logistic-lasso" => Ok(LearnerKind::LogisticLasso),
            "forest" => Ok(LearnerKind::Forest),
            other => Err(Error::Config(format!("unknown learner `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Regression,
    Classification,
}

/// Feature matrix in column-major layout with per-column standardization.
///
/// Constant columns get scale 1 and a zero standardized column, so the
/// penalized solvers never move their coefficient off zero.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    n: usize,
    p: usize,
    raw: Vec<f64>,
    standardized: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    constant: Vec<bool>,
}

impl DesignMatrix {
    pub fn new(x: ArrayView2<'_, f64>) -> Result<Self> {
        let rows: Vec<usize> = (0..x.nrows()).collect();
        Self::from_rows(x, &rows)
    }

    /// Design built from the given rows of `x` (in that order).
    pub fn from_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Result<Self> {
        let n = rows.len();
        let p = x.ncols();
        let mut raw = Vec::with_capacity(n * p);
        for j in 0..p {
            let col = x.column(j);
            for &i in rows {
                let v = col[i];
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        column: format!("feature {j}"),
                        row: i,
                    });
                }
                raw.push(v);
            }
        }
        Ok(Self::from_column_major(n, p, raw))
    }

    fn from_column_major(n: usize, p: usize, raw: Vec<f64>) -> Self {
        let mut standardized = vec![0.0; n * p];
        let mut means = vec![0.0; p];
        let mut scales = vec![1.0; p];
        let mut constant = vec![false; p];
        for j in 0..p {
            let col = &raw[j * n..(j + 1) * n];
            let mean = if n == 0 {
                0.0
            } else {
                col.iter().sum::<f64>() / n as f64
            };
            let var = if n == 0 {
                0.0
            } else {
                col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
            };
            let sd = var.sqrt();
            means[j] = mean;
            if sd <= 1e-12 * mean.abs().max(1.0) {
                constant[j] = true;
                continue;
            }
            scales[j] = sd;
            for (dst, &v) in standardized[j * n..(j + 1) * n].iter_mut().zip(col) {
                *dst = (v - mean) / sd;
            }
        }
        Self {
            n,
            p,
            raw,
            standardized,
            means,
            scales,
            constant,
        }
    }

    /// A new design on a subset of this design's rows, re-standardized.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let m = rows.len();
        let mut raw = Vec::with_capacity(m * self.p);
        for j in 0..self.p {
            let col = self.raw_column(j);
            raw.extend(rows.iter().map(|&i| col[i]));
        }
        Self::from_column_major(m, self.p, raw)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    pub fn raw_column(&self, j: usize) -> &[f64] {
        &self.raw[j * self.n..(j + 1) * self.n]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.standardized[j * self.n..(j + 1) * self.n]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn is_constant(&self, j: usize) -> bool {
        self.constant[j]
    }

    pub(crate) fn raw_value(&self, i: usize, j: usize) -> f64 {
        self.raw[j * self.n + i]
    }
}

/// Linear predictor on the raw feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCoefficients {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl LinearCoefficients {
    /// Maps standardized-scale coefficients back to the raw scale.
    pub(crate) fn from_standardized(
        design: &DesignMatrix,
        intercept_std: f64,
        beta_std: &[f64],
    ) -> Self {
        let slopes: Vec<f64> = beta_std
            .iter()
            .zip(design.scales())
            .map(|(b, s)| b / s)
            .collect();
        let intercept = intercept_std
            - slopes
                .iter()
                .zip(design.means())
                .map(|(b, m)| b * m)
                .sum::<f64>();
        Self { intercept, slopes }
    }

    fn linear_predictor(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.outer_iter()
            .map(|row| {
                self.intercept
                    + row
                        .iter()
                        .zip(&self.slopes)
                        .map(|(v, b)| v * b)
                        .sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum ModelBody {
    Linear(LinearCoefficients),
    Logistic(LinearCoefficients),
    Forest(forest::Forest),
}

/// Notes recorded while fitting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    /// Set when the fit fell back to an intercept-only model.
    pub degenerate: Option<String>,
    /// Mean cross-validation loss per grid point, when CV was used.
    pub cv_loss: Option<Vec<f64>>,
    pub lambda_grid: Option<Vec<f64>>,
    /// Coordinate-descent sweeps used by the final fit.
    pub sweeps: usize,
}

/// A fitted learner. Immutable; prediction is deterministic.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub(crate) kind: LearnerKind,
    pub(crate) task: Task,
    pub(crate) body: ModelBody,
    pub(crate) lambda: Option<f64>,
    pub(crate) n_train: usize,
    pub(crate) n_features: usize,
    pub(crate) p_min: f64,
    pub(crate) fitted: Vec<f64>,
    pub(crate) report: FitReport,
}

impl FittedModel {
    pub fn kind(&self) -> LearnerKind {
        self.kind
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn report(&self) -> &FitReport {
        &self.report
    }

    pub fn body(&self) -> &ModelBody {
        &self.body
    }

    /// In-sample predictions computed during training (unclipped).
    pub fn fitted_values(&self) -> &[f64] {
        &self.fitted
    }

    pub fn coefficients(&self) -> Option<&LinearCoefficients> {
        match &self.body {
            ModelBody::Linear(c) | ModelBody::Logistic(c) => Some(c),
            ModelBody::Forest(_) => None,
        }
    }

    /// Mean predictions (regression) or clipped probabilities
    /// (classification) for the rows of `x`.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.ncols(),
            });
        }
        let raw = match &self.body {
            ModelBody::Linear(c) => c.linear_predictor(x),
            ModelBody::Logistic(c) => c
                .linear_predictor(x)
                .into_iter()
                .map(logistic::sigmoid)
                .collect(),
            ModelBody::Forest(f) => f.predict(x),
        };
        Ok(match self.task {
            Task::Regression => raw,
            Task::Classification => raw.into_iter().map(|p| self.clip(p)).collect(),
        })
    }

    fn clip(&self, p: f64) -> f64 {
        p.clamp(self.p_min, 1.0 - self.p_min)
    }
}

/// Fits the learner `kind` for `task`. `y` holds 0/1 labels for
/// classification. `seed` drives CV fold assignment and forest bootstraps.
#[allow(clippy::too_many_arguments)]
pub fn fit_learner(
    kind: LearnerKind,
    task: Task,
    x: &DesignMatrix,
    y: &[f64],
    penalty: Penalty,
    settings: &SolverSettings,
    forest: &ForestParams,
    seed: u64,
) -> Result<FittedModel> {
    let mut model = match (kind, task) {
        (LearnerKind::Lasso, _) => fit_lasso(x, y, penalty, settings, seed)?,
        (LearnerKind::LogisticLasso, Task::Classification) => {
            fit_logistic_lasso(x, y, penalty, settings, seed)?
        }
        (LearnerKind::LogisticLasso, Task::Regression) => {
            return Err(Error::Config(
                "logistic-lasso cannot fit a continuous target".into(),
            ))
        }
        (LearnerKind::Forest, _) => {
            let params = ForestParams {
                seed,
                ..forest.clone()
            };
            fit_forest(x, y, &params)?
        }
    };
    model.task = task;
    model.p_min = settings.p_min;
    Ok(model)
}

/// Geometric grid from `lambda_max` down to `ratio * lambda_max`.
pub(crate) fn lambda_grid(lambda_max: f64, size: usize, ratio: f64) -> Vec<f64> {
    if size <= 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (size - 1) as f64;
    (0..size)
        .map(|k| lambda_max * (step * k as f64).exp())
        .collect()
}

/// Balanced CV fold labels for `n` rows, shuffled by `seed`.
pub(crate) fn cv_assignments(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut out = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}

/// Inner product with four independent accumulators, which lets the
/// compiler vectorize the loop. Summation order is fixed, so results are
/// deterministic.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

pub(crate) fn check_training(x: &DesignMatrix, y: &[f64]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput("no training rows".into()));
    }
    if y.len() != x.nrows() {
        return Err(Error::LengthMismatch {
            column: "y".into(),
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            column: "y".into(),
            row,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standardization_and_constant_columns() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let d = DesignMatrix::new(x.view()).unwrap();
        assert!(!d.is_constant(0));
        assert!(d.is_constant(1));
        assert_eq!(d.scales()[1], 1.0);
        let col = d.column(0);
        assert!((col.iter().sum::<f64>()).abs() < 1e-12);
        let var: f64 = col.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
        assert!(d.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_is_geometric() {
        let g = lambda_grid(2.0, 50, 1e-3);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 2.0).abs() < 1e-15);
        assert!((g[49] - 2e-3).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn intercept_only_prediction_is_constant() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let d = DesignMatrix::new(x.view()).unwrap();
        let model = fit_lasso(
            &d,
            &[1.0, 3.0, 2.0, 6.0],
            Penalty::Fixed(100.0),
            &SolverSettings::default(),
            0,
        )
        .unwrap();
        let pred = model
            .predict(array![[-10.0], [0.0], [50.0]].view())
            .unwrap();
        assert!(pred.iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn predict_rejects_wrong_width() {
        let x = array![[1.0], [2.0], [3.0]];
        let d = DesignMatrix::new(x.view()).unwrap();
        let model = fit_lasso(
            &d,
            &[1.0, 2.0, 3.0],
            Penalty::Fixed(0.0),
            &SolverSettings::default(),
            0,
        )
        .unwrap();
        assert!(matches!(
            model.predict(array![[1.0, 2.0]].view()),
            Err(Error::DimensionMismatch {
                expected: 1,
                found: 2
            })
        ));
    }

    #[test]
    fn logistic_lasso_rejects_regression_task() {
        let x = array![[1.0], [2.0], [3.0]];
        let d = DesignMatrix::new(x.view()).unwrap();
        assert!(fit_learner(
            LearnerKind::LogisticLasso,
            Task::Regression,
            &d,
            &[0.1, 0.2, 0.3],
            Penalty::Cv,
            &SolverSettings::default(),
            &ForestParams::default(),
            0
        )
        .is_err());
    }
}
