//! l1-penalized least squares by cyclic coordinate descent.
//!
//! Minimizes `(1/2n) ||y - b0 - X b||^2 + lambda ||b||_1` over standardized
//! columns with an unpenalized intercept. Updates use the covariance form:
//! the gradient `g_j = (1/n) x_j'(y - X b)` is kept for every column and
//! refreshed from lazily computed Gram columns whenever a coefficient moves,
//! so a sweep costs O(p) plus O(p) per changed coefficient.

use super::{
    check_training, cv_assignments, lambda_grid, soft_threshold, DesignMatrix, FitReport,
    FittedModel, LearnerKind, LinearCoefficients, ModelBody, Penalty, SolverSettings, Task,
};
use crate::error::{Error, Result};

pub(crate) struct GaussianSolver<'a> {
    x: &'a DesignMatrix,
    n: usize,
    y_mean: f64,
    y_var: f64,
    /// `(1/n) x_j'(y - ybar)`.
    xty: Vec<f64>,
    gram: Vec<Option<Vec<f64>>>,
    beta: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> GaussianSolver<'a> {
    pub(crate) fn new(x: &'a DesignMatrix, y: &[f64]) -> Self {
        let n = x.nrows();
        let nf = n as f64;
        let y_mean = y.iter().sum::<f64>() / nf;
        let y_var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / nf;
        let xty: Vec<f64> = (0..x.ncols())
            .map(|j| {
                x.column(j)
                    .iter()
                    .zip(y)
                    .map(|(a, b)| a * (b - y_mean))
                    .sum::<f64>()
                    / nf
            })
            .collect();
        Self {
            x,
            n,
            y_mean,
            y_var,
            grad: xty.clone(),
            xty,
            gram: vec![None; x.ncols()],
            beta: vec![0.0; x.ncols()],
        }
    }

    /// Smallest penalty that keeps every coefficient at zero.
    pub(crate) fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn ensure_gram(&mut self, j: usize) {
        if self.gram[j].is_none() {
            let nf = self.n as f64;
            let cj = self.x.column(j);
            let col: Vec<f64> = (0..self.x.ncols())
                .map(|m| {
                    self.x
                        .column(m)
                        .iter()
                        .zip(cj)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / nf
                })
                .collect();
            self.gram[j] = Some(col);
        }
    }

    /// Runs sweeps at `lambda` from the current state until the largest
    /// coefficient change drops below `tol`. Returns the sweep count.
    pub(crate) fn solve(
        &mut self,
        lambda: f64,
        tol: f64,
        max_sweeps: usize,
        mut trace: Option<&mut Vec<f64>>,
    ) -> usize {
        let p = self.x.ncols();
        let mut sweeps = 0;
        while sweeps < max_sweeps {
            sweeps += 1;
            let mut max_change = 0.0f64;
            for j in 0..p {
                if self.x.is_constant(j) {
                    continue;
                }
                let old = self.beta[j];
                let new = soft_threshold(self.grad[j] + old, lambda);
                let delta = new - old;
                if delta == 0.0 {
                    continue;
                }
                self.beta[j] = new;
                self.ensure_gram(j);
                let g = self.gram[j].as_deref().unwrap();
                for (gm, gmj) in self.grad.iter_mut().zip(g) {
                    *gm -= gmj * delta;
                }
                max_change = max_change.max(delta.abs());
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(lambda));
            }
            if max_change < tol {
                break;
            }
        }
        sweeps
    }

    /// `(1/2n)||y - b0 - Xb||^2 + lambda ||b||_1` at the optimal intercept.
    pub(crate) fn objective(&self, lambda: f64) -> f64 {
        // With g = c - G b: ||r||^2/n = var(y) - 2 c'b + b'Gb = var(y) - c'b - g'b.
        let cb: f64 = self.xty.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        let gb: f64 = self.grad.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
        let l1: f64 = self.beta.iter().map(|b| b.abs()).sum();
        0.5 * (self.y_var - cb - gb) + lambda * l1
    }

    fn coefficients(&self) -> LinearCoefficients {
        LinearCoefficients::from_standardized(self.x, self.y_mean, &self.beta)
    }

    fn fitted(&self) -> Vec<f64> {
        let mut out = vec![self.y_mean; self.n];
        for (j, &b) in self.beta.iter().enumerate() {
            if b != 0.0 {
                for (o, v) in out.iter_mut().zip(self.x.column(j)) {
                    *o += b * v;
                }
            }
        }
        out
    }
}

/// Fits the l1-penalized linear model.
///
/// With `Penalty::Cv`, lambda minimizes the pooled held-out squared error
/// over a geometric grid from `lambda_max` down, using
/// `settings.cv_folds` internal folds. A zero-variance `y` yields the
/// intercept-only model.
pub fn fit_lasso(
    x: &DesignMatrix,
    y: &[f64],
    penalty: Penalty,
    settings: &SolverSettings,
    seed: u64,
) -> Result<FittedModel> {
    check_training(x, y)?;
    let mut solver = GaussianSolver::new(x, y);
    let lambda_max = solver.lambda_max();
    let mut report = FitReport::default();

    let lambda = match penalty {
        Penalty::Fixed(l) if l >= 0.0 && l.is_finite() => l,
        Penalty::Fixed(l) => return Err(Error::Config(format!("invalid penalty {l}"))),
        Penalty::Cv if lambda_max <= 0.0 => {
            report.degenerate = Some("zero-variance target".into());
            lambda_max
        }
        Penalty::Cv => {
            let grid = lambda_grid(lambda_max, settings.grid_size, settings.lambda_ratio);
            let loss = cv_loss(x, y, &grid, settings, seed)?;
            let best = argmin(&loss);
            report.cv_loss = Some(loss);
            report.lambda_grid = Some(grid.clone());
            // Warm-start down the path to the chosen value.
            for &l in &grid[..best] {
                solver.solve(l, settings.tol, settings.max_sweeps, None);
            }
            grid[best]
        }
    };
    report.sweeps = solver.solve(lambda, settings.tol, settings.max_sweeps, None);

    Ok(FittedModel {
        kind: LearnerKind::Lasso,
        task: Task::Regression,
        body: ModelBody::Linear(solver.coefficients()),
        lambda: Some(lambda),
        n_train: x.nrows(),
        n_features: x.ncols(),
        p_min: settings.p_min,
        fitted: solver.fitted(),
        report,
    })
}

/// Fits at a fixed penalty and returns the objective after every sweep.
pub fn lasso_objective_trace(
    x: &DesignMatrix,
    y: &[f64],
    lambda: f64,
    settings: &SolverSettings,
) -> Result<Vec<f64>> {
    check_training(x, y)?;
    let mut solver = GaussianSolver::new(x, y);
    let mut trace = vec![solver.objective(lambda)];
    solver.solve(lambda, settings.tol, settings.max_sweeps, Some(&mut trace));
    Ok(trace)
}

pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = k;
        }
    }
    best
}

fn cv_loss(
    x: &DesignMatrix,
    y: &[f64],
    grid: &[f64],
    settings: &SolverSettings,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = x.nrows();
    let folds = settings.cv_folds.min(n);
    if folds < 2 {
        return Err(Error::StratumTooSmall {
            what: "lasso cross-validation".into(),
            rows: n,
            minimum: 2,
        });
    }
    let labels = cv_assignments(n, folds, seed);
    let mut total = vec![0.0; grid.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
        let xt = x.subset(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let mut solver = GaussianSolver::new(&xt, &yt);
        for (k, &l) in grid.iter().enumerate() {
            solver.solve(l, settings.tol, settings.max_sweeps, None);
            let coef = solver.coefficients();
            total[k] += test
                .iter()
                .map(|&i| {
                    let pred = coef.intercept
                        + (0..x.ncols())
                            .map(|j| coef.slopes[j] * x.raw_value(i, j))
                            .sum::<f64>();
                    (y[i] - pred).powi(2)
                })
                .sum::<f64>();
        }
    }
    Ok(total.into_iter().map(|t| t / n as f64).collect())
}
