//! l1-penalized logistic regression.
//!
//! Minimizes `-(1/n) loglik(b0, b) + lambda ||b||_1` on standardized columns.
//! Each outer iteration forms the quadratic (IRLS) approximation of the
//! log-likelihood at the current fit and minimizes its penalized version by
//! coordinate-wise soft-thresholding on its weighted Gram matrix. Work is restricted to a working set
//! (nonzero coefficients plus the sequential strong set); the KKT conditions
//! are then checked on all remaining columns and violators added.

use super::lasso::argmin;
use super::{
    check_training, cv_assignments, dot, lambda_grid, soft_threshold, DesignMatrix, FitReport,
    FittedModel, LearnerKind, LinearCoefficients, ModelBody, Penalty, SolverSettings, Task,
};
use crate::error::{Error, Result};

const MIN_WEIGHT: f64 = 1e-5;
const MAX_OUTER: usize = 100;
/// Path stops early once the fraction of deviance explained moves by less
/// than this between consecutive grid points, or exceeds `MAX_DEV_RATIO`.
const PATH_MIN_DEV_CHANGE: f64 = 1e-5;
const MAX_DEV_RATIO: f64 = 0.999;
/// Grid points without a new cross-validation minimum before the scan ends.
const CV_PATIENCE: usize = 10;

#[inline]
pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
#[inline]
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Binomial deviance contribution of one observation.
#[inline]
pub(crate) fn unit_deviance(y: f64, eta: f64) -> f64 {
    // -2 [y eta - log(1 + e^eta)]
    2.0 * (softplus(eta) - y * eta)
}

pub(crate) struct LogisticSolver<'a> {
    x: &'a DesignMatrix,
    y: &'a [f64],
    n: usize,
    b0: f64,
    beta: Vec<f64>,
    eta: Vec<f64>,
    /// `(1/n) x_j'(y - p)` at the last KKT check.
    grad: Vec<f64>,
    active: Vec<bool>,
    null_deviance: f64,
}

impl<'a> LogisticSolver<'a> {
    pub(crate) fn new(x: &'a DesignMatrix, y: &'a [f64]) -> Self {
        let n = x.nrows();
        let nf = n as f64;
        let ybar = y.iter().sum::<f64>() / nf;
        let b0 = (ybar / (1.0 - ybar)).ln();
        let grad = (0..x.ncols())
            .map(|j| {
                x.column(j)
                    .iter()
                    .zip(y)
                    .map(|(a, b)| a * (b - ybar))
                    .sum::<f64>()
                    / nf
            })
            .collect();
        let mut solver = Self {
            x,
            y,
            n,
            b0,
            beta: vec![0.0; x.ncols()],
            eta: vec![b0; n],
            grad,
            active: vec![false; x.ncols()],
            null_deviance: 0.0,
        };
        solver.null_deviance = solver.deviance();
        solver
    }

    pub(crate) fn lambda_max(&self) -> f64 {
        self.grad.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn deviance(&self) -> f64 {
        self.y
            .iter()
            .zip(&self.eta)
            .map(|(&y, &e)| unit_deviance(y, e))
            .sum()
    }

    /// Penalized objective `-(1/n) loglik + lambda ||b||_1`.
    #[cfg(test)]
    pub(crate) fn objective(&self, lambda: f64) -> f64 {
        self.deviance() / (2.0 * self.n as f64)
            + lambda * self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn refresh_gradient(&mut self) {
        let nf = self.n as f64;
        let resid: Vec<f64> = self
            .y
            .iter()
            .zip(&self.eta)
            .map(|(&y, &e)| y - sigmoid(e))
            .collect();
        for j in 0..self.x.ncols() {
            if self.x.is_constant(j) {
                self.grad[j] = 0.0;
                continue;
            }
            self.grad[j] = self
                .x
                .column(j)
                .iter()
                .zip(&resid)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / nf;
        }
    }

    /// Solves at `lambda`, warm-started from the current state, where
    /// `lambda_prev` is the previous grid value (for the strong rule).
    pub(crate) fn solve(
        &mut self,
        lambda: f64,
        lambda_prev: f64,
        settings: &SolverSettings,
    ) -> usize {
        let p = self.x.ncols();
        let strong = 2.0 * lambda - lambda_prev;
        for j in 0..p {
            if !self.x.is_constant(j) && (self.beta[j] != 0.0 || self.grad[j].abs() >= strong) {
                self.active[j] = true;
            }
        }
        let mut sweeps = 0;
        loop {
            let working: Vec<usize> = (0..p).filter(|&j| self.active[j]).collect();
            sweeps += self.irls(&working, lambda, settings);
            self.refresh_gradient();
            let mut added = false;
            for j in 0..p {
                if !self.active[j] && !self.x.is_constant(j) && self.grad[j].abs() > lambda {
                    self.active[j] = true;
                    added = true;
                }
            }
            if !added || sweeps >= settings.max_sweeps {
                break;
            }
        }
        sweeps
    }

    /// Outer IRLS loop. The inner coordinate descent works on the weighted
    /// Gram matrix of the working set, so a sweep costs O(|working|^2); the
    /// linear predictor is refreshed once per outer iteration.
    fn irls(&mut self, working: &[usize], lambda: f64, settings: &SolverSettings) -> usize {
        let nf = self.n as f64;
        let m = working.len();
        let mut w = vec![0.0; self.n];
        let mut r = vec![0.0; self.n];
        let mut diag = vec![0.0; m];
        let mut cols: Vec<Option<Vec<f64>>> = vec![None; m];
        let mut wx = vec![0.0; m];
        let mut grad = vec![0.0; m];
        let mut start = vec![0.0; m];
        let mut sweeps = 0;
        for _ in 0..MAX_OUTER {
            for i in 0..self.n {
                let p = sigmoid(self.eta[i]);
                w[i] = (p * (1.0 - p)).max(MIN_WEIGHT);
                r[i] = self.y[i] - p;
            }
            let sw: f64 = w.iter().sum();
            let mut sr: f64 = r.iter().sum();
            for (a, &j) in working.iter().enumerate() {
                let cj = self.x.column(j);
                wx[a] = dot(cj, &w) / nf;
                grad[a] = dot(cj, &r) / nf;
                diag[a] = cj.iter().zip(&w).map(|(x, w)| x * x * w).sum::<f64>() / nf;
                start[a] = self.beta[j];
            }
            // Gram columns are built lazily: most strong-set columns never move.
            cols.iter_mut().for_each(|c| *c = None);
            let old_b0 = self.b0;

            loop {
                sweeps += 1;
                let d0 = sr / sw;
                self.b0 += d0;
                sr -= d0 * sw;
                for (g, &hx) in grad.iter_mut().zip(&wx) {
                    *g -= d0 * hx;
                }
                let mut max_change = d0.abs();
                for (a, &j) in working.iter().enumerate() {
                    let haa = diag[a];
                    let bj = self.beta[j];
                    let new = soft_threshold(grad[a] + haa * bj, lambda) / haa;
                    let delta = new - bj;
                    if delta == 0.0 {
                        continue;
                    }
                    self.beta[j] = new;
                    let col = cols[a].get_or_insert_with(|| {
                        let cj = self.x.column(j);
                        let wc: Vec<f64> = cj.iter().zip(&w).map(|(x, w)| x * w).collect();
                        working
                            .iter()
                            .map(|&k| dot(self.x.column(k), &wc) / nf)
                            .collect()
                    });
                    for (g, &h) in grad.iter_mut().zip(col.iter()) {
                        *g -= delta * h;
                    }
                    sr -= delta * wx[a] * nf;
                    max_change = max_change.max(delta.abs());
                }
                if max_change < settings.tol || sweeps >= settings.max_sweeps {
                    break;
                }
            }

            let d0 = self.b0 - old_b0;
            for e in self.eta.iter_mut() {
                *e += d0;
            }
            for (a, &j) in working.iter().enumerate() {
                let delta = self.beta[j] - start[a];
                if delta != 0.0 {
                    for (e, x) in self.eta.iter_mut().zip(self.x.column(j)) {
                        *e += delta * x;
                    }
                }
            }
            let outer_change = working
                .iter()
                .enumerate()
                .map(|(a, &j)| (self.beta[j] - start[a]).abs())
                .fold(d0.abs(), f64::max);
            if outer_change < settings.tol || sweeps >= settings.max_sweeps {
                break;
            }
        }
        sweeps
    }

    fn coefficients(&self) -> LinearCoefficients {
        LinearCoefficients::from_standardized(self.x, self.b0, &self.beta)
    }
}

/// Warm-started descent along a penalty grid. Once the fraction of deviance
/// explained stalls (or nears 1) the solution is frozen and reused for the
/// remaining grid points.
struct PathWalker {
    prev_lambda: Option<f64>,
    prev_ratio: f64,
    stopped: bool,
}

impl PathWalker {
    fn new() -> Self {
        Self {
            prev_lambda: None,
            prev_ratio: 0.0,
            stopped: false,
        }
    }

    fn step(&mut self, solver: &mut LogisticSolver<'_>, lambda: f64, settings: &SolverSettings) {
        if self.stopped {
            return;
        }
        let first = self.prev_lambda.is_none();
        solver.solve(lambda, self.prev_lambda.unwrap_or(lambda), settings);
        self.prev_lambda = Some(lambda);
        let ratio = if solver.null_deviance > 0.0 {
            1.0 - solver.deviance() / solver.null_deviance
        } else {
            1.0
        };
        if !first && (ratio - self.prev_ratio < PATH_MIN_DEV_CHANGE || ratio > MAX_DEV_RATIO) {
            self.stopped = true;
        }
        self.prev_ratio = ratio;
    }
}

/// Fits the l1-penalized logistic model on 0/1 labels `y`.
///
/// A single-class `y` yields an intercept-only model at the (clipped)
/// class rate, flagged in the fit report.
pub fn fit_logistic_lasso(
    x: &DesignMatrix,
    y: &[f64],
    penalty: Penalty,
    settings: &SolverSettings,
    seed: u64,
) -> Result<FittedModel> {
    check_training(x, y)?;
    if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Config(format!(
            "logistic target must be 0/1, found {} at row {row}",
            y[row]
        )));
    }
    let n = x.nrows();
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        let rate = (ones as f64 / n as f64).clamp(settings.p_min, 1.0 - settings.p_min);
        let b0 = (rate / (1.0 - rate)).ln();
        return Ok(FittedModel {
            kind: LearnerKind::LogisticLasso,
            task: Task::Classification,
            body: ModelBody::Logistic(LinearCoefficients {
                intercept: b0,
                slopes: vec![0.0; x.ncols()],
            }),
            lambda: None,
            n_train: n,
            n_features: x.ncols(),
            p_min: settings.p_min,
            fitted: vec![rate; n],
            report: FitReport {
                degenerate: Some("single-class target".into()),
                ..FitReport::default()
            },
        });
    }

    let mut solver = LogisticSolver::new(x, y);
    let lambda_max = solver.lambda_max();
    let mut report = FitReport::default();
    let lambda = match penalty {
        Penalty::Fixed(l) if l >= 0.0 && l.is_finite() => {
            report.sweeps = solver.solve(l, lambda_max.max(l), settings);
            l
        }
        Penalty::Fixed(l) => return Err(Error::Config(format!("invalid penalty {l}"))),
        Penalty::Cv => {
            let grid = lambda_grid(lambda_max, settings.grid_size, settings.lambda_ratio);
            let loss = cv_deviance(x, y, &grid, settings, seed)?;
            let best = argmin(&loss);
            let grid = grid[..loss.len()].to_vec();
            report.cv_loss = Some(loss);
            report.lambda_grid = Some(grid.clone());
            let mut walker = PathWalker::new();
            for &l in &grid[..=best] {
                walker.step(&mut solver, l, settings);
            }
            grid[best]
        }
    };

    let fitted = solver.eta.iter().map(|&e| sigmoid(e)).collect();
    Ok(FittedModel {
        kind: LearnerKind::LogisticLasso,
        task: Task::Classification,
        body: ModelBody::Logistic(solver.coefficients()),
        lambda: Some(lambda),
        n_train: n,
        n_features: x.ncols(),
        p_min: settings.p_min,
        fitted,
        report,
    })
}

/// Pooled held-out deviance along `grid`. All folds advance together, and
/// the scan ends once `CV_PATIENCE` consecutive grid points fail to improve
/// on the best pooled loss; the returned vector then covers only the
/// evaluated prefix of the grid.
fn cv_deviance(
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
            what: "logistic cross-validation".into(),
            rows: n,
            minimum: 2,
        });
    }
    let labels = cv_assignments(n, folds, seed);

    struct FoldData {
        xt: DesignMatrix,
        yt: Vec<f64>,
        test: Vec<usize>,
    }
    // Folds without contrast in training score the constant model.
    let mut constant = 0.0;
    let mut fitted_folds = Vec::new();
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let ones = yt.iter().filter(|&&v| v == 1.0).count();
        if ones == 0 || ones == yt.len() {
            let rate = (ones as f64 / yt.len() as f64).clamp(settings.p_min, 1.0 - settings.p_min);
            let eta = (rate / (1.0 - rate)).ln();
            constant += test.iter().map(|&i| unit_deviance(y[i], eta)).sum::<f64>();
            continue;
        }
        fitted_folds.push(FoldData {
            xt: x.subset(&train),
            yt,
            test,
        });
    }
    let mut solvers: Vec<(LogisticSolver<'_>, PathWalker)> = fitted_folds
        .iter()
        .map(|fd| (LogisticSolver::new(&fd.xt, &fd.yt), PathWalker::new()))
        .collect();

    let mut total = Vec::with_capacity(grid.len());
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    for &l in grid {
        let mut dev = constant;
        for ((solver, walker), fd) in solvers.iter_mut().zip(&fitted_folds) {
            walker.step(solver, l, settings);
            let coef = solver.coefficients();
            let nonzero: Vec<(usize, f64)> = coef
                .slopes
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, b)| *b != 0.0)
                .collect();
            dev += fd
                .test
                .iter()
                .map(|&i| {
                    let eta = coef.intercept
                        + nonzero
                            .iter()
                            .map(|&(j, b)| b * x.raw_value(i, j))
                            .sum::<f64>();
                    unit_deviance(y[i], eta)
                })
                .sum::<f64>();
        }
        let loss = dev / n as f64;
        total.push(loss);
        if loss < best {
            best = loss;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= CV_PATIENCE {
                break;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    fn logistic_problem(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let y = (0..n)
            .map(|i| {
                let eta = 0.3 + 1.2 * x[[i, 0]] - 0.8 * x[[i, 1 % p]];
                f64::from(rng.random::<f64>() < sigmoid(eta))
            })
            .collect();
        (x, y)
    }

    #[test]
    fn null_model_predicts_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1000;
        let x = Array2::from_shape_fn((n, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|i| f64::from(i % 2 == 0)).collect();
        let d = DesignMatrix::new(x.view()).unwrap();
        let m = fit_logistic_lasso(&d, &y, Penalty::Fixed(0.5), &settings(), 0).unwrap();
        let pred = m.predict(x.view()).unwrap();
        assert!(pred.iter().all(|&p| (p - 0.5).abs() <= 0.05));
    }

    #[test]
    fn separable_data_stays_finite_and_monotone() {
        let xs: Vec<f64> = (0..40).map(|i| f64::from(i) / 10.0 - 2.0).collect();
        let y: Vec<f64> = xs.iter().map(|&v| f64::from(v > 0.0)).collect();
        let x = Array2::from_shape_vec((40, 1), xs).unwrap();
        let d = DesignMatrix::new(x.view()).unwrap();
        let m = fit_logistic_lasso(&d, &y, Penalty::Fixed(0.1), &settings(), 0).unwrap();
        let c = m.coefficients().unwrap();
        assert!(c.slopes[0].is_finite() && c.slopes[0] > 0.0);
        let pred = m.predict(x.view()).unwrap();
        assert!(pred.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn matches_brute_force_grid_search() {
        let (x, y) = logistic_problem(200, 1, 8);
        let lambda = 0.02;
        let d = DesignMatrix::new(x.view()).unwrap();
        let m = fit_logistic_lasso(&d, &y, Penalty::Fixed(lambda), &settings(), 0).unwrap();

        // Oracle: standardize by hand and grid-search the penalized deviance.
        let n = 200.0;
        let mean = x.column(0).sum() / n;
        let sd = (x.column(0).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let z: Vec<f64> = x.column(0).iter().map(|v| (v - mean) / sd).collect();
        let objective = |b0: f64, b1: f64| -> f64 {
            let nll: f64 = z
                .iter()
                .zip(&y)
                .map(|(&zi, &yi)| {
                    let eta = b0 + b1 * zi;
                    (1.0 + eta.exp()).ln() - yi * eta
                })
                .sum::<f64>()
                / n;
            nll + lambda * b1.abs()
        };
        let (mut best, mut c0, mut c1) = (f64::INFINITY, 0.0, 0.0);
        for a in 0..=400 {
            for b in 0..=400 {
                let b0 = -2.0 + 4.0 * f64::from(a) / 400.0;
                let b1 = -3.0 + 6.0 * f64::from(b) / 400.0;
                let v = objective(b0, b1);
                if v < best {
                    (best, c0, c1) = (v, b0, b1);
                }
            }
        }
        for _ in 0..3 {
            let (w0, w1) = (0.02, 0.03);
            let (s0, s1) = (c0, c1);
            for a in -100..=100 {
                for b in -100..=100 {
                    let b0 = s0 + w0 * f64::from(a) / 100.0;
                    let b1 = s1 + w1 * f64::from(b) / 100.0;
                    let v = objective(b0, b1);
                    if v < best {
                        (best, c0, c1) = (v, b0, b1);
                    }
                }
            }
        }
        let coef = m.coefficients().unwrap();
        let b1_std = coef.slopes[0] * sd;
        let b0_std = coef.intercept + coef.slopes[0] * mean;
        let ours = objective(b0_std, b1_std);
        assert!((ours - best).abs() < 1e-4, "ours {ours} grid {best}");
        assert!(ours <= best + 1e-9);
        assert!((b1_std - c1).abs() < 0.01);
    }

    #[test]
    fn kkt_and_clipping() {
        let (x, y) = logistic_problem(300, 6, 3);
        let d = DesignMatrix::new(x.view()).unwrap();
        let lambda = 0.03;
        let m = fit_logistic_lasso(&d, &y, Penalty::Fixed(lambda), &settings(), 0).unwrap();
        let probs = m.fitted_values();
        let c = m.coefficients().unwrap();
        for j in 0..6 {
            let g: f64 = d
                .column(j)
                .iter()
                .zip(y.iter().zip(probs))
                .map(|(a, (yi, pi))| a * (yi - pi))
                .sum::<f64>()
                / 300.0;
            assert!(g.abs() <= lambda + 1e-5, "col {j}: {g}");
            if c.slopes[j] != 0.0 {
                assert!((g.abs() - lambda).abs() < 1e-5);
            }
        }
        let mut extreme = x.clone();
        extreme.mapv_inplace(|v| v * 1e3);
        let pred = m.predict(extreme.view()).unwrap();
        assert!(pred.iter().all(|&p| (1e-4..=1.0 - 1e-4).contains(&p)));
    }

    #[test]
    fn cv_fit_recovers_direction() {
        let (x, y) = logistic_problem(600, 10, 12);
        let d = DesignMatrix::new(x.view()).unwrap();
        let m = fit_logistic_lasso(&d, &y, Penalty::Cv, &settings(), 5).unwrap();
        let c = m.coefficients().unwrap();
        assert!(c.slopes[0] > 0.8 && c.slopes[0] < 1.6, "{:?}", c.slopes);
        assert!(c.slopes[1] < -0.4);
        let loss = m.report().cv_loss.as_ref().unwrap();
        assert!(loss.len() <= 50);
        assert_eq!(loss.len(), m.report().lambda_grid.as_ref().unwrap().len());
        // The scan only ends after a run of non-improving points.
        let best = loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(loss.len() == 50 || loss[loss.len() - 10..].iter().all(|&v| v >= best));
        let pred = m.predict(x.view()).unwrap();
        for (a, b) in pred.iter().zip(m.fitted_values()) {
            assert!((a - b.clamp(1e-4, 1.0 - 1e-4)).abs() < 1e-10);
        }
    }

    #[test]
    fn single_class_is_flagged_intercept_only() {
        let (x, _) = logistic_problem(50, 2, 1);
        let d = DesignMatrix::new(x.view()).unwrap();
        let m = fit_logistic_lasso(&d, &[1.0; 50], Penalty::Fixed(0.1), &settings(), 0).unwrap();
        assert!(m.report().degenerate.is_some());
        let pred = m.predict(x.view()).unwrap();
        assert!(pred.iter().all(|&p| (p - (1.0 - 1e-4)).abs() < 1e-12));
    }

    #[test]
    fn objective_decreases_along_solve() {
        let (x, y) = logistic_problem(200, 5, 9);
        let d = DesignMatrix::new(x.view()).unwrap();
        let mut s = LogisticSolver::new(&d, &y);
        let lmax = s.lambda_max();
        let start = s.objective(0.2 * lmax);
        s.solve(0.2 * lmax, lmax, &settings());
        assert!(s.objective(0.2 * lmax) < start);
    }
}
