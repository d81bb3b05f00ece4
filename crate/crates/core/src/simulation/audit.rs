//! Confounding audit: how well covariates predict the outcome and the two
//! treatments.
//!
//! The outcome fit is OLS of `Y2` on `(X0, X1)`; the treatment fits are
//! unpenalized probit regressions of `1{D1 != 0}` on `X0` and of
//! `1{D2 != 0}` on `(D1, X0, X1)`, summarized by the Nagelkerke pseudo-R^2.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::data::PanelDataset;
use crate::error::{Error, Result};
use crate::fmt::ser_f64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub n: usize,
    #[serde(serialize_with = "ser_f64")]
    pub r2_outcome: f64,
    #[serde(serialize_with = "ser_f64")]
    pub pseudo_r2_d1: f64,
    #[serde(serialize_with = "ser_f64")]
    pub pseudo_r2_d2: f64,
}

/// `[1 - exp(2 (ll0 - ll1) / n)] / [1 - exp(2 ll0 / n)]`.
pub fn nagelkerke(ll_null: f64, ll_model: f64, n: usize) -> f64 {
    let n = n as f64;
    let cox_snell = 1.0 - (2.0 * (ll_null - ll_model) / n).exp();
    cox_snell / (1.0 - (2.0 * ll_null / n).exp())
}

fn with_intercept(cols: &[&[f64]], extra: &DMatrix<f64>) -> DMatrix<f64> {
    let n = extra.nrows();
    let k = 1 + cols.len() + extra.ncols();
    DMatrix::from_fn(n, k, |i, j| match j {
        0 => 1.0,
        j if j <= cols.len() => cols[j - 1][i],
        j => extra[(i, j - 1 - cols.len())],
    })
}

fn to_dmatrix(x: ndarray::ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]])
}

/// In-sample R^2 of an OLS fit with intercept.
pub fn ols_r2(x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let yv = DVector::from_column_slice(y);
    let design = with_intercept(&[], x);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&yv, 1e-12)
        .map_err(|e| Error::Config(format!("least squares failed: {e}")))?;
    let resid = &yv - &design * coef;
    let mean = yv.mean();
    let sst: f64 = yv.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::NoVariation {
            what: "outcome".into(),
        });
    }
    Ok(1.0 - resid.norm_squared() / sst)
}

/// `ln Phi(z)`, accurate in the far left tail.
fn log_ndtr(z: f64) -> f64 {
    if z < -30.0 {
        -0.5 * z * z - (-z).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    } else {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    }
}

/// Inverse Mills ratio `phi(z) / Phi(z)`.
fn mills(z: f64) -> f64 {
    if z < -30.0 {
        -z
    } else {
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        pdf / (0.5 * erfc(-z / std::f64::consts::SQRT_2))
    }
}

fn probit_loglik(design: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = design * beta;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| if yi == 1.0 { log_ndtr(e) } else { log_ndtr(-e) })
        .sum()
}

/// Maximized probit log-likelihood (Fisher scoring with step halving).
/// On separable data the likelihood approaches 0 without a maximizer; the
/// iteration stops once improvement stalls.
pub fn probit_max_loglik(x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let design = with_intercept(&[], x);
    let k = design.ncols();
    let mut beta = DVector::zeros(k);
    let mut ll = probit_loglik(&design, y, &beta);
    for _ in 0..200 {
        let eta = &design * &beta;
        let mut g = DVector::zeros(design.nrows());
        let mut root_w = DVector::zeros(design.nrows());
        for (i, (&e, &yi)) in eta.iter().zip(y).enumerate() {
            let (lp, lm) = (mills(e), mills(-e));
            g[i] = if yi == 1.0 { lp } else { -lm };
            // Expected information phi^2 / (Phi (1 - Phi)) = lp * lm.
            root_w[i] = (lp * lm).max(1e-12).sqrt();
        }
        let grad = design.tr_mul(&g);
        let mut xw = design.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= root_w[i];
        }
        let mut info = xw.tr_mul(&xw);
        for j in 0..k {
            info[(j, j)] += 1e-10;
        }
        let step = match info.cholesky() {
            Some(c) => c.solve(&grad),
            None => break,
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &beta + t * &step;
            let ll_new = probit_loglik(&design, y, &cand);
            if ll_new >= ll {
                let gain = ll_new - ll;
                beta = cand;
                ll = ll_new;
                improved = gain > 1e-10 * (1.0 + ll.abs());
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(ll)
}

/// Nagelkerke pseudo-R^2 of a probit fit of binary `y` on `x`.
pub fn probit_pseudo_r2(x: &DMatrix<f64>, y: &[f64], what: &str) -> Result<f64> {
    let n = y.len();
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::NoVariation { what: what.into() });
    }
    let rate = ones as f64 / n as f64;
    let ll0 = ones as f64 * rate.ln() + (n - ones) as f64 * (1.0 - rate).ln();
    let ll1 = probit_max_loglik(x, y)?;
    Ok(nagelkerke(ll0, ll1, n))
}

pub fn confounding_audit(data: &PanelDataset) -> Result<AuditReport> {
    let x0 = to_dmatrix(data.x0());
    let xbar = to_dmatrix(data.x_bar1().view());
    let r2_outcome = ols_r2(&xbar, data.y2())?;
    let t1: Vec<f64> = data
        .d1()
        .iter()
        .map(|&d| f64::from(u8::from(d != 0)))
        .collect();
    let t2: Vec<f64> = data
        .d2()
        .iter()
        .map(|&d| f64::from(u8::from(d != 0)))
        .collect();
    let pseudo_r2_d1 = probit_pseudo_r2(&x0, &t1, "first treatment")?;
    let d1_num: Vec<f64> = data.d1().iter().map(|&d| f64::from(d)).collect();
    let x2 = with_intercept(&[&d1_num], &xbar).remove_column(0);
    let pseudo_r2_d2 = probit_pseudo_r2(&x2, &t2, "second treatment")?;
    Ok(AuditReport {
        n: data.n(),
        r2_outcome,
        pseudo_r2_d1,
        pseudo_r2_d2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nagelkerke_limits() {
        assert_eq!(nagelkerke(-50.0, 0.0, 100), 1.0);
        assert_eq!(nagelkerke(-50.0, -50.0, 100), 0.0);
    }

    #[test]
    fn separable_response_approaches_one() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64 - 19.5);
        let y: Vec<f64> = (0..40).map(|i| f64::from(u8::from(i >= 20))).collect();
        let r = probit_pseudo_r2(&x, &y, "y").unwrap();
        assert!(r > 0.99 && r <= 1.0 + 1e-12, "{r}");
    }

    #[test]
    fn probit_matches_known_fit() {
        // One binary regressor: the MLE reproduces the two cell rates, so
        // the log-likelihood equals the saturated cell log-likelihood.
        let x = DMatrix::from_fn(10, 1, |i, _| f64::from(u8::from(i >= 4)));
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let ll = probit_max_loglik(&x, &y).unwrap();
        let cell = |k: f64, m: f64| k * (k / m).ln() + (m - k) * (1.0 - k / m).ln();
        let expected = cell(1.0, 4.0) + cell(5.0, 6.0);
        assert!((ll - expected).abs() < 1e-8, "{ll} vs {expected}");
    }

    #[test]
    fn ols_r2_exact_line() {
        let x = DMatrix::from_fn(5, 1, |i, _| i as f64);
        assert!((ols_r2(&x, &[1.0, 3.0, 5.0, 7.0, 9.0]).unwrap() - 1.0).abs() < 1e-12);
    }
}
