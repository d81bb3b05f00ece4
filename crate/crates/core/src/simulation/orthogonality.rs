//! Numerical check of first-order insensitivity of the score to nuisance
//! errors.
//!
//! Starting from the true nuisances `eta0`, every selected nuisance is moved
//! along a direction `h`: probabilities on the logit scale
//! (`logit p_r = logit p0 + r h`) or additively, regression functions
//! additively (`mu_r = mu0 + r h`). The drift `|M(r) - M(0)|` of the mean
//! score `M` is fitted against `r` on a log-log scale. An orthogonal score
//! has no first-order term, so the slope is close to 2; a plain IPW score
//! has slope close to 1.
//!
//! By default `M(r)` is the sample average of the score's conditional mean
//! given the covariates, which the simulation design gives in closed form:
//!
//! ```text
//! E[psi | X0, X1] = p1 p2 (mu0 - mu_r) / (p1_r p2_r) + p1 (mu_r - nu_r) / p1_r + nu_r
//! ```
//!
//! (using that `X1` is independent of `D1` given `X0` in this design). This
//! removes the treatment and outcome noise that would otherwise add a
//! first-order `O(r / sqrt(n))` term to the sample drift.

use serde::{Deserialize, Serialize};

use super::dgp::DgpConfig;
use super::oracle::oracle_nuisance_fits;
use crate::data::{PanelDataset, TreatmentSequence};
use crate::error::{Error, Result};
use crate::fmt::{ser_f64, ser_vec_f64};
use crate::nuisance::NuisanceFits;
use crate::scores::score_terms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `h = 1` for every nuisance.
    Constant,
    /// `h` = first covariate of the nuisance's own conditioning set
    /// (`x0_1` for `p1`, `nu`; `x1_1` for `p2`, `mu`), scaled to unit RMS.
    FirstCovariate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationScale {
    Logit,
    /// `p_r = p0 + r h`; must stay inside (0, 1).
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    /// Sample mean of the realized scores.
    Sample,
    /// Sample mean of the closed-form conditional mean given covariates.
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Orthogonal,
    /// `I1 I2 Y2 / (p1 p2)`: no regression adjustment.
    Ipw,
}

/// Which nuisances move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NuisanceSet {
    pub p1: bool,
    pub p2: bool,
    pub mu: bool,
    pub nu: bool,
}

impl NuisanceSet {
    pub const ALL: Self = Self {
        p1: true,
        p2: true,
        mu: true,
        nu: true,
    };
    pub const NU_ONLY: Self = Self {
        p1: false,
        p2: false,
        mu: false,
        nu: true,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub directions: Vec<Direction>,
    pub r_grid: Vec<f64>,
    pub scale: PerturbationScale,
    pub evaluation: Evaluation,
    pub nuisances: NuisanceSet,
    pub scores: Vec<ScoreKind>,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            directions: vec![Direction::Constant, Direction::FirstCovariate],
            r_grid: vec![0.025, 0.05, 0.1, 0.2],
            scale: PerturbationScale::Logit,
            evaluation: Evaluation::Conditional,
            nuisances: NuisanceSet::ALL,
            scores: vec![ScoreKind::Orthogonal, ScoreKind::Ipw],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeRow {
    pub score: ScoreKind,
    pub direction: Direction,
    #[serde(serialize_with = "ser_vec_f64")]
    pub r: Vec<f64>,
    /// `|M(r) - M(0)|` per grid point.
    #[serde(serialize_with = "ser_vec_f64")]
    pub drift: Vec<f64>,
    /// OLS slope of `ln drift` on `ln r`.
    #[serde(serialize_with = "ser_f64")]
    pub slope: f64,
}

/// Mean of the realized orthogonal score at the true nuisances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroMeanCheck {
    #[serde(serialize_with = "ser_f64")]
    pub mean: f64,
    #[serde(serialize_with = "ser_f64")]
    pub se: f64,
    #[serde(serialize_with = "ser_f64")]
    pub truth: f64,
}

impl ZeroMeanCheck {
    pub fn z(&self) -> f64 {
        (self.mean - self.truth) / self.se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    pub seq: TreatmentSequence,
    pub n: usize,
    pub zero_mean: ZeroMeanCheck,
    pub rows: Vec<SlopeRow>,
}

impl OrthogonalityReport {
    pub fn slope(&self, score: ScoreKind, direction: Direction) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.score == score && r.direction == direction)
            .map(|r| r.slope)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn unit_rms(v: Vec<f64>) -> Vec<f64> {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if rms == 0.0 {
        return v;
    }
    v.into_iter().map(|x| x / rms).collect()
}

struct Directions {
    h0: Vec<f64>,
    h1: Vec<f64>,
}

fn directions(data: &PanelDataset, d: Direction) -> Directions {
    let n = data.n();
    match d {
        Direction::Constant => Directions {
            h0: vec![1.0; n],
            h1: vec![1.0; n],
        },
        Direction::FirstCovariate => Directions {
            h0: unit_rms(data.x0().column(0).to_vec()),
            h1: unit_rms(data.x1().column(0).to_vec()),
        },
    }
}

fn perturb_prob(
    p0: &[f64],
    h: &[f64],
    r: f64,
    scale: PerturbationScale,
    name: &str,
) -> Result<Vec<f64>> {
    let out: Vec<f64> = match scale {
        PerturbationScale::Logit => p0
            .iter()
            .zip(h)
            .map(|(&p, &h)| sigmoid(logit(p) + r * h))
            .collect(),
        PerturbationScale::Additive => p0.iter().zip(h).map(|(&p, &h)| p + r * h).collect(),
    };
    if out.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::PerturbationOutOfRange {
            nuisance: name.into(),
            r,
        });
    }
    Ok(out)
}

fn perturbed(
    eta0: &NuisanceFits,
    dir: &Directions,
    r: f64,
    spec: &PerturbationSpec,
) -> Result<NuisanceFits> {
    let set = spec.nuisances;
    let shift = |v: &[f64], h: &[f64], on: bool| -> Vec<f64> {
        if on {
            v.iter().zip(h).map(|(a, b)| a + r * b).collect()
        } else {
            v.to_vec()
        }
    };
    let mut eta = eta0.clone();
    if set.p1 {
        eta.p1 = perturb_prob(&eta0.p1, &dir.h0, r, spec.scale, "p1")?;
    }
    if set.p2 {
        eta.p2 = perturb_prob(&eta0.p2, &dir.h1, r, spec.scale, "p2")?;
    }
    eta.mu = shift(&eta0.mu, &dir.h1, set.mu);
    eta.nu = shift(&eta0.nu, &dir.h0, set.nu);
    Ok(eta)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c as f64
}

/// Mean score `M` at nuisances `eta`, with `eta0` the truth.
fn mean_score(
    data: &PanelDataset,
    eta0: &NuisanceFits,
    eta: &NuisanceFits,
    score: ScoreKind,
    eval: Evaluation,
) -> Result<f64> {
    let n = data.n();
    Ok(match (score, eval) {
        (ScoreKind::Orthogonal, Evaluation::Sample) => {
            let t = score_terms(data, eta)?;
            mean((0..n).map(|i| t.term1[i] + t.term2[i] + t.nu[i]))
        }
        (ScoreKind::Orthogonal, Evaluation::Conditional) => mean((0..n).map(|i| {
            let a = eta0.p1[i] / eta.p1[i];
            let b = eta0.p2[i] / eta.p2[i];
            a * b * (eta0.mu[i] - eta.mu[i]) + a * (eta.mu[i] - eta.nu[i]) + eta.nu[i]
        })),
        (ScoreKind::Ipw, Evaluation::Sample) => {
            let seq = eta.seq;
            mean((0..n).map(|i| {
                if seq.matches(data.d1()[i], data.d2()[i]) {
                    data.y2()[i] / (eta.p1[i] * eta.p2[i])
                } else {
                    0.0
                }
            }))
        }
        (ScoreKind::Ipw, Evaluation::Conditional) => {
            mean((0..n).map(|i| eta0.p1[i] * eta0.p2[i] * eta0.mu[i] / (eta.p1[i] * eta.p2[i])))
        }
    })
}

/// OLS slope of `ln y` on `ln x`; `NaN` when a drift is exactly zero.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    if y.iter().any(|&v| v <= 0.0) {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = mean(lx.iter().copied());
    let my = mean(ly.iter().copied());
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs the perturbation experiment on data drawn from `config`.
pub fn check_orthogonality(
    data: &PanelDataset,
    config: &DgpConfig,
    seq: TreatmentSequence,
    spec: &PerturbationSpec,
) -> Result<OrthogonalityReport> {
    if spec.r_grid.len() < 2 || spec.r_grid.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Config(
            "r grid needs at least two positive values".into(),
        ));
    }
    let eta0 = oracle_nuisance_fits(data, config, seq, false, 0.0)?;

    let t = score_terms(data, &eta0)?;
    let psi: Vec<f64> = (0..data.n())
        .map(|i| t.term1[i] + t.term2[i] + t.nu[i])
        .collect();
    let m = mean(psi.iter().copied());
    let var = mean(psi.iter().map(|v| (v - m).powi(2)));
    let zero_mean = ZeroMeanCheck {
        mean: m,
        se: (var / data.n() as f64).sqrt(),
        truth: f64::from(seq.d1 + seq.d2),
    };

    let mut rows = Vec::new();
    for &score in &spec.scores {
        let base = mean_score(data, &eta0, &eta0, score, spec.evaluation)?;
        for &direction in &spec.directions {
            let dir = directions(data, direction);
            let drift = spec
                .r_grid
                .iter()
                .map(|&r| {
                    let eta = perturbed(&eta0, &dir, r, spec)?;
                    Ok((mean_score(data, &eta0, &eta, score, spec.evaluation)? - base).abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(SlopeRow {
                score,
                direction,
                r: spec.r_grid.clone(),
                slope: log_log_slope(&spec.r_grid, &drift),
                drift,
            });
        }
    }
    Ok(OrthogonalityReport {
        seq,
        n: data.n(),
        zero_mean,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.2, 0.4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((log_log_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn additive_perturbation_out_of_range_is_error() {
        assert!(matches!(
            perturb_prob(
                &[0.5, 0.95],
                &[1.0, 1.0],
                0.1,
                PerturbationScale::Additive,
                "p1"
            ),
            Err(Error::PerturbationOutOfRange { .. })
        ));
        assert!(perturb_prob(
            &[0.5, 0.95],
            &[1.0, 1.0],
            0.1,
            PerturbationScale::Logit,
            "p1"
        )
        .is_ok());
    }
}
