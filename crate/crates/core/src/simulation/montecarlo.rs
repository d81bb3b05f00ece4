//! Monte Carlo harness: repeated simulate, cross-fit, estimate.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{simulate_dgp, DgpConfig};
use super::oracle::oracle_nuisance_fits;
use crate::data::{PanelDataset, TreatmentSequence};
use crate::derive_seed;
use crate::effects::{estimate_ate, estimate_weighted_ate, EffectEstimate};
use crate::error::{Error, Result};
use crate::fmt::ser_f64;
use crate::folds::make_folds;
use crate::nuisance::{cross_fit_many, LearnerConfig, NuisanceFits};
use crate::scores::{score_psi, score_psi_weighted};

/// One `(p, n)` configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub p: usize,
    pub n: usize,
    pub reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceSource {
    CrossFit,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub cells: Vec<Cell>,
    pub folds: usize,
    pub threshold: f64,
    pub seed: u64,
    pub arm_a: TreatmentSequence,
    pub arm_b: TreatmentSequence,
    /// Adds the subgroup estimator for `S = 1{D1 = d}`.
    pub subgroup_d1: Option<u32>,
    pub nuisance: NuisanceSource,
    pub learners: LearnerConfig,
    /// DGP shape parameters; `n`, `p` and `seed` are set per replication.
    pub dgp: DgpConfig,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            cells: vec![Cell {
                p: 50,
                n: 2500,
                reps: 200,
            }],
            folds: 3,
            threshold: 0.01,
            seed: 20_240_101,
            arm_a: TreatmentSequence::new(1, 1),
            arm_b: TreatmentSequence::new(0, 0),
            subgroup_d1: Some(1),
            nuisance: NuisanceSource::CrossFit,
            learners: LearnerConfig::default(),
            dgp: DgpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ate,
    WeightedAte,
}

/// Estimates of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub p: usize,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub ate: EffectEstimate,
    pub weighted: Option<EffectEstimate>,
}

/// Aggregate metrics of one estimator in one cell. `sd` uses the `1/R`
/// denominator so that `rmse^2 = bias^2 + sd^2` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub p: usize,
    pub n: usize,
    pub estimator: Estimator,
    #[serde(serialize_with = "ser_f64")]
    pub truth: f64,
    /// `|mean(estimate) - truth|`.
    #[serde(serialize_with = "ser_f64")]
    pub bias: f64,
    #[serde(serialize_with = "ser_f64")]
    pub sd: f64,
    #[serde(serialize_with = "ser_f64")]
    pub avg_se: f64,
    #[serde(serialize_with = "ser_f64")]
    pub rmse: f64,
    /// Percent of 95% intervals covering the truth.
    #[serde(serialize_with = "ser_f64")]
    pub coverage: f64,
    #[serde(serialize_with = "ser_f64")]
    pub mean_trimmed: f64,
    pub reps: usize,
    /// Not serialized: timing is kept out of the deterministic outputs.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloOutput {
    pub reports: Vec<MonteCarloReport>,
    pub records: Vec<RepRecord>,
}

pub const CSV_HEADER: &str = "p,n,estimator,truth,bias,sd,avg_se,rmse,coverage,mean_trimmed,reps";

impl MonteCarloReport {
    pub fn csv_row(&self) -> String {
        let f = crate::fmt_f64;
        let est = match self.estimator {
            Estimator::Ate => "ate",
            Estimator::WeightedAte => "weighted_ate",
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.p,
            self.n,
            est,
            f(self.truth),
            f(self.bias),
            f(self.sd),
            f(self.avg_se),
            f(self.rmse),
            f(self.coverage),
            f(self.mean_trimmed),
            self.reps
        )
    }
}

pub fn to_csv(reports: &[MonteCarloReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Seed of replication `rep` in cell `(p, n)`; independent of the cell's
/// position in the grid.
pub fn rep_seed(base: u64, p: usize, n: usize, rep: usize) -> u64 {
    derive_seed(base, ((p as u64) << 32) | n as u64, rep as u64)
}

fn nuisances(
    data: &PanelDataset,
    dgp: &DgpConfig,
    cfg: &MonteCarloConfig,
    s: Option<&[bool]>,
    seed: u64,
) -> Result<Vec<NuisanceFits>> {
    let arms = [cfg.arm_a, cfg.arm_b];
    match cfg.nuisance {
        NuisanceSource::CrossFit => {
            let plan = make_folds(data.n(), cfg.folds, derive_seed(seed, 1, 0))?;
            cross_fit_many(data, &arms, &plan, &cfg.learners, s)
        }
        NuisanceSource::Oracle => {
            if cfg.subgroup_d1.is_some_and(|d| d != 1) {
                return Err(Error::Config(
                    "oracle subgroup probabilities exist for S = 1{D1 = 1} only".into(),
                ));
            }
            arms.iter()
                .map(|&seq| {
                    oracle_nuisance_fits(data, dgp, seq, s.is_some(), cfg.learners.solver.p_min)
                })
                .collect()
        }
    }
}

/// One replication: draw data, fit nuisances, estimate both effects.
pub fn run_replication(cfg: &MonteCarloConfig, cell: Cell, rep: usize) -> Result<RepRecord> {
    let seed = rep_seed(cfg.seed, cell.p, cell.n, rep);
    let dgp = DgpConfig {
        n: cell.n,
        p: cell.p,
        seed,
        ..cfg.dgp.clone()
    };
    let data = simulate_dgp(&dgp)?;
    let s: Option<Vec<bool>> = cfg
        .subgroup_d1
        .map(|d| data.d1().iter().map(|&v| v == d).collect());
    let fits = nuisances(&data, &dgp, cfg, s.as_deref(), seed)?;
    let (fa, fb) = (&fits[0], &fits[1]);
    let ate = estimate_ate(
        &score_psi(&data, fa, cfg.threshold)?,
        &score_psi(&data, fb, cfg.threshold)?,
    )?;
    let weighted = match &s {
        None => None,
        Some(s) => Some(
            estimate_weighted_ate(
                &score_psi_weighted(&data, fa, s, cfg.threshold)?,
                &score_psi_weighted(&data, fb, s, cfg.threshold)?,
            )?
            .with_subgroup(format!("D1={}", cfg.subgroup_d1.unwrap_or(0))),
        ),
    };
    Ok(RepRecord {
        p: cell.p,
        n: cell.n,
        rep,
        seed,
        ate,
        weighted,
    })
}

/// Metrics over a set of estimates of `truth`.
pub fn summarize(
    cell: Cell,
    estimator: Estimator,
    truth: f64,
    estimates: &[&EffectEstimate],
    wall_time_secs: f64,
) -> MonteCarloReport {
    let r = estimates.len() as f64;
    let mean_est = estimates.iter().map(|e| e.estimate).sum::<f64>() / r;
    let sd = (estimates
        .iter()
        .map(|e| (e.estimate - mean_est).powi(2))
        .sum::<f64>()
        / r)
        .sqrt();
    let rmse = (estimates
        .iter()
        .map(|e| (e.estimate - truth).powi(2))
        .sum::<f64>()
        / r)
        .sqrt();
    MonteCarloReport {
        p: cell.p,
        n: cell.n,
        estimator,
        truth,
        bias: (mean_est - truth).abs(),
        sd,
        avg_se: estimates.iter().map(|e| e.se).sum::<f64>() / r,
        rmse,
        coverage: 100.0 * estimates.iter().filter(|e| e.covers(truth)).count() as f64 / r,
        mean_trimmed: estimates.iter().map(|e| e.n_trimmed as f64).sum::<f64>() / r,
        reps: estimates.len(),
        wall_time_secs,
    }
}

/// Runs every cell (replications in parallel) and aggregates per estimator.
/// A failing replication aborts the run with its index.
pub fn run_monte_carlo(cfg: &MonteCarloConfig) -> Result<MonteCarloOutput> {
    if cfg.cells.is_empty() {
        return Err(Error::Config("Monte Carlo grid is empty".into()));
    }
    let truth = cfg.dgp.true_effect(cfg.arm_a, cfg.arm_b);
    let mut reports = Vec::new();
    let mut records = Vec::new();
    for &cell in &cfg.cells {
        if cell.reps < 2 {
            return Err(Error::Config(format!(
                "cell (p={}, n={}) needs at least 2 replications",
                cell.p, cell.n
            )));
        }
        let start = Instant::now();
        let mut recs: Vec<RepRecord> = (0..cell.reps)
            .into_par_iter()
            .map(|rep| {
                run_replication(cfg, cell, rep).map_err(|e| Error::Replication {
                    rep,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        recs.sort_by_key(|r| r.rep);
        let elapsed = start.elapsed().as_secs_f64();
        let ate: Vec<&EffectEstimate> = recs.iter().map(|r| &r.ate).collect();
        reports.push(summarize(cell, Estimator::Ate, truth, &ate, elapsed));
        let weighted: Vec<&EffectEstimate> =
            recs.iter().filter_map(|r| r.weighted.as_ref()).collect();
        if !weighted.is_empty() {
            reports.push(summarize(
                cell,
                Estimator::WeightedAte,
                truth,
                &weighted,
                elapsed,
            ));
        }
        records.extend(recs);
    }
    Ok(MonteCarloOutput { reports, records })
}
