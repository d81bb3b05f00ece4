//! Cross-fitted nuisance estimation.
//!
//! For each fold `k` the propensities are trained on the full complement,
//! the outcome model `mu` on half `A_k` of the complement and the nested
//! mean `nu` on half `B_k`, using `mu` predictions as its pseudo-outcome.
//! All predictions for rows in fold `k` come from models that never saw
//! those rows.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{subset_by_sequence, PanelDataset, SequenceMatch, TreatmentSequence};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::learners::{
    fit_learner, DesignMatrix, FittedModel, ForestParams, LearnerKind, Penalty, SolverSettings,
    Task,
};

/// Learner choice and numerical settings for every nuisance function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub p1: LearnerKind,
    pub p2: LearnerKind,
    pub mu: LearnerKind,
    pub nu: LearnerKind,
    pub g: LearnerKind,
    pub penalty: Penalty,
    pub solver: SolverSettings,
    pub forest: ForestParams,
    /// Smallest training stratum accepted by any fit.
    pub min_stratum: usize,
    /// Fit the second-period propensity on the whole complement with `D1`
    /// as a feature instead of on the `D1 = d1` stratum.
    pub pooled_p2: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            p1: LearnerKind::LogisticLasso,
            p2: LearnerKind::LogisticLasso,
            mu: LearnerKind::Lasso,
            nu: LearnerKind::Lasso,
            g: LearnerKind::LogisticLasso,
            penalty: Penalty::Cv,
            solver: SolverSettings::default(),
            forest: ForestParams::default(),
            min_stratum: 20,
            pooled_p2: false,
        }
    }
}

impl LearnerConfig {
    /// The same learner kind for all outcome models and all propensities.
    pub fn uniform(outcome: LearnerKind, propensity: LearnerKind) -> Self {
        Self {
            p1: propensity,
            p2: propensity,
            g: propensity,
            mu: outcome,
            nu: outcome,
            ..Self::default()
        }
    }
}

/// Out-of-fold nuisance predictions for one treatment sequence, indexed by
/// observation.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFits {
    pub seq: TreatmentSequence,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub g: Option<Vec<f64>>,
    pub fold: Vec<usize>,
}

impl NuisanceFits {
    pub fn n(&self) -> usize {
        self.p1.len()
    }

    /// Checks that every vector has length `n` and probabilities lie in [0, 1].
    pub fn validate(&self, n: usize) -> Result<()> {
        let cols: [(&str, &[f64]); 4] = [
            ("p1", &self.p1),
            ("p2", &self.p2),
            ("mu", &self.mu),
            ("nu", &self.nu),
        ];
        for (name, v) in cols {
            if v.len() != n {
                return Err(Error::LengthMismatch {
                    column: name.into(),
                    expected: n,
                    found: v.len(),
                });
            }
        }
        if self.fold.len() != n {
            return Err(Error::LengthMismatch {
                column: "fold".into(),
                expected: n,
                found: self.fold.len(),
            });
        }
        let probs = [Some(&self.p1), Some(&self.p2), self.g.as_ref()];
        for (name, v) in ["p1", "p2", "g"].iter().zip(probs) {
            let Some(v) = v else { continue };
            if v.len() != n {
                return Err(Error::LengthMismatch {
                    column: (*name).into(),
                    expected: n,
                    found: v.len(),
                });
            }
            if let Some(row) = v.iter().position(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Config(format!(
                    "{name} at row {row} is not a probability"
                )));
            }
        }
        Ok(())
    }
}

/// Out-of-fold predictions for the static (single-treatment) AIPW score.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticFits {
    /// `Pr(T = 1 | X0)`, clipped.
    pub p: Vec<f64>,
    pub m1: Vec<f64>,
    pub m0: Vec<f64>,
    pub fold: Vec<usize>,
}

/// Per-stage seed offsets. `p1` and `g` share a stage so that a subgroup
/// defined as `D1 = d1` reproduces the `p1` fit exactly.
mod stage {
    pub const P1: u64 = 1;
    pub const P2: u64 = 2;
    pub const MU: u64 = 3;
    pub const NU: u64 = 4;
    pub const STATIC_P: u64 = 5;
    pub const STATIC_M: u64 = 6;
}

/// `mu` predictions for fold `k` and for half `B_k` (the `nu` training pool).
#[derive(Debug, Clone, PartialEq)]
pub struct MuPredictions {
    pub fold: Vec<f64>,
    pub half_b: Vec<f64>,
}

struct Features {
    xbar: Array2<f64>,
}

impl Features {
    fn new(data: &PanelDataset) -> Self {
        Self {
            xbar: data.x_bar1(),
        }
    }
}

fn labels(rows: &[usize], f: impl Fn(usize) -> bool) -> Vec<f64> {
    rows.iter().map(|&i| f64::from(u8::from(f(i)))).collect()
}

fn check_stratum(what: impl FnOnce() -> String, rows: usize, cfg: &LearnerConfig) -> Result<()> {
    let minimum = cfg.min_stratum.max(2);
    if rows < minimum {
        return Err(Error::StratumTooSmall {
            what: what(),
            rows,
            minimum,
        });
    }
    Ok(())
}

fn check_two_classes(y: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::NoVariation { what: what() });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit_on_rows(
    kind: LearnerKind,
    task: Task,
    x: ArrayView2<'_, f64>,
    rows: &[usize],
    y: &[f64],
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<FittedModel> {
    let design = DesignMatrix::from_rows(x, rows)?;
    fit_learner(
        kind,
        task,
        &design,
        y,
        cfg.penalty,
        &cfg.solver,
        &cfg.forest,
        seed,
    )
}

fn predict_rows(model: &FittedModel, x: ArrayView2<'_, f64>, rows: &[usize]) -> Result<Vec<f64>> {
    model.predict(x.select(Axis(0), rows).view())
}

fn classifier_on_complement(
    kind: LearnerKind,
    x: ArrayView2<'_, f64>,
    k: usize,
    plan: &FoldPlan,
    label: impl Fn(usize) -> bool,
    what: &str,
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    let train = plan.complement(k);
    check_stratum(|| what.to_string(), train.len(), cfg)?;
    let y = labels(&train, label);
    check_two_classes(&y, || what.to_string())?;
    let model = fit_on_rows(
        kind,
        Task::Classification,
        x,
        &train,
        &y,
        cfg,
        derive_seed(plan.seed(), k as u64, stage::P1),
    )?;
    predict_rows(&model, x, &plan.fold(k))
}

fn p1_impl(
    data: &PanelDataset,
    d1: u32,
    k: usize,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    let d = data.d1();
    classifier_on_complement(
        cfg.p1,
        data.x0(),
        k,
        plan,
        |i| d[i] == d1,
        "first treatment",
        cfg,
    )
}

/// `Pr(D1 = d1 | X0)` for the rows of fold `k` (in ascending row order),
/// trained on the complement of fold `k`.
pub fn estimate_p1(
    data: &PanelDataset,
    seq: TreatmentSequence,
    k: usize,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    check_plan(data, plan)?;
    p1_impl(data, seq.d1, k, plan, cfg).map_err(|e| e.in_fold(k))
}

fn p2_impl(
    data: &PanelDataset,
    feats: &Features,
    seq: TreatmentSequence,
    k: usize,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    let what = || format!("second treatment for sequence {seq}");
    let comp = plan.complement(k);
    let fold = plan.fold(k);
    let d2 = data.d2();
    let seed = derive_seed(plan.seed(), k as u64, stage::P2);
    if cfg.pooled_p2 {
        let d1_col = Array2::from_shape_fn((data.n(), 1), |(i, _)| f64::from(data.d1()[i]));
        let x =
            concatenate(Axis(1), &[feats.xbar.view(), d1_col.view()]).expect("row counts agree");
        check_stratum(what, comp.len(), cfg)?;
        let y = labels(&comp, |i| d2[i] == seq.d2);
        check_two_classes(&y, what)?;
        let model = fit_on_rows(cfg.p2, Task::Classification, x.view(), &comp, &y, cfg, seed)?;
        let mut at = x.select(Axis(0), &fold);
        at.column_mut(x.ncols() - 1).fill(f64::from(seq.d1));
        return model.predict(at.view());
    }
    let train = subset_by_sequence(data, seq, &comp, SequenceMatch::FirstOnly);
    check_stratum(what, train.len(), cfg)?;
    let y = labels(&train, |i| d2[i] == seq.d2);
    check_two_classes(&y, what)?;
    let model = fit_on_rows(
        cfg.p2,
        Task::Classification,
        feats.xbar.view(),
        &train,
        &y,
        cfg,
        seed,
    )?;
    predict_rows(&model, feats.xbar.view(), &fold)
}

/// `Pr(D2 = d2 | D1 = d1, X0, X1)` for fold `k`, trained on complement rows
/// with `D1 = d1` (or pooled, see [`LearnerConfig::pooled_p2`]).
pub fn estimate_p2(
    data: &PanelDataset,
    seq: TreatmentSequence,
    k: usize,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    check_plan(data, plan)?;
    p2_impl(data, &Features::new(data), seq, k, plan, cfg).map_err(|e| e.in_fold(k))
}

fn mu_impl(
    data: &PanelDataset,
    feats: &Features,
    seq: TreatmentSequence,
    k: usize,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
) -> Result<MuPredictions> {
    let train = subset_by_sequence(data, seq, plan.half_a(k), SequenceMatch::Both);
    check_stratum(
        || format!("outcome model for sequence {seq}"),
        train.len(),
        cfg,
    )?;
    let y: Vec<f64> = train.iter().map(|&i| data.y2()[i]).collect();
    let model = fit_on_rows(
        cfg.mu,
        Task::Regression,
        feats.xbar.view(),
        &train,
        &y,
        cfg,
        derive_seed(plan.seed(), k as u64, stage::MU),
    )?;
    Ok(MuPredictions {
        fold: predict_rows(&model, feats.xbar.view(), &plan.fold(k))?,
        half_b: predict_rows(&model, feats.xbar.view(), plan.half_b(k))?,
    })
}

/// `E[Y2 | D1 = d1, D2 = d2, X0, X1]` trained on half `A_k` rows with the
/// matching sequence; predicted on fold `k` and on half `B_k`.
pub fn estimate_mu(
    data: &PanelDataset,
    seq: TreatmentSequence,
    k: usize,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
) -> Result<MuPredictions> {
    check_plan(data, plan)?;
    mu_impl(data, &Features::new(data), seq, k, plan, cfg).map_err(|e| e.in_fold(k))
}

fn nu_impl(
    data: &PanelDataset,
    seq: TreatmentSequence,
    k: usize,
    plan: &FoldPlan,
    mu_half_b: &[f64],
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    let half_b = plan.half_b(k);
    if mu_half_b.len() != half_b.len() {
        return Err(Error::LengthMismatch {
            column: "mu on half B".into(),
            expected: half_b.len(),
            found: mu_half_b.len(),
        });
    }
    let d1 = data.d1();
    let (train, y): (Vec<usize>, Vec<f64>) = half_b
        .iter()
        .zip(mu_half_b)
        .filter(|(&i, _)| d1[i] == seq.d1)
        .map(|(&i, &m)| (i, m))
        .unzip();
    check_stratum(
        || format!("nested mean for sequence {seq}"),
        train.len(),
        cfg,
    )?;
    let model = fit_on_rows(
        cfg.nu,
        Task::Regression,
        data.x0(),
        &train,
        &y,
        cfg,
        derive_seed(plan.seed(), k as u64, stage::NU),
    )?;
    predict_rows(&model, data.x0(), &plan.fold(k))
}

/// Nested mean `E[mu(d1, d2, X0, X1) | D1 = d1, X0]` for fold `k`: regresses
/// the `mu` predictions on half `B_k` rows with `D1 = d1` onto `X0`.
/// `mu_half_b` must be aligned with `plan.half_b(k)`.
pub fn estimate_nu(
    data: &PanelDataset,
    seq: TreatmentSequence,
    k: usize,
    plan: &FoldPlan,
    mu_half_b: &[f64],
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    check_plan(data, plan)?;
    nu_impl(data, seq, k, plan, mu_half_b, cfg).map_err(|e| e.in_fold(k))
}

/// `Pr(S = 1 | X0)` for fold `k`, trained on the complement.
pub fn estimate_g(
    data: &PanelDataset,
    s: &[bool],
    k: usize,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    check_plan(data, plan)?;
    if s.len() != data.n() {
        return Err(Error::LengthMismatch {
            column: "s".into(),
            expected: data.n(),
            found: s.len(),
        });
    }
    classifier_on_complement(
        cfg.g,
        data.x0(),
        k,
        plan,
        |i| s[i],
        "subgroup indicator",
        cfg,
    )
    .map_err(|e| e.in_fold(k))
}

fn check_plan(data: &PanelDataset, plan: &FoldPlan) -> Result<()> {
    if plan.n() != data.n() {
        return Err(Error::LengthMismatch {
            column: "fold plan".into(),
            expected: data.n(),
            found: plan.n(),
        });
    }
    Ok(())
}

/// How the subgroup probability `g` is obtained for a contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GSource {
    /// `S = 1` for everyone: `g = 1`.
    One,
    /// `S = I{D1 = d}`: reuse the `p1` fit for `d`.
    P1(u32),
    Fit,
}

fn g_source(data: &PanelDataset, s: &[bool], candidates: &[u32]) -> GSource {
    if s.iter().all(|&v| v) {
        return GSource::One;
    }
    for &d in candidates {
        if s.iter().zip(data.d1()).all(|(&si, &di)| si == (di == d)) {
            return GSource::P1(d);
        }
    }
    GSource::Fit
}

struct FoldOutput {
    rows: Vec<usize>,
    arms: Vec<ArmFold>,
    g: Option<Vec<f64>>,
}

struct ArmFold {
    p1: Vec<f64>,
    p2: Vec<f64>,
    mu: Vec<f64>,
    nu: Vec<f64>,
}

fn fold_for_arms(
    data: &PanelDataset,
    feats: &Features,
    seqs: &[TreatmentSequence],
    s: Option<(&[bool], GSource)>,
    k: usize,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
) -> Result<FoldOutput> {
    // One p1 fit per distinct first-period level.
    let mut p1_cache: Vec<(u32, Vec<f64>)> = Vec::new();
    let mut p1_for = |d1: u32| -> Result<Vec<f64>> {
        if let Some((_, v)) = p1_cache.iter().find(|(d, _)| *d == d1) {
            return Ok(v.clone());
        }
        let v = p1_impl(data, d1, k, plan, cfg)?;
        p1_cache.push((d1, v.clone()));
        Ok(v)
    };
    let mut arms = Vec::with_capacity(seqs.len());
    for &seq in seqs {
        let p1 = p1_for(seq.d1)?;
        let p2 = p2_impl(data, feats, seq, k, plan, cfg)?;
        let mu = mu_impl(data, feats, seq, k, plan, cfg)?;
        let nu = nu_impl(data, seq, k, plan, &mu.half_b, cfg)?;
        arms.push(ArmFold {
            p1,
            p2,
            mu: mu.fold,
            nu,
        });
    }
    let rows = plan.fold(k);
    let g = match s {
        None => None,
        Some((_, GSource::One)) => Some(vec![1.0; rows.len()]),
        Some((_, GSource::P1(d))) => Some(p1_for(d)?),
        Some((s, GSource::Fit)) => Some(classifier_on_complement(
            cfg.g,
            data.x0(),
            k,
            plan,
            |i| s[i],
            "subgroup indicator",
            cfg,
        )?),
    };
    Ok(FoldOutput { rows, arms, g })
}

/// Cross-fits the nuisances of several sequences on one fold plan.
///
/// Folds are processed in parallel and merged by fold index, so the result
/// is deterministic. With `subgroup`, `g` is attached to every arm; a
/// subgroup equal to `I{D1 = d1}` of one of the arms reuses that arm's `p1`.
pub fn cross_fit_many(
    data: &PanelDataset,
    seqs: &[TreatmentSequence],
    plan: &FoldPlan,
    cfg: &LearnerConfig,
    subgroup: Option<&[bool]>,
) -> Result<Vec<NuisanceFits>> {
    check_plan(data, plan)?;
    if let Some(s) = subgroup {
        if s.len() != data.n() {
            return Err(Error::LengthMismatch {
                column: "s".into(),
                expected: data.n(),
                found: s.len(),
            });
        }
        if !s.iter().any(|&v| v) {
            return Err(Error::EmptySubgroup("no observation has S = 1".into()));
        }
    }
    let feats = Features::new(data);
    let candidates: Vec<u32> = seqs.iter().map(|s| s.d1).collect();
    let s = subgroup.map(|s| (s, g_source(data, s, &candidates)));
    let outputs: Vec<FoldOutput> = (0..plan.folds())
        .into_par_iter()
        .map(|k| fold_for_arms(data, &feats, seqs, s, k, plan, cfg).map_err(|e| e.in_fold(k)))
        .collect::<Result<_>>()?;

    let n = data.n();
    let mut fits: Vec<NuisanceFits> = seqs
        .iter()
        .map(|&seq| NuisanceFits {
            seq,
            p1: vec![0.0; n],
            p2: vec![0.0; n],
            mu: vec![0.0; n],
            nu: vec![0.0; n],
            g: s.map(|_| vec![0.0; n]),
            fold: plan.assignments().to_vec(),
        })
        .collect();
    for out in outputs {
        for (fit, arm) in fits.iter_mut().zip(&out.arms) {
            for (pos, &i) in out.rows.iter().enumerate() {
                fit.p1[i] = arm.p1[pos];
                fit.p2[i] = arm.p2[pos];
                fit.mu[i] = arm.mu[pos];
                fit.nu[i] = arm.nu[pos];
                if let (Some(g), Some(src)) = (fit.g.as_mut(), out.g.as_ref()) {
                    g[i] = src[pos];
                }
            }
        }
    }
    Ok(fits)
}

/// Out-of-fold nuisances for one sequence (and `g` when `subgroup` is set).
pub fn cross_fit(
    data: &PanelDataset,
    seq: TreatmentSequence,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
    subgroup: Option<&[bool]>,
) -> Result<NuisanceFits> {
    Ok(cross_fit_many(data, &[seq], plan, cfg, subgroup)?
        .pop()
        .expect("one sequence in, one fit out"))
}

/// Cross-fitted propensity `Pr(T = 1 | X0)` and arm-specific outcome means
/// `E[Y2 | T = t, X0]` for a binary pseudo-treatment `t`.
pub fn cross_fit_static(
    data: &PanelDataset,
    t: &[bool],
    plan: &FoldPlan,
    cfg: &LearnerConfig,
) -> Result<StaticFits> {
    check_plan(data, plan)?;
    let n = data.n();
    if t.len() != n {
        return Err(Error::LengthMismatch {
            column: "pseudo-treatment".into(),
            expected: n,
            found: t.len(),
        });
    }
    let x0 = data.x0();
    type FoldOut = (Vec<usize>, Vec<f64>, Vec<f64>, Vec<f64>);
    let per_fold: Vec<FoldOut> = (0..plan.folds())
        .into_par_iter()
        .map(|k| {
            let run = || -> Result<_> {
                let comp = plan.complement(k);
                let fold = plan.fold(k);
                check_stratum(|| "pseudo-treatment".into(), comp.len(), cfg)?;
                let y = labels(&comp, |i| t[i]);
                check_two_classes(&y, || "pseudo-treatment".into())?;
                let pm = fit_on_rows(
                    cfg.p1,
                    Task::Classification,
                    x0,
                    &comp,
                    &y,
                    cfg,
                    derive_seed(plan.seed(), k as u64, stage::STATIC_P),
                )?;
                let p = predict_rows(&pm, x0, &fold)?;
                let arm = |level: bool| -> Result<Vec<f64>> {
                    let rows: Vec<usize> =
                        comp.iter().copied().filter(|&i| t[i] == level).collect();
                    check_stratum(
                        || format!("outcome model for pseudo-treatment arm {}", u8::from(level)),
                        rows.len(),
                        cfg,
                    )?;
                    let y: Vec<f64> = rows.iter().map(|&i| data.y2()[i]).collect();
                    let m = fit_on_rows(
                        cfg.mu,
                        Task::Regression,
                        x0,
                        &rows,
                        &y,
                        cfg,
                        derive_seed(plan.seed(), k as u64, stage::STATIC_M + u64::from(level)),
                    )?;
                    predict_rows(&m, x0, &fold)
                };
                let m1 = arm(true)?;
                let m0 = arm(false)?;
                Ok((fold, p, m1, m0))
            };
            run().map_err(|e: Error| e.in_fold(k))
        })
        .collect::<Result<_>>()?;
    let mut out = StaticFits {
        p: vec![0.0; n],
        m1: vec![0.0; n],
        m0: vec![0.0; n],
        fold: plan.assignments().to_vec(),
    };
    for (rows, p, m1, m0) in per_fold {
        for (pos, &i) in rows.iter().enumerate() {
            out.p[i] = p[pos];
            out.m1[i] = m1[pos];
            out.m0[i] = m0[pos];
        }
    }
    Ok(out)
}
