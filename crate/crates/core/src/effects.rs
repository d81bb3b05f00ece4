//! Aggregation of scores into effect estimates with influence-function
//! standard errors, normal confidence intervals and two-sided p-values.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{PanelDataset, TreatmentSequence};
use crate::error::{Error, Result};
use crate::fmt::{ser_f64, ser_opt_f64};
use crate::folds::make_folds;
use crate::nuisance::{cross_fit_static, LearnerConfig};
use crate::scores::{score_static_aipw, ScoreVector};

/// Which estimand an [`EffectEstimate`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    PotentialOutcome,
    Ate,
    WeightedAte,
    Placebo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    #[serde(serialize_with = "ser_f64")]
    pub estimate: f64,
    #[serde(serialize_with = "ser_f64")]
    pub se: f64,
    #[serde(serialize_with = "ser_f64")]
    pub ci_low: f64,
    #[serde(serialize_with = "ser_f64")]
    pub ci_high: f64,
    #[serde(serialize_with = "ser_f64")]
    pub p_value: f64,
    /// Confidence level of `[ci_low, ci_high]`.
    #[serde(serialize_with = "ser_f64")]
    pub level: f64,
    pub n_used: usize,
    pub n_trimmed: usize,
    /// `(arm A, arm B)`; the effect is A minus B.
    pub contrast: Option<(TreatmentSequence, TreatmentSequence)>,
    pub subgroup: Option<String>,
    /// Mean potential outcome of arm A (or the single sequence).
    #[serde(serialize_with = "ser_opt_f64")]
    pub level_a: Option<f64>,
    #[serde(serialize_with = "ser_opt_f64")]
    pub level_b: Option<f64>,
}

impl EffectEstimate {
    /// Whether the confidence interval covers `truth`.
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }

    pub fn with_subgroup(mut self, label: impl Into<String>) -> Self {
        self.subgroup = Some(label.into());
        self
    }

    /// Recomputes the interval for another confidence level.
    pub fn with_level(mut self, level: f64) -> Self {
        let z = z_quantile(level);
        self.level = level;
        self.ci_low = self.estimate - z * self.se;
        self.ci_high = self.estimate + z * self.se;
        self
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// `z_{(1 + level) / 2}`, e.g. 1.959963984540054 for 0.95.
pub fn z_quantile(level: f64) -> f64 {
    std_normal().inverse_cdf(0.5 + level / 2.0)
}

/// Two-sided normal p-value; 1 for a zero estimate with zero SE, 0 for a
/// nonzero estimate with zero SE.
pub fn p_value(estimate: f64, se: f64) -> f64 {
    if se > 0.0 {
        2.0 * std_normal().sf((estimate / se).abs())
    } else if estimate == 0.0 {
        1.0
    } else {
        0.0
    }
}

const LEVEL: f64 = 0.95;

fn finish(
    kind: EffectKind,
    estimate: f64,
    se: f64,
    n_used: usize,
    n_trimmed: usize,
) -> EffectEstimate {
    let z = z_quantile(LEVEL);
    EffectEstimate {
        kind,
        estimate,
        se,
        ci_low: estimate - z * se,
        ci_high: estimate + z * se,
        p_value: p_value(estimate, se),
        level: LEVEL,
        n_used,
        n_trimmed,
        contrast: None,
        subgroup: None,
        level_a: None,
        level_b: None,
    }
}

/// Mean and `sqrt(mean((v - mean)^2) / m)` over the selected values.
fn mean_and_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (sum, m) = values
        .clone()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    let mean = sum / m as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
    (mean, (var / m as f64).sqrt(), m)
}

fn require_kept(kept: usize) -> Result<()> {
    if kept < 2 {
        return Err(Error::InsufficientKept { kept, required: 2 });
    }
    Ok(())
}

/// Mean potential outcome: average of the kept scores. Weighted scores
/// (carrying `S`) give the subgroup level `sum(psi) / sum(S)` with the
/// ratio-linearized SE.
pub fn estimate_potential_outcome(scores: &ScoreVector) -> Result<EffectEstimate> {
    require_kept(scores.n_kept)?;
    if let Some(s) = &scores.s {
        let rows: Vec<usize> = (0..scores.n()).filter(|&i| scores.kept[i]).collect();
        let m = rows.len();
        let s_sum: f64 = rows.iter().map(|&i| s[i]).sum();
        if s_sum < 2.0 {
            return Err(Error::EmptySubgroup(format!(
                "{s_sum} kept observations with S = 1, need at least 2"
            )));
        }
        let level = rows.iter().map(|&i| scores.psi[i]).sum::<f64>() / s_sum;
        let s_mean = s_sum / m as f64;
        let var = rows
            .iter()
            .map(|&i| ((scores.psi[i] - s[i] * level) / s_mean).powi(2))
            .sum::<f64>()
            / m as f64;
        let mut out = finish(
            EffectKind::PotentialOutcome,
            level,
            (var / m as f64).sqrt(),
            m,
            scores.n() - m,
        );
        out.level_a = Some(level);
        return Ok(out);
    }
    let kept = scores
        .psi
        .iter()
        .zip(&scores.kept)
        .filter(|(_, &k)| k)
        .map(|(v, _)| *v);
    let (mean, se, m) = mean_and_se(kept);
    let mut out = finish(EffectKind::PotentialOutcome, mean, se, m, scores.n() - m);
    out.level_a = Some(mean);
    Ok(out)
}

fn joint_mask(a: &ScoreVector, b: &ScoreVector) -> Result<Vec<bool>> {
    if a.n() != b.n() {
        return Err(Error::LengthMismatch {
            column: "scores_b".into(),
            expected: a.n(),
            found: b.n(),
        });
    }
    let kept: Vec<bool> = a.kept.iter().zip(&b.kept).map(|(x, y)| *x && *y).collect();
    require_kept(kept.iter().filter(|&&k| k).count())?;
    Ok(kept)
}

fn contrast_of(a: &ScoreVector, b: &ScoreVector) -> Option<(TreatmentSequence, TreatmentSequence)> {
    a.seq.zip(b.seq)
}

/// `A - B` over the rows kept by both arms; the SE comes from the variance
/// of the per-row score difference.
pub fn estimate_ate(a: &ScoreVector, b: &ScoreVector) -> Result<EffectEstimate> {
    let kept = joint_mask(a, b)?;
    let rows = || (0..a.n()).filter(|&i| kept[i]);
    let (delta, se, m) = mean_and_se(rows().map(|i| a.psi[i] - b.psi[i]));
    let level = |s: &ScoreVector| rows().map(|i| s.psi[i]).sum::<f64>() / m as f64;
    let mut out = finish(EffectKind::Ate, delta, se, m, a.n() - m);
    out.contrast = contrast_of(a, b);
    out.level_a = Some(level(a));
    out.level_b = Some(level(b));
    Ok(out)
}

/// Subgroup effect `E[Y(A) - Y(B) | S = 1]`: each arm is the ratio of
/// summed weighted scores to `sum(S)` over jointly kept rows. The SE uses
/// the delta-method influence values `(psi_i - S_i * level) / mean(S)`.
pub fn estimate_weighted_ate(a: &ScoreVector, b: &ScoreVector) -> Result<EffectEstimate> {
    let kept = joint_mask(a, b)?;
    let s = match (&a.s, &b.s) {
        (Some(sa), Some(sb)) if sa == sb => sa,
        (Some(_), Some(_)) => return Err(Error::Config("arms carry different subgroups".into())),
        _ => {
            return Err(Error::Config(
                "weighted effect needs weighted scores".into(),
            ))
        }
    };
    let rows: Vec<usize> = (0..a.n()).filter(|&i| kept[i]).collect();
    let m = rows.len();
    let s_sum: f64 = rows.iter().map(|&i| s[i]).sum();
    if s_sum < 2.0 {
        return Err(Error::EmptySubgroup(format!(
            "{s_sum} kept observations with S = 1, need at least 2"
        )));
    }
    let s_mean = s_sum / m as f64;
    let level = |v: &ScoreVector| rows.iter().map(|&i| v.psi[i]).sum::<f64>() / s_sum;
    let (la, lb) = (level(a), level(b));
    let u = rows.iter().map(|&i| {
        let ua = (a.psi[i] - s[i] * la) / s_mean;
        let ub = (b.psi[i] - s[i] * lb) / s_mean;
        ua - ub
    });
    let var = u.map(|v| v * v).sum::<f64>() / m as f64;
    let mut out = finish(
        EffectKind::WeightedAte,
        la - lb,
        (var / m as f64).sqrt(),
        m,
        a.n() - m,
    );
    out.contrast = contrast_of(a, b);
    out.level_a = Some(la);
    out.level_b = Some(lb);
    Ok(out)
}

/// Defines the binary pseudo-treatment of a placebo comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum PlaceboSpec {
    /// Rows following sequence `a` (treated) or `b` (control); other rows
    /// are left out.
    Sequences(TreatmentSequence, TreatmentSequence),
    /// An explicit indicator over all rows.
    Column(Vec<bool>),
}

/// Options for [`estimate_placebo`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboOptions {
    pub folds: usize,
    pub seed: u64,
    /// Drops rows with `min(p, 1 - p) < threshold`.
    pub threshold: f64,
}

impl Default for PlaceboOptions {
    fn default() -> Self {
        Self {
            folds: 3,
            seed: 0,
            threshold: 0.01,
        }
    }
}

/// Static cross-fitted AIPW effect of a pseudo-treatment, controlling for
/// `X0` only. Under a valid design the true effect is zero.
pub fn estimate_placebo(
    data: &PanelDataset,
    spec: &PlaceboSpec,
    cfg: &LearnerConfig,
    opts: &PlaceboOptions,
) -> Result<EffectEstimate> {
    let (sub, t, contrast) = match spec {
        PlaceboSpec::Sequences(a, b) => {
            if a == b {
                return Err(Error::InvalidContrast {
                    a: *a,
                    b: *b,
                    reason: "placebo groups must differ".into(),
                });
            }
            let mut rows = Vec::new();
            let mut t = Vec::new();
            for i in 0..data.n() {
                let (d1, d2) = (data.d1()[i], data.d2()[i]);
                if a.matches(d1, d2) {
                    rows.push(i);
                    t.push(true);
                } else if b.matches(d1, d2) {
                    rows.push(i);
                    t.push(false);
                }
            }
            (data.select_rows(&rows), t, Some((*a, *b)))
        }
        PlaceboSpec::Column(t) => (data.clone(), t.clone(), None),
    };
    if t.len() != sub.n() {
        return Err(Error::LengthMismatch {
            column: "pseudo-treatment".into(),
            expected: sub.n(),
            found: t.len(),
        });
    }
    let treated = t.iter().filter(|&&v| v).count();
    if treated == 0 || treated == t.len() {
        return Err(Error::NoVariation {
            what: "pseudo-treatment (one arm is empty)".into(),
        });
    }
    if sub.n() < 2 * opts.folds {
        return Err(Error::TooFewRows {
            n: sub.n(),
            folds: opts.folds,
            required: 2 * opts.folds,
        });
    }
    let plan = make_folds(sub.n(), opts.folds, opts.seed)?;
    let fits = cross_fit_static(&sub, &t, &plan, cfg)?;
    let scores = score_static_aipw(sub.y2(), &t, &fits, opts.threshold)?;
    let mut out = estimate_potential_outcome(&scores)?;
    out.kind = EffectKind::Placebo;
    out.level_a = None;
    out.contrast = contrast;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(psi: Vec<f64>) -> ScoreVector {
        let n = psi.len();
        ScoreVector {
            seq: Some(TreatmentSequence::new(1, 1)),
            psi,
            kept: vec![true; n],
            threshold: 0.0,
            n_kept: n,
            n_trimmed: 0,
            s: None,
        }
    }

    #[test]
    fn constant_scores() {
        let e = estimate_potential_outcome(&sv(vec![1.0; 4])).unwrap();
        assert_eq!((e.estimate, e.se), (1.0, 0.0));
        assert_eq!(e.p_value, 0.0);
    }

    #[test]
    fn two_point_scores() {
        let e = estimate_potential_outcome(&sv(vec![0.0, 2.0])).unwrap();
        assert_eq!(e.estimate, 1.0);
        assert!((e.se - 0.5f64.sqrt()).abs() < 1e-15);
        let z = 1.959963984540054;
        assert!((e.ci_high - e.estimate - z * e.se).abs() < 1e-12);
        assert!((e.p_value - 2.0 * (1.0 - 0.921_350_396_474_857_5)).abs() < 1e-9);
    }

    #[test]
    fn identical_arms_give_zero() {
        let a = sv(vec![0.3, 1.7, -2.0, 4.0]);
        let e = estimate_ate(&a, &a.clone()).unwrap();
        assert_eq!((e.estimate, e.se, e.p_value), (0.0, 0.0, 1.0));
    }

    #[test]
    fn joint_mask_intersects() {
        let mut a = sv(vec![1.0, 2.0, 3.0, 4.0]);
        let mut b = sv(vec![0.0, 0.0, 0.0, 0.0]);
        a.kept[0] = false;
        b.kept[3] = false;
        let e = estimate_ate(&a, &b).unwrap();
        assert_eq!(e.n_used, 2);
        assert_eq!(e.n_trimmed, 2);
        assert_eq!(e.estimate, 2.5);
        a.kept[1] = false;
        assert!(matches!(
            estimate_ate(&a, &b),
            Err(Error::InsufficientKept { kept: 1, .. })
        ));
    }

    #[test]
    fn weighted_reduces_to_unweighted() {
        let mut a = sv(vec![0.3, 1.7, -2.0, 4.0, 0.25]);
        let mut b = sv(vec![1.0, -0.5, 0.0, 2.0, 3.0]);
        let plain = estimate_ate(&a, &b).unwrap();
        a.s = Some(vec![1.0; 5]);
        b.s = Some(vec![1.0; 5]);
        let w = estimate_weighted_ate(&a, &b).unwrap();
        assert!((w.estimate - plain.estimate).abs() <= 1e-12);
        assert!((w.se - plain.se).abs() <= 1e-12);
    }

    #[test]
    fn p_value_formula() {
        assert!((p_value(1.959963984540054, 1.0) - 0.05).abs() < 1e-9);
        assert_eq!(p_value(0.0, 0.0), 1.0);
    }
}
