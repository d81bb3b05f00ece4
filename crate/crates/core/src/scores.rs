//! Per-observation orthogonal scores and the propensity trimming rule.
//!
//! For a sequence `(d1, d2)` the score of observation `i` is
//!
//! ```text
//! psi_i = I1 I2 (Y2 - mu) / (p1 p2) + I1 (mu - nu) / p1 + nu
//! ```
//!
//! with `I1 = 1{D1 = d1}` and `I2 = 1{D2 = d2}`. The weighted variant for a
//! subgroup `S` multiplies the two correction terms by `g = Pr(S = 1 | X0)`
//! and the last term by `S`; it is normalized by `sum(S)` in the effects
//! module.

use serde::Serialize;

use crate::data::{PanelDataset, TreatmentSequence};
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceFits, StaticFits};

/// Scores of one sequence together with the trimming mask.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreVector {
    /// `None` for the static placebo score, which is already a difference.
    pub seq: Option<TreatmentSequence>,
    pub psi: Vec<f64>,
    pub kept: Vec<bool>,
    pub threshold: f64,
    pub n_kept: usize,
    pub n_trimmed: usize,
    /// Subgroup indicator (0/1) for weighted scores.
    pub s: Option<Vec<f64>>,
}

impl ScoreVector {
    pub fn n(&self) -> usize {
        self.psi.len()
    }

    /// Mean of the kept scores (the unweighted potential-outcome estimate).
    pub fn kept_mean(&self) -> f64 {
        let sum: f64 = self
            .psi
            .iter()
            .zip(&self.kept)
            .filter(|(_, &k)| k)
            .map(|(v, _)| v)
            .sum();
        sum / self.n_kept as f64
    }
}

/// Trimming mask plus its accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrimMask {
    pub kept: Vec<bool>,
    pub n_kept: usize,
    pub n_trimmed: usize,
}

impl TrimMask {
    fn from_kept(kept: Vec<bool>) -> Self {
        let n_kept = kept.iter().filter(|&&k| k).count();
        let n_trimmed = kept.len() - n_kept;
        Self {
            kept,
            n_kept,
            n_trimmed,
        }
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "trimming threshold must lie in [0, 1), got {threshold}"
        )));
    }
    Ok(())
}

/// Keeps observation `i` iff `p1_i * p2_i >= threshold`.
pub fn trim_mask(fits: &NuisanceFits, threshold: f64) -> Result<TrimMask> {
    check_threshold(threshold)?;
    Ok(TrimMask::from_kept(
        fits.p1
            .iter()
            .zip(&fits.p2)
            .map(|(a, b)| a * b >= threshold)
            .collect(),
    ))
}

/// Keeps observation `i` iff both `p_i` and `1 - p_i` reach `threshold`.
pub fn trim_mask_static(fits: &StaticFits, threshold: f64) -> Result<TrimMask> {
    check_threshold(threshold)?;
    Ok(TrimMask::from_kept(
        fits.p
            .iter()
            .map(|&p| p.min(1.0 - p) >= threshold)
            .collect(),
    ))
}

/// The three additive pieces of the unweighted score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTerms {
    /// `I1 I2 (Y2 - mu) / (p1 p2)`.
    pub term1: Vec<f64>,
    /// `I1 (mu - nu) / p1`.
    pub term2: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Evaluates the score pieces for every observation (no trimming).
pub fn score_terms(data: &PanelDataset, fits: &NuisanceFits) -> Result<ScoreTerms> {
    fits.validate(data.n())?;
    let seq = fits.seq;
    let n = data.n();
    let mut term1 = vec![0.0; n];
    let mut term2 = vec![0.0; n];
    for i in 0..n {
        if data.d1()[i] != seq.d1 {
            continue;
        }
        term2[i] = (fits.mu[i] - fits.nu[i]) / fits.p1[i];
        if data.d2()[i] == seq.d2 {
            term1[i] = (data.y2()[i] - fits.mu[i]) / (fits.p1[i] * fits.p2[i]);
        }
    }
    Ok(ScoreTerms {
        term1,
        term2,
        nu: fits.nu.clone(),
    })
}

fn check_finite_kept(psi: &[f64], kept: &[bool], seq: String) -> Result<()> {
    if let Some(row) = psi.iter().zip(kept).position(|(v, &k)| k && !v.is_finite()) {
        return Err(Error::NonFiniteScore { row, seq });
    }
    Ok(())
}

/// Unweighted score for `fits.seq`, trimmed at `threshold`.
pub fn score_psi(data: &PanelDataset, fits: &NuisanceFits, threshold: f64) -> Result<ScoreVector> {
    let mask = trim_mask(fits, threshold)?;
    let t = score_terms(data, fits)?;
    let psi: Vec<f64> = (0..data.n())
        .map(|i| t.term1[i] + t.term2[i] + t.nu[i])
        .collect();
    check_finite_kept(&psi, &mask.kept, fits.seq.to_string())?;
    Ok(ScoreVector {
        seq: Some(fits.seq),
        psi,
        kept: mask.kept,
        threshold,
        n_kept: mask.n_kept,
        n_trimmed: mask.n_trimmed,
        s: None,
    })
}

/// Weighted (un-normalized) score `g (term1 + term2) + S nu` for the
/// subgroup `s`; requires `fits.g`.
pub fn score_psi_weighted(
    data: &PanelDataset,
    fits: &NuisanceFits,
    s: &[bool],
    threshold: f64,
) -> Result<ScoreVector> {
    let g = fits
        .g
        .as_ref()
        .ok_or_else(|| Error::Config("weighted score needs subgroup probabilities g".into()))?;
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
    let mask = trim_mask(fits, threshold)?;
    let t = score_terms(data, fits)?;
    let s: Vec<f64> = s.iter().map(|&v| f64::from(u8::from(v))).collect();
    let psi: Vec<f64> = (0..data.n())
        .map(|i| g[i] * (t.term1[i] + t.term2[i]) + s[i] * t.nu[i])
        .collect();
    check_finite_kept(&psi, &mask.kept, fits.seq.to_string())?;
    Ok(ScoreVector {
        seq: Some(fits.seq),
        psi,
        kept: mask.kept,
        threshold,
        n_kept: mask.n_kept,
        n_trimmed: mask.n_trimmed,
        s: Some(s),
    })
}

/// Static AIPW effect score for a binary treatment `t`:
/// `[t (y - m1) / p + m1] - [(1 - t) (y - m0) / (1 - p) + m0]`.
pub fn score_static_aipw(
    y: &[f64],
    t: &[bool],
    fits: &StaticFits,
    threshold: f64,
) -> Result<ScoreVector> {
    let n = y.len();
    for (name, len) in [
        ("pseudo-treatment", t.len()),
        ("p", fits.p.len()),
        ("m1", fits.m1.len()),
        ("m0", fits.m0.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                column: name.into(),
                expected: n,
                found: len,
            });
        }
    }
    let mask = trim_mask_static(fits, threshold)?;
    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let (p, m1, m0) = (fits.p[i], fits.m1[i], fits.m0[i]);
            let a1 = if t[i] { (y[i] - m1) / p } else { 0.0 } + m1;
            let a0 = if t[i] { 0.0 } else { (y[i] - m0) / (1.0 - p) } + m0;
            a1 - a0
        })
        .collect();
    check_finite_kept(&psi, &mask.kept, "static".into())?;
    Ok(ScoreVector {
        seq: None,
        psi,
        kept: mask.kept,
        threshold,
        n_kept: mask.n_kept,
        n_trimmed: mask.n_trimmed,
        s: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate_dataset, RawColumns};
    use proptest::prelude::*;

    fn toy() -> PanelDataset {
        validate_dataset(
            RawColumns {
                y2: vec![3.0, 1.0, 2.0, 5.0],
                d1: vec![1, 0, 1, 1],
                d2: vec![1, 1, 0, 1],
                x0: vec![vec![0.0]; 4],
                x1: vec![vec![0.0]; 4],
                ..RawColumns::default()
            },
            2,
        )
        .unwrap()
    }

    fn fits(seq: TreatmentSequence) -> NuisanceFits {
        NuisanceFits {
            seq,
            p1: vec![0.5, 0.4, 0.25, 0.8],
            p2: vec![0.5, 0.5, 0.2, 0.1],
            mu: vec![2.0, 7.0, 1.0, 5.0],
            nu: vec![1.5, -3.0, 0.5, 5.0],
            g: None,
            fold: vec![0, 0, 1, 1],
        }
    }

    #[test]
    fn hand_computed_scores() {
        let data = toy();
        let f = fits(TreatmentSequence::new(1, 1));
        let sv = score_psi(&data, &f, 0.0).unwrap();
        // row 0: (3-2)/(0.25) + (2-1.5)/0.5 + 1.5 = 4 + 1 + 1.5
        assert_eq!(sv.psi[0], 6.5);
        // row 1: D1 != d1, only nu survives
        assert_eq!(sv.psi[1], -3.0);
        // row 2: D2 != d2: (1-0.5)/0.25 + 0.5
        assert_eq!(sv.psi[2], 2.5);
        // row 3: zero residual and mu = nu
        assert_eq!(sv.psi[3], 5.0);
    }

    #[test]
    fn trimming_rule_examples() {
        let mut f = fits(TreatmentSequence::new(1, 1));
        f.p1 = vec![0.1, 0.2, 0.5, 0.5];
        f.p2 = vec![0.05, 0.1, 0.5, 0.5];
        let m = trim_mask(&f, 0.01).unwrap();
        assert_eq!(m.kept, vec![false, true, true, true]);
        assert_eq!((m.n_kept, m.n_trimmed), (3, 1));
        assert_eq!(trim_mask(&f, 0.0).unwrap().n_trimmed, 0);
        assert!(trim_mask(&f, 1.0).is_err());
    }

    #[test]
    fn nonfinite_kept_score_is_error() {
        let data = toy();
        let mut f = fits(TreatmentSequence::new(1, 1));
        f.p1[0] = 0.0;
        assert!(matches!(
            score_psi(&data, &f, 0.0),
            Err(Error::NonFiniteScore { row: 0, .. })
        ));
        // The same row is fine once trimmed away.
        assert!(score_psi(&data, &f, 0.01).is_ok());
    }

    #[test]
    fn weighted_with_unit_subgroup_equals_unweighted() {
        let data = toy();
        let mut f = fits(TreatmentSequence::new(1, 1));
        f.g = Some(vec![1.0; 4]);
        let w = score_psi_weighted(&data, &f, &[true; 4], 0.0).unwrap();
        let u = score_psi(&data, &f, 0.0).unwrap();
        assert_eq!(w.psi, u.psi);
    }

    #[test]
    fn weighted_row_outside_first_treatment_and_subgroup_is_zero() {
        let data = toy();
        let mut f = fits(TreatmentSequence::new(1, 1));
        f.g = Some(vec![0.3; 4]);
        let w = score_psi_weighted(&data, &f, &[true, false, true, true], 0.0).unwrap();
        assert_eq!(w.psi[1], 0.0);
        assert!(matches!(
            score_psi_weighted(&data, &f, &[false; 4], 0.0),
            Err(Error::EmptySubgroup(_))
        ));
    }

    #[test]
    fn static_score_with_perfect_outcome_model_is_zero() {
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let fits = StaticFits {
            p: vec![0.3, 0.5, 0.7, 0.2],
            m1: y.clone(),
            m0: y.clone(),
            fold: vec![0, 1, 0, 1],
        };
        let sv = score_static_aipw(&y, &[true, false, true, false], &fits, 0.01).unwrap();
        assert!(sv.psi.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn raising_threshold_never_keeps_more(
            p in prop::collection::vec((0.0001f64..1.0, 0.0001f64..1.0), 1..50),
            a in 0.0f64..0.99, b in 0.0f64..0.99,
        ) {
            let n = p.len();
            let f = NuisanceFits {
                seq: TreatmentSequence::new(1, 1),
                p1: p.iter().map(|v| v.0).collect(),
                p2: p.iter().map(|v| v.1).collect(),
                mu: vec![0.0; n], nu: vec![0.0; n], g: None, fold: vec![0; n],
            };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let m_lo = trim_mask(&f, lo).unwrap();
            let m_hi = trim_mask(&f, hi).unwrap();
            prop_assert!(m_hi.n_kept <= m_lo.n_kept);
            prop_assert_eq!(m_lo.n_kept + m_lo.n_trimmed, n);
        }

        #[test]
        fn rows_outside_first_treatment_depend_only_on_nu(
            mu_shift in -5.0f64..5.0, p2 in 0.01f64..1.0,
        ) {
            let data = toy();
            let f = fits(TreatmentSequence::new(1, 1));
            let mut g = f.clone();
            g.mu[1] += mu_shift;
            g.p2[1] = p2;
            g.p1[1] = 0.9;
            let a = score_psi(&data, &f, 0.0).unwrap();
            let b = score_psi(&data, &g, 0.0).unwrap();
            prop_assert_eq!(a.psi[1], b.psi[1]);
        }
    }
}
