//! Overlap and trimming diagnostics for fitted propensities.

use serde::Serialize;

use crate::data::{PanelDataset, TreatmentSequence};
use crate::error::{Error, Result};
use crate::fmt::{ser_f64, ser_vec_f64};
use crate::nuisance::NuisanceFits;
use crate::scores::trim_mask;

pub const QUANTILE_LEVELS: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

/// Summary statistics of one group's propensities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub count: usize,
    #[serde(serialize_with = "ser_f64")]
    pub min: f64,
    #[serde(serialize_with = "ser_f64")]
    pub max: f64,
    /// At [`QUANTILE_LEVELS`].
    #[serde(serialize_with = "ser_vec_f64")]
    pub quantiles: Vec<f64>,
}

/// Histogram of one propensity (`p1` or `p2`) split into the group that
/// follows the sequence and the rest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapPanel {
    pub name: String,
    /// `bins + 1` strictly increasing edges from 0 to 1.
    #[serde(serialize_with = "ser_vec_f64")]
    pub edges: Vec<f64>,
    pub count_group: Vec<usize>,
    pub count_rest: Vec<usize>,
    pub group: GroupSummary,
    pub rest: GroupSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub seq: TreatmentSequence,
    pub p1: OverlapPanel,
    pub p2: OverlapPanel,
}

/// Linear-interpolation quantile (type 7) of sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(values: &[f64]) -> GroupSummary {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    GroupSummary {
        count: v.len(),
        min: v.first().copied().unwrap_or(f64::NAN),
        max: v.last().copied().unwrap_or(f64::NAN),
        quantiles: QUANTILE_LEVELS
            .iter()
            .map(|&q| quantile_sorted(&v, q))
            .collect(),
    }
}

fn bin_of(p: f64, bins: usize) -> usize {
    ((p * bins as f64).floor() as usize).min(bins - 1)
}

fn panel(name: &str, values: &[f64], in_group: &[bool], bins: usize) -> OverlapPanel {
    let mut count_group = vec![0; bins];
    let mut count_rest = vec![0; bins];
    let mut group = Vec::new();
    let mut rest = Vec::new();
    for (&p, &g) in values.iter().zip(in_group) {
        let b = bin_of(p.clamp(0.0, 1.0), bins);
        if g {
            count_group[b] += 1;
            group.push(p);
        } else {
            count_rest[b] += 1;
            rest.push(p);
        }
    }
    OverlapPanel {
        name: name.to_string(),
        edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
        count_group,
        count_rest,
        group: summarize(&group),
        rest: summarize(&rest),
    }
}

/// Binned distributions of `p1` (group: `D1 = d1`) and `p2` (group:
/// `D2 = d2` among all rows) on `bins` equal-width bins over [0, 1].
pub fn overlap_report(
    fits: &NuisanceFits,
    data: &PanelDataset,
    bins: usize,
) -> Result<OverlapReport> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
    }
    fits.validate(data.n())?;
    let seq = fits.seq;
    let g1: Vec<bool> = data.d1().iter().map(|&d| d == seq.d1).collect();
    let g2: Vec<bool> = data.d2().iter().map(|&d| d == seq.d2).collect();
    Ok(OverlapReport {
        seq,
        p1: panel("p1", &fits.p1, &g1, bins),
        p2: panel("p2", &fits.p2, &g2, bins),
    })
}

impl OverlapPanel {
    /// CSV with columns `bin_low,bin_high,count_group,count_rest`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count_group,count_rest\n");
        for b in 0..self.count_group.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                crate::fmt_f64(self.edges[b]),
                crate::fmt_f64(self.edges[b + 1]),
                self.count_group[b],
                self.count_rest[b]
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrimmingRow {
    #[serde(serialize_with = "ser_f64")]
    pub threshold: f64,
    pub n_kept: usize,
    pub n_trimmed: usize,
}

/// Kept/trimmed counts of the product rule at each threshold.
pub fn trimming_table(fits: &NuisanceFits, thresholds: &[f64]) -> Result<Vec<TrimmingRow>> {
    thresholds
        .iter()
        .map(|&threshold| {
            let m = trim_mask(fits, threshold)?;
            Ok(TrimmingRow {
                threshold,
                n_kept: m.n_kept,
                n_trimmed: m.n_trimmed,
            })
        })
        .collect()
}
