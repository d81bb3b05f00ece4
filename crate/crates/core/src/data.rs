//! Observed two-period panel data and treatment-sequence indexing.
//!
//! Each observation carries the period-2 outcome `y2`, the treatments `d1`
//! and `d2` coded in `{0, ..., Q}`, baseline covariates `x0` (measured before
//! the first treatment) and intermediate covariates `x1` (measured after the
//! first treatment and before the second). An optional binary column `s`
//! marks a subgroup of interest.

use std::fmt;
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A treatment sequence `(d1, d2)` indexing a counterfactual regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreatmentSequence {
    pub d1: u32,
    pub d2: u32,
}

impl TreatmentSequence {
    pub const fn new(d1: u32, d2: u32) -> Self {
        Self { d1, d2 }
    }

    pub fn matches(&self, d1: u32, d2: u32) -> bool {
        self.d1 == d1 && self.d2 == d2
    }
}

impl fmt::Display for TreatmentSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.d1, self.d2)
    }
}

impl std::str::FromStr for TreatmentSequence {
    type Err = Error;

    /// Parses `"d1,d2"` (parentheses optional).
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(Error::Config(format!(
                "treatment sequence must be `d1,d2`, got `{s}`"
            )));
        }
        let parse = |p: &str| {
            p.parse::<u32>()
                .map_err(|_| Error::Config(format!("invalid treatment value `{p}` in `{s}`")))
        };
        Ok(Self::new(parse(parts[0])?, parse(parts[1])?))
    }
}

/// Unvalidated input columns, e.g. straight from a CSV file.
#[derive(Debug, Clone, Default)]
pub struct RawColumns {
    pub y2: Vec<f64>,
    pub d1: Vec<i64>,
    pub d2: Vec<i64>,
    /// Row-major baseline covariates, one inner vector per observation.
    pub x0: Vec<Vec<f64>>,
    pub x1: Vec<Vec<f64>>,
    pub s: Option<Vec<i64>>,
    pub x0_names: Vec<String>,
    pub x1_names: Vec<String>,
}

/// Validated panel dataset. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    y2: Vec<f64>,
    d1: Vec<u32>,
    d2: Vec<u32>,
    x0: Array2<f64>,
    x1: Array2<f64>,
    s: Option<Vec<bool>>,
    x0_names: Vec<String>,
    x1_names: Vec<String>,
    q: u32,
}

/// How [`subset_by_sequence`] matches rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceMatch {
    /// `d1 == seq.d1 && d2 == seq.d2`.
    Both,
    /// `d1 == seq.d1` only.
    FirstOnly,
}

fn check_finite(values: impl IntoIterator<Item = f64>, column: &str) -> Result<()> {
    for (row, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                column: column.to_string(),
                row,
            });
        }
    }
    Ok(())
}

fn check_len(column: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::LengthMismatch {
            column: column.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn to_matrix(rows: &[Vec<f64>], n: usize, names: &[String], prefix: &str) -> Result<Array2<f64>> {
    check_len(prefix, n, rows.len())?;
    let p = rows.first().map_or(names.len(), Vec::len);
    let mut out = Array2::zeros((n, p));
    for (i, row) in rows.iter().enumerate() {
        check_len(&format!("{prefix} row {i}"), p, row.len())?;
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                let column = names
                    .get(j)
                    .cloned()
                    .unwrap_or_else(|| format!("{prefix}_{}", j + 1));
                return Err(Error::NonFinite { column, row: i });
            }
            out[[i, j]] = v;
        }
    }
    Ok(out)
}

fn to_treatment(values: &[i64], column: &str) -> Result<Vec<u32>> {
    values
        .iter()
        .enumerate()
        .map(|(row, &v)| {
            u32::try_from(v).map_err(|_| Error::InvalidTreatment {
                column: column.to_string(),
                row,
                value: v,
            })
        })
        .collect()
}

fn default_names(prefix: &str, p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("{prefix}_{j}")).collect()
}

/// Validates raw columns for use with `folds`-fold cross-fitting.
///
/// `Q` is inferred as the maximum treatment value over both periods.
pub fn validate_dataset(raw: RawColumns, folds: usize) -> Result<PanelDataset> {
    let n = raw.y2.len();
    if n == 0 {
        return Err(Error::EmptyInput("dataset has no rows".into()));
    }
    check_len("d1", n, raw.d1.len())?;
    check_len("d2", n, raw.d2.len())?;
    if let Some(s) = &raw.s {
        check_len("s", n, s.len())?;
    }
    check_finite(raw.y2.iter().copied(), "y2")?;
    let d1 = to_treatment(&raw.d1, "d1")?;
    let d2 = to_treatment(&raw.d2, "d2")?;

    let x0_names = if raw.x0_names.is_empty() {
        default_names("x0", raw.x0.first().map_or(0, Vec::len))
    } else {
        raw.x0_names
    };
    let x1_names = if raw.x1_names.is_empty() {
        default_names("x1", raw.x1.first().map_or(0, Vec::len))
    } else {
        raw.x1_names
    };
    let x0 = if raw.x0.is_empty() {
        Array2::zeros((n, 0))
    } else {
        to_matrix(&raw.x0, n, &x0_names, "x0")?
    };
    let x1 = if raw.x1.is_empty() {
        Array2::zeros((n, 0))
    } else {
        to_matrix(&raw.x1, n, &x1_names, "x1")?
    };
    check_len("x0 names", x0.ncols(), x0_names.len())?;
    check_len("x1 names", x1.ncols(), x1_names.len())?;

    let s = match raw.s {
        None => None,
        Some(values) => Some(
            values
                .iter()
                .enumerate()
                .map(|(row, &v)| match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::InvalidTreatment {
                        column: "s".into(),
                        row,
                        value: other,
                    }),
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };

    let q = d1.iter().chain(&d2).copied().max().unwrap_or(0);
    if q == 0 {
        return Err(Error::NoVariation {
            what: "treatments (all values are 0)".into(),
        });
    }
    let required = 2 * folds;
    if n < required {
        return Err(Error::TooFewRows { n, folds, required });
    }

    Ok(PanelDataset {
        y2: raw.y2,
        d1,
        d2,
        x0,
        x1,
        s,
        x0_names,
        x1_names,
        q,
    })
}

impl PanelDataset {
    /// Assembles a dataset from already-checked parts (used by the simulator).
    pub(crate) fn from_parts(
        y2: Vec<f64>,
        d1: Vec<u32>,
        d2: Vec<u32>,
        x0: Array2<f64>,
        x1: Array2<f64>,
    ) -> Self {
        let q = d1.iter().chain(&d2).copied().max().unwrap_or(0).max(1);
        Self {
            x0_names: default_names("x0", x0.ncols()),
            x1_names: default_names("x1", x1.ncols()),
            y2,
            d1,
            d2,
            x0,
            x1,
            s: None,
            q,
        }
    }

    pub fn n(&self) -> usize {
        self.y2.len()
    }

    pub fn p0(&self) -> usize {
        self.x0.ncols()
    }

    pub fn p1(&self) -> usize {
        self.x1.ncols()
    }

    /// Largest treatment value over both periods.
    pub fn q(&self) -> u32 {
        self.q
    }

    pub fn y2(&self) -> &[f64] {
        &self.y2
    }

    pub fn d1(&self) -> &[u32] {
        &self.d1
    }

    pub fn d2(&self) -> &[u32] {
        &self.d2
    }

    pub fn x0(&self) -> ArrayView2<'_, f64> {
        self.x0.view()
    }

    pub fn x1(&self) -> ArrayView2<'_, f64> {
        self.x1.view()
    }

    /// Covariate history `(X0, X1)`.
    pub fn x_bar1(&self) -> Array2<f64> {
        concatenate(Axis(1), &[self.x0.view(), self.x1.view()]).expect("x0 and x1 share row count")
    }

    pub fn s(&self) -> Option<&[bool]> {
        self.s.as_deref()
    }

    pub fn x0_names(&self) -> &[String] {
        &self.x0_names
    }

    pub fn x1_names(&self) -> &[String] {
        &self.x1_names
    }

    /// Returns a copy with the subgroup column replaced.
    pub fn with_subgroup(mut self, s: Vec<bool>) -> Result<Self> {
        check_len("s", self.n(), s.len())?;
        self.s = Some(s);
        Ok(self)
    }

    /// Returns a copy with `y2` replaced (same row count, finite values).
    pub fn with_outcome(mut self, y2: Vec<f64>) -> Result<Self> {
        check_len("y2", self.n(), y2.len())?;
        check_finite(y2.iter().copied(), "y2")?;
        self.y2 = y2;
        Ok(self)
    }

    /// Rows reordered so that new row `i` is old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.n());
        self.select_rows(order)
    }

    /// The given rows, in the given order. `q` is kept from the parent.
    pub fn select_rows(&self, order: &[usize]) -> Self {
        Self {
            y2: order.iter().map(|&i| self.y2[i]).collect(),
            d1: order.iter().map(|&i| self.d1[i]).collect(),
            d2: order.iter().map(|&i| self.d2[i]).collect(),
            x0: self.x0.select(Axis(0), order),
            x1: self.x1.select(Axis(0), order),
            s: self
                .s
                .as_ref()
                .map(|s| order.iter().map(|&i| s[i]).collect()),
            x0_names: self.x0_names.clone(),
            x1_names: self.x1_names.clone(),
            q: self.q,
        }
    }

    /// Converts back to raw columns (used for CSV export).
    pub fn to_raw(&self) -> RawColumns {
        RawColumns {
            y2: self.y2.clone(),
            d1: self.d1.iter().map(|&v| i64::from(v)).collect(),
            d2: self.d2.iter().map(|&v| i64::from(v)).collect(),
            x0: self.x0.outer_iter().map(|r| r.to_vec()).collect(),
            x1: self.x1.outer_iter().map(|r| r.to_vec()).collect(),
            s: self
                .s
                .as_ref()
                .map(|s| s.iter().map(|&b| i64::from(b)).collect()),
            x0_names: self.x0_names.clone(),
            x1_names: self.x1_names.clone(),
        }
    }
}

/// Indices in `rows` whose treatments match `seq` under `mode`.
pub fn subset_by_sequence(
    data: &PanelDataset,
    seq: TreatmentSequence,
    rows: &[usize],
    mode: SequenceMatch,
) -> Vec<usize> {
    rows.iter()
        .copied()
        .filter(|&i| match mode {
            SequenceMatch::Both => seq.matches(data.d1[i], data.d2[i]),
            SequenceMatch::FirstOnly => data.d1[i] == seq.d1,
        })
        .collect()
}

/// Reads a CSV file with columns `y2`, `d1`, `d2`, `x0_*`, `x1_*` and an
/// optional subgroup column (named by `s_col`, default `s`).
pub fn read_csv(path: &Path, s_col: Option<&str>) -> Result<RawColumns> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv_from(file, s_col)
}

pub fn read_csv_from<R: std::io::Read>(reader: R, s_col: Option<&str>) -> Result<RawColumns> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::Schema {
        file: "input csv".into(),
        reason: format!("missing required column `{name}`"),
    };
    let iy = find("y2").ok_or_else(|| missing("y2"))?;
    let id1 = find("d1").ok_or_else(|| missing("d1"))?;
    let id2 = find("d2").ok_or_else(|| missing("d2"))?;
    let s_name = s_col.unwrap_or("s");
    let is = find(s_name);
    if s_col.is_some() && is.is_none() {
        return Err(missing(s_name));
    }
    let x0_idx: Vec<usize> = (0..headers.len())
        .filter(|&j| headers[j].starts_with("x0_"))
        .collect();
    let x1_idx: Vec<usize> = (0..headers.len())
        .filter(|&j| headers[j].starts_with("x1_"))
        .collect();

    let mut raw = RawColumns {
        x0_names: x0_idx.iter().map(|&j| headers[j].clone()).collect(),
        x1_names: x1_idx.iter().map(|&j| headers[j].clone()).collect(),
        s: is.map(|_| Vec::new()),
        ..Default::default()
    };

    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |j: usize| record.get(j).unwrap_or("").trim();
        let real = |j: usize| -> Result<f64> {
            field(j).parse::<f64>().map_err(|_| Error::NonFinite {
                column: headers[j].clone(),
                row,
            })
        };
        let int = |j: usize| -> Result<i64> {
            let text = field(j);
            text.parse::<i64>()
                .or_else(|_| match text.parse::<f64>() {
                    Ok(v) if v.fract() == 0.0 && v.abs() < 1e15 => Ok(v as i64),
                    _ => Err(()),
                })
                .map_err(|_| Error::Schema {
                    file: "input csv".into(),
                    reason: format!(
                        "column `{}` row {row}: treatment `{text}` is not integer-coded",
                        headers[j]
                    ),
                })
        };
        raw.y2.push(real(iy)?);
        raw.d1.push(int(id1)?);
        raw.d2.push(int(id2)?);
        raw.x0
            .push(x0_idx.iter().map(|&j| real(j)).collect::<Result<_>>()?);
        raw.x1
            .push(x1_idx.iter().map(|&j| real(j)).collect::<Result<_>>()?);
        if let (Some(j), Some(s)) = (is, raw.s.as_mut()) {
            s.push(int(j)?);
        }
    }
    Ok(raw)
}

/// Writes a dataset using the same column contract [`read_csv`] accepts.
pub fn write_csv(data: &PanelDataset, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["y2".to_string(), "d1".into(), "d2".into()];
    header.extend(data.x0_names.iter().cloned());
    header.extend(data.x1_names.iter().cloned());
    if data.s.is_some() {
        header.push("s".into());
    }
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![
            crate::fmt_f64(data.y2[i]),
            data.d1[i].to_string(),
            data.d2[i].to_string(),
        ];
        rec.extend(data.x0.row(i).iter().map(|&v| crate::fmt_f64(v)));
        rec.extend(data.x1.row(i).iter().map(|&v| crate::fmt_f64(v)));
        if let Some(s) = &data.s {
            rec.push(u8::from(s[i]).to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}
