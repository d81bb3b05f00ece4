//! Validators for every file the CLI writes. Each checks structure, field
//! types and the basic numeric contracts (probabilities in [0, 1], counts
//! non-negative, edges increasing).

use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::simulation::montecarlo::CSV_HEADER;

fn fail(file: &str, reason: impl Into<String>) -> Error {
    Error::Schema {
        file: file.to_string(),
        reason: reason.into(),
    }
}

/// A number, or `null` standing in for a non-finite value.
fn num_or_null(v: &Value) -> bool {
    v.is_number() || v.is_null()
}

fn field<'a>(file: &str, obj: &'a Value, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| fail(file, format!("missing field `{key}`")))
}

fn number(file: &str, obj: &Value, key: &str) -> Result<f64> {
    field(file, obj, key)?
        .as_f64()
        .ok_or_else(|| fail(file, format!("field `{key}` is not a number")))
}

fn count(file: &str, obj: &Value, key: &str) -> Result<u64> {
    field(file, obj, key)?
        .as_u64()
        .ok_or_else(|| fail(file, format!("field `{key}` is not a count")))
}

fn array<'a>(file: &str, v: &'a Value) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| fail(file, "top level is not an array"))
}

fn parse_json(file: &str, text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| fail(file, format!("invalid JSON: {e}")))
}

fn effect_record(file: &str, e: &Value) -> Result<()> {
    let kind = field(file, e, "kind")?
        .as_str()
        .ok_or_else(|| fail(file, "`kind` is not a string"))?;
    if !["potential_outcome", "ate", "weighted_ate", "placebo"].contains(&kind) {
        return Err(fail(file, format!("unknown effect kind `{kind}`")));
    }
    for key in ["estimate", "se", "ci_low", "ci_high", "p_value", "level"] {
        if !num_or_null(field(file, e, key)?) {
            return Err(fail(file, format!("`{key}` is neither number nor null")));
        }
    }
    let se = number(file, e, "se")?;
    if se < 0.0 {
        return Err(fail(file, "negative standard error"));
    }
    let p = number(file, e, "p_value")?;
    if !(0.0..=1.0).contains(&p) {
        return Err(fail(file, "p-value outside [0, 1]"));
    }
    if number(file, e, "ci_low")? > number(file, e, "ci_high")? {
        return Err(fail(file, "interval bounds out of order"));
    }
    count(file, e, "n_used")?;
    count(file, e, "n_trimmed")?;
    for key in ["contrast", "subgroup", "level_a", "level_b"] {
        field(file, e, key)?;
    }
    Ok(())
}

/// `effects.json` / `potential_outcomes.json`: non-empty array of effect
/// records.
pub fn validate_effects_json(text: &str) -> Result<()> {
    let file = "effects.json";
    let v = parse_json(file, text)?;
    let items = array(file, &v)?;
    if items.is_empty() {
        return Err(fail(file, "no records"));
    }
    items.iter().try_for_each(|e| effect_record(file, e))
}

fn csv_rows(file: &str, text: &str, header: &str) -> Result<Vec<Vec<String>>> {
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(fail(file, format!("header must be `{header}`")));
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<String> = line.split(',').map(str::to_string).collect();
        if cells.len() != width {
            return Err(fail(
                file,
                format!("row {} has {} fields", i + 1, cells.len()),
            ));
        }
        rows.push(cells);
    }
    Ok(rows)
}

fn parse_f64(file: &str, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| fail(file, format!("`{s}` is not a number")))
}

fn parse_u64(file: &str, s: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| fail(file, format!("`{s}` is not a count")))
}

/// `montecarlo.csv`: one row per (cell, estimator).
pub fn validate_montecarlo_csv(text: &str) -> Result<()> {
    let file = "montecarlo.csv";
    let rows = csv_rows(file, text, CSV_HEADER)?;
    if rows.is_empty() {
        return Err(fail(file, "no rows"));
    }
    for r in rows {
        parse_u64(file, &r[0])?;
        parse_u64(file, &r[1])?;
        if r[2] != "ate" && r[2] != "weighted_ate" {
            return Err(fail(file, format!("unknown estimator `{}`", r[2])));
        }
        let vals: Vec<f64> = r[3..10]
            .iter()
            .map(|s| parse_f64(file, s))
            .collect::<Result<_>>()?;
        let (bias, sd, rmse, coverage) = (vals[1], vals[2], vals[4], vals[5]);
        if bias < 0.0 || sd < 0.0 || rmse < 0.0 {
            return Err(fail(file, "negative bias, SD or RMSE"));
        }
        if !(0.0..=100.0).contains(&coverage) {
            return Err(fail(file, "coverage outside [0, 100]"));
        }
        if (rmse * rmse - (bias * bias + sd * sd)).abs() > 1e-9 * (1.0 + rmse * rmse) {
            return Err(fail(file, "RMSE^2 != bias^2 + SD^2"));
        }
        if parse_u64(file, &r[10])? < 2 {
            return Err(fail(file, "fewer than 2 replications"));
        }
    }
    Ok(())
}

/// `montecarlo.json`: array of report objects.
pub fn validate_montecarlo_json(text: &str) -> Result<()> {
    let file = "montecarlo.json";
    let v = parse_json(file, text)?;
    for r in array(file, &v)? {
        count(file, r, "p")?;
        count(file, r, "n")?;
        count(file, r, "reps")?;
        field(file, r, "estimator")?
            .as_str()
            .ok_or_else(|| fail(file, "`estimator` is not a string"))?;
        for key in [
            "truth",
            "bias",
            "sd",
            "avg_se",
            "rmse",
            "coverage",
            "mean_trimmed",
        ] {
            number(file, r, key)?;
        }
    }
    Ok(())
}

pub const REPLICATIONS_HEADER: &str =
    "p,n,rep,seed,estimator,estimate,se,ci_low,ci_high,n_used,n_trimmed";

pub fn validate_replications_csv(text: &str) -> Result<()> {
    let file = "replications.csv";
    for r in csv_rows(file, text, REPLICATIONS_HEADER)? {
        for k in [0, 1, 2, 3, 9, 10] {
            parse_u64(file, &r[k])?;
        }
        for v in &r[5..9] {
            parse_f64(file, v)?;
        }
    }
    Ok(())
}

/// `overlap_*.csv`: contiguous increasing bins covering [0, 1].
pub fn validate_overlap_csv(text: &str) -> Result<()> {
    let file = "overlap_*.csv";
    let rows = csv_rows(file, text, "bin_low,bin_high,count_group,count_rest")?;
    if rows.len() < 2 {
        return Err(fail(file, "fewer than 2 bins"));
    }
    let mut prev_high = 0.0;
    for (i, r) in rows.iter().enumerate() {
        let (lo, hi) = (parse_f64(file, &r[0])?, parse_f64(file, &r[1])?);
        if !(hi > lo) || (i > 0 && lo != prev_high) || (i == 0 && lo != 0.0) {
            return Err(fail(file, format!("bad edges in row {}", i + 1)));
        }
        prev_high = hi;
        parse_u64(file, &r[2])?;
        parse_u64(file, &r[3])?;
    }
    if prev_high != 1.0 {
        return Err(fail(file, "bins do not end at 1"));
    }
    Ok(())
}

/// `trimming.csv`: counts conserve the sample size and trimming grows with
/// the threshold, per arm.
pub fn validate_trimming_csv(text: &str) -> Result<()> {
    let file = "trimming.csv";
    let rows = csv_rows(file, text, "arm,threshold,n_kept,n_trimmed")?;
    let mut last: Option<(String, f64, u64, u64)> = None;
    for r in rows {
        let t = parse_f64(file, &r[1])?;
        let (kept, trimmed) = (parse_u64(file, &r[2])?, parse_u64(file, &r[3])?);
        if let Some((arm, t0, k0, tr0)) = &last {
            if *arm == r[0] {
                if k0 + tr0 != kept + trimmed {
                    return Err(fail(file, "counts do not sum to the same n"));
                }
                if t >= *t0 && trimmed < *tr0 {
                    return Err(fail(file, "trimming not monotone in the threshold"));
                }
            }
        }
        last = Some((r[0].clone(), t, kept, trimmed));
    }
    Ok(())
}

/// `overlap.json`: per-arm panel summaries.
pub fn validate_overlap_json(text: &str) -> Result<()> {
    let file = "overlap.json";
    let v = parse_json(file, text)?;
    for rep in array(file, &v)? {
        field(file, rep, "seq")?;
        for panel in ["p1", "p2"] {
            let p = field(file, rep, panel)?;
            let edges = array(file, field(file, p, "edges")?)?;
            let cg = array(file, field(file, p, "count_group")?)?;
            let cr = array(file, field(file, p, "count_rest")?)?;
            if edges.len() != cg.len() + 1 || cg.len() != cr.len() {
                return Err(fail(file, "edge and count lengths disagree"));
            }
            for g in ["group", "rest"] {
                let s = field(file, p, g)?;
                count(file, s, "count")?;
                array(file, field(file, s, "quantiles")?)?;
            }
        }
    }
    Ok(())
}

/// `audit.json`: fit measures in [0, 1].
pub fn validate_audit_json(text: &str) -> Result<()> {
    let file = "audit.json";
    let v = parse_json(file, text)?;
    count(file, &v, "n")?;
    for key in ["r2_outcome", "pseudo_r2_d1", "pseudo_r2_d2"] {
        let x = number(file, &v, key)?;
        if !(0.0..=1.0).contains(&x) {
            return Err(fail(file, format!("`{key}` outside [0, 1]")));
        }
    }
    Ok(())
}

pub fn validate_error_json(text: &str) -> Result<()> {
    let file = "error.json";
    let v = parse_json(file, text)?;
    for key in ["status", "kind", "message"] {
        field(file, &v, key)?
            .as_str()
            .ok_or_else(|| fail(file, format!("`{key}` is not a string")))?;
    }
    Ok(())
}

/// `manifest.json` in `dir`: required keys, and every listed output's hash
/// matches the file on disk.
pub fn validate_manifest(dir: &Path) -> Result<()> {
    let file = "manifest.json";
    let path = dir.join(file);
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let v = parse_json(file, &text)?;
    for key in ["tool", "version", "mode", "config_sha256"] {
        field(file, &v, key)?
            .as_str()
            .ok_or_else(|| fail(file, format!("`{key}` is not a string")))?;
    }
    count(file, &v, "seed")?;
    field(file, &v, "timing")?;
    for o in array(file, field(file, &v, "outputs")?)? {
        let name = field(file, o, "file")?
            .as_str()
            .ok_or_else(|| fail(file, "output name is not a string"))?;
        let want = field(file, o, "sha256")?
            .as_str()
            .ok_or_else(|| fail(file, "output hash is not a string"))?;
        let p = dir.join(name);
        let bytes = std::fs::read(&p).map_err(|source| Error::Io {
            path: p.display().to_string(),
            source,
        })?;
        if super::sha256_hex(&bytes) != want {
            return Err(fail(file, format!("hash mismatch for `{name}`")));
        }
    }
    Ok(())
}

/// Validates one output file, choosing the schema from its name.
pub fn validate_file(path: &Path) -> Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    if name == "manifest.json" {
        return validate_manifest(path.parent().unwrap_or(Path::new(".")));
    }
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    match name.as_str() {
        "effects.json" | "potential_outcomes.json" => validate_effects_json(&text),
        "montecarlo.csv" => validate_montecarlo_csv(&text),
        "montecarlo.json" => validate_montecarlo_json(&text),
        "replications.csv" => validate_replications_csv(&text),
        "trimming.csv" => validate_trimming_csv(&text),
        "overlap.json" => validate_overlap_json(&text),
        "audit.json" => validate_audit_json(&text),
        "error.json" => validate_error_json(&text),
        n if n.starts_with("overlap_") && n.ends_with(".csv") => validate_overlap_csv(&text),
        other => Err(fail(other, "no schema for this file")),
    }
}

/// Validates every file listed in a run summary.
pub fn validate_run(dir: &Path, files: &[String]) -> Result<()> {
    files.iter().try_for_each(|f| validate_file(&dir.join(f)))
}
