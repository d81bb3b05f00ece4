//! Batch front end: runs one mode from a [`RunConfig`] and writes its
//! artifacts, a manifest, and (on failure) an error record.

pub mod config;
pub mod schema;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

pub use config::{validate_contrast, Mode, RunConfig, SubgroupRule};

use crate::data::{read_csv, validate_dataset, PanelDataset};
use crate::diagnostics::{overlap_report, trimming_table, OverlapReport};
use crate::effects::{
    estimate_ate, estimate_placebo, estimate_potential_outcome, estimate_weighted_ate,
    EffectEstimate, PlaceboOptions, PlaceboSpec,
};
use crate::error::{Error, Result};
use crate::folds::make_folds;
use crate::nuisance::{cross_fit_many, NuisanceFits};
use crate::scores::{score_psi, score_psi_weighted};
use crate::simulation::montecarlo::{self, MonteCarloConfig};
use crate::simulation::{confounding_audit, simulate_dgp, DgpConfig};

/// Names of the files a run wrote, relative to the output directory.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub files: Vec<String>,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Writer<'_> {
    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn load_input(cfg: &RunConfig) -> Result<(PanelDataset, PathBuf)> {
    let path = cfg
        .input
        .clone()
        .ok_or_else(|| Error::Config("no input file given".into()))?;
    let raw = read_csv(&path, cfg.s_col.as_deref())?;
    Ok((validate_dataset(raw, cfg.folds)?, path))
}

fn seq_tag(f: &NuisanceFits) -> String {
    format!("{}{}", f.seq.d1, f.seq.d2)
}

/// Overlap panels, overlap summaries and the trimming table of both arms.
fn write_diagnostics(
    w: &mut Writer<'_>,
    data: &PanelDataset,
    fits: &[NuisanceFits],
    cfg: &RunConfig,
) -> Result<()> {
    let mut reports: Vec<OverlapReport> = Vec::new();
    let mut trimming = String::from("arm,threshold,n_kept,n_trimmed\n");
    for f in fits {
        let rep = overlap_report(f, data, cfg.bins)?;
        let tag = seq_tag(f);
        w.text(&format!("overlap_{tag}_p1.csv"), &rep.p1.to_csv())?;
        w.text(&format!("overlap_{tag}_p2.csv"), &rep.p2.to_csv())?;
        reports.push(rep);
        for row in trimming_table(f, &cfg.trim_grid)? {
            trimming.push_str(&format!(
                "{},{},{},{}\n",
                tag,
                crate::fmt_f64(row.threshold),
                row.n_kept,
                row.n_trimmed
            ));
        }
    }
    w.json("overlap.json", &reports)?;
    w.text("trimming.csv", &trimming)
}

fn run_estimate(cfg: &RunConfig, w: &mut Writer<'_>) -> Result<Option<PathBuf>> {
    let (data, input) = load_input(cfg)?;
    let plan = make_folds(data.n(), cfg.folds, cfg.seed)?;
    let arms = [cfg.arm_a, cfg.arm_b];
    let (effect, levels, fits) = if cfg.mode == Mode::Weighted {
        let (s, label) = match cfg.subgroup {
            SubgroupRule::Column => (
                data.s()
                    .ok_or_else(|| Error::Config("input has no subgroup column".into()))?
                    .to_vec(),
                format!("column {}", cfg.s_col.as_deref().unwrap_or("s")),
            ),
            SubgroupRule::FirstTreatment => (
                data.d1()
                    .iter()
                    .map(|&d| d == cfg.arm_a.d1 || d == cfg.arm_b.d1)
                    .collect(),
                format!("D1 in {{{},{}}}", cfg.arm_a.d1, cfg.arm_b.d1),
            ),
        };
        let fits = cross_fit_many(&data, &arms, &plan, &cfg.learners, Some(&s))?;
        let sa = score_psi_weighted(&data, &fits[0], &s, cfg.trim)?;
        let sb = score_psi_weighted(&data, &fits[1], &s, cfg.trim)?;
        let levels = vec![
            estimate_potential_outcome(&sa)?.with_subgroup(label.clone()),
            estimate_potential_outcome(&sb)?.with_subgroup(label.clone()),
        ];
        let effect = estimate_weighted_ate(&sa, &sb)?.with_subgroup(label);
        (effect, levels, fits)
    } else {
        let fits = cross_fit_many(&data, &arms, &plan, &cfg.learners, None)?;
        let sa = score_psi(&data, &fits[0], cfg.trim)?;
        let sb = score_psi(&data, &fits[1], cfg.trim)?;
        let levels = vec![
            estimate_potential_outcome(&sa)?,
            estimate_potential_outcome(&sb)?,
        ];
        (estimate_ate(&sa, &sb)?, levels, fits)
    };
    w.json("effects.json", &[effect])?;
    w.json("potential_outcomes.json", &levels)?;
    write_diagnostics(w, &data, &fits, cfg)?;
    Ok(Some(input))
}

fn run_placebo(cfg: &RunConfig, w: &mut Writer<'_>) -> Result<Option<PathBuf>> {
    let (data, input) = load_input(cfg)?;
    let spec = match (cfg.s_col.as_deref(), data.s()) {
        (Some(_), Some(t)) => PlaceboSpec::Column(t.to_vec()),
        (Some(col), None) => {
            return Err(Error::Config(format!(
                "pseudo-treatment column `{col}` not found"
            )))
        }
        (None, _) => PlaceboSpec::Sequences(cfg.arm_a, cfg.arm_b),
    };
    let opts = PlaceboOptions {
        folds: cfg.folds,
        seed: cfg.seed,
        threshold: cfg.trim,
    };
    let effect = estimate_placebo(&data, &spec, &cfg.learners, &opts)?;
    w.json("effects.json", &[effect])?;
    Ok(Some(input))
}

fn replications_csv(out: &montecarlo::MonteCarloOutput) -> String {
    let f = crate::fmt_f64;
    let mut s =
        String::from("p,n,rep,seed,estimator,estimate,se,ci_low,ci_high,n_used,n_trimmed\n");
    let mut row = |r: &montecarlo::RepRecord, name: &str, e: &EffectEstimate| {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.p,
            r.n,
            r.rep,
            r.seed,
            name,
            f(e.estimate),
            f(e.se),
            f(e.ci_low),
            f(e.ci_high),
            e.n_used,
            e.n_trimmed
        ));
    };
    for r in &out.records {
        row(r, "ate", &r.ate);
        if let Some(e) = &r.weighted {
            row(r, "weighted_ate", e);
        }
    }
    s
}

fn run_montecarlo(
    cfg: &RunConfig,
    w: &mut Writer<'_>,
    timing: &mut Vec<serde_json::Value>,
) -> Result<Option<PathBuf>> {
    let mc = MonteCarloConfig {
        cells: cfg.montecarlo.cells(),
        folds: cfg.folds,
        threshold: cfg.trim,
        seed: cfg.seed,
        arm_a: cfg.arm_a,
        arm_b: cfg.arm_b,
        subgroup_d1: cfg.montecarlo.subgroup_d1,
        nuisance: cfg.montecarlo.nuisance,
        learners: cfg.learners.clone(),
        dgp: cfg.montecarlo.dgp.clone(),
    };
    let out = montecarlo::run_monte_carlo(&mc)?;
    w.text("montecarlo.csv", &montecarlo::to_csv(&out.reports))?;
    w.json("montecarlo.json", &out.reports)?;
    w.text("replications.csv", &replications_csv(&out))?;
    for r in &out.reports {
        timing.push(json!({
            "p": r.p,
            "n": r.n,
            "estimator": r.estimator,
            "wall_time_secs": r.wall_time_secs,
        }));
    }
    Ok(None)
}

fn run_audit(cfg: &RunConfig, w: &mut Writer<'_>) -> Result<Option<PathBuf>> {
    let (data, input) = match &cfg.input {
        Some(_) => {
            let (d, p) = load_input(cfg)?;
            (d, Some(p))
        }
        None => (
            simulate_dgp(&DgpConfig {
                n: cfg.audit.n,
                p: cfg.audit.p,
                seed: cfg.seed,
                ..cfg.montecarlo.dgp.clone()
            })?,
            None,
        ),
    };
    w.json("audit.json", &confounding_audit(&data)?)?;
    Ok(input)
}

/// Runs the configured mode and writes all artifacts plus `manifest.json`
/// into `cfg.out`. Numerical outputs depend only on the configuration and
/// the input; wall-clock timing appears in the manifest only.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let mut w = Writer {
        dir: &cfg.out,
        files: Vec::new(),
    };
    let mut timing = Vec::new();
    let input = match cfg.mode {
        Mode::Estimate | Mode::Weighted => run_estimate(cfg, &mut w)?,
        Mode::Placebo => run_placebo(cfg, &mut w)?,
        Mode::Montecarlo => run_montecarlo(cfg, &mut w, &mut timing)?,
        Mode::Audit => run_audit(cfg, &mut w)?,
    };

    let input_sha = match &input {
        Some(p) => Some(sha256_hex(&std::fs::read(p).map_err(io_err(p))?)),
        None => None,
    };
    let mut outputs = Vec::new();
    for name in &w.files {
        let path = cfg.out.join(name);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        outputs.push(json!({ "file": name, "sha256": sha256_hex(&bytes) }));
    }
    let manifest = json!({
        "tool": "dyndml",
        "version": env!("CARGO_PKG_VERSION"),
        "mode": cfg.mode.as_str(),
        "seed": cfg.seed,
        "config_sha256": sha256_hex(cfg.canonical_json()?.as_bytes()),
        "input_sha256": input_sha,
        "outputs": outputs,
        "timing": {
            "wall_time_secs": start.elapsed().as_secs_f64(),
            "cells": timing,
        },
    });
    let files = w.files.clone();
    w.json("manifest.json", &manifest)?;
    let mut files = files;
    files.push("manifest.json".into());
    Ok(RunSummary { files })
}

/// Machine-readable failure record written as `error.json`.
pub fn error_record(e: &Error) -> serde_json::Value {
    json!({ "status": "error", "kind": e.kind(), "message": e.to_string() })
}

/// Writes `error.json` into `dir`, creating it if needed.
pub fn write_error(dir: &Path, e: &Error) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("error.json");
    let mut s = serde_json::to_string_pretty(&error_record(e))?;
    s.push('\n');
    std::fs::write(&path, s).map_err(io_err(&path))
}
