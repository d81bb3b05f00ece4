use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dyndml::cli::config::parse_grid;
use dyndml::cli::{run, write_error, Mode, RunConfig};
use dyndml::data::TreatmentSequence;
use dyndml::Result;

/// Double machine learning for dynamic two-period treatment effects.
///
/// Settings come from an optional TOML config file; flags override it.
#[derive(Debug, Parser)]
#[command(name = "dyndml", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// estimate | weighted | placebo | montecarlo | audit
    #[arg(long)]
    mode: Option<Mode>,
    /// Input CSV (columns y2, d1, d2, x0_*, x1_*, optional s).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Treated sequence, e.g. `1,1`.
    #[arg(long)]
    arm_a: Option<TreatmentSequence>,
    /// Comparison sequence, e.g. `0,0`.
    #[arg(long)]
    arm_b: Option<TreatmentSequence>,
    /// Number of cross-fitting folds.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trimming threshold.
    #[arg(long)]
    trim: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo replications per cell.
    #[arg(long)]
    reps: Option<usize>,
    /// Monte Carlo grid, e.g. `50x2500,50x10000:60`.
    #[arg(long)]
    grid: Option<String>,
    /// Input column holding the subgroup indicator (weighted mode) or the
    /// pseudo-treatment (placebo mode).
    #[arg(long)]
    s_col: Option<String>,
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(p) = &cli.input {
        cfg.input = Some(p.clone());
    }
    if let Some(a) = cli.arm_a {
        cfg.arm_a = a;
    }
    if let Some(b) = cli.arm_b {
        cfg.arm_b = b;
    }
    if let Some(k) = cli.k {
        cfg.folds = k;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.trim {
        cfg.trim = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(r) = cli.reps {
        cfg.montecarlo.reps = r;
    }
    if let Some(g) = &cli.grid {
        cfg.montecarlo.grid = parse_grid(g)?;
    }
    if let Some(c) = &cli.s_col {
        cfg.s_col = Some(c.clone());
        if cfg.mode == Mode::Weighted {
            cfg.subgroup = dyndml::cli::SubgroupRule::Column;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, out_dir) = match build_config(&cli) {
        Ok(cfg) => (run(&cfg), cfg.out),
        // Without a usable config, fall back to the flag or the default.
        Err(e) => (
            Err(e),
            cli.out.clone().unwrap_or_else(|| RunConfig::default().out),
        ),
    };
    match result {
        Ok(summary) => {
            for f in summary.files {
                println!("{f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let Err(w) = write_error(&out_dir, &e) {
                eprintln!("could not write error record: {w}");
            }
            eprintln!("error [{}]: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
