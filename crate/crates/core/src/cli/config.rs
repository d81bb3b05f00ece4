//! Run configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::TreatmentSequence;
use crate::error::{Error, Result};
use crate::nuisance::LearnerConfig;
use crate::simulation::{Cell, DgpConfig, NuisanceSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Estimate,
    Weighted,
    Placebo,
    Montecarlo,
    Audit,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimate" => Ok(Mode::Estimate),
            "weighted" => Ok(Mode::Weighted),
            "placebo" => Ok(Mode::Placebo),
            "montecarlo" => Ok(Mode::Montecarlo),
            "audit" => Ok(Mode::Audit),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Estimate => "estimate",
            Mode::Weighted => "weighted",
            Mode::Placebo => "placebo",
            Mode::Montecarlo => "montecarlo",
            Mode::Audit => "audit",
        }
    }
}

/// Subgroup definition for weighted mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubgroupRule {
    /// `S = 1` when the observed first treatment equals the first treatment
    /// of either arm.
    FirstTreatment,
    /// `S` read from the input column named by `s_col`.
    Column,
}

/// Treatment sequences are written as `"d1,d2"` in config files.
mod seq_str {
    use super::TreatmentSequence;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &TreatmentSequence, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{},{}", v.d1, v.d2))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TreatmentSequence, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Grid cells are written as `"PxN"` or `"PxN:REPS"`.
mod cells_str {
    use super::{parse_cell, CellSpec};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[CellSpec], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|c| match c.reps {
            Some(r) => format!("{}x{}:{}", c.p, c.n, r),
            None => format!("{}x{}", c.p, c.n),
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CellSpec>, D::Error> {
        let v = Vec::<String>::deserialize(d)?;
        v.iter()
            .map(|s| parse_cell(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

/// One grid entry; `reps` falls back to the section default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpec {
    pub p: usize,
    pub n: usize,
    pub reps: Option<usize>,
}

pub fn parse_cell(s: &str) -> Result<CellSpec> {
    let bad = || Error::Config(format!("grid cell must be `PxN` or `PxN:REPS`, got `{s}`"));
    let (dims, reps) = match s.trim().split_once(':') {
        Some((d, r)) => (d, Some(r.trim().parse::<usize>().map_err(|_| bad())?)),
        None => (s.trim(), None),
    };
    let (p, n) = dims.split_once('x').ok_or_else(bad)?;
    Ok(CellSpec {
        p: p.trim().parse().map_err(|_| bad())?,
        n: n.trim().parse().map_err(|_| bad())?,
        reps,
    })
}

/// Comma-separated list of grid cells, as given to `--grid`.
pub fn parse_grid(s: &str) -> Result<Vec<CellSpec>> {
    s.split(',')
        .filter(|c| !c.trim().is_empty())
        .map(parse_cell)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    #[serde(with = "cells_str")]
    pub grid: Vec<CellSpec>,
    pub reps: usize,
    pub nuisance: NuisanceSource,
    /// Subgroup `S = 1{D1 = d}` of the weighted estimator; `None` skips it.
    pub subgroup_d1: Option<u32>,
    pub dgp: DgpConfig,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            grid: vec![CellSpec {
                p: 50,
                n: 2500,
                reps: None,
            }],
            reps: 200,
            nuisance: NuisanceSource::CrossFit,
            subgroup_d1: Some(1),
            dgp: DgpConfig::default(),
        }
    }
}

impl MonteCarloSection {
    pub fn cells(&self) -> Vec<Cell> {
        self.grid
            .iter()
            .map(|c| Cell {
                p: c.p,
                n: c.n,
                reps: c.reps.unwrap_or(self.reps),
            })
            .collect()
    }
}

/// Simulated sample audited when no input file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSection {
    pub n: usize,
    pub p: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self { n: 2500, p: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Option<PathBuf>,
    #[serde(with = "seq_str")]
    pub arm_a: TreatmentSequence,
    #[serde(with = "seq_str")]
    pub arm_b: TreatmentSequence,
    pub folds: usize,
    pub seed: u64,
    pub trim: f64,
    pub out: PathBuf,
    pub subgroup: SubgroupRule,
    /// Input column holding `S` (weighted mode) or the pseudo-treatment
    /// (placebo mode).
    pub s_col: Option<String>,
    /// Histogram bins of the overlap panels.
    pub bins: usize,
    /// Thresholds listed in `trimming.csv`.
    pub trim_grid: Vec<f64>,
    pub learners: LearnerConfig,
    pub montecarlo: MonteCarloSection,
    pub audit: AuditSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Estimate,
            input: None,
            arm_a: TreatmentSequence::new(1, 1),
            arm_b: TreatmentSequence::new(0, 0),
            folds: 3,
            seed: 1,
            trim: 0.01,
            out: PathBuf::from("out"),
            subgroup: SubgroupRule::FirstTreatment,
            s_col: None,
            bins: 40,
            trim_grid: vec![0.0, 0.01, 0.03, 0.05],
            learners: LearnerConfig::default(),
            montecarlo: MonteCarloSection::default(),
            audit: AuditSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Canonical JSON form, hashed into the run manifest.
    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidFolds {
                folds: self.folds,
                n: 0,
            });
        }
        if !(0.0..1.0).contains(&self.trim) {
            return Err(Error::Config(format!(
                "trimming threshold must lie in [0, 1), got {}",
                self.trim
            )));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!(
                "need at least 2 histogram bins, got {}",
                self.bins
            )));
        }
        match self.mode {
            Mode::Estimate | Mode::Weighted => {
                validate_contrast(self.arm_a, self.arm_b)?;
                if self.input.is_none() {
                    return Err(Error::Config(format!(
                        "{} mode needs an input file",
                        self.mode.as_str()
                    )));
                }
                if self.mode == Mode::Weighted
                    && self.subgroup == SubgroupRule::Column
                    && self.s_col.is_none()
                {
                    return Err(Error::Config("subgroup rule `column` needs `s_col`".into()));
                }
            }
            Mode::Placebo => {
                if self.input.is_none() {
                    return Err(Error::Config("placebo mode needs an input file".into()));
                }
                if self.s_col.is_none() && self.arm_a == self.arm_b {
                    return Err(Error::InvalidContrast {
                        a: self.arm_a,
                        b: self.arm_b,
                        reason: "placebo groups must differ".into(),
                    });
                }
            }
            Mode::Montecarlo => {
                validate_contrast(self.arm_a, self.arm_b)?;
                if self.montecarlo.grid.is_empty() {
                    return Err(Error::Config("Monte Carlo grid is empty".into()));
                }
            }
            Mode::Audit => {}
        }
        Ok(())
    }
}

/// Dynamic contrasts must differ in the first-period treatment; otherwise
/// the problem reduces to a static comparison.
pub fn validate_contrast(a: TreatmentSequence, b: TreatmentSequence) -> Result<()> {
    if a == b {
        return Err(Error::InvalidContrast {
            a,
            b,
            reason: "the two arms are identical".into(),
        });
    }
    if a.d1 == b.d1 {
        return Err(Error::InvalidContrast {
            a,
            b,
            reason: "same first-period treatment; use static/placebo mode".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_with_defaults() {
        let cfg = RunConfig::from_toml_str(
            r#"
            mode = "montecarlo"
            arm_a = "1,1"
            arm_b = "0,0"
            seed = 9
            [montecarlo]
            grid = ["50x2500", "50x10000:60"]
            reps = 200
            "#,
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Montecarlo);
        let cells = cfg.montecarlo.cells();
        assert_eq!(cells[0].reps, 200);
        assert_eq!((cells[1].n, cells[1].reps), (10000, 60));
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("mdoe = \"audit\"").is_err());
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("50x2500, 10x400:5").unwrap();
        assert_eq!(
            g[1],
            CellSpec {
                p: 10,
                n: 400,
                reps: Some(5)
            }
        );
        assert!(parse_cell("50-2500").is_err());
    }

    #[test]
    fn contrast_rules() {
        let s = TreatmentSequence::new;
        assert!(validate_contrast(s(1, 1), s(0, 0)).is_ok());
        assert!(validate_contrast(s(1, 0), s(0, 1)).is_ok());
        let e = validate_contrast(s(1, 1), s(1, 0)).unwrap_err();
        assert!(e.to_string().contains("same first-period treatment"));
        assert_eq!(e.kind(), "invalid_contrast");
    }
}
