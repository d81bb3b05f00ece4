//! Closed-form nuisance functions of the simulation design.
//!
//! Since `X1` is drawn independently of `D1` with mean zero, the nested
//! mean drops the `X1` index: `nu(d, x0) = d1 + d2 + x0'b`.

use statrs::distribution::{ContinuousCDF, Normal};

use super::dgp::DgpConfig;
use crate::data::{PanelDataset, TreatmentSequence};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceFits;

/// Standard normal CDF.
pub fn phi_cdf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("valid").cdf(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleNuisances {
    beta: Vec<f64>,
    carryover: f64,
}

fn dot(x: &[f64], b: &[f64]) -> f64 {
    x.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn level(p_one: f64, d: u32) -> f64 {
    if d == 1 {
        p_one
    } else {
        1.0 - p_one
    }
}

impl OracleNuisances {
    pub fn new(config: &DgpConfig) -> Self {
        Self {
            beta: config.beta(),
            carryover: config.carryover,
        }
    }

    /// `Pr(D1 = d1 | x0)`.
    pub fn p1(&self, d1: u32, x0: &[f64]) -> f64 {
        level(phi_cdf(dot(x0, &self.beta)), d1)
    }

    /// `Pr(D2 = d2 | D1 = d1, x0, x1)`.
    pub fn p2(&self, d1: u32, d2: u32, x0: &[f64], x1: &[f64]) -> f64 {
        let idx = self.carryover * f64::from(d1) + dot(x0, &self.beta) + dot(x1, &self.beta);
        level(phi_cdf(idx), d2)
    }

    pub fn mu(&self, seq: TreatmentSequence, x0: &[f64], x1: &[f64]) -> f64 {
        f64::from(seq.d1 + seq.d2) + dot(x0, &self.beta) + dot(x1, &self.beta)
    }

    pub fn nu(&self, seq: TreatmentSequence, x0: &[f64]) -> f64 {
        f64::from(seq.d1 + seq.d2) + dot(x0, &self.beta)
    }

    /// `Pr(S = 1 | x0)` for `S = 1{D1 = 1}`.
    pub fn g(&self, x0: &[f64]) -> f64 {
        self.p1(1, x0)
    }
}

/// Nuisance "fits" evaluated from the closed forms (no estimation).
/// Probabilities are clipped to `[p_min, 1 - p_min]`; `g` is attached for
/// the subgroup `S = 1{D1 = 1}` when `with_g` is set.
pub fn oracle_nuisance_fits(
    data: &PanelDataset,
    config: &DgpConfig,
    seq: TreatmentSequence,
    with_g: bool,
    p_min: f64,
) -> Result<NuisanceFits> {
    if data.p0() != config.p || data.p1() != config.p {
        return Err(Error::DimensionMismatch {
            expected: config.p,
            found: data.p0(),
        });
    }
    if seq.d1 > 1 || seq.d2 > 1 {
        return Err(Error::Config(format!(
            "oracle nuisances exist for binary treatments only, got {seq}"
        )));
    }
    let o = OracleNuisances::new(config);
    let clip = |p: f64| p.clamp(p_min, 1.0 - p_min);
    let n = data.n();
    let (x0, x1) = (data.x0(), data.x1());
    let mut fits = NuisanceFits {
        seq,
        p1: Vec::with_capacity(n),
        p2: Vec::with_capacity(n),
        mu: Vec::with_capacity(n),
        nu: Vec::with_capacity(n),
        g: with_g.then(|| Vec::with_capacity(n)),
        fold: vec![0; n],
    };
    for i in 0..n {
        let a = x0.row(i).to_vec();
        let b = x1.row(i).to_vec();
        fits.p1.push(clip(o.p1(seq.d1, &a)));
        fits.p2.push(clip(o.p2(seq.d1, seq.d2, &a, &b)));
        fits.mu.push(o.mu(seq, &a, &b));
        fits.nu.push(o.nu(seq, &a));
        if let Some(g) = fits.g.as_mut() {
            g.push(clip(o.g(&a)));
        }
    }
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        let c = DgpConfig::new(10, 2, 0);
        let o = OracleNuisances::new(&c);
        assert!((o.p2(1, 1, &[0.0, 0.0], &[0.0, 0.0]) - 0.617_911_422_188_952_7).abs() < 1e-12);
        assert_eq!(
            o.mu(TreatmentSequence::new(1, 1), &[0.0; 2], &[0.0; 2]),
            2.0
        );
        let zero = OracleNuisances {
            beta: vec![0.0; 2],
            carryover: 0.3,
        };
        assert_eq!(zero.nu(TreatmentSequence::new(0, 0), &[3.0, -1.0]), 0.0);
        assert_eq!(o.p1(0, &[0.0, 0.0]), 0.5);
    }
}
