//! Double machine learning for dynamic (two-period) treatment effects.
//!
//! The pipeline is: validate a [`data::PanelDataset`], build a
//! [`folds::FoldPlan`], cross-fit the nuisance functions
//! ([`nuisance::cross_fit`]), evaluate orthogonal scores
//! ([`scores::score_psi`]) and aggregate them into effects with
//! influence-function standard errors ([`effects::estimate_ate`]).

// `!(a > b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod effects;
pub mod error;
pub mod fmt;
pub mod folds;
pub mod learners;
pub mod nuisance;
pub mod scores;
pub mod simulation;

pub use error::{Error, Result};
pub use fmt::fmt_f64;

/// Mixes `(base, a, b)` into a well-spread 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ a) ^ b.rotate_left(32))
}
