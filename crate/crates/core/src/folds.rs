//! Deterministic K-fold partitions with a two-way split of each complement.
//!
//! The complement of fold `k` is split into halves `A_k` and `B_k`: the
//! outcome model is trained on `A_k` and the nested mean on `B_k`, so the
//! two regressions never share rows.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    assignments: Vec<usize>,
    folds: usize,
    seed: u64,
    half_a: Vec<Vec<usize>>,
    half_b: Vec<Vec<usize>>,
}

/// Builds a balanced random partition of `0..n` into `folds` folds.
///
/// Remainder rows go one per fold to the lowest-indexed folds. The A/B
/// halving of each complement draws from the same RNG stream, in fold
/// order, so `(n, folds, seed)` fully determines the plan.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 || folds > n {
        return Err(Error::InvalidFolds { n, folds });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let base = n / folds;
    let rem = n % folds;
    let mut assignments = vec![0usize; n];
    let mut pos = 0;
    for k in 0..folds {
        let size = base + usize::from(k < rem);
        for &i in &order[pos..pos + size] {
            assignments[i] = k;
        }
        pos += size;
    }

    let mut half_a = Vec::with_capacity(folds);
    let mut half_b = Vec::with_capacity(folds);
    for k in 0..folds {
        let mut comp: Vec<usize> = (0..n).filter(|&i| assignments[i] != k).collect();
        comp.shuffle(&mut rng);
        let split = comp.len().div_ceil(2);
        let mut a = comp[..split].to_vec();
        let mut b = comp[split..].to_vec();
        a.sort_unstable();
        b.sort_unstable();
        half_a.push(a);
        half_b.push(b);
    }

    Ok(FoldPlan {
        assignments,
        folds,
        seed,
        half_a,
        half_b,
    })
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignments[i]
    }

    /// Rows in fold `k`, ascending.
    pub fn fold(&self, k: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignments[i] == k)
            .collect()
    }

    /// Rows outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignments[i] != k)
            .collect()
    }

    pub fn half_a(&self, k: usize) -> &[usize] {
        &self.half_a[k]
    }

    pub fn half_b(&self, k: usize) -> &[usize] {
        &self.half_b[k]
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &k in &self.assignments {
            sizes[k] += 1;
        }
        sizes
    }

    /// The same plan expressed over rows reordered so that new row `i` is
    /// old row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.n());
        let mut inverse = vec![0usize; order.len()];
        for (new, &old) in order.iter().enumerate() {
            inverse[old] = new;
        }
        let remap = |rows: &Vec<usize>| {
            let mut out: Vec<usize> = rows.iter().map(|&i| inverse[i]).collect();
            out.sort_unstable();
            out
        };
        Self {
            assignments: order.iter().map(|&i| self.assignments[i]).collect(),
            folds: self.folds,
            seed: self.seed,
            half_a: self.half_a.iter().map(remap).collect(),
            half_b: self.half_b.iter().map(remap).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_divisibility() {
        let plan = make_folds(9, 3, 7).unwrap();
        assert_eq!(plan.fold_sizes(), vec![3, 3, 3]);
    }

    #[test]
    fn remainder_goes_to_low_folds() {
        let plan = make_folds(10, 3, 7).unwrap();
        assert_eq!(plan.fold_sizes(), vec![4, 3, 3]);
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(make_folds(9, 3, 7).unwrap(), make_folds(9, 3, 7).unwrap());
        assert_ne!(
            make_folds(50, 3, 7).unwrap().assignments(),
            make_folds(50, 3, 8).unwrap().assignments()
        );
    }

    #[test]
    fn rejects_bad_fold_counts() {
        assert!(matches!(
            make_folds(5, 1, 0),
            Err(Error::InvalidFolds { .. })
        ));
        assert!(matches!(
            make_folds(5, 6, 0),
            Err(Error::InvalidFolds { .. })
        ));
    }

    proptest! {
        #[test]
        fn plan_is_partition(n in 2usize..200, k in 2usize..8, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let plan = make_folds(n, k, seed).unwrap();
            let sizes = plan.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in 0..k {
                let comp = plan.complement(f);
                let a = plan.half_a(f);
                let b = plan.half_b(f);
                prop_assert!(a.len().abs_diff(b.len()) <= 1);
                let mut union: Vec<usize> = a.iter().chain(b).copied().collect();
                union.sort_unstable();
                prop_assert_eq!(&union, &comp);
                prop_assert!(a.iter().all(|&i| plan.fold_of(i) != f));
            }
        }
    }
}
