//! Bagged CART regression forest.
//!
//! Each tree is grown on a bootstrap sample by greedy variance-reduction
//! splits over a random subset of features; leaves hold the mean response.
//! The forest predicts the average over trees, so every prediction is a
//! convex combination of training responses.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training, DesignMatrix, FitReport, FittedModel, LearnerKind, ModelBody, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub trees: usize,
    pub min_leaf: usize,
    /// Fraction of features tried at each split (at least one).
    pub feature_fraction: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 200,
            min_leaf: 5,
            feature_fraction: 1.0 / 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub(crate) fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        let mut buf = vec![0.0; x.ncols()];
        x.outer_iter()
            .map(|row| {
                buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
                self.trees.iter().map(|t| t.predict_row(&buf)).sum::<f64>()
                    / self.trees.len() as f64
            })
            .collect()
    }
}

struct Grower<'a> {
    x: &'a DesignMatrix,
    y: &'a [f64],
    min_leaf: usize,
    mtry: usize,
}

impl Grower<'_> {
    fn grow(&self, sample_rows: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut stack = vec![(0usize, sample_rows)];
        while let Some((slot, rows)) = stack.pop() {
            let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64;
            match self.best_split(&rows, rng) {
                Some((feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) = rows
                        .into_iter()
                        .partition(|&i| self.x.raw_value(i, feature) <= threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    let right = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes[slot] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    stack.push((right, r));
                    stack.push((left, l));
                }
                None => nodes[slot] = Node::Leaf(mean),
            }
        }
        Tree { nodes }
    }

    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let m = rows.len();
        if m < 2 * self.min_leaf || self.x.ncols() == 0 {
            return None;
        }
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let first = self.y[rows[0]];
        if rows.iter().all(|&i| self.y[i] == first) {
            return None;
        }
        let parent_score = total * total / m as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(m);
        for feature in sample(rng, self.x.ncols(), self.mtry) {
            sorted.clear();
            sorted.extend(
                rows.iter()
                    .map(|&i| (self.x.raw_value(i, feature), self.y[i])),
            );
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for s in 1..m {
                left_sum += sorted[s - 1].1;
                if s < self.min_leaf || m - s < self.min_leaf {
                    continue;
                }
                if sorted[s - 1].0 == sorted[s].0 {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / s as f64 + right_sum * right_sum / (m - s) as f64;
                if best.is_none_or(|b| score > b.0) {
                    let threshold = 0.5 * (sorted[s - 1].0 + sorted[s].0);
                    best = Some((score, feature, threshold));
                }
            }
        }
        best.filter(|b| b.0 > parent_score * (1.0 + 1e-12) + 1e-12)
            .map(|(_, f, t)| (f, t))
    }
}

/// Grows a regression forest on `y`. Deterministic given `params.seed`.
pub fn fit_forest(x: &DesignMatrix, y: &[f64], params: &ForestParams) -> Result<FittedModel> {
    check_training(x, y)?;
    if params.trees == 0 || params.min_leaf == 0 {
        return Err(Error::Config(
            "forest needs trees >= 1 and min_leaf >= 1".into(),
        ));
    }
    let n = x.nrows();
    if n < 2 * params.min_leaf {
        return Err(Error::StratumTooSmall {
            what: "forest".into(),
            rows: n,
            minimum: 2 * params.min_leaf,
        });
    }
    let p = x.ncols();
    let mtry = ((p as f64 * params.feature_fraction).floor() as usize).clamp(1, p.max(1));
    let grower = Grower {
        x,
        y,
        min_leaf: params.min_leaf,
        mtry: mtry.min(p),
    };
    let degenerate = (0..p).all(|j| x.is_constant(j));
    let trees: Vec<Tree> = if degenerate {
        let mean = y.iter().sum::<f64>() / n as f64;
        vec![Tree {
            nodes: vec![Node::Leaf(mean)],
        }]
    } else {
        (0..params.trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(t as u64);
                let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grower.grow(boot, &mut rng)
            })
            .collect()
    };
    let forest = Forest { trees };

    let mut rows = ndarray::Array2::zeros((n, p));
    for j in 0..p {
        for (i, v) in x.raw_column(j).iter().enumerate() {
            rows[[i, j]] = *v;
        }
    }
    let fitted = forest.predict(rows.view());
    Ok(FittedModel {
        kind: LearnerKind::Forest,
        task: Task::Regression,
        body: ModelBody::Forest(forest),
        lambda: None,
        n_train: n,
        n_features: p,
        p_min: 0.0,
        fitted,
        report: FitReport {
            degenerate: degenerate.then(|| "all feature columns constant".to_string()),
            ..FitReport::default()
        },
    })
}
