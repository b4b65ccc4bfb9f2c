//! Gradient boosted trees on the multiclass softmax log-loss.
//!
//! Each boosting round fits one regression tree per class to the loss
//! gradient, with XGBoost-style leaf values `-G / (H + lambda)` and exact
//! axis-aligned split search. Staged fitting trains all rounds at once and
//! then dispatches prefix snapshots that share the tree storage.

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{
    carve_holdout, log_loss, softmax_rows, EarlyStopping, FittedModel, ModelStream, MAX_ITERATIONS,
    PROB_CLAMP,
};
use crate::error::{Error, Result};

/// Hyperparameters of the boosted-trees model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GbtSpec {
    /// l2 penalty on leaf values.
    pub lambda: f64,
    /// Shrinkage applied to every tree's contribution.
    pub learning_rate: f64,
    /// Maximum tree depth.
    #[serde(default = "default_depth")]
    pub max_depth: usize,
    /// Boosting-round cap, clamped to [`MAX_ITERATIONS`].
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub seed: u64,
}

fn default_depth() -> usize {
    3
}

fn default_max_iter() -> usize {
    MAX_ITERATIONS
}

impl Default for GbtSpec {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            learning_rate: 0.1,
            max_depth: 3,
            max_iter: MAX_ITERATIONS,
            seed: 0,
        }
    }
}

/// A node of a regression tree.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf { value: f64 },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A regression tree with binary axis-aligned splits.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    root: usize,
}

impl Tree {
    pub fn predict_row(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut node = self.root;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

/// A fitted boosted-trees snapshot; prefixes of one training run share the
/// tree storage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GbtModel {
    /// `trees[round][class]` for all trained rounds.
    pub trees: Arc<Vec<Vec<Tree>>>,
    /// How many leading rounds this snapshot uses.
    pub rounds_used: usize,
    /// Per-class initial raw scores (log priors of the fitting rows).
    pub base_scores: Array1<f64>,
    pub lambda: f64,
    pub learning_rate: f64,
    pub n_classes: usize,
    pub input_dim: usize,
}

impl GbtModel {
    /// Raw additive scores before the softmax.
    pub fn raw_scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut f = Array2::zeros((n, self.n_classes));
        for i in 0..n {
            let row = x.row(i);
            for c in 0..self.n_classes {
                let mut score = self.base_scores[c];
                for round in &self.trees[..self.rounds_used] {
                    score += self.learning_rate * round[c].predict_row(row);
                }
                f[[i, c]] = score;
            }
        }
        f
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        softmax_rows(self.raw_scores(x))
    }

    /// Total number of trees used by this snapshot.
    pub fn n_trees(&self) -> usize {
        self.rounds_used * self.n_classes
    }
}

fn class_priors(y: &[usize], n_classes: usize) -> Array1<f64> {
    let mut counts = Array1::zeros(n_classes);
    for &label in y {
        counts[label] += 1.0;
    }
    counts.mapv(|c: f64| (c / y.len() as f64).max(PROB_CLAMP).ln())
}

pub(super) fn staged_fit(
    spec: &GbtSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
) -> Result<ModelStream> {
    if spec.learning_rate < 0.0 {
        return Err(Error::Model("learning rate must be non-negative".into()));
    }
    if spec.lambda < 0.0 {
        return Err(Error::Model("lambda must be non-negative".into()));
    }
    if spec.max_depth == 0 {
        return Err(Error::Model("max_depth must be at least 1".into()));
    }

    let (fit_rows, holdout_rows) = carve_holdout(x.nrows(), spec.seed);
    let x_fit = crate::dataset::take_rows(x, &fit_rows);
    let y_fit: Vec<usize> = fit_rows.iter().map(|&i| y[i]).collect();
    let x_holdout = crate::dataset::take_rows(x, &holdout_rows);
    let y_holdout: Vec<usize> = holdout_rows.iter().map(|&i| y[i]).collect();

    let base_scores = class_priors(&y_fit, n_classes);
    let n_fit = x_fit.nrows();
    let mut f_fit = Array2::zeros((n_fit, n_classes));
    for mut row in f_fit.rows_mut() {
        row.assign(&base_scores);
    }
    let mut f_holdout = Array2::zeros((x_holdout.nrows(), n_classes));
    for mut row in f_holdout.rows_mut() {
        row.assign(&base_scores);
    }

    let cap = spec.max_iter.min(MAX_ITERATIONS);
    let mut stopper = EarlyStopping::new(!y_holdout.is_empty());
    let mut rounds: Vec<Vec<Tree>> = Vec::new();

    let mut grad = vec![0.0; n_fit];
    let mut hess = vec![0.0; n_fit];
    for round in 1..=cap {
        let p = softmax_rows(f_fit.clone());
        let mut round_trees = Vec::with_capacity(n_classes);
        for class in 0..n_classes {
            for i in 0..n_fit {
                let pc = p[[i, class]];
                grad[i] = pc - f64::from(u8::from(y_fit[i] == class));
                hess[i] = pc * (1.0 - pc);
            }
            let tree = fit_tree(x_fit.view(), &grad, &hess, spec.lambda, spec.max_depth);
            for i in 0..n_fit {
                f_fit[[i, class]] += spec.learning_rate * tree.predict_row(x_fit.row(i));
            }
            for i in 0..x_holdout.nrows() {
                f_holdout[[i, class]] +=
                    spec.learning_rate * tree.predict_row(x_holdout.row(i));
            }
            round_trees.push(tree);
        }
        rounds.push(round_trees);
        if round >= cap {
            break;
        }
        if !y_holdout.is_empty() {
            let loss = log_loss(softmax_rows(f_holdout.clone()).view(), &y_holdout);
            if stopper.should_stop(loss) {
                break;
            }
        }
    }

    let trees = Arc::new(rounds);
    let total = trees.len();
    let spec = spec.clone();
    let input_dim = x.ncols();
    let iter = (1..=total).map(move |rounds_used| {
        FittedModel::Gbt(GbtModel {
            trees: trees.clone(),
            rounds_used,
            base_scores: base_scores.clone(),
            lambda: spec.lambda,
            learning_rate: spec.learning_rate,
            n_classes,
            input_dim,
        })
    });
    Ok(ModelStream::new(Box::new(iter)))
}

/// Exact greedy split search; deterministic tie-breaking by feature index
/// and threshold order.
fn fit_tree(x: ArrayView2<'_, f64>, grad: &[f64], hess: &[f64], lambda: f64, max_depth: usize) -> Tree {
    let mut nodes = Vec::new();
    let rows: Vec<usize> = (0..x.nrows()).collect();
    let root = build_node(&mut nodes, x, grad, hess, rows, lambda, max_depth);
    Tree { nodes, root }
}

fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        let v = -g / denom;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    } else {
        0.0
    }
}

fn score_term(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        g * g / denom
    } else {
        0.0
    }
}

fn build_node(
    nodes: &mut Vec<TreeNode>,
    x: ArrayView2<'_, f64>,
    grad: &[f64],
    hess: &[f64],
    rows: Vec<usize>,
    lambda: f64,
    depth_left: usize,
) -> usize {
    let g_total: f64 = rows.iter().map(|&i| grad[i]).sum();
    let h_total: f64 = rows.iter().map(|&i| hess[i]).sum();

    let mut best: Option<(f64, usize, f64)> = None;
    if depth_left > 0 && rows.len() >= 2 {
        let parent = score_term(g_total, h_total, lambda);
        for feature in 0..x.ncols() {
            let mut sorted = rows.clone();
            sorted.sort_unstable_by(|&a, &b| {
                x[[a, feature]]
                    .partial_cmp(&x[[b, feature]])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut g_left = 0.0;
            let mut h_left = 0.0;
            for pos in 1..sorted.len() {
                let prev = sorted[pos - 1];
                g_left += grad[prev];
                h_left += hess[prev];
                let lo = x[[prev, feature]];
                let hi = x[[sorted[pos], feature]];
                if hi <= lo {
                    continue;
                }
                let gain = 0.5
                    * (score_term(g_left, h_left, lambda)
                        + score_term(g_total - g_left, h_total - h_left, lambda)
                        - parent);
                if gain > best.map_or(1e-12, |(g, _, _)| g) {
                    best = Some((gain, feature, 0.5 * (lo + hi)));
                }
            }
        }
    }

    match best {
        None => {
            nodes.push(TreeNode::Leaf {
                value: leaf_value(g_total, h_total, lambda),
            });
            nodes.len() - 1
        }
        Some((_, feature, threshold)) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.into_iter().partition(|&i| x[[i, feature]] <= threshold);
            let left = build_node(nodes, x, grad, hess, left_rows, lambda, depth_left - 1);
            let right = build_node(nodes, x, grad, hess, right_rows, lambda, depth_left - 1);
            nodes.push(TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            });
            nodes.len() - 1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BaseModelSpec;

    #[test]
    fn zero_learning_rate_predicts_class_priors() {
        // 9 rows keep the early-stopping holdout empty, so priors are exact.
        let x = Array2::from_shape_fn((9, 1), |(i, _)| i as f64);
        let y = vec![0, 0, 0, 0, 0, 0, 1, 1, 1];
        let spec = GbtSpec {
            learning_rate: 0.0,
            max_iter: 20,
            ..GbtSpec::default()
        };
        let model = BaseModelSpec::Gbt(spec).fit(x.view(), &y, 2).unwrap();
        let p = model.predict_proba(x.view()).unwrap();
        for i in 0..9 {
            assert!((p[[i, 0]] - 2.0 / 3.0).abs() < 1e-12);
            assert!((p[[i, 1]] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn one_round_matches_hand_computed_leaf_values() {
        // 4 rows, no holdout; uniform priors. After one round the raw score
        // difference is lr * (-G/(H+lambda)) = lr * 1/1.5 per class side.
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = vec![0, 0, 1, 1];
        let spec = GbtSpec {
            lambda: 1.0,
            learning_rate: 0.1,
            max_depth: 3,
            max_iter: 1,
            seed: 0,
        };
        let model = BaseModelSpec::Gbt(spec).fit(x.view(), &y, 2).unwrap();
        let p = model.predict_proba(x.view()).unwrap();
        let v = 1.0 / 1.5;
        let expect0 = (0.1 * v).exp() / ((0.1 * v).exp() + (-0.1 * v).exp());
        for i in 0..2 {
            assert!((p[[i, 0]] - expect0).abs() < 1e-12, "row {i}: {}", p[[i, 0]]);
        }
        for i in 2..4 {
            assert!((p[[i, 1]] - expect0).abs() < 1e-12, "row {i}: {}", p[[i, 1]]);
        }
    }

    #[test]
    fn snapshot_t_uses_t_times_k_trees() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| (i * 2 + j) as f64 * 0.37 % 5.0);
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let spec = GbtSpec {
            max_iter: 7,
            ..GbtSpec::default()
        };
        let stream = BaseModelSpec::Gbt(spec)
            .staged_fit(x.view(), &y, 3)
            .unwrap();
        for (t, model) in stream.enumerate() {
            match model {
                FittedModel::Gbt(m) => assert_eq!(m.n_trees(), (t + 1) * 3),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn piecewise_constant_regions_have_zero_gradient() {
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = vec![0, 0, 1, 1];
        let model = BaseModelSpec::Gbt(GbtSpec {
            max_iter: 5,
            ..GbtSpec::default()
        })
        .fit(x.view(), &y, 2)
        .unwrap();
        // interior query away from the split at 1.5
        let q = ndarray::Array1::from_vec(vec![0.5]);
        let g = model.input_gradient(q.view(), 0).unwrap();
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn early_stopping_respects_iteration_cap() {
        let x = Array2::from_shape_fn((50, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let y: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let spec = GbtSpec::default();
        let count = BaseModelSpec::Gbt(spec)
            .staged_fit(x.view(), &y, 2)
            .unwrap()
            .count();
        assert!(count <= MAX_ITERATIONS);
        assert!(count >= 1);
    }
}
