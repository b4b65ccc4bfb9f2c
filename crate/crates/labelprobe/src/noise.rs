//! Synthetic label corruption and noise transition matrices.
//!
//! Two corruption processes are supported: completely-at-random flips
//! ([`inject_ncar`]) and feature-dependent noise produced by aggregating
//! imperfect labeling rules ([`aggregate_weak_labels`]). When ground truth is
//! known, [`estimate_transition_matrix`] summarizes the corruption as the
//! column-stochastic matrix `T[i][j] = P(observed = i | true = j)`, with an
//! extra "unlabeled" row when some examples received no label at all.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Specification of a corruption process.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Flip each label independently with probability `rate`.
    Ncar {
        rate: f64,
        /// When true, the replacement label is drawn uniformly from all `K`
        /// classes (so a "flip" may keep the label). The default draws from
        /// the `K - 1` other classes, making the nominal rate equal to the
        /// realized mislabeled fraction.
        #[serde(default)]
        include_self: bool,
        seed: u64,
    },
    /// Aggregate labeling-rule votes by majority.
    Rules { seed: u64 },
}

/// Votes of `m` labeling rules on `n` examples; `-1` means abstain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RuleMatrix {
    votes: Array2<i64>,
    n_classes: usize,
}

impl RuleMatrix {
    pub fn new(votes: Array2<i64>, n_classes: usize) -> Result<Self> {
        for &v in votes.iter() {
            if v < -1 || v >= n_classes as i64 {
                return Err(Error::Noise(format!(
                    "rule vote {v} is neither a class in [0, {n_classes}) nor -1"
                )));
            }
        }
        Ok(Self { votes, n_classes })
    }

    pub fn n_examples(&self) -> usize {
        self.votes.nrows()
    }

    pub fn n_rules(&self) -> usize {
        self.votes.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn votes(&self) -> &Array2<i64> {
        &self.votes
    }
}

/// Flip each label independently with probability `rate`.
///
/// The replacement is drawn uniformly from the other `K - 1` classes, unless
/// `include_self` is set, in which case it is drawn from all `K` classes.
pub fn inject_ncar(
    labels: &[usize],
    n_classes: usize,
    rate: f64,
    include_self: bool,
    seed: u64,
) -> Result<Vec<usize>> {
    if n_classes < 2 {
        return Err(Error::Noise("NCAR needs at least 2 classes".into()));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Noise(format!("rate {rate} outside [0, 1]")));
    }
    let mut rng = seeding::rng(seed);
    let mut out = Vec::with_capacity(labels.len());
    for &label in labels {
        let flip = rng.random::<f64>() < rate;
        if !flip {
            out.push(label);
        } else if include_self {
            out.push(rng.random_range(0..n_classes));
        } else {
            let draw = rng.random_range(0..n_classes - 1);
            out.push(if draw >= label { draw + 1 } else { draw });
        }
    }
    Ok(out)
}

/// Majority vote over non-abstaining rules.
///
/// Ties are resolved by picking uniformly at random among the tied winners.
/// Examples with no votes at all are flagged uncovered (`covered = false`)
/// and are expected to be dropped from training by the caller.
pub fn aggregate_weak_labels(rules: &RuleMatrix, seed: u64) -> (Vec<usize>, Vec<bool>) {
    let mut rng = seeding::rng(seed);
    let n = rules.n_examples();
    let k = rules.n_classes();
    let mut labels = vec![0usize; n];
    let mut covered = vec![false; n];
    let mut counts = vec![0usize; k];

    for i in 0..n {
        counts.iter_mut().for_each(|c| *c = 0);
        let mut total = 0;
        for j in 0..rules.n_rules() {
            let v = rules.votes()[[i, j]];
            if v >= 0 {
                counts[v as usize] += 1;
                total += 1;
            }
        }
        if total == 0 {
            continue;
        }
        covered[i] = true;
        let best = *counts.iter().max().unwrap();
        let winners: Vec<usize> = (0..k).filter(|&c| counts[c] == best).collect();
        labels[i] = if winners.len() == 1 {
            winners[0]
        } else {
            winners[rng.random_range(0..winners.len())]
        };
    }
    (labels, covered)
}

/// Column-stochastic noise transition matrix with named rows and columns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionMatrix {
    /// `row_labels.len() x column_labels.len()` matrix of probabilities.
    pub matrix: Array2<f64>,
    /// Observed classes, plus a final "unlabeled" row when present.
    pub row_labels: Vec<String>,
    /// True classes.
    pub column_labels: Vec<String>,
}

impl TransitionMatrix {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Estimate `T[i][j] = count(observed = i and true = j) / count(true = j)`.
///
/// `observed` entries of `None` stand for examples that received no label
/// (e.g. not covered by any rule); when any are present the matrix gets a
/// final "unlabeled" row, making it non-square.
pub fn estimate_transition_matrix(
    observed: &[Option<usize>],
    clean: &[usize],
    n_classes: usize,
) -> Result<TransitionMatrix> {
    if observed.len() != clean.len() {
        return Err(Error::Noise(format!(
            "{} observed labels vs {} true labels",
            observed.len(),
            clean.len()
        )));
    }
    let has_unlabeled = observed.iter().any(|o| o.is_none());
    let rows = n_classes + usize::from(has_unlabeled);

    let mut counts = Array2::<f64>::zeros((rows, n_classes));
    let mut true_counts = vec![0usize; n_classes];
    for (obs, &truth) in observed.iter().zip(clean) {
        if truth >= n_classes {
            return Err(Error::Noise(format!(
                "true label {truth} outside [0, {n_classes})"
            )));
        }
        true_counts[truth] += 1;
        let row = match obs {
            Some(o) if *o < n_classes => *o,
            Some(o) => {
                return Err(Error::Noise(format!(
                    "observed label {o} outside [0, {n_classes})"
                )))
            }
            None => n_classes,
        };
        counts[[row, truth]] += 1.0;
    }
    for (j, &c) in true_counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyTrueClass(j));
        }
    }
    for j in 0..n_classes {
        let total = true_counts[j] as f64;
        for i in 0..rows {
            counts[[i, j]] /= total;
        }
    }

    let mut row_labels: Vec<String> = (0..n_classes).map(|c| c.to_string()).collect();
    if has_unlabeled {
        row_labels.push("unlabeled".into());
    }
    Ok(TransitionMatrix {
        matrix: counts,
        row_labels,
        column_labels: (0..n_classes).map(|c| c.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ncar_rate_zero_keeps_labels() {
        let labels = vec![0, 1, 2, 1, 0];
        let out = inject_ncar(&labels, 3, 0.0, false, 7).unwrap();
        assert_eq!(out, labels);
    }

    #[test]
    fn ncar_rate_one_binary_flips_all() {
        let labels = vec![0, 1, 1, 0, 1];
        let out = inject_ncar(&labels, 2, 1.0, false, 7).unwrap();
        let expect: Vec<usize> = labels.iter().map(|&l| 1 - l).collect();
        assert_eq!(out, expect);
    }

    #[test]
    fn ncar_realized_rate_concentrates() {
        let labels: Vec<usize> = (0..10_000).map(|i| i % 4).collect();
        let out = inject_ncar(&labels, 4, 0.3, false, 123).unwrap();
        let flipped = labels
            .iter()
            .zip(&out)
            .filter(|(a, b)| a != b)
            .count() as f64
            / labels.len() as f64;
        // binomial 4-sigma bound is well inside +-0.02
        assert!((flipped - 0.3).abs() <= 0.02, "flip fraction {flipped}");
    }

    #[test]
    fn ncar_never_leaves_class_range() {
        for seed in 0..20 {
            let labels: Vec<usize> = (0..500).map(|i| i % 5).collect();
            let out = inject_ncar(&labels, 5, 0.7, false, seed).unwrap();
            assert!(out.iter().all(|&l| l < 5));
            let with_self = inject_ncar(&labels, 5, 0.7, true, seed).unwrap();
            assert!(with_self.iter().all(|&l| l < 5));
        }
    }

    #[test]
    fn ncar_rejects_single_class() {
        assert!(inject_ncar(&[0, 0], 1, 0.5, false, 0).is_err());
    }

    #[test]
    fn majority_vote_strict_majority() {
        let votes = Array2::from_shape_vec((1, 3), vec![1, 1, 0]).unwrap();
        let rules = RuleMatrix::new(votes, 2).unwrap();
        let (labels, covered) = aggregate_weak_labels(&rules, 0);
        assert_eq!(labels[0], 1);
        assert!(covered[0]);
    }

    #[test]
    fn abstain_only_row_is_uncovered() {
        let votes = Array2::from_shape_vec((1, 2), vec![-1, -1]).unwrap();
        let rules = RuleMatrix::new(votes, 2).unwrap();
        let (_, covered) = aggregate_weak_labels(&rules, 0);
        assert!(!covered[0]);
    }

    #[test]
    fn ties_break_uniformly_at_random() {
        let votes = Array2::from_shape_vec((1, 2), vec![0, 1]).unwrap();
        let rules = RuleMatrix::new(votes, 2).unwrap();
        let mut zero = 0;
        let trials = 10_000;
        for seed in 0..trials {
            let (labels, _) = aggregate_weak_labels(&rules, seed);
            if labels[0] == 0 {
                zero += 1;
            }
        }
        let frac = zero as f64 / trials as f64;
        assert!((frac - 0.5).abs() <= 0.02, "tie fraction {frac}");
    }

    #[test]
    fn vote_aggregation_is_rule_order_invariant_without_ties() {
        let votes = Array2::from_shape_vec((2, 3), vec![1, 1, 0, 2, 2, 2]).unwrap();
        let swapped = Array2::from_shape_vec((2, 3), vec![0, 1, 1, 2, 2, 2]).unwrap();
        let a = aggregate_weak_labels(&RuleMatrix::new(votes, 3).unwrap(), 5);
        let b = aggregate_weak_labels(&RuleMatrix::new(swapped, 3).unwrap(), 5);
        assert_eq!(a, b);
    }

    #[test]
    fn transition_matrix_identity_when_no_noise() {
        let clean = vec![0, 1, 2, 0, 1, 2];
        let observed: Vec<Option<usize>> = clean.iter().map(|&c| Some(c)).collect();
        let t = estimate_transition_matrix(&observed, &clean, 3).unwrap();
        assert_eq!(t.matrix.nrows(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(t.matrix[[i, j]], expect);
            }
        }
    }

    #[test]
    fn transition_matrix_with_unlabeled_row_matches_fractions() {
        // 100 true-0 examples: 79 observed 0, 4 observed 1, 17 unlabeled.
        // 50 true-1 examples: 11 observed 0, 37 observed 1, 2 unlabeled.
        let mut observed = Vec::new();
        let mut clean = Vec::new();
        let mut push = |obs: Option<usize>, truth: usize, count: usize| {
            for _ in 0..count {
                observed.push(obs);
                clean.push(truth);
            }
        };
        push(Some(0), 0, 79);
        push(Some(1), 0, 4);
        push(None, 0, 17);
        push(Some(0), 1, 11);
        push(Some(1), 1, 37);
        push(None, 1, 2);

        let t = estimate_transition_matrix(&observed, &clean, 2).unwrap();
        assert_eq!(t.matrix.nrows(), 3);
        assert_eq!(t.matrix.ncols(), 2);
        assert_eq!(t.row_labels.last().unwrap(), "unlabeled");
        let expect = [[0.79, 0.22], [0.04, 0.74], [0.17, 0.04]];
        for i in 0..3 {
            for j in 0..2 {
                assert!(
                    (t.matrix[[i, j]] - expect[i][j]).abs() < 1e-12,
                    "entry ({i},{j}) = {}",
                    t.matrix[[i, j]]
                );
            }
        }
    }

    #[test]
    fn transition_matrix_hand_counted_fixture() {
        // 6 examples: true classes (0,0,0,1,1,1); observed (0,1,0,1,1,0).
        let clean = vec![0, 0, 0, 1, 1, 1];
        let observed: Vec<Option<usize>> = vec![0, 1, 0, 1, 1, 0].into_iter().map(Some).collect();
        let t = estimate_transition_matrix(&observed, &clean, 2).unwrap();
        assert!((t.matrix[[0, 0]] - 2.0 / 3.0).abs() < 1e-12);
        assert!((t.matrix[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
        assert!((t.matrix[[0, 1]] - 1.0 / 3.0).abs() < 1e-12);
        assert!((t.matrix[[1, 1]] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn transition_matrix_columns_sum_to_one() {
        let mut rng = seeding::rng(9);
        for _ in 0..20 {
            let n = 200;
            let clean: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let observed: Vec<Option<usize>> = clean
                .iter()
                .map(|&c| {
                    if rng.random::<f64>() < 0.1 {
                        None
                    } else if rng.random::<f64>() < 0.3 {
                        Some(rng.random_range(0..3))
                    } else {
                        Some(c)
                    }
                })
                .collect();
            let t = estimate_transition_matrix(&observed, &clean, 3).unwrap();
            for j in 0..3 {
                let sum: f64 = (0..t.matrix.nrows()).map(|i| t.matrix[[i, j]]).sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_true_class_is_an_error() {
        let clean = vec![0, 0];
        let observed = vec![Some(0), Some(1)];
        let err = estimate_transition_matrix(&observed, &clean, 2).unwrap_err();
        assert!(matches!(err, Error::EmptyTrueClass(1)));
    }
}
