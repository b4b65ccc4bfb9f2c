//! k-nearest neighbors with Euclidean distance.
//!
//! Fitting stores the training set; prediction averages the labels of the
//! `k` nearest stored rows. Distance ties are broken toward the lower
//! example index. Staged fitting yields snapshots for `k = 1..=k_max` over
//! shared storage.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{FittedModel, ModelStream};
use crate::error::{Error, Result};

/// Hyperparameters of the nearest-neighbor model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KnnSpec {
    pub k: usize,
}

impl Default for KnnSpec {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// A fitted nearest-neighbor model (a reference to its training set).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KnnModel {
    pub train_features: Arc<Array2<f64>>,
    pub train_labels: Arc<Vec<usize>>,
    pub k: usize,
    pub n_classes: usize,
}

impl KnnModel {
    pub fn input_dim(&self) -> usize {
        self.train_features.ncols()
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = x.nrows();
        let mut out = Array2::zeros((n, self.n_classes));
        let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(self.k + 1);
        for i in 0..n {
            nearest.clear();
            self.k_nearest(x.row(i), &mut nearest);
            let weight = 1.0 / nearest.len() as f64;
            for &(_, idx) in &nearest {
                out[[i, self.train_labels[idx]]] += weight;
            }
        }
        out
    }

    /// Collect the k nearest stored rows by `(squared distance, index)`.
    fn k_nearest(&self, query: ArrayView1<'_, f64>, nearest: &mut Vec<(f64, usize)>) {
        let stored = &self.train_features;
        for idx in 0..stored.nrows() {
            let mut d2 = 0.0;
            for (a, b) in stored.row(idx).iter().zip(query.iter()) {
                let diff = a - b;
                d2 += diff * diff;
            }
            let candidate = (d2, idx);
            if nearest.len() < self.k {
                let pos = nearest.partition_point(|&e| e < candidate);
                nearest.insert(pos, candidate);
            } else if candidate < *nearest.last().unwrap() {
                let pos = nearest.partition_point(|&e| e < candidate);
                nearest.insert(pos, candidate);
                nearest.pop();
            }
        }
    }
}

pub(super) fn staged_fit(
    spec: &KnnSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
) -> Result<ModelStream> {
    if spec.k == 0 {
        return Err(Error::Model("k must be at least 1".into()));
    }
    if spec.k > x.nrows() {
        return Err(Error::Model(format!(
            "k = {} larger than the {} training rows",
            spec.k,
            x.nrows()
        )));
    }
    let features = Arc::new(x.to_owned());
    let labels = Arc::new(y.to_vec());
    let k_max = spec.k;
    let iter = (1..=k_max).map(move |k| {
        FittedModel::Knn(KnnModel {
            train_features: features.clone(),
            train_labels: labels.clone(),
            k,
            n_classes,
        })
    });
    Ok(ModelStream::new(Box::new(iter)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BaseModelSpec;

    #[test]
    fn k1_on_training_point_is_one_hot() {
        let x = Array2::from_shape_vec((4, 2), vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0])
            .unwrap();
        let y = vec![0, 1, 1, 0];
        let model = BaseModelSpec::Knn(KnnSpec { k: 1 })
            .fit(x.view(), &y, 2)
            .unwrap();
        let p = model.predict_proba(x.view()).unwrap();
        for (i, &label) in y.iter().enumerate() {
            assert_eq!(p[[i, label]], 1.0);
            assert_eq!(p[[i, 1 - label]], 0.0);
        }
    }

    #[test]
    fn distance_ties_break_toward_lower_index() {
        // two stored points at identical coordinates but different labels
        let x = Array2::from_shape_vec((3, 1), vec![0.0, 0.0, 5.0]).unwrap();
        let y = vec![1, 0, 0];
        let model = BaseModelSpec::Knn(KnnSpec { k: 1 })
            .fit(x.view(), &y, 2)
            .unwrap();
        let q = Array2::from_shape_vec((1, 1), vec![0.0]).unwrap();
        let p = model.predict_proba(q.view()).unwrap();
        // index 0 (label 1) wins the tie
        assert_eq!(p[[0, 1]], 1.0);
    }

    #[test]
    fn staged_snapshots_grow_k() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let ks: Vec<usize> = BaseModelSpec::Knn(KnnSpec { k: 4 })
            .staged_fit(x.view(), &y, 2)
            .unwrap()
            .map(|m| m.iteration())
            .collect();
        assert_eq!(ks, vec![1, 2, 3, 4]);
    }

    #[test]
    fn k_larger_than_training_set_is_rejected() {
        let x = Array2::zeros((3, 1));
        let y = vec![0, 1, 0];
        assert!(BaseModelSpec::Knn(KnnSpec { k: 10 })
            .fit(x.view(), &y, 2)
            .is_err());
    }
}
