//! Base models: a kernelizable SGD linear model, gradient boosted trees and
//! k-nearest neighbors.
//!
//! All three families share one contract: [`BaseModelSpec::fit`] produces an
//! immutable [`FittedModel`] whose `predict_proba` rows lie on the simplex,
//! and [`BaseModelSpec::staged_fit`] produces a [`ModelStream`] of snapshots,
//! one per training iteration (epoch for the linear model, boosting round for
//! trees, growing `k` for nearest neighbors). The last snapshot of a stream
//! equals the one-shot fit.
//!
//! Iterative families run at most [`MAX_ITERATIONS`] iterations with early
//! stopping when the log-loss on an internal holdout (10% of the training
//! rows, carved deterministically from the seed) fails to improve for
//! [`EARLY_STOP_PATIENCE`] consecutive iterations.

mod gbt;
mod klm;
mod knn;

pub use gbt::{GbtModel, GbtSpec, Tree, TreeNode};
pub use klm::{KlmModel, KlmSpec};
pub use knn::{KnnModel, KnnSpec};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Iteration cap for iterative model families.
pub const MAX_ITERATIONS: usize = 1000;

/// Early stopping triggers after this many consecutive iterations without
/// strict improvement of the holdout log-loss.
pub const EARLY_STOP_PATIENCE: usize = 5;

/// Fraction of the training rows carved out as the early-stopping holdout.
pub const HOLDOUT_FRACTION: f64 = 0.1;

/// Predicted probabilities are clamped to at least this value inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Serialization format version embedded in model JSON documents.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Model family identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Klm,
    Gbt,
    Knn,
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Klm => "klm",
            ModelFamily::Gbt => "gbt",
            ModelFamily::Knn => "knn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "klm" => Ok(ModelFamily::Klm),
            "gbt" => Ok(ModelFamily::Gbt),
            "knn" => Ok(ModelFamily::Knn),
            _ => Err(Error::UnknownIdentifier {
                what: "model family",
                got: s.to_string(),
                options: "klm, gbt, knn".into(),
            }),
        }
    }
}

/// Hyperparameters plus seed for one base model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BaseModelSpec {
    Klm(KlmSpec),
    Gbt(GbtSpec),
    Knn(KnnSpec),
}

impl BaseModelSpec {
    pub fn family(&self) -> ModelFamily {
        match self {
            BaseModelSpec::Klm(_) => ModelFamily::Klm,
            BaseModelSpec::Gbt(_) => ModelFamily::Gbt,
            BaseModelSpec::Knn(_) => ModelFamily::Knn,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            BaseModelSpec::Klm(s) => s.seed,
            BaseModelSpec::Gbt(s) => s.seed,
            BaseModelSpec::Knn(_) => 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            BaseModelSpec::Klm(s) => s.seed = seed,
            BaseModelSpec::Gbt(s) => s.seed = seed,
            BaseModelSpec::Knn(_) => {}
        }
        self
    }

    /// Upper bound on the number of staged snapshots.
    pub fn iteration_cap(&self) -> usize {
        match self {
            BaseModelSpec::Klm(s) => s.max_iter.min(MAX_ITERATIONS),
            BaseModelSpec::Gbt(s) => s.max_iter.min(MAX_ITERATIONS),
            BaseModelSpec::Knn(s) => s.k,
        }
    }

    /// Train on `(x, y)` with labels in `[0, n_classes)`.
    pub fn fit(&self, x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize) -> Result<FittedModel> {
        let mut stream = self.staged_fit(x, y, n_classes)?;
        let mut last = None;
        for model in &mut stream {
            last = Some(model);
        }
        last.ok_or_else(|| Error::Model("training produced no iterations".into()))
    }

    /// Train progressively, yielding one immutable snapshot per iteration.
    /// At most one mutable training state is live at a time.
    pub fn staged_fit(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
    ) -> Result<ModelStream> {
        validate_training_set(x, y, n_classes)?;
        match self {
            BaseModelSpec::Klm(spec) => klm::staged_fit(spec, x, y, n_classes),
            BaseModelSpec::Gbt(spec) => gbt::staged_fit(spec, x, y, n_classes),
            BaseModelSpec::Knn(spec) => knn::staged_fit(spec, x, y, n_classes),
        }
    }
}

fn validate_training_set(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize) -> Result<()> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Model("empty training matrix".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Model(format!(
            "{} rows vs {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("training features contain non-finite values".into()));
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Model(format!(
            "label {bad} outside [0, {n_classes})"
        )));
    }
    let first = y[0];
    if y.iter().all(|&l| l == first) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Lazy sequence of fitted snapshots, one per training iteration.
pub struct ModelStream {
    inner: Box<dyn Iterator<Item = FittedModel> + Send>,
}

impl ModelStream {
    pub(crate) fn new(inner: Box<dyn Iterator<Item = FittedModel> + Send>) -> Self {
        Self { inner }
    }
}

impl Iterator for ModelStream {
    type Item = FittedModel;

    fn next(&mut self) -> Option<FittedModel> {
        self.inner.next()
    }
}

/// An immutable trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedModel {
    Klm(KlmModel),
    Gbt(GbtModel),
    Knn(KnnModel),
}

impl FittedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            FittedModel::Klm(_) => ModelFamily::Klm,
            FittedModel::Gbt(_) => ModelFamily::Gbt,
            FittedModel::Knn(_) => ModelFamily::Knn,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            FittedModel::Klm(m) => m.n_classes,
            FittedModel::Gbt(m) => m.n_classes,
            FittedModel::Knn(m) => m.n_classes,
        }
    }

    /// Expected number of input feature columns.
    pub fn input_dim(&self) -> usize {
        match self {
            FittedModel::Klm(m) => m.input_dim,
            FittedModel::Gbt(m) => m.input_dim,
            FittedModel::Knn(m) => m.input_dim(),
        }
    }

    /// 1-based index of the training iteration this snapshot came from.
    pub fn iteration(&self) -> usize {
        match self {
            FittedModel::Klm(m) => m.iteration,
            FittedModel::Gbt(m) => m.rounds_used,
            FittedModel::Knn(m) => m.k,
        }
    }

    /// The learning rate the snapshot was trained with, when meaningful.
    pub fn learning_rate(&self) -> Option<f64> {
        match self {
            FittedModel::Klm(m) => Some(m.learning_rate),
            FittedModel::Gbt(m) => Some(m.learning_rate),
            FittedModel::Knn(_) => None,
        }
    }

    /// Class probabilities; rows are non-negative and sum to one.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        match self {
            FittedModel::Klm(m) => Ok(m.predict_proba(x)),
            FittedModel::Gbt(m) => Ok(m.predict_proba(x)),
            FittedModel::Knn(m) => Ok(m.predict_proba(x)),
        }
    }

    /// Raw per-class decision scores: logits for klm and gbt, probabilities
    /// for knn (which has no logits).
    pub fn decision_scores(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        match self {
            FittedModel::Klm(m) => Ok(m.raw_scores(x)),
            FittedModel::Gbt(m) => Ok(m.raw_scores(x)),
            FittedModel::Knn(m) => Ok(m.predict_proba(x)),
        }
    }

    /// Gradient of the predicted probability of `class` w.r.t. the input:
    /// analytic for the linear model (chain rule through the random Fourier
    /// features when present), central finite differences with step
    /// `h_j = 1e-3 * (1 + |x_j|)` for the other families.
    pub fn input_gradient(&self, x_row: ArrayView1<'_, f64>, class: usize) -> Result<Array1<f64>> {
        if x_row.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x_row.len(),
            });
        }
        if class >= self.n_classes() {
            return Err(Error::Model(format!("class {class} out of range")));
        }
        match self {
            FittedModel::Klm(m) => Ok(m.input_gradient(x_row, class)),
            _ => finite_difference_gradient(self, x_row, class),
        }
    }

    pub fn supports_parameter_gradient(&self) -> bool {
        matches!(self, FittedModel::Klm(_))
    }

    /// Gradient of the per-example regularized log-loss w.r.t. the weight
    /// matrix, flattened row-major; linear model only.
    pub fn parameter_gradient(&self, x_row: ArrayView1<'_, f64>, y: usize) -> Result<Array1<f64>> {
        match self {
            FittedModel::Klm(m) => {
                if x_row.len() != m.input_dim {
                    return Err(Error::DimensionMismatch {
                        expected: m.input_dim,
                        got: x_row.len(),
                    });
                }
                Ok(m.parameter_gradient(x_row, y))
            }
            _ => Err(Error::MissingCapability {
                family: self.family().name(),
                capability: "parameter gradients",
            }),
        }
    }

    /// `g^T (H + damping I)^{-1} g` per row, with `H` the Gauss-Newton matrix
    /// of the regularized empirical risk on `(x, y)`; linear model only.
    pub fn self_influence(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        damping: f64,
    ) -> Result<Vec<f64>> {
        match self {
            FittedModel::Klm(m) => m.self_influence(x, y, damping),
            _ => Err(Error::MissingCapability {
                family: self.family().name(),
                capability: "self influence",
            }),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Versioned<'a> {
            version: u32,
            model: &'a FittedModel,
        }
        Ok(serde_json::to_string(&Versioned {
            version: MODEL_FORMAT_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Versioned {
            version: u32,
            model: FittedModel,
        }
        let v: Versioned = serde_json::from_str(json)?;
        if v.version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format version {}",
                v.version
            )));
        }
        Ok(v.model)
    }

    fn check_dim(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }
}

/// Central finite differences on `predict_proba`.
fn finite_difference_gradient(
    model: &FittedModel,
    x_row: ArrayView1<'_, f64>,
    class: usize,
) -> Result<Array1<f64>> {
    let d = x_row.len();
    let mut probes = Array2::zeros((2 * d, d));
    let mut steps = Vec::with_capacity(d);
    for j in 0..d {
        let h = 1e-3 * (1.0 + x_row[j].abs());
        steps.push(h);
        probes.row_mut(2 * j).assign(&x_row);
        probes[[2 * j, j]] += h;
        probes.row_mut(2 * j + 1).assign(&x_row);
        probes[[2 * j + 1, j]] -= h;
    }
    let p = model.predict_proba(probes.view())?;
    let mut grad = Array1::zeros(d);
    for j in 0..d {
        grad[j] = (p[[2 * j, class]] - p[[2 * j + 1, class]]) / (2.0 * steps[j]);
    }
    Ok(grad)
}

/// Row-wise softmax with max subtraction.
pub(crate) fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    z
}

/// Mean log-loss with the crate-wide probability clamp.
pub fn log_loss(probabilities: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total -= probabilities[[i, y]].max(PROB_CLAMP).ln();
    }
    total / n as f64
}

/// Deterministic early-stopping holdout carve: returns `(fit_rows, holdout_rows)`.
pub(crate) fn carve_holdout(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let holdout_size = (HOLDOUT_FRACTION * n as f64).floor() as usize;
    if holdout_size == 0 || holdout_size >= n {
        return ((0..n).collect(), Vec::new());
    }
    let mut rows: Vec<usize> = (0..n).collect();
    let mut rng = seeding::rng(seeding::derive_labeled(seed, "holdout", 0));
    rows.shuffle(&mut rng);
    let holdout = rows[..holdout_size].to_vec();
    let mut fit = rows[holdout_size..].to_vec();
    fit.sort_unstable();
    (fit, holdout)
}

/// Tracks early stopping: strict improvements reset the streak.
pub(crate) struct EarlyStopping {
    best: f64,
    streak: usize,
    active: bool,
}

impl EarlyStopping {
    pub(crate) fn new(active: bool) -> Self {
        Self {
            best: f64::INFINITY,
            streak: 0,
            active,
        }
    }

    /// Record a holdout loss; returns true when training should stop.
    pub(crate) fn should_stop(&mut self, loss: f64) -> bool {
        if !self.active {
            return false;
        }
        if loss < self.best {
            self.best = loss;
            self.streak = 0;
        } else {
            self.streak += 1;
        }
        self.streak >= EARLY_STOP_PATIENCE
    }
}

/// Hyperparameter search spaces for random search.
pub mod search_space {
    use super::*;

    /// Log-uniform range of the linear model's l2 penalty.
    pub const KLM_ALPHA: (f64, f64) = (1e-5, 1e-1);
    /// Log-uniform range of the linear model's learning rate.
    pub const KLM_LEARNING_RATE: (f64, f64) = (1e-3, 1.0);
    /// Uniform range of the boosted trees' l2 leaf penalty.
    pub const GBT_LAMBDA: (f64, f64) = (0.0, 100.0);
    /// Log-uniform range of the boosted trees' learning rate.
    pub const GBT_LEARNING_RATE: (f64, f64) = (1e-5, 1e-1);

    pub fn log_uniform(range: (f64, f64), rng: &mut impl Rng) -> f64 {
        let (lo, hi) = range;
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    }

    pub fn uniform(range: (f64, f64), rng: &mut impl Rng) -> f64 {
        let (lo, hi) = range;
        lo + rng.random::<f64>() * (hi - lo)
    }

    /// Draw hyperparameters for one family; the caller assigns the seed.
    pub fn sample(family: ModelFamily, rng: &mut impl Rng) -> BaseModelSpec {
        match family {
            ModelFamily::Klm => BaseModelSpec::Klm(KlmSpec {
                alpha: log_uniform(KLM_ALPHA, rng),
                learning_rate: log_uniform(KLM_LEARNING_RATE, rng),
                ..KlmSpec::default()
            }),
            ModelFamily::Gbt => BaseModelSpec::Gbt(GbtSpec {
                lambda: uniform(GBT_LAMBDA, rng),
                learning_rate: log_uniform(GBT_LEARNING_RATE, rng),
                ..GbtSpec::default()
            }),
            ModelFamily::Knn => BaseModelSpec::Knn(KnnSpec::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn families_fit_separable_blobs() {
        let ds = synth::gaussian_blobs(&synth::BlobsConfig {
            n: 200,
            n_classes: 2,
            dim: 2,
            separation: 10.0,
            std: 1.0,
            seed: 3,
            class_weights: None,
        });
        let specs = [
            BaseModelSpec::Klm(KlmSpec::default()),
            BaseModelSpec::Gbt(GbtSpec::default()),
        ];
        for spec in specs {
            let model = spec
                .fit(ds.features(), ds.noisy_labels(), ds.n_classes())
                .unwrap();
            let p = model.predict_proba(ds.features()).unwrap();
            let mut correct = 0;
            for (i, &y) in ds.noisy_labels().iter().enumerate() {
                let pred = (0..2).max_by(|&a, &b| p[[i, a]].partial_cmp(&p[[i, b]]).unwrap());
                if pred == Some(y) {
                    correct += 1;
                }
            }
            let acc = correct as f64 / ds.n() as f64;
            assert!(acc >= 0.99, "{:?} accuracy {acc}", spec.family());
        }
    }

    #[test]
    fn predict_proba_rows_are_on_the_simplex() {
        let ds = synth::gaussian_blobs(&synth::BlobsConfig {
            n: 120,
            n_classes: 3,
            dim: 2,
            separation: 2.0,
            std: 1.5,
            seed: 5,
            class_weights: None,
        });
        let specs = [
            BaseModelSpec::Klm(KlmSpec::default()),
            BaseModelSpec::Gbt(GbtSpec {
                max_iter: 30,
                ..GbtSpec::default()
            }),
            BaseModelSpec::Knn(KnnSpec::default()),
        ];
        for spec in specs {
            let model = spec
                .fit(ds.features(), ds.noisy_labels(), ds.n_classes())
                .unwrap();
            let p = model.predict_proba(ds.features()).unwrap();
            for row in p.rows() {
                assert!(row.iter().all(|&v| v >= 0.0));
                let sum: f64 = row.sum();
                assert!((sum - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn staged_final_snapshot_equals_fit() {
        let ds = synth::gaussian_blobs(&synth::BlobsConfig {
            n: 150,
            n_classes: 3,
            dim: 2,
            separation: 3.0,
            std: 1.0,
            seed: 8,
            class_weights: None,
        });
        for spec in [
            BaseModelSpec::Klm(KlmSpec {
                max_iter: 40,
                ..KlmSpec::default()
            }),
            BaseModelSpec::Gbt(GbtSpec {
                max_iter: 40,
                ..GbtSpec::default()
            }),
            BaseModelSpec::Knn(KnnSpec { k: 7 }),
        ] {
            let fitted = spec
                .fit(ds.features(), ds.noisy_labels(), ds.n_classes())
                .unwrap();
            let last = spec
                .staged_fit(ds.features(), ds.noisy_labels(), ds.n_classes())
                .unwrap()
                .last()
                .unwrap();
            let a = fitted.predict_proba(ds.features()).unwrap();
            let b = last.predict_proba(ds.features()).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let x = Array2::zeros((5, 2));
        let y = vec![1usize; 5];
        let err = BaseModelSpec::Klm(KlmSpec::default())
            .fit(x.view(), &y, 3)
            .unwrap_err();
        assert!(matches!(err, Error::SingleClass));
    }

    #[test]
    fn model_json_round_trip() {
        let ds = synth::gaussian_blobs(&synth::BlobsConfig {
            n: 60,
            n_classes: 2,
            dim: 2,
            separation: 4.0,
            std: 1.0,
            seed: 2,
            class_weights: None,
        });
        for spec in [
            BaseModelSpec::Klm(KlmSpec {
                max_iter: 10,
                ..KlmSpec::default()
            }),
            BaseModelSpec::Gbt(GbtSpec {
                max_iter: 10,
                ..GbtSpec::default()
            }),
            BaseModelSpec::Knn(KnnSpec { k: 3 }),
        ] {
            let model = spec
                .fit(ds.features(), ds.noisy_labels(), ds.n_classes())
                .unwrap();
            let json = model.to_json().unwrap();
            assert!(json.contains("\"version\":1"));
            let back = FittedModel::from_json(&json).unwrap();
            let a = model.predict_proba(ds.features()).unwrap();
            let b = back.predict_proba(ds.features()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn search_space_samples_stay_in_bounds() {
        let mut rng = seeding::rng(1);
        for _ in 0..200 {
            match search_space::sample(ModelFamily::Klm, &mut rng) {
                BaseModelSpec::Klm(s) => {
                    assert!(s.alpha >= 1e-5 && s.alpha <= 1e-1);
                    assert!(s.learning_rate >= 1e-3 && s.learning_rate <= 1.0);
                }
                _ => unreachable!(),
            }
            match search_space::sample(ModelFamily::Gbt, &mut rng) {
                BaseModelSpec::Gbt(s) => {
                    assert!(s.lambda >= 0.0 && s.lambda <= 100.0);
                    assert!(s.learning_rate >= 1e-5 && s.learning_rate <= 1e-1);
                }
                _ => unreachable!(),
            }
        }
    }
}
