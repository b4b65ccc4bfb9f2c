//! The detect-and-handle pipeline: score, split, filter or relabel, train a
//! final estimator, and search hyperparameters.
//!
//! Splitting takes the bottom `floor(q * n)` scores as untrusted, either
//! globally or class by class. Handlers either drop the untrusted rows or
//! replace their labels with ground truth (an oracle reviewer). Random
//! search draws detector and estimator hyperparameters independently and
//! sweeps the whole quantile grid for every draw, selecting on validation
//! log-loss.

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SplitTags, ValidationKind};
use crate::detector::ModelProbingDetector;
use crate::error::{Error, Result};
use crate::models::{
    log_loss, search_space, BaseModelSpec, FittedModel, GbtModel, ModelFamily, PROB_CLAMP,
};
use crate::seeding;

/// The split-threshold grid searched by the benchmark.
pub const QUANTILE_GRID: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Whether the quantile applies to all scores at once or within each
/// observed class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Global,
    PerClass,
}

impl SplitMode {
    pub fn name(&self) -> &'static str {
        match self {
            SplitMode::Global => "global",
            SplitMode::PerClass => "per_class",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SplitMode::Global),
            "per_class" => Ok(SplitMode::PerClass),
            _ => Err(Error::UnknownIdentifier {
                what: "split mode",
                got: s.to_string(),
                options: "global, per_class".into(),
            }),
        }
    }
}

/// Quantile threshold configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of examples marked untrusted; must lie on [`QUANTILE_GRID`].
    pub q: f64,
    pub mode: SplitMode,
}

impl SplitConfig {
    pub fn new(q: f64, mode: SplitMode) -> Result<Self> {
        if !QUANTILE_GRID.iter().any(|&g| (g - q).abs() < 1e-9) {
            return Err(Error::Pipeline(format!(
                "quantile {q} is not on the grid {QUANTILE_GRID:?}"
            )));
        }
        Ok(Self { q, mode })
    }
}

/// Trusted/untrusted partition of the training indices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitResult {
    pub trusted: Vec<usize>,
    pub untrusted: Vec<usize>,
}

/// Split by trust scores: the bottom `floor(q * n)` scores become untrusted,
/// ties broken by lower index first. Per-class mode applies the quantile
/// within each observed class.
pub fn split_by_scores(scores: &[f64], cfg: &SplitConfig, labels: &[usize]) -> SplitResult {
    assert_eq!(scores.len(), labels.len(), "scores and labels must align");
    let n = scores.len();
    let mut untrusted_mask = vec![false; n];

    let mark_bottom = |rows: &mut Vec<usize>, count: usize, mask: &mut Vec<bool>| {
        rows.sort_by(|&a, &b| {
            scores[a]
                .partial_cmp(&scores[b])
                .unwrap()
                .then(a.cmp(&b))
        });
        for &row in rows.iter().take(count) {
            mask[row] = true;
        }
    };

    match cfg.mode {
        SplitMode::Global => {
            let mut rows: Vec<usize> = (0..n).collect();
            let count = (cfg.q * n as f64).floor() as usize;
            mark_bottom(&mut rows, count, &mut untrusted_mask);
        }
        SplitMode::PerClass => {
            let k = labels.iter().copied().max().map_or(0, |m| m + 1);
            for class in 0..k {
                let mut rows: Vec<usize> =
                    (0..n).filter(|&i| labels[i] == class).collect();
                let count = (cfg.q * rows.len() as f64).floor() as usize;
                mark_bottom(&mut rows, count, &mut untrusted_mask);
            }
        }
    }

    let mut trusted = Vec::new();
    let mut untrusted = Vec::new();
    for (i, &u) in untrusted_mask.iter().enumerate() {
        if u {
            untrusted.push(i);
        } else {
            trusted.push(i);
        }
    }
    SplitResult { trusted, untrusted }
}

/// What to do with the untrusted rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handler {
    /// Drop untrusted rows from training.
    Filter,
    /// Keep all rows; untrusted ones get their ground-truth label
    /// (simulates an oracle reviewer).
    Relabel,
}

impl Handler {
    pub fn name(&self) -> &'static str {
        match self {
            Handler::Filter => "filter",
            Handler::Relabel => "relabel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(Handler::Filter),
            "relabel" => Ok(Handler::Relabel),
            _ => Err(Error::UnknownIdentifier {
                what: "handler",
                got: s.to_string(),
                options: "filter, relabel".into(),
            }),
        }
    }
}

/// Result of applying a handler to a training dataset.
#[derive(Clone, Debug)]
pub struct HandledDataset {
    pub dataset: Dataset,
    /// Observed classes that lost all their rows (filtering only); a
    /// warning recorded in reports, not an error.
    pub vanished_classes: Vec<usize>,
    /// Number of labels changed (relabeling only).
    pub relabeled: usize,
}

/// Keep only the trusted rows.
pub fn handle_filter(train: &Dataset, split: &SplitResult) -> HandledDataset {
    let dataset = train.subset(&split.trusted);
    let mut present = vec![false; train.n_classes()];
    for &label in dataset.noisy_labels() {
        present[label] = true;
    }
    let mut had = vec![false; train.n_classes()];
    for &label in train.noisy_labels() {
        had[label] = true;
    }
    let vanished_classes = (0..train.n_classes())
        .filter(|&c| had[c] && !present[c])
        .collect();
    HandledDataset {
        dataset,
        vanished_classes,
        relabeled: 0,
    }
}

/// Keep every row; untrusted rows get their ground-truth label.
pub fn handle_relabel(train: &Dataset, split: &SplitResult) -> Result<HandledDataset> {
    let clean = train.clean_labels().ok_or(Error::CleanLabelsRequired)?;
    let relabeled = split
        .untrusted
        .iter()
        .filter(|&&i| train.noisy_labels()[i] != clean[i])
        .count();
    let dataset = train.relabel_rows(&split.untrusted)?;
    Ok(HandledDataset {
        dataset,
        vanished_classes: Vec::new(),
        relabeled,
    })
}

/// Where trust scores come from.
#[derive(Clone, Debug)]
pub enum TrustSource {
    Detector(ModelProbingDetector),
    /// Uniform random scores (the `random` baseline).
    Random { seed: u64 },
    /// `1` for correctly labeled rows, `0` for mislabeled ones; needs
    /// ground truth. Splitting at the noise rate reproduces the silver
    /// baseline.
    Oracle,
}

impl TrustSource {
    fn scores(&self, train: &Dataset) -> Result<(Vec<f64>, Option<String>)> {
        match self {
            TrustSource::Detector(detector) => {
                let trust = detector.trust_scores(
                    train.features(),
                    train.noisy_labels(),
                    train.n_classes(),
                )?;
                Ok((trust.scores, Some(trust.fingerprint)))
            }
            TrustSource::Random { seed } => {
                let mut rng = seeding::rng(*seed);
                Ok(((0..train.n()).map(|_| rng.random::<f64>()).collect(), None))
            }
            TrustSource::Oracle => {
                let flipped = train
                    .is_mislabeled()
                    .ok_or(Error::CleanLabelsRequired)?;
                Ok((
                    flipped.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect(),
                    None,
                ))
            }
        }
    }
}

/// Outcome of one full pipeline run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineResult {
    pub detector_fingerprint: Option<String>,
    pub n_trusted: usize,
    pub n_untrusted: usize,
    pub per_class_trusted: Vec<usize>,
    pub vanished_classes: Vec<usize>,
    pub relabeled: usize,
    pub validation_loss: f64,
    pub test_loss: f64,
}

/// Run detect -> split -> handle -> fit -> evaluate.
pub fn run_pipeline(
    ds: &Dataset,
    tags: &SplitTags,
    source: &TrustSource,
    split_cfg: &SplitConfig,
    handler: Handler,
    estimator: &BaseModelSpec,
) -> Result<PipelineResult> {
    let train_rows = tags.train_rows();
    if train_rows.is_empty() {
        return Err(Error::Pipeline("empty training split".into()));
    }
    let train = ds.subset(&train_rows);
    let (scores, fingerprint) = source.scores(&train)?;
    let split = split_by_scores(&scores, split_cfg, train.noisy_labels());

    let mut per_class_trusted = vec![0usize; ds.n_classes()];
    for &i in &split.trusted {
        per_class_trusted[train.noisy_labels()[i]] += 1;
    }

    let handled = match handler {
        Handler::Filter => handle_filter(&train, &split),
        Handler::Relabel => handle_relabel(&train, &split)?,
    };

    let model = fit_estimator_or_fallback(
        &handled.dataset,
        estimator,
    )?;
    let (validation_loss, test_loss) = holdout_losses(ds, tags, &model)?;

    Ok(PipelineResult {
        detector_fingerprint: fingerprint,
        n_trusted: split.trusted.len(),
        n_untrusted: split.untrusted.len(),
        per_class_trusted,
        vanished_classes: handled.vanished_classes,
        relabeled: handled.relabeled,
        validation_loss,
        test_loss,
    })
}

/// Fit the estimator; degenerate training sets (fewer than two observed
/// classes after aggressive filtering) fall back to a constant
/// prior-probability predictor so grid trials always produce finite losses.
pub(crate) fn fit_estimator_or_fallback(
    train: &Dataset,
    spec: &BaseModelSpec,
) -> Result<FittedModel> {
    let distinct: BTreeSet<usize> = train.noisy_labels().iter().copied().collect();
    if train.n() == 0 || distinct.len() < 2 {
        let k = train.n_classes();
        let mut counts = vec![0.0_f64; k];
        for &label in train.noisy_labels() {
            counts[label] += 1.0;
        }
        let total: f64 = counts.iter().sum::<f64>().max(1.0);
        let base_scores =
            Array1::from_iter(counts.iter().map(|c| (c / total).max(PROB_CLAMP).ln()));
        return Ok(FittedModel::Gbt(GbtModel {
            trees: Arc::new(Vec::new()),
            rounds_used: 0,
            base_scores,
            lambda: 0.0,
            learning_rate: 0.0,
            n_classes: k,
            input_dim: train.dim(),
        }));
    }
    spec.fit(train.features(), train.noisy_labels(), train.n_classes())
}

/// Validation and test log-loss of a fitted model under the split tags.
pub(crate) fn holdout_losses(
    ds: &Dataset,
    tags: &SplitTags,
    model: &FittedModel,
) -> Result<(f64, f64)> {
    let test_rows = tags.test_rows();
    if test_rows.is_empty() {
        return Err(Error::Pipeline("empty test split".into()));
    }
    let test_labels = eval_labels(ds, &test_rows)?;
    let test_x = ds.subset(&test_rows);
    let test_loss = log_loss(model.predict_proba(test_x.features())?.view(), &test_labels);

    let validation_loss = match tags.validation_kind {
        ValidationKind::Oracle => test_loss,
        kind => {
            let val_rows = tags.validation_rows();
            if val_rows.is_empty() {
                return Err(Error::Pipeline("empty validation split".into()));
            }
            let labels: Vec<usize> = match kind {
                ValidationKind::Noisy => {
                    val_rows.iter().map(|&i| ds.noisy_labels()[i]).collect()
                }
                ValidationKind::Clean => {
                    let clean = ds.clean_labels().ok_or(Error::CleanLabelsRequired)?;
                    val_rows.iter().map(|&i| clean[i]).collect()
                }
                ValidationKind::Oracle => unreachable!(),
            };
            let val_x = ds.subset(&val_rows);
            log_loss(model.predict_proba(val_x.features())?.view(), &labels)
        }
    };
    Ok((validation_loss, test_loss))
}

/// Test rows are scored against ground truth when available.
fn eval_labels(ds: &Dataset, rows: &[usize]) -> Result<Vec<usize>> {
    let labels = match ds.clean_labels() {
        Some(clean) => rows.iter().map(|&i| clean[i]).collect(),
        None => rows.iter().map(|&i| ds.noisy_labels()[i]).collect(),
    };
    Ok(labels)
}

/// Random-search budget: detector draws times estimator draws.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SearchBudget {
    pub n_detector: usize,
    pub n_estimator: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            n_detector: 12,
            n_estimator: 12,
        }
    }
}

/// One evaluated `(detector draw, estimator draw, q)` cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub detector_draw: usize,
    pub estimator_draw: usize,
    pub q: f64,
    pub detector_spec: BaseModelSpec,
    pub estimator_spec: BaseModelSpec,
    pub detector_fingerprint: Option<String>,
    pub validation_loss: f64,
    pub test_loss: f64,
    pub n_trusted: usize,
    pub n_untrusted: usize,
    pub per_class_trusted: Vec<usize>,
    pub vanished_classes: Vec<usize>,
    pub seed: u64,
}

/// Draw the estimator spec for draw `j`; shared with the baselines so a
/// no-op pipeline reproduces the `none` baseline exactly.
pub(crate) fn estimator_draw(family: ModelFamily, master_seed: u64, j: usize) -> BaseModelSpec {
    let mut rng = seeding::rng(seeding::derive_labeled(master_seed, "estimator_params", j as u64));
    search_space::sample(family, &mut rng)
        .with_seed(seeding::derive_labeled(master_seed, "estimator_seed", j as u64))
}

/// Random search over detector and estimator hyperparameters with a full
/// quantile-grid sweep per draw pair. Selection minimizes validation
/// log-loss; ties prefer the smaller quantile, then the earlier trial.
pub fn random_search(
    ds: &Dataset,
    tags: &SplitTags,
    detector_template: &ModelProbingDetector,
    estimator_family: ModelFamily,
    handler: Handler,
    budget: SearchBudget,
    grid: &[f64],
    mode: SplitMode,
    seed: u64,
) -> Result<(TrialRecord, Vec<TrialRecord>)> {
    if tags.validation_kind != ValidationKind::Oracle && tags.validation_rows().is_empty() {
        return Err(Error::Pipeline("empty validation split".into()));
    }
    let train_rows = tags.train_rows();
    let train = ds.subset(&train_rows);

    let mut trials = Vec::new();
    let mut trial_index = 0usize;
    for i in 0..budget.n_detector {
        let mut detector = detector_template.clone();
        let mut rng =
            seeding::rng(seeding::derive_labeled(seed, "detector_params", i as u64));
        detector.model = search_space::sample(detector.model.family(), &mut rng)
            .with_seed(seeding::derive_labeled(seed, "detector_model", i as u64));
        detector.ensemble.seed =
            seeding::derive_labeled(seed, "detector_ensemble", i as u64);

        let trust = detector.trust_scores(
            train.features(),
            train.noisy_labels(),
            train.n_classes(),
        )?;

        for j in 0..budget.n_estimator {
            let estimator = estimator_draw(estimator_family, seed, j);
            for &q in grid {
                let cfg = SplitConfig::new(q, mode)?;
                let split = split_by_scores(&trust.scores, &cfg, train.noisy_labels());
                let mut per_class_trusted = vec![0usize; ds.n_classes()];
                for &row in &split.trusted {
                    per_class_trusted[train.noisy_labels()[row]] += 1;
                }
                let handled = match handler {
                    Handler::Filter => handle_filter(&train, &split),
                    Handler::Relabel => handle_relabel(&train, &split)?,
                };
                let model = fit_estimator_or_fallback(&handled.dataset, &estimator)?;
                let (validation_loss, test_loss) = holdout_losses(ds, tags, &model)?;
                trials.push(TrialRecord {
                    trial: trial_index,
                    detector_draw: i,
                    estimator_draw: j,
                    q,
                    detector_spec: detector.model.clone(),
                    estimator_spec: estimator.clone(),
                    detector_fingerprint: Some(trust.fingerprint.clone()),
                    validation_loss,
                    test_loss,
                    n_trusted: split.trusted.len(),
                    n_untrusted: split.untrusted.len(),
                    per_class_trusted,
                    vanished_classes: handled.vanished_classes,
                    seed,
                });
                trial_index += 1;
            }
        }
    }

    let best = select_best(&trials)?;
    Ok((best, trials))
}

/// Minimal validation loss; ties prefer smaller q, then earlier trial.
pub(crate) fn select_best(trials: &[TrialRecord]) -> Result<TrialRecord> {
    trials
        .iter()
        .min_by(|a, b| {
            a.validation_loss
                .partial_cmp(&b.validation_loss)
                .unwrap()
                .then(a.q.partial_cmp(&b.q).unwrap())
                .then(a.trial.cmp(&b.trial))
        })
        .cloned()
        .ok_or_else(|| Error::Pipeline("random search produced no trials".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::split;
    use crate::models::KlmSpec;
    use crate::noise::inject_ncar;
    use crate::synth;

    fn scored_fixture() -> (Vec<f64>, Vec<usize>) {
        let scores = vec![0.9, 0.1, 0.5, 0.3, 0.8, 0.2, 0.7, 0.4, 0.6, 0.0];
        let labels = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        (scores, labels)
    }

    #[test]
    fn q_zero_keeps_everything_trusted() {
        let (scores, labels) = scored_fixture();
        let cfg = SplitConfig::new(0.0, SplitMode::Global).unwrap();
        let result = split_by_scores(&scores, &cfg, &labels);
        assert_eq!(result.trusted.len(), 10);
        assert!(result.untrusted.is_empty());
    }

    #[test]
    fn q_half_takes_the_five_smallest() {
        let (scores, labels) = scored_fixture();
        let cfg = SplitConfig::new(0.5, SplitMode::Global).unwrap();
        let result = split_by_scores(&scores, &cfg, &labels);
        assert_eq!(result.untrusted, vec![1, 3, 5, 7, 9]);
    }

    #[test]
    fn per_class_quantile_uses_floor_within_groups() {
        // class sizes (8, 2) with q = 0.5 -> (4, 1) untrusted
        let scores: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let labels = vec![0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
        let cfg = SplitConfig::new(0.5, SplitMode::PerClass).unwrap();
        let result = split_by_scores(&scores, &cfg, &labels);
        let class0 = result.untrusted.iter().filter(|&&i| labels[i] == 0).count();
        let class1 = result.untrusted.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!((class0, class1), (4, 1));
    }

    #[test]
    fn score_ties_break_by_lower_index() {
        let scores = vec![0.5, 0.5, 0.5, 0.5];
        let labels = vec![0, 1, 0, 1];
        let cfg = SplitConfig::new(0.5, SplitMode::Global).unwrap();
        let result = split_by_scores(&scores, &cfg, &labels);
        assert_eq!(result.untrusted, vec![0, 1]);
    }

    #[test]
    fn split_is_invariant_under_increasing_transforms() {
        let (scores, labels) = scored_fixture();
        let transformed: Vec<f64> = scores.iter().map(|&s| 3.0 * s.exp() + 2.0).collect();
        for q in QUANTILE_GRID {
            for mode in [SplitMode::Global, SplitMode::PerClass] {
                let cfg = SplitConfig::new(q, mode).unwrap();
                let a = split_by_scores(&scores, &cfg, &labels);
                let b = split_by_scores(&transformed, &cfg, &labels);
                assert_eq!(a.untrusted, b.untrusted);
            }
        }
    }

    #[test]
    fn off_grid_quantile_is_rejected() {
        assert!(SplitConfig::new(0.25, SplitMode::Global).is_err());
        assert!(SplitConfig::new(0.9, SplitMode::Global).is_ok());
    }

    fn noisy_dataset(n: usize, seed: u64) -> Dataset {
        let clean = synth::gaussian_blobs(&synth::BlobsConfig {
            n,
            n_classes: 2,
            dim: 2,
            separation: 6.0,
            std: 1.0,
            seed,
            class_weights: None,
        });
        let noisy = inject_ncar(clean.noisy_labels(), 2, 0.3, false, seed + 1).unwrap();
        clean.with_noisy_labels(noisy).unwrap()
    }

    #[test]
    fn filter_with_empty_untrusted_is_identity() {
        let ds = noisy_dataset(40, 1);
        let result = split_by_scores(
            &vec![1.0; 40],
            &SplitConfig::new(0.0, SplitMode::Global).unwrap(),
            ds.noisy_labels(),
        );
        let handled = handle_filter(&ds, &result);
        assert_eq!(handled.dataset.n(), 40);
        assert!(handled.vanished_classes.is_empty());
    }

    #[test]
    fn silver_split_filters_to_clean_rows_only() {
        let ds = noisy_dataset(60, 2);
        let flipped = ds.is_mislabeled().unwrap();
        let untrusted: Vec<usize> = (0..60).filter(|&i| flipped[i]).collect();
        let trusted: Vec<usize> = (0..60).filter(|&i| !flipped[i]).collect();
        let split = SplitResult {
            trusted: trusted.clone(),
            untrusted,
        };
        let handled = handle_filter(&ds, &split);
        assert_eq!(handled.dataset.n(), trusted.len());
        assert_eq!(handled.dataset.is_mislabeled().unwrap(), vec![false; trusted.len()]);
    }

    #[test]
    fn filter_reports_vanished_class() {
        let ds = noisy_dataset(30, 3);
        let class1: Vec<usize> = (0..30).filter(|&i| ds.noisy_labels()[i] == 1).collect();
        let class0: Vec<usize> = (0..30).filter(|&i| ds.noisy_labels()[i] == 0).collect();
        let split = SplitResult {
            trusted: class0,
            untrusted: class1,
        };
        let handled = handle_filter(&ds, &split);
        assert_eq!(handled.vanished_classes, vec![1]);
    }

    #[test]
    fn relabel_with_empty_untrusted_is_identity() {
        let ds = noisy_dataset(40, 4);
        let split = SplitResult {
            trusted: (0..40).collect(),
            untrusted: vec![],
        };
        let handled = handle_relabel(&ds, &split).unwrap();
        assert_eq!(handled.dataset.noisy_labels(), ds.noisy_labels());
        assert_eq!(handled.relabeled, 0);
    }

    #[test]
    fn relabel_everything_restores_ground_truth() {
        let ds = noisy_dataset(40, 5);
        let split = SplitResult {
            trusted: vec![],
            untrusted: (0..40).collect(),
        };
        let handled = handle_relabel(&ds, &split).unwrap();
        assert_eq!(handled.dataset.noisy_labels(), ds.clean_labels().unwrap());
        let flips = ds.is_mislabeled().unwrap().iter().filter(|&&f| f).count();
        assert_eq!(handled.relabeled, flips);
    }

    #[test]
    fn relabel_bottom_decile_changes_floor_n_over_ten_labels() {
        // oracle scores put exactly the mislabeled rows at the bottom;
        // with more than 10% noise the bottom decile is entirely mislabeled
        let ds = noisy_dataset(50, 6);
        let flipped = ds.is_mislabeled().unwrap();
        assert!(flipped.iter().filter(|&&f| f).count() >= 5);
        let scores: Vec<f64> = flipped.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect();
        let cfg = SplitConfig::new(0.1, SplitMode::Global).unwrap();
        let split = split_by_scores(&scores, &cfg, ds.noisy_labels());
        let handled = handle_relabel(&ds, &split).unwrap();
        assert_eq!(handled.relabeled, 5);
    }

    fn tagged(ds: &Dataset, kind: ValidationKind, seed: u64) -> SplitTags {
        split(ds, [0.6, 0.2, 0.2], seed, kind).unwrap()
    }

    #[test]
    fn noop_pipeline_equals_training_on_everything() {
        let ds = noisy_dataset(100, 7);
        let tags = tagged(&ds, ValidationKind::Clean, 7);
        let estimator = BaseModelSpec::Klm(KlmSpec::default());
        let piped = run_pipeline(
            &ds,
            &tags,
            &TrustSource::Random { seed: 9 },
            &SplitConfig::new(0.0, SplitMode::Global).unwrap(),
            Handler::Filter,
            &estimator,
        )
        .unwrap();
        // direct fit on the full training split with the same seeded spec
        let train_rows = tags.train_rows();
        let train = ds.subset(&train_rows);
        let model = estimator
            .fit(train.features(), train.noisy_labels(), 2)
            .unwrap();
        let (val, test) = holdout_losses(&ds, &tags, &model).unwrap();
        assert_eq!(piped.validation_loss, val);
        assert_eq!(piped.test_loss, test);
        assert_eq!(piped.n_untrusted, 0);
    }

    #[test]
    fn oracle_source_at_noise_quantile_matches_silver_training() {
        // construct exactly 30% mislabeled so floor(q n) hits the count
        let clean = synth::gaussian_blobs(&synth::BlobsConfig {
            n: 100,
            n_classes: 2,
            dim: 2,
            separation: 6.0,
            std: 1.0,
            seed: 8,
            class_weights: None,
        });
        let mut labels = clean.noisy_labels().to_vec();
        for i in 0..30 {
            labels[i] = 1 - labels[i];
        }
        let ds = clean.with_noisy_labels(labels).unwrap();
        let tags = SplitTags {
            assignment: (0..100)
                .map(|i| {
                    if i < 80 {
                        crate::dataset::SplitRole::Train
                    } else if i < 90 {
                        crate::dataset::SplitRole::Validation
                    } else {
                        crate::dataset::SplitRole::Test
                    }
                })
                .collect(),
            validation_kind: ValidationKind::Clean,
        };
        let train_rows = tags.train_rows();
        let train = ds.subset(&train_rows);
        let n_flipped = train
            .is_mislabeled()
            .unwrap()
            .iter()
            .filter(|&&f| f)
            .count();
        // q must be on the grid; 80 train rows with 24 flips -> q = 0.3
        assert_eq!(n_flipped, 24);
        let estimator = BaseModelSpec::Klm(KlmSpec::default());
        let piped = run_pipeline(
            &ds,
            &tags,
            &TrustSource::Oracle,
            &SplitConfig::new(0.3, SplitMode::Global).unwrap(),
            Handler::Filter,
            &estimator,
        )
        .unwrap();
        // silver: fit directly on the correctly labeled train rows
        let silver_rows: Vec<usize> = (0..train.n())
            .filter(|&i| !train.is_mislabeled().unwrap()[i])
            .collect();
        let silver = train.subset(&silver_rows);
        let model = estimator
            .fit(silver.features(), silver.noisy_labels(), 2)
            .unwrap();
        let (_, test) = holdout_losses(&ds, &tags, &model).unwrap();
        assert_eq!(piped.test_loss, test);
    }

    #[test]
    fn pipeline_smoke_run_produces_finite_losses() {
        let ds = noisy_dataset(120, 9);
        let tags = tagged(&ds, ValidationKind::Noisy, 9);
        let detector = ModelProbingDetector::preset("small_loss").unwrap();
        let result = run_pipeline(
            &ds,
            &tags,
            &TrustSource::Detector(detector),
            &SplitConfig::new(0.3, SplitMode::Global).unwrap(),
            Handler::Filter,
            &BaseModelSpec::Klm(KlmSpec::default()),
        )
        .unwrap();
        assert!(result.validation_loss.is_finite());
        assert!(result.test_loss.is_finite());
        assert_eq!(result.n_trusted + result.n_untrusted, tags.train_rows().len());
    }

    #[test]
    fn filter_then_refilter_at_zero_is_idempotent() {
        let ds = noisy_dataset(50, 10);
        let scores: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let cfg = SplitConfig::new(0.3, SplitMode::Global).unwrap();
        let split1 = split_by_scores(&scores, &cfg, ds.noisy_labels());
        let once = handle_filter(&ds, &split1);
        let cfg0 = SplitConfig::new(0.0, SplitMode::Global).unwrap();
        let kept_scores: Vec<f64> = split1.trusted.iter().map(|&i| scores[i]).collect();
        let split2 = split_by_scores(&kept_scores, &cfg0, once.dataset.noisy_labels());
        let twice = handle_filter(&once.dataset, &split2);
        assert_eq!(once.dataset.example_ids(), twice.dataset.example_ids());
    }

    #[test]
    fn tiny_search_budget_runs_the_whole_grid() {
        let ds = noisy_dataset(100, 11);
        let tags = tagged(&ds, ValidationKind::Clean, 11);
        let template = ModelProbingDetector::preset("small_loss").unwrap();
        let (best, trials) = random_search(
            &ds,
            &tags,
            &template,
            ModelFamily::Klm,
            Handler::Filter,
            SearchBudget {
                n_detector: 1,
                n_estimator: 1,
            },
            &QUANTILE_GRID,
            SplitMode::Global,
            13,
        )
        .unwrap();
        assert_eq!(trials.len(), 10);
        for t in &trials {
            assert!(best.validation_loss <= t.validation_loss);
        }
    }

    #[test]
    fn oracle_validation_selects_minimal_test_loss() {
        let ds = noisy_dataset(100, 12);
        let tags = tagged(&ds, ValidationKind::Oracle, 12);
        let template = ModelProbingDetector::preset("small_loss").unwrap();
        let (best, trials) = random_search(
            &ds,
            &tags,
            &template,
            ModelFamily::Klm,
            Handler::Filter,
            SearchBudget {
                n_detector: 2,
                n_estimator: 2,
            },
            &QUANTILE_GRID,
            SplitMode::Global,
            17,
        )
        .unwrap();
        let min_test = trials
            .iter()
            .map(|t| t.test_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.test_loss, min_test);
    }

    #[test]
    fn selection_is_correct_and_deterministic() {
        let ds = noisy_dataset(80, 13);
        let tags = tagged(&ds, ValidationKind::Clean, 13);
        let template = ModelProbingDetector::preset("small_loss").unwrap();
        let run = || {
            random_search(
                &ds,
                &tags,
                &template,
                ModelFamily::Klm,
                Handler::Filter,
                SearchBudget {
                    n_detector: 2,
                    n_estimator: 2,
                },
                &[0.0, 0.3],
                SplitMode::Global,
                23,
            )
            .unwrap()
        };
        let (best1, trials1) = run();
        let (best2, trials2) = run();
        assert_eq!(best1.trial, best2.trial);
        assert_eq!(trials1.len(), trials2.len());
        for (a, b) in trials1.iter().zip(&trials2) {
            assert_eq!(a.validation_loss, b.validation_loss);
            assert_eq!(a.test_loss, b.test_loss);
        }
        for t in &trials1 {
            assert!(
                best1.validation_loss <= t.validation_loss,
                "selected {} but trial {} has {}",
                best1.validation_loss,
                t.trial,
                t.validation_loss
            );
        }
    }
}
