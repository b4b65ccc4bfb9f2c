//! Detection and downstream metrics: AUROC, class balance, baselines, and
//! the 100-200 loss normalization.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SplitTags};
use crate::error::{Error, Result};
use crate::models::ModelFamily;
pub use crate::models::log_loss;
use crate::pipeline::{
    estimator_draw, fit_estimator_or_fallback, handle_filter, holdout_losses, select_best,
    split_by_scores, SplitConfig, SplitMode, TrialRecord, TrustSource,
};
use crate::seeding;

/// Probability that a uniformly random genuine example outranks (higher
/// trust) a uniformly random mislabeled one; ties count one half.
///
/// Computed with the rank-statistic (Mann-Whitney) formulation with average
/// ranks for ties, `O(n log n)`.
pub fn detection_auroc(scores: &[f64], is_mislabeled: &[bool]) -> Result<f64> {
    if scores.len() != is_mislabeled.len() {
        return Err(Error::Evaluation(format!(
            "{} scores vs {} flags",
            scores.len(),
            is_mislabeled.len()
        )));
    }
    let n_mislabeled = is_mislabeled.iter().filter(|&&m| m).count();
    let n_genuine = scores.len() - n_mislabeled;
    if n_mislabeled == 0 || n_genuine == 0 {
        return Err(Error::Evaluation(
            "AUROC needs both genuine and mislabeled examples".into(),
        ));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("AUROC needs finite scores".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // average ranks over tied blocks (1-based ranks)
    let mut rank = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            rank[idx] = avg;
        }
        i = j + 1;
    }

    let genuine_rank_sum: f64 = rank
        .iter()
        .zip(is_mislabeled)
        .filter(|&(_, &m)| !m)
        .map(|(r, _)| r)
        .sum();
    let u = genuine_rank_sum - (n_genuine * (n_genuine + 1)) as f64 / 2.0;
    Ok(u / (n_genuine as f64 * n_mislabeled as f64))
}

/// Ratio of the minority-class prior over the majority-class prior; 0 when
/// some class has no examples at all (callers should flag that in reports).
pub fn class_balance(labels: &[usize], n_classes: usize) -> f64 {
    let mut counts = vec![0usize; n_classes];
    for &label in labels {
        counts[label] += 1;
    }
    let min = *counts.iter().min().unwrap_or(&0);
    let max = *counts.iter().max().unwrap_or(&0);
    if max == 0 {
        return 0.0;
    }
    min as f64 / max as f64
}

/// A loss scaled so the silver baseline reads 100 and the none baseline
/// reads 200; undefined when the baselines coincide.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NormalizedLoss {
    Value { value: f64 },
    /// Baselines within 1e-9 of each other; the raw loss is attached.
    Undefined { raw: f64 },
}

/// `100 + 100 * (L - L_silver) / (L_none - L_silver)`.
pub fn normalized_loss(loss: f64, loss_none: f64, loss_silver: f64) -> NormalizedLoss {
    if (loss_none - loss_silver).abs() < 1e-9 {
        NormalizedLoss::Undefined { raw: loss }
    } else {
        NormalizedLoss::Value {
            value: 100.0 + 100.0 * (loss - loss_silver) / (loss_none - loss_silver),
        }
    }
}

/// Test losses of the four reference strategies, each independently
/// hyperparameter-searched on the same validation split.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BaselineLosses {
    /// Train on every (noisy) training row.
    pub none: f64,
    /// Detect + filter with uniformly random trust scores, quantile grid
    /// searched like any detector.
    pub random: f64,
    /// Train only on the correctly labeled rows (perfect filtering).
    pub silver: f64,
    /// Train on every row with ground-truth labels restored.
    pub gold: f64,
}

/// Compute the four baselines. `silver`, `gold` and `random`'s grid need
/// ground-truth labels on the training split.
pub fn compute_baselines(
    ds: &Dataset,
    tags: &SplitTags,
    estimator_family: ModelFamily,
    n_estimator: usize,
    grid: &[f64],
    seed: u64,
) -> Result<BaselineLosses> {
    let train_rows = tags.train_rows();
    let train = ds.subset(&train_rows);
    let clean = train.clean_labels().ok_or(Error::CleanLabelsRequired)?;
    let flipped: Vec<bool> = train
        .noisy_labels()
        .iter()
        .zip(clean)
        .map(|(a, b)| a != b)
        .collect();

    // none: all noisy rows
    let none = best_fixed_dataset(&train, ds, tags, estimator_family, n_estimator, seed)?;

    // silver: correctly labeled rows only
    let silver_rows: Vec<usize> = (0..train.n()).filter(|&i| !flipped[i]).collect();
    let silver = best_fixed_dataset(
        &train.subset(&silver_rows),
        ds,
        tags,
        estimator_family,
        n_estimator,
        seed,
    )?;

    // gold: all rows, ground-truth labels
    let gold_ds = train.with_noisy_labels(clean.to_vec())?;
    let gold = best_fixed_dataset(&gold_ds, ds, tags, estimator_family, n_estimator, seed)?;

    // random: grid-searched filtering on uniform scores
    let source = TrustSource::Random {
        seed: seeding::derive_labeled(seed, "random_scores", 0),
    };
    let (scores, _) = match &source {
        TrustSource::Random { seed } => {
            let mut rng = seeding::rng(*seed);
            use rand::Rng;
            (
                (0..train.n())
                    .map(|_| rng.random::<f64>())
                    .collect::<Vec<f64>>(),
                Option::<String>::None,
            )
        }
        _ => unreachable!(),
    };
    let mut trials = Vec::new();
    let mut trial = 0usize;
    for j in 0..n_estimator {
        let estimator = estimator_draw(estimator_family, seed, j);
        for &q in grid {
            let cfg = SplitConfig::new(q, SplitMode::Global)?;
            let split = split_by_scores(&scores, &cfg, train.noisy_labels());
            let handled = handle_filter(&train, &split);
            let model = fit_estimator_or_fallback(&handled.dataset, &estimator)?;
            let (validation_loss, test_loss) = holdout_losses(ds, tags, &model)?;
            trials.push(TrialRecord {
                trial,
                detector_draw: 0,
                estimator_draw: j,
                q,
                detector_spec: estimator.clone(),
                estimator_spec: estimator.clone(),
                detector_fingerprint: None,
                validation_loss,
                test_loss,
                n_trusted: split.trusted.len(),
                n_untrusted: split.untrusted.len(),
                per_class_trusted: Vec::new(),
                vanished_classes: handled.vanished_classes,
                seed,
            });
            trial += 1;
        }
    }
    let random = select_best(&trials)?.test_loss;

    Ok(BaselineLosses {
        none,
        random,
        silver,
        gold,
    })
}

/// Best test loss over estimator draws for a fixed handled training set.
fn best_fixed_dataset(
    handled: &Dataset,
    ds: &Dataset,
    tags: &SplitTags,
    family: ModelFamily,
    n_estimator: usize,
    seed: u64,
) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for j in 0..n_estimator {
        let estimator = estimator_draw(family, seed, j);
        let model = fit_estimator_or_fallback(handled, &estimator)?;
        let (validation_loss, test_loss) = holdout_losses(ds, tags, &model)?;
        let better = match best {
            None => true,
            Some((v, _)) => validation_loss < v,
        };
        if better {
            best = Some((validation_loss, test_loss));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::Evaluation("no estimator draws".into()))
}

/// One consolidated evaluation of a detector's pipeline run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub detection_auroc: Option<f64>,
    pub class_balance_train: f64,
    pub class_balance_filtered: Option<f64>,
    pub class_balance_test: f64,
    /// Classes that lost every example during filtering.
    pub vanished_classes: Vec<usize>,
    pub test_loss: f64,
    pub normalized_loss: NormalizedLoss,
    pub baselines: BaselineLosses,
}
