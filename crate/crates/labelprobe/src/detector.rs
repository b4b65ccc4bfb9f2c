//! The four-block detector: base model + ensemble + probe + aggregation.
//!
//! [`ModelProbingDetector::trust_scores`] runs the ensemble, feeds the probe
//! stream to the aggregator, imputes undefined rows with the median of the
//! defined ones, and resolves orientation so the output is always
//! trust-oriented: higher score, more trustworthy. Only the ranking of the
//! scores is contractual; any strictly increasing transform leads to the
//! same downstream decisions.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::aggregation::{Aggregator, OrientationEffect};
use crate::ensembling::{probe_model_on, EnsembleKind, EnsembleStrategy};
use crate::error::{Error, Result};
use crate::models::{BaseModelSpec, GbtSpec, KlmSpec, KnnSpec, ModelFamily};
use crate::probing::{Orientation, ProbeKind};
use crate::seeding;

/// Names of the shipped detector presets.
pub const PRESET_NAMES: [&str; 10] = [
    "aum",
    "forget",
    "small_loss",
    "cleanlab",
    "consensus",
    "vosg",
    "tracin",
    "agra",
    "self_influence",
    "knn_edit",
];

/// A detector assembled from the four blocks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelProbingDetector {
    pub model: BaseModelSpec,
    pub ensemble: EnsembleStrategy,
    pub probe: ProbeKind,
    pub aggregate: Aggregator,
}

/// Per-example trust scores; higher means more trustworthy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrustScores {
    pub scores: Vec<f64>,
    /// Stable hash of the resolved block tuple plus seed.
    pub fingerprint: String,
    pub seed: u64,
}

impl ModelProbingDetector {
    pub fn new(
        model: BaseModelSpec,
        ensemble: EnsembleStrategy,
        probe: ProbeKind,
        aggregate: Aggregator,
    ) -> Self {
        Self {
            model,
            ensemble,
            probe,
            aggregate,
        }
    }

    /// Known method presets, by name. Block assignments follow the
    /// published methods; ensemble sizes and base hyperparameters are this
    /// library's defaults.
    pub fn preset(name: &str) -> Result<Self> {
        let klm = || BaseModelSpec::Klm(KlmSpec::default());
        let gbt = || BaseModelSpec::Gbt(GbtSpec::default());
        let detector = match name {
            // margin summed over boosting iterations
            "aum" => Self::new(
                gbt(),
                EnsembleStrategy::progressive(),
                ProbeKind::Margin,
                Aggregator::Sum,
            ),
            // accuracy change counts over boosting iterations
            "forget" => Self::new(
                BaseModelSpec::Gbt(GbtSpec {
                    learning_rate: 0.3,
                    ..GbtSpec::default()
                }),
                EnsembleStrategy::progressive(),
                ProbeKind::Accuracy,
                Aggregator::ForgetCount,
            ),
            // per-example loss of a single fit
            "small_loss" => Self::new(
                klm(),
                EnsembleStrategy::none(),
                ProbeKind::LogLoss,
                Aggregator::Sum,
            ),
            // class-adjusted confidence averaged out-of-fold
            "cleanlab" => Self::new(
                klm(),
                EnsembleStrategy::kfold(5),
                ProbeKind::AdjustedConfidence,
                Aggregator::OobMean,
            ),
            // out-of-bag accuracy under bootstrapping
            "consensus" => Self::new(
                klm(),
                EnsembleStrategy::bootstrap(20),
                ProbeKind::Accuracy,
                Aggregator::OobMean,
            ),
            // variance of softmax-probability input gradients across epochs
            "vosg" => Self::new(
                klm(),
                EnsembleStrategy::progressive(),
                ProbeKind::InputGradient,
                Aggregator::Variance,
            ),
            // summed loss-gradient norms across checkpoints
            "tracin" => Self::new(
                klm(),
                EnsembleStrategy::progressive(),
                ProbeKind::GradNormSq,
                Aggregator::Sum,
            ),
            // cosine of each gradient against the leave-one-out mean
            "agra" => Self::new(
                klm(),
                EnsembleStrategy::none(),
                ProbeKind::GradCosine,
                Aggregator::Sum,
            ),
            // damped Gauss-Newton self-influence
            "self_influence" => Self::new(
                klm(),
                EnsembleStrategy::none(),
                ProbeKind::SelfInfluence,
                Aggregator::Sum,
            ),
            // Wilson editing: leave-one-out neighbor accuracy
            "knn_edit" => Self::new(
                BaseModelSpec::Knn(KnnSpec::default()),
                EnsembleStrategy::leave_one_out(),
                ProbeKind::Accuracy,
                Aggregator::OobMean,
            ),
            _ => {
                return Err(Error::UnknownIdentifier {
                    what: "detector preset",
                    got: name.to_string(),
                    options: PRESET_NAMES.join(", "),
                })
            }
        };
        Ok(detector)
    }

    /// Re-derive all block seeds from one master seed.
    pub fn with_seed(mut self, master: u64) -> Self {
        self.model = self
            .model
            .with_seed(seeding::derive_labeled(master, "model", 0));
        self.ensemble.seed = seeding::derive_labeled(master, "ensemble", 0);
        self
    }

    /// Seed recorded into [`TrustScores`]: a combination of the block seeds.
    pub fn seed(&self) -> u64 {
        seeding::derive_seed(self.model.seed(), self.ensemble.seed)
    }

    /// Stable hash of the resolved block tuple plus seed.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("detector serializes");
        let h = seeding::fnv1a64(canonical.as_bytes()) ^ seeding::derive_seed(self.seed(), 0);
        format!("{h:016x}")
    }

    /// Check block compatibility; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let family = self.model.family();
        if !self.probe.supported_by(family) {
            return Err(Error::IncompatibleDetector(format!(
                "probe `{}` needs parameter gradients, which `{}` does not provide",
                self.probe.name(),
                family.name()
            )));
        }
        if self.aggregate.needs_masks()
            && !matches!(
                self.ensemble.kind,
                EnsembleKind::Bootstrap { .. }
                    | EnsembleKind::KFold { .. }
                    | EnsembleKind::LeaveOneOut { .. }
            )
        {
            return Err(Error::IncompatibleDetector(format!(
                "aggregator `{}` needs out-of-bag members; use bootstrap, kfold or loo",
                self.aggregate.name()
            )));
        }
        if self.aggregate.order_sensitive() {
            if !matches!(self.ensemble.kind, EnsembleKind::Progressive { .. }) {
                return Err(Error::IncompatibleDetector(format!(
                    "aggregator `{}` needs ordered members; use the progressive ensemble",
                    self.aggregate.name()
                )));
            }
            if self.probe != ProbeKind::Accuracy {
                return Err(Error::IncompatibleDetector(format!(
                    "aggregator `{}` needs the binary accuracy probe",
                    self.aggregate.name()
                )));
            }
        }
        if self.aggregate == Aggregator::Vote && self.probe != ProbeKind::Accuracy {
            return Err(Error::IncompatibleDetector(
                "aggregator `vote` needs the binary accuracy probe".into(),
            ));
        }
        if self.probe == ProbeKind::InputGradient && family == ModelFamily::Gbt {
            warnings.push(
                "input gradients of piecewise-constant trees are zero almost everywhere \
                 under finite differences; a klm base model is the intended pairing"
                    .to_string(),
            );
        }
        Ok(warnings)
    }

    /// Effective orientation of the aggregated scores before resolution.
    fn effective_orientation(&self) -> Orientation {
        match self.aggregate.effect() {
            OrientationEffect::Suspicion => Orientation::Suspicion,
            OrientationEffect::Preserve => self.probe.orientation(),
        }
    }

    /// Compute trust scores for the training examples `(x, y)`.
    pub fn trust_scores(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
    ) -> Result<TrustScores> {
        let all: Vec<usize> = (0..x.nrows()).collect();
        self.trust_scores_with_fit_rows(x, y, n_classes, &all)
    }

    /// Trust scores where ensemble members train only on `fit_rows` while
    /// all rows are scored; backs iterative refinement.
    pub fn trust_scores_with_fit_rows(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
        fit_rows: &[usize],
    ) -> Result<TrustScores> {
        self.validate()?;
        let stream = probe_model_on(
            &self.ensemble,
            &self.model,
            x,
            y,
            n_classes,
            self.probe,
            fit_rows,
        )?;
        let aggregated = self.aggregate.aggregate(stream)?;

        let mut defined: Vec<f64> = aggregated.iter().filter_map(|v| *v).collect();
        if defined.is_empty() {
            return Err(Error::Aggregation(
                "no example received a defined score".into(),
            ));
        }
        defined.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if defined.len() % 2 == 1 {
            defined[defined.len() / 2]
        } else {
            0.5 * (defined[defined.len() / 2 - 1] + defined[defined.len() / 2])
        };

        let flip = self.effective_orientation() == Orientation::Suspicion;
        let scores = aggregated
            .into_iter()
            .map(|v| {
                let v = v.unwrap_or(median);
                if flip {
                    -v
                } else {
                    v
                }
            })
            .collect();
        Ok(TrustScores {
            scores,
            fingerprint: self.fingerprint(),
            seed: self.seed(),
        })
    }

    /// Repeated detect-and-filter refinement: each round refits the detector
    /// on the most trusted fraction from the previous round and rescores all
    /// rows. The final round's scores are returned.
    pub fn iterative_refine(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
        rounds: usize,
        keep_fraction: f64,
    ) -> Result<TrustScores> {
        if rounds == 0 {
            return Err(Error::IncompatibleDetector(
                "iterative refinement needs at least 1 round".into(),
            ));
        }
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(Error::IncompatibleDetector(format!(
                "keep_fraction {keep_fraction} outside (0, 1]"
            )));
        }
        let n = x.nrows();
        let mut scores = self.trust_scores(x, y, n_classes)?;
        for _ in 1..rounds {
            let keep = ((keep_fraction * n as f64).floor() as usize).min(n);
            if keep < n_classes {
                return Err(Error::IncompatibleDetector(format!(
                    "keep_fraction {keep_fraction} leaves {keep} rows for {n_classes} classes"
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                scores.scores[b]
                    .partial_cmp(&scores.scores[a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut kept: Vec<usize> = order[..keep].to_vec();
            kept.sort_unstable();
            let mut present = vec![false; n_classes];
            for &row in &kept {
                present[y[row]] = true;
            }
            if let Some(class) = present.iter().position(|&p| !p) {
                return Err(Error::IncompatibleDetector(format!(
                    "keep_fraction {keep_fraction} empties class {class}"
                )));
            }
            scores = self.trust_scores_with_fit_rows(x, y, n_classes, &kept)?;
        }
        Ok(scores)
    }
}
