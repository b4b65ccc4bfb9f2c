//! Probes: functions scoring every example by measuring a fitted model.
//!
//! A probe maps `(model, X, y)` to an `n x p` matrix of finite values with a
//! declared orientation: `trust` values grow for well-supported examples,
//! `suspicion` values grow for conflicting ones. Orientation is metadata;
//! the detector, not the probe, flips signs so the composed output is always
//! trust-oriented.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{FittedModel, ModelFamily, PROB_CLAMP};

/// Damping added to the Gauss-Newton matrix in self-influence computations.
pub const SELF_INFLUENCE_DAMPING: f64 = 1e-3;

/// Which way a score grows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Higher values mean more trustworthy.
    Trust,
    /// Higher values mean more suspicious.
    Suspicion,
}

/// Probe identifiers; stable strings used by configs and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// 1 when the predicted class equals the observed label, else 0.
    /// Argmax ties break toward the lower class id.
    Accuracy,
    /// Predicted probability of the observed label.
    SelfConfidence,
    /// Self-confidence minus the mean self-confidence of the observed class.
    AdjustedConfidence,
    /// Decision-score margin of the observed label over the best other
    /// class (logits for klm/gbt, probabilities for knn).
    Margin,
    /// `-log p_y(x)`, clamped at 1e-12.
    LogLoss,
    /// `||softmax(x) - onehot(y)||_2`.
    L2Onehot,
    /// Signed per-dimension gradient `d p_y / d x`; width `d`. Orientation
    /// is resolved by the aggregation (variance of gradients is suspicion).
    InputGradient,
    /// Squared parameter-gradient norm scaled by the snapshot's learning
    /// rate (the TracIn self-influence summand).
    GradNormSq,
    /// Cosine similarity between an example's parameter gradient and the
    /// leave-one-out mean gradient of all other examples.
    GradCosine,
    /// `g^T (H + delta I)^{-1} g` with the Gauss-Newton `H`.
    SelfInfluence,
}

/// An `n x p` block of probe values for one ensemble member.
#[derive(Clone, Debug)]
pub struct ProbeMatrix {
    pub values: Array2<f64>,
    pub probe: ProbeKind,
    pub model_index: usize,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 10] = [
        ProbeKind::Accuracy,
        ProbeKind::SelfConfidence,
        ProbeKind::AdjustedConfidence,
        ProbeKind::Margin,
        ProbeKind::LogLoss,
        ProbeKind::L2Onehot,
        ProbeKind::InputGradient,
        ProbeKind::GradNormSq,
        ProbeKind::GradCosine,
        ProbeKind::SelfInfluence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProbeKind::Accuracy => "accuracy",
            ProbeKind::SelfConfidence => "self_confidence",
            ProbeKind::AdjustedConfidence => "adjusted_confidence",
            ProbeKind::Margin => "margin",
            ProbeKind::LogLoss => "logloss",
            ProbeKind::L2Onehot => "l2_onehot",
            ProbeKind::InputGradient => "input_gradient",
            ProbeKind::GradNormSq => "grad_norm_sq",
            ProbeKind::GradCosine => "grad_cosine",
            ProbeKind::SelfInfluence => "self_influence",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|p| p.name() == s)
            .copied()
            .ok_or_else(|| Error::UnknownIdentifier {
                what: "probe",
                got: s.to_string(),
                options: Self::ALL
                    .iter()
                    .map(|p| p.name())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            ProbeKind::Accuracy
            | ProbeKind::SelfConfidence
            | ProbeKind::AdjustedConfidence
            | ProbeKind::Margin
            | ProbeKind::GradCosine
            | ProbeKind::InputGradient => Orientation::Trust,
            ProbeKind::LogLoss
            | ProbeKind::L2Onehot
            | ProbeKind::GradNormSq
            | ProbeKind::SelfInfluence => Orientation::Suspicion,
        }
    }

    /// Number of output columns for a model with `input_dim` features.
    pub fn width(&self, input_dim: usize) -> usize {
        match self {
            ProbeKind::InputGradient => input_dim,
            _ => 1,
        }
    }

    /// Probes built on per-example loss gradients need a differentiable
    /// parameter space; only the linear model provides one.
    pub fn requires_parameter_gradients(&self) -> bool {
        matches!(
            self,
            ProbeKind::GradNormSq | ProbeKind::GradCosine | ProbeKind::SelfInfluence
        )
    }

    pub fn supported_by(&self, family: ModelFamily) -> bool {
        !self.requires_parameter_gradients() || family == ModelFamily::Klm
    }

    /// Evaluate the probe on every row of `(x, y)`.
    pub fn compute(
        &self,
        model: &FittedModel,
        x: ArrayView2<'_, f64>,
        y: &[usize],
    ) -> Result<ProbeMatrix> {
        if x.nrows() != y.len() {
            return Err(Error::Model(format!(
                "{} rows vs {} labels",
                x.nrows(),
                y.len()
            )));
        }
        let values = match self {
            ProbeKind::Accuracy => {
                let p = model.predict_proba(x)?;
                column(y.iter().enumerate().map(|(i, &label)| {
                    f64::from(u8::from(argmax_low(p.row(i)) == label))
                }))
            }
            ProbeKind::SelfConfidence => {
                let p = model.predict_proba(x)?;
                column(y.iter().enumerate().map(|(i, &label)| p[[i, label]]))
            }
            ProbeKind::AdjustedConfidence => {
                let p = model.predict_proba(x)?;
                let k = model.n_classes();
                let mut sums = vec![0.0; k];
                let mut counts = vec![0usize; k];
                for (i, &label) in y.iter().enumerate() {
                    sums[label] += p[[i, label]];
                    counts[label] += 1;
                }
                let means: Vec<f64> = sums
                    .iter()
                    .zip(&counts)
                    .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                    .collect();
                column(
                    y.iter()
                        .enumerate()
                        .map(|(i, &label)| p[[i, label]] - means[label]),
                )
            }
            ProbeKind::Margin => {
                let z = model.decision_scores(x)?;
                column(y.iter().enumerate().map(|(i, &label)| {
                    let row = z.row(i);
                    let best_other = row
                        .iter()
                        .enumerate()
                        .filter(|&(c, _)| c != label)
                        .map(|(_, &v)| v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    row[label] - best_other
                }))
            }
            ProbeKind::LogLoss => {
                let p = model.predict_proba(x)?;
                column(
                    y.iter()
                        .enumerate()
                        .map(|(i, &label)| -p[[i, label]].max(PROB_CLAMP).ln()),
                )
            }
            ProbeKind::L2Onehot => {
                let p = model.predict_proba(x)?;
                column(y.iter().enumerate().map(|(i, &label)| {
                    let mut sq = 0.0;
                    for (c, &v) in p.row(i).iter().enumerate() {
                        let target = f64::from(u8::from(c == label));
                        sq += (v - target) * (v - target);
                    }
                    sq.sqrt()
                }))
            }
            ProbeKind::InputGradient => {
                let d = model.input_dim();
                let mut out = Array2::zeros((x.nrows(), d));
                for (i, &label) in y.iter().enumerate() {
                    let g = model.input_gradient(x.row(i), label)?;
                    out.row_mut(i).assign(&g);
                }
                out
            }
            ProbeKind::GradNormSq => {
                let lr = model.learning_rate().unwrap_or(1.0);
                let mut out = Array2::zeros((x.nrows(), 1));
                for (i, &label) in y.iter().enumerate() {
                    let g = model.parameter_gradient(x.row(i), label)?;
                    out[[i, 0]] = lr * g.dot(&g);
                }
                out
            }
            ProbeKind::GradCosine => {
                let n = x.nrows();
                let mut gradients = Vec::with_capacity(n);
                for (i, &label) in y.iter().enumerate() {
                    gradients.push(model.parameter_gradient(x.row(i), label)?);
                }
                let dim = gradients[0].len();
                let mut total = Array1::<f64>::zeros(dim);
                for g in &gradients {
                    total += g;
                }
                let mut out = Array2::zeros((n, 1));
                for (i, g) in gradients.iter().enumerate() {
                    if n == 1 {
                        break;
                    }
                    let rest = (&total - g) / (n as f64 - 1.0);
                    let ng = g.dot(g).sqrt();
                    let nr = rest.dot(&rest).sqrt();
                    out[[i, 0]] = if ng < 1e-300 || nr < 1e-300 {
                        0.0
                    } else {
                        g.dot(&rest) / (ng * nr)
                    };
                }
                out
            }
            ProbeKind::SelfInfluence => {
                let si = model.self_influence(x, y, SELF_INFLUENCE_DAMPING)?;
                column(si.into_iter())
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!(
                "probe `{}` produced non-finite values",
                self.name()
            )));
        }
        Ok(ProbeMatrix {
            values,
            probe: *self,
            model_index: 0,
        })
    }
}

fn column(values: impl Iterator<Item = f64>) -> Array2<f64> {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column shape")
}

/// Argmax with ties broken toward the lower index.
pub(crate) fn argmax_low(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
