//! Ensemble strategies: how many models to fit, on which rows, and in what
//! order to probe them.
//!
//! [`probe_model`] yields a [`ProbeStream`]: a lazy sequence of per-member
//! probe matrices plus an in-bag mask marking the rows each member was
//! trained on. Independent strategies (bootstrap, k-fold, leave-one-out)
//! refit on subsamples; the progressive strategy probes the snapshots of a
//! single staged fit, so only one training state is ever live.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::take_rows;
use crate::error::{Error, Result};
use crate::models::BaseModelSpec;
use crate::probing::ProbeKind;
use crate::seeding;

/// Default row cap for leave-one-out (n model fits get expensive fast).
pub const DEFAULT_LOO_CAP: usize = 2000;

/// The ensemble family and its parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnsembleKind {
    /// Single fit on all rows; mask all-true.
    None,
    /// `n_models` fits, each on `n` rows drawn with replacement.
    Bootstrap { n_models: usize },
    /// `k` fits, member `i` trained on all folds except fold `i`.
    KFold { k: usize },
    /// `n` fits, member `i` excludes row `i`.
    LeaveOneOut { cap: usize },
    /// Snapshots of one staged fit, in training order.
    Progressive { max_iters: Option<usize> },
}

/// Ensemble strategy plus the seed driving its subsampling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleStrategy {
    pub kind: EnsembleKind,
    pub seed: u64,
}

impl EnsembleStrategy {
    pub fn none() -> Self {
        Self {
            kind: EnsembleKind::None,
            seed: 0,
        }
    }

    pub fn bootstrap(n_models: usize) -> Self {
        Self {
            kind: EnsembleKind::Bootstrap { n_models },
            seed: 0,
        }
    }

    pub fn kfold(k: usize) -> Self {
        Self {
            kind: EnsembleKind::KFold { k },
            seed: 0,
        }
    }

    pub fn leave_one_out() -> Self {
        Self {
            kind: EnsembleKind::LeaveOneOut {
                cap: DEFAULT_LOO_CAP,
            },
            seed: 0,
        }
    }

    pub fn progressive() -> Self {
        Self {
            kind: EnsembleKind::Progressive { max_iters: None },
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Stable identifier: `none`, `bootstrap:<n>`, `kfold:<k>`, `loo`,
    /// `progressive[:<n>]`.
    pub fn id(&self) -> String {
        match &self.kind {
            EnsembleKind::None => "none".into(),
            EnsembleKind::Bootstrap { n_models } => format!("bootstrap:{n_models}"),
            EnsembleKind::KFold { k } => format!("kfold:{k}"),
            EnsembleKind::LeaveOneOut { .. } => "loo".into(),
            EnsembleKind::Progressive { max_iters: None } => "progressive".into(),
            EnsembleKind::Progressive {
                max_iters: Some(m),
            } => format!("progressive:{m}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let unknown = || Error::UnknownIdentifier {
            what: "ensemble strategy",
            got: s.to_string(),
            options: "none, bootstrap:<n>, kfold:<k>, loo, progressive[:<n>]".into(),
        };
        let kind = match s {
            "none" => EnsembleKind::None,
            "loo" => EnsembleKind::LeaveOneOut {
                cap: DEFAULT_LOO_CAP,
            },
            "progressive" => EnsembleKind::Progressive { max_iters: None },
            _ => {
                let (name, arg) = s.split_once(':').ok_or_else(unknown)?;
                let value: usize = arg.parse().map_err(|_| unknown())?;
                match name {
                    "bootstrap" => EnsembleKind::Bootstrap { n_models: value },
                    "kfold" => EnsembleKind::KFold { k: value },
                    "progressive" => EnsembleKind::Progressive {
                        max_iters: Some(value),
                    },
                    _ => return Err(unknown()),
                }
            }
        };
        Ok(Self { kind, seed: 0 })
    }

    /// Number of members the stream will yield. For progressive strategies
    /// this fits the model to inspect the early-stopping trace.
    pub fn member_count(
        &self,
        spec: &BaseModelSpec,
        x: ndarray::ArrayView2<'_, f64>,
        y: &[usize],
        n_classes: usize,
    ) -> Result<usize> {
        let n = x.nrows();
        match &self.kind {
            EnsembleKind::None => Ok(1),
            EnsembleKind::Bootstrap { n_models } => Ok(*n_models),
            EnsembleKind::KFold { k } => Ok(*k),
            EnsembleKind::LeaveOneOut { cap } => {
                if n > *cap {
                    Err(Error::LooTooLarge { n, cap: *cap })
                } else {
                    Ok(n)
                }
            }
            EnsembleKind::Progressive { max_iters } => {
                let ran = spec.staged_fit(x, y, n_classes)?.count();
                Ok(max_iters.map_or(ran, |cap| ran.min(cap)))
            }
        }
    }
}

/// One member's probe values plus its in-bag mask.
#[derive(Clone, Debug)]
pub struct StreamItem {
    pub values: Array2<f64>,
    /// True where the member's training multiset contains the row.
    pub in_bag: Option<Vec<bool>>,
    pub member: usize,
}

/// Lazy sequence of per-member probe matrices.
pub struct ProbeStream {
    inner: Box<dyn Iterator<Item = Result<StreamItem>>>,
    n_examples: usize,
}

impl ProbeStream {
    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    /// Wrap explicit member matrices as a stream (fixtures for reducers).
    pub fn from_items(items: Vec<Result<StreamItem>>, n_examples: usize) -> Self {
        Self {
            inner: Box::new(items.into_iter()),
            n_examples,
        }
    }
}

impl Iterator for ProbeStream {
    type Item = Result<StreamItem>;

    fn next(&mut self) -> Option<Self::Item> {
        self.inner.next()
    }
}

/// Fit the strategy's members on `(x, y)` and probe each on all rows.
pub fn probe_model(
    strategy: &EnsembleStrategy,
    spec: &BaseModelSpec,
    x: ndarray::ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    probe: ProbeKind,
) -> Result<ProbeStream> {
    let all: Vec<usize> = (0..x.nrows()).collect();
    probe_model_on(strategy, spec, x, y, n_classes, probe, &all)
}

/// Like [`probe_model`], but members train only on subsets of `fit_rows`
/// while probing all rows; used by iterative refinement.
pub fn probe_model_on(
    strategy: &EnsembleStrategy,
    spec: &BaseModelSpec,
    x: ndarray::ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    probe: ProbeKind,
    fit_rows: &[usize],
) -> Result<ProbeStream> {
    if x.nrows() != y.len() {
        return Err(Error::Model(format!(
            "{} rows vs {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if !probe.supported_by(spec.family()) {
        return Err(Error::MissingCapability {
            family: spec.family().name(),
            capability: "parameter gradients",
        });
    }
    let n = x.nrows();
    let x: Arc<Array2<f64>> = Arc::new(x.to_owned());
    let y: Arc<Vec<usize>> = Arc::new(y.to_vec());
    let fit_rows: Arc<Vec<usize>> = Arc::new(fit_rows.to_vec());

    let inner: Box<dyn Iterator<Item = Result<StreamItem>>> = match &strategy.kind {
        EnsembleKind::None => {
            let spec = spec.clone();
            Box::new(std::iter::once(()).map(move |_| {
                fit_and_probe(&spec, &x, &y, n_classes, probe, &fit_rows, 0)
            }))
        }
        EnsembleKind::Bootstrap { n_models } => {
            if *n_models == 0 {
                return Err(Error::Model("bootstrap needs at least 1 model".into()));
            }
            let spec = spec.clone();
            let master = strategy.seed;
            Box::new((0..*n_models).map(move |member| {
                let mut rng = seeding::rng(seeding::derive_seed(master, member as u64));
                let draw: Vec<usize> = (0..fit_rows.len())
                    .map(|_| fit_rows[rng.random_range(0..fit_rows.len())])
                    .collect();
                let member_spec = spec
                    .clone()
                    .with_seed(seeding::derive_labeled(spec.seed(), "member", member as u64));
                fit_and_probe(&member_spec, &x, &y, n_classes, probe, &draw, member)
            }))
        }
        EnsembleKind::KFold { k } => {
            let k = *k;
            if k < 2 {
                return Err(Error::Model("kfold needs k >= 2".into()));
            }
            if k > fit_rows.len() {
                return Err(Error::Model(format!(
                    "kfold k = {k} exceeds the {} training rows",
                    fit_rows.len()
                )));
            }
            let mut shuffled = fit_rows.to_vec();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut seeding::rng(seeding::derive_labeled(
                strategy.seed,
                "kfold",
                0,
            )));
            let folds: Arc<Vec<Vec<usize>>> = Arc::new(
                (0..k)
                    .map(|f| shuffled.iter().skip(f).step_by(k).copied().collect())
                    .collect(),
            );
            let spec = spec.clone();
            Box::new((0..k).map(move |member| {
                let train: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|&(f, _)| f != member)
                    .flat_map(|(_, rows)| rows.iter().copied())
                    .collect();
                let member_spec = spec
                    .clone()
                    .with_seed(seeding::derive_labeled(spec.seed(), "member", member as u64));
                fit_and_probe(&member_spec, &x, &y, n_classes, probe, &train, member)
            }))
        }
        EnsembleKind::LeaveOneOut { cap } => {
            if fit_rows.len() > *cap {
                return Err(Error::LooTooLarge {
                    n: fit_rows.len(),
                    cap: *cap,
                });
            }
            let spec = spec.clone();
            let total = fit_rows.len();
            Box::new((0..total).map(move |member| {
                let train: Vec<usize> = fit_rows
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != member)
                    .map(|(_, &row)| row)
                    .collect();
                let member_spec = spec
                    .clone()
                    .with_seed(seeding::derive_labeled(spec.seed(), "member", member as u64));
                fit_and_probe(&member_spec, &x, &y, n_classes, probe, &train, member)
            }))
        }
        EnsembleKind::Progressive { max_iters } => {
            let x_fit = take_rows(x.view(), &fit_rows);
            let y_fit: Vec<usize> = fit_rows.iter().map(|&r| y[r]).collect();
            let stream = spec.staged_fit(x_fit.view(), &y_fit, n_classes)?;
            let mask = membership_mask(n, &fit_rows);
            let limit = max_iters.unwrap_or(usize::MAX);
            let iter = stream
                .take(limit)
                .enumerate()
                .map(move |(member, model)| {
                    let matrix = probe.compute(&model, x.view(), &y)?;
                    Ok(StreamItem {
                        values: matrix.values,
                        in_bag: Some(mask.clone()),
                        member,
                    })
                });
            Box::new(iter)
        }
    };

    Ok(ProbeStream {
        inner,
        n_examples: n,
    })
}

fn membership_mask(n: usize, rows: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &r in rows {
        mask[r] = true;
    }
    mask
}

fn fit_and_probe(
    spec: &BaseModelSpec,
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    probe: ProbeKind,
    train_rows: &[usize],
    member: usize,
) -> Result<StreamItem> {
    let x_train = take_rows(x.view(), train_rows);
    let y_train: Vec<usize> = train_rows.iter().map(|&r| y[r]).collect();
    let model = spec.fit(x_train.view(), &y_train, n_classes)?;
    let matrix = probe.compute(&model, x.view(), y)?;
    Ok(StreamItem {
        values: matrix.values,
        in_bag: Some(membership_mask(x.nrows(), train_rows)),
        member,
    })
}
