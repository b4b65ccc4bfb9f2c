//! Synthetic fixtures: Gaussian blobs and imperfect labeling rules.
//!
//! These generators back the test suites and the CLI demos. Blobs give a
//! clean classification task where ground truth is known exactly; ball rules
//! add feature-dependent (not-at-random) label noise by voting inside a
//! neighborhood of an anchor point, with a configurable number of rules that
//! vote for a deliberately wrong class.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::Dataset;
use crate::noise::RuleMatrix;
use crate::seeding;

/// Configuration for [`gaussian_blobs`].
#[derive(Clone, Debug)]
pub struct BlobsConfig {
    pub n: usize,
    pub n_classes: usize,
    pub dim: usize,
    /// Distance between adjacent class centers, in units of `std`.
    pub separation: f64,
    pub std: f64,
    pub seed: u64,
    /// Relative class sizes; uniform when absent.
    pub class_weights: Option<Vec<f64>>,
}

/// Sample isotropic Gaussian clusters, one per class. The returned dataset
/// has `clean_labels` equal to the observed labels (no corruption yet).
pub fn gaussian_blobs(cfg: &BlobsConfig) -> Dataset {
    assert!(cfg.n_classes >= 1 && cfg.dim >= 1 && cfg.n >= cfg.n_classes);
    let centers = class_centers(cfg.n_classes, cfg.dim, cfg.separation * cfg.std);

    let weights = match &cfg.class_weights {
        Some(w) => {
            assert_eq!(w.len(), cfg.n_classes);
            let total: f64 = w.iter().sum();
            w.iter().map(|v| v / total).collect::<Vec<f64>>()
        }
        None => vec![1.0 / cfg.n_classes as f64; cfg.n_classes],
    };
    // Largest-remainder apportioning of rows to classes.
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| (w * cfg.n as f64).floor() as usize)
        .collect();
    let mut rem: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(c, w)| (w * cfg.n as f64 - (w * cfg.n as f64).floor(), c))
        .collect();
    rem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut assigned: usize = counts.iter().sum();
    let mut ri = 0;
    while assigned < cfg.n {
        counts[rem[ri % cfg.n_classes].1] += 1;
        assigned += 1;
        ri += 1;
    }

    let mut labels = Vec::with_capacity(cfg.n);
    for (class, &count) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat(class).take(count));
    }
    let mut rng = seeding::rng(cfg.seed);
    labels.shuffle(&mut rng);

    let mut features = Array2::zeros((cfg.n, cfg.dim));
    for (i, &label) in labels.iter().enumerate() {
        for j in 0..cfg.dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = centers[[label, j]] + cfg.std * z;
        }
    }

    let ids = (0..cfg.n).map(|i| format!("e{i}")).collect();
    Dataset::new(features, labels.clone(), Some(labels), cfg.n_classes, ids)
        .expect("blob construction is internally consistent")
}

/// Class centers with adjacent pairwise distance `spacing`: on a circle for
/// two or more dimensions, on a line for one.
fn class_centers(n_classes: usize, dim: usize, spacing: f64) -> Array2<f64> {
    let mut centers = Array2::zeros((n_classes, dim));
    if n_classes == 1 {
        return centers;
    }
    if dim == 1 {
        for c in 0..n_classes {
            centers[[c, 0]] = c as f64 * spacing;
        }
        return centers;
    }
    let radius = if n_classes == 2 {
        spacing / 2.0
    } else {
        spacing / (2.0 * (std::f64::consts::PI / n_classes as f64).sin())
    };
    for c in 0..n_classes {
        let angle = std::f64::consts::TAU * c as f64 / n_classes as f64;
        centers[[c, 0]] = radius * angle.cos();
        centers[[c, 1]] = radius * angle.sin();
    }
    centers
}

/// Configuration for [`ball_rules`].
#[derive(Clone, Debug)]
pub struct RulesConfig {
    pub n_rules: usize,
    /// Coverage radius of each rule, in feature units.
    pub radius: f64,
    /// How many of the rules vote for the class after the anchor's
    /// (cyclically), making them systematically wrong.
    pub flipped_rules: usize,
    pub seed: u64,
}

/// Build labeling rules anchored at random training points: each rule votes
/// its target class for every example within `radius` of its anchor and
/// abstains elsewhere. Noise is feature-dependent: it concentrates where
/// flipped rules or overlapping neighborhoods disagree with the truth.
pub fn ball_rules(ds: &Dataset, cfg: &RulesConfig) -> RuleMatrix {
    assert!(cfg.n_rules >= 1 && cfg.flipped_rules <= cfg.n_rules);
    let clean = ds
        .clean_labels()
        .expect("rule generation needs ground-truth labels");
    let mut rng = seeding::rng(cfg.seed);
    let mut anchors = Vec::with_capacity(cfg.n_rules);
    // Spread anchors across classes round-robin so coverage is not one-sided.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &c) in clean.iter().enumerate() {
        by_class[c].push(i);
    }
    for r in 0..cfg.n_rules {
        let class = r % ds.n_classes();
        let pool = &by_class[class];
        let anchor = pool[rng.random_range(0..pool.len())];
        let target = if r < cfg.flipped_rules {
            (clean[anchor] + 1) % ds.n_classes()
        } else {
            clean[anchor]
        };
        anchors.push((anchor, target));
    }

    let x = ds.features();
    let r2 = cfg.radius * cfg.radius;
    let mut votes = Array2::from_elem((ds.n(), cfg.n_rules), -1_i64);
    for (rule, &(anchor, target)) in anchors.iter().enumerate() {
        let a = x.row(anchor);
        for i in 0..ds.n() {
            let mut d2 = 0.0;
            for (p, q) in x.row(i).iter().zip(a.iter()) {
                let diff = p - q;
                d2 += diff * diff;
            }
            if d2 <= r2 {
                votes[[i, rule]] = target as i64;
            }
        }
    }
    RuleMatrix::new(votes, ds.n_classes()).expect("votes are valid by construction")
}
