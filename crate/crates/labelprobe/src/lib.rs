//! Detect mislabeled training examples by probing trained models.
//!
//! A detector is the composition of four blocks: a base model, an ensemble
//! strategy, a probe, and an aggregation method. Probing a model means
//! measuring it on every training example (margin, loss, gradients, ...);
//! ensembles repeat the measurement across refits or training iterations;
//! aggregation reduces the measurements to one trust score per example,
//! where higher means more trustworthy. On top of the detector sits a
//! detect-and-handle pipeline: score, split into trusted and untrusted
//! parts, then filter or relabel before training a final estimator.
//!
//! ```
//! use labelprobe::detector::ModelProbingDetector;
//! use labelprobe::noise::inject_ncar;
//! use labelprobe::synth::{gaussian_blobs, BlobsConfig};
//!
//! let clean = gaussian_blobs(&BlobsConfig {
//!     n: 120, n_classes: 2, dim: 2, separation: 6.0, std: 1.0,
//!     seed: 7, class_weights: None,
//! });
//! let noisy_labels = inject_ncar(clean.noisy_labels(), 2, 0.3, false, 1).unwrap();
//! let ds = clean.with_noisy_labels(noisy_labels).unwrap();
//!
//! let detector = ModelProbingDetector::preset("small_loss").unwrap();
//! let scores = detector.trust_scores(ds.features(), ds.noisy_labels(), 2).unwrap();
//! assert_eq!(scores.scores.len(), ds.n());
//! ```

pub mod aggregation;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod ensembling;
pub mod evaluation;
mod linalg;
pub mod models;
pub mod noise;
pub mod pipeline;
pub mod probing;
pub mod seeding;
pub mod synth;

pub use error::{Error, Result};

/// Book chapters double as doc-tests so the guide can never drift from the
/// library.
#[cfg(doctest)]
mod booktest {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }

    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(datasets, "../../../book/src/datasets.md");
    chapter!(label_noise, "../../../book/src/label-noise.md");
    chapter!(base_models, "../../../book/src/base-models.md");
    chapter!(probes, "../../../book/src/probes.md");
    chapter!(ensembles, "../../../book/src/ensembles.md");
    chapter!(aggregation, "../../../book/src/aggregation.md");
    chapter!(detectors, "../../../book/src/detectors.md");
    chapter!(pipelines, "../../../book/src/pipelines.md");
    chapter!(evaluation, "../../../book/src/evaluation.md");
    chapter!(cli, "../../../book/src/cli.md");
}
