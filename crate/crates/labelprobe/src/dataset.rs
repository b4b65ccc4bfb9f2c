//! Data model, CSV ingestion, feature preprocessing and deterministic splits.
//!
//! A [`Dataset`] owns an `n x d` feature matrix, the observed (possibly
//! corrupted) labels, and optionally the ground-truth labels when they are
//! known (synthetic corruption, reviewed subsets). Feature preprocessing is
//! expressed as a [`FeatureMap`] fitted on the training split only, so that
//! no statistics leak from validation or test rows.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::RuleMatrix;
use crate::seeding;

/// Label value used for "no vote" in rule columns of a CSV file.
pub const ABSTAIN: i64 = -1;

/// A supervised dataset with observed labels and optional ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Array2<f64>,
    noisy_labels: Vec<usize>,
    clean_labels: Option<Vec<usize>>,
    n_classes: usize,
    example_ids: Vec<String>,
    categorical_columns: Vec<usize>,
}

impl Dataset {
    /// Build a dataset, checking the invariants: labels in `[0, K)`, finite
    /// features, unique ids, matching lengths.
    pub fn new(
        features: Array2<f64>,
        noisy_labels: Vec<usize>,
        clean_labels: Option<Vec<usize>>,
        n_classes: usize,
        example_ids: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if noisy_labels.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} labels for {} rows",
                noisy_labels.len(),
                n
            )));
        }
        if let Some(clean) = &clean_labels {
            if clean.len() != n {
                return Err(Error::InvalidDataset(format!(
                    "{} clean labels for {} rows",
                    clean.len(),
                    n
                )));
            }
        }
        if example_ids.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} ids for {} rows",
                example_ids.len(),
                n
            )));
        }
        if n_classes == 0 {
            return Err(Error::InvalidDataset("n_classes must be positive".into()));
        }
        for (row, &label) in noisy_labels.iter().enumerate() {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange {
                    row: row + 1,
                    label: label as i64,
                    n_classes,
                });
            }
        }
        if let Some(clean) = &clean_labels {
            for (row, &label) in clean.iter().enumerate() {
                if label >= n_classes {
                    return Err(Error::LabelOutOfRange {
                        row: row + 1,
                        label: label as i64,
                        n_classes,
                    });
                }
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(
                "features contain NaN or infinite values".into(),
            ));
        }
        let mut seen = HashMap::new();
        for id in &example_ids {
            if seen.insert(id.clone(), ()).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            features,
            noisy_labels,
            clean_labels,
            n_classes,
            example_ids,
            categorical_columns: Vec::new(),
        })
    }

    /// Mark feature columns as categorical (affects one-hot encoding).
    pub fn with_categorical_columns(mut self, columns: Vec<usize>) -> Result<Self> {
        for &c in &columns {
            if c >= self.dim() {
                return Err(Error::InvalidDataset(format!(
                    "categorical column {c} out of range"
                )));
            }
        }
        self.categorical_columns = columns;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn clean_labels(&self) -> Option<&[usize]> {
        self.clean_labels.as_deref()
    }

    pub fn example_ids(&self) -> &[String] {
        &self.example_ids
    }

    pub fn categorical_columns(&self) -> &[usize] {
        &self.categorical_columns
    }

    /// Per-example mislabeled mask; requires ground-truth labels.
    pub fn is_mislabeled(&self) -> Option<Vec<bool>> {
        self.clean_labels.as_ref().map(|clean| {
            self.noisy_labels
                .iter()
                .zip(clean)
                .map(|(a, b)| a != b)
                .collect()
        })
    }

    /// Dataset restricted to `rows` (in the given order).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let features = take_rows(self.features.view(), rows);
        let noisy = rows.iter().map(|&r| self.noisy_labels[r]).collect();
        let clean = self
            .clean_labels
            .as_ref()
            .map(|c| rows.iter().map(|&r| c[r]).collect());
        let ids = rows.iter().map(|&r| self.example_ids[r].clone()).collect();
        Dataset {
            features,
            noisy_labels: noisy,
            clean_labels: clean,
            n_classes: self.n_classes,
            example_ids: ids,
            categorical_columns: self.categorical_columns.clone(),
        }
    }

    /// Same rows with replaced observed labels.
    pub fn with_noisy_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            self.features.clone(),
            labels,
            self.clean_labels.clone(),
            self.n_classes,
            self.example_ids.clone(),
        )
        .and_then(|d| d.with_categorical_columns(self.categorical_columns.clone()))
    }

    /// Same rows in a new feature space (after a transform). Categorical
    /// markers are dropped since encoded columns are numeric.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        if features.nrows() != self.n() {
            return Err(Error::InvalidDataset(format!(
                "replacement features have {} rows, dataset has {}",
                features.nrows(),
                self.n()
            )));
        }
        Dataset::new(
            features,
            self.noisy_labels.clone(),
            self.clean_labels.clone(),
            self.n_classes,
            self.example_ids.clone(),
        )
    }

    /// Replace the observed label with the ground-truth label on `rows`.
    pub fn relabel_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let clean = self
            .clean_labels
            .as_ref()
            .ok_or(Error::CleanLabelsRequired)?;
        let mut labels = self.noisy_labels.clone();
        for &r in rows {
            labels[r] = clean[r];
        }
        self.with_noisy_labels(labels)
    }
}

pub(crate) fn take_rows(x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&x.row(r));
    }
    out
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

/// Column roles for [`load_csv`].
///
/// Expected layout: `id,<feature columns...>,label[,clean_label][,rule_0..]`.
/// Comma separated, mandatory header row, UTF-8, `.` decimal separator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Name of the id column.
    pub id_column: String,
    /// Name of the observed label column.
    pub label_column: String,
    /// Name of the optional ground-truth label column.
    pub clean_label_column: Option<String>,
    /// Columns starting with this prefix hold labeling-rule votes
    /// (class id, or -1 for abstain).
    pub rule_prefix: Option<String>,
    /// Feature columns to treat as categorical.
    pub categorical: Vec<String>,
    /// Declared class count; inferred from the labels when absent.
    pub n_classes: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id_column: "id".into(),
            label_column: "label".into(),
            clean_label_column: None,
            rule_prefix: None,
            categorical: Vec::new(),
            n_classes: None,
        }
    }
}

/// Load a dataset (and rule votes, when rule columns are present) from CSV.
///
/// Rows with unparseable values are rejected with their 1-based data row
/// index. Categorical feature columns may hold arbitrary strings; they are
/// coded by first appearance.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Dataset, Option<RuleMatrix>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path.as_ref())?;

    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.to_string()).collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let id_idx = col(&schema.id_column)?;
    let label_idx = col(&schema.label_column)?;
    let clean_idx = match &schema.clean_label_column {
        Some(name) => Some(col(name)?),
        None => None,
    };
    let mut rule_idx: Vec<usize> = Vec::new();
    if let Some(prefix) = &schema.rule_prefix {
        for (i, h) in headers.iter().enumerate() {
            if h.starts_with(prefix.as_str()) {
                rule_idx.push(i);
            }
        }
    }
    let mut categorical_idx: Vec<usize> = Vec::new();
    for name in &schema.categorical {
        categorical_idx.push(col(name)?);
    }

    let mut feature_idx: Vec<usize> = Vec::new();
    for (i, _) in headers.iter().enumerate() {
        let reserved =
            i == id_idx || i == label_idx || Some(i) == clean_idx || rule_idx.contains(&i);
        if !reserved {
            feature_idx.push(i);
        }
    }
    if feature_idx.is_empty() {
        return Err(Error::InvalidDataset("no feature columns".into()));
    }

    let mut ids = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut cleans: Vec<i64> = Vec::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut votes: Vec<i64> = Vec::new();
    // First-appearance category codes per categorical column.
    let mut codebooks: HashMap<usize, HashMap<String, f64>> = HashMap::new();

    for (data_row, record) in reader.records().enumerate() {
        let row_no = data_row + 1;
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::CsvRow {
                row: row_no,
                message: format!(
                    "ragged row: {} fields, header has {}",
                    record.len(),
                    headers.len()
                ),
            });
        }
        ids.push(record[id_idx].to_string());
        labels.push(parse_label(&record[label_idx], row_no, &schema.label_column)?);
        if let Some(ci) = clean_idx {
            cleans.push(parse_label(
                &record[ci],
                row_no,
                schema.clean_label_column.as_deref().unwrap_or("clean"),
            )?);
        }
        for &ri in &rule_idx {
            let v = parse_label(&record[ri], row_no, &headers[ri])?;
            if v < ABSTAIN {
                return Err(Error::CsvRow {
                    row: row_no,
                    message: format!("rule vote {v} is neither a class id nor -1"),
                });
            }
            votes.push(v);
        }
        for &fi in &feature_idx {
            let raw = record[fi].trim();
            if categorical_idx.contains(&fi) {
                let book = codebooks.entry(fi).or_default();
                let next = book.len() as f64;
                let code = *book.entry(raw.to_string()).or_insert(next);
                rows.push(code);
            } else {
                let value: f64 = raw.parse().map_err(|_| Error::CsvRow {
                    row: row_no,
                    message: format!("cannot parse `{raw}` in column `{}`", headers[fi]),
                })?;
                if !value.is_finite() {
                    return Err(Error::CsvRow {
                        row: row_no,
                        message: format!("non-finite value in column `{}`", headers[fi]),
                    });
                }
                rows.push(value);
            }
        }
    }

    let n = ids.len();
    let d = feature_idx.len();
    let features = Array2::from_shape_vec((n, d), rows)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;

    let max_label = labels
        .iter()
        .chain(cleans.iter())
        .copied()
        .max()
        .unwrap_or(0);
    let n_classes = match schema.n_classes {
        Some(k) => k,
        None => (max_label.max(0) as usize) + 1,
    };
    let check_range = |values: &[i64]| -> Result<Vec<usize>> {
        values
            .iter()
            .enumerate()
            .map(|(row, &v)| {
                if v < 0 || v as usize >= n_classes {
                    Err(Error::LabelOutOfRange {
                        row: row + 1,
                        label: v,
                        n_classes,
                    })
                } else {
                    Ok(v as usize)
                }
            })
            .collect()
    };
    let noisy = check_range(&labels)?;
    let clean = if clean_idx.is_some() {
        Some(check_range(&cleans)?)
    } else {
        None
    };

    // Map categorical csv column indices to feature-matrix column indices.
    let categorical_columns = categorical_idx
        .iter()
        .filter_map(|ci| feature_idx.iter().position(|fi| fi == ci))
        .collect();

    let dataset = Dataset::new(features, noisy, clean, n_classes, ids)?
        .with_categorical_columns(categorical_columns)?;

    let rules = if rule_idx.is_empty() {
        None
    } else {
        for (i, &v) in votes.iter().enumerate() {
            if v >= n_classes as i64 {
                return Err(Error::LabelOutOfRange {
                    row: i / rule_idx.len() + 1,
                    label: v,
                    n_classes,
                });
            }
        }
        Some(RuleMatrix::new(
            Array2::from_shape_vec((n, rule_idx.len()), votes)
                .map_err(|e| Error::InvalidDataset(e.to_string()))?,
            n_classes,
        )?)
    };
    Ok((dataset, rules))
}

fn parse_label(raw: &str, row: usize, column: &str) -> Result<i64> {
    raw.trim().parse().map_err(|_| Error::CsvRow {
        row,
        message: format!("cannot parse label `{raw}` in column `{column}`"),
    })
}

// ---------------------------------------------------------------------------
// Feature maps
// ---------------------------------------------------------------------------

/// Which preprocessing to fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMapKind {
    Identity,
    Standardize,
    OneHotStandardize,
    RandomFourier { dim: usize },
}

/// Random Fourier features for the Gaussian RBF kernel
/// `k(x, x') = exp(-gamma * ||x - x'||^2)`.
///
/// `z(x) = sqrt(2/D) * cos(Omega x + b)` with rows of `Omega` drawn from
/// `N(0, 2 gamma I)` and phases from `U[0, 2 pi)`, so that
/// `E[z(x) . z(x')] = k(x, x')`.
///
/// The bandwidth defaults to `gamma = 1 / (d * var(X))` with `var(X)` the
/// pooled per-column variance of the training features. The scale heuristic
/// is an interpretation (the pooled-variance normalization keeps the kernel
/// scale-free); it is the only bandwidth value used, never searched.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomFourierMap {
    pub omega: Array2<f64>,
    pub phase: Array1<f64>,
    pub gamma: f64,
    pub dim: usize,
    pub seed: u64,
}

impl RandomFourierMap {
    pub fn fit(x: ArrayView2<'_, f64>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidFeatureMap("random-fourier needs D > 0".into()));
        }
        let d = x.ncols();
        if d == 0 || x.nrows() == 0 {
            return Err(Error::InvalidFeatureMap("empty training matrix".into()));
        }
        let mut pooled = 0.0;
        for j in 0..d {
            let col = x.column(j);
            let mean = col.sum() / x.nrows() as f64;
            pooled += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.nrows() as f64;
        }
        pooled /= d as f64;
        if pooled < 1e-12 {
            pooled = 1.0;
        }
        let gamma = 1.0 / (d as f64 * pooled);

        let mut rng = seeding::rng(seed);
        let std = (2.0 * gamma).sqrt();
        let mut omega = Array2::zeros((dim, d));
        for v in omega.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * std;
        }
        let mut phase = Array1::zeros(dim);
        for v in phase.iter_mut() {
            *v = rng.random::<f64>() * std::f64::consts::TAU;
        }
        Ok(Self {
            omega,
            phase,
            gamma,
            dim,
            seed,
        })
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let scale = (2.0 / self.dim as f64).sqrt();
        let mut z = x.dot(&self.omega.t());
        for mut row in z.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = scale * (*v + self.phase[j]).cos();
            }
        }
        z
    }

    /// Pull a gradient w.r.t. the transformed features back to input space:
    /// `J(x)^T g` where `J_{j,:} = -sqrt(2/D) sin(omega_j . x + b_j) omega_j`.
    pub fn gradient_backprop(
        &self,
        x_row: ndarray::ArrayView1<'_, f64>,
        grad_features: ndarray::ArrayView1<'_, f64>,
    ) -> Array1<f64> {
        let scale = (2.0 / self.dim as f64).sqrt();
        let mut out = Array1::zeros(x_row.len());
        for j in 0..self.dim {
            let arg = self.omega.row(j).dot(&x_row) + self.phase[j];
            let coeff = -scale * arg.sin() * grad_features[j];
            out.scaled_add(coeff, &self.omega.row(j));
        }
        out
    }
}

/// Per-column encoder for the one-hot + standardize map.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ColumnEncoder {
    Numeric { column: usize, mean: f64, scale: f64 },
    /// Categories seen at fit time, in code order. Unseen categories at
    /// transform time encode to an all-zero block.
    Categorical { column: usize, categories: Vec<f64> },
}

/// A fitted, deterministic feature transform.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureMap {
    Identity { n_features: usize },
    Standardize { means: Vec<f64>, scales: Vec<f64> },
    OneHotStandardize { columns: Vec<ColumnEncoder> },
    RandomFourier(RandomFourierMap),
}

/// Fit preprocessing statistics on the training rows only.
pub fn fit_feature_map(train: &Dataset, kind: FeatureMapKind, seed: u64) -> Result<FeatureMap> {
    let x = train.features();
    match kind {
        FeatureMapKind::Identity => Ok(FeatureMap::Identity {
            n_features: train.dim(),
        }),
        FeatureMapKind::Standardize => {
            let (means, scales) = column_stats(x);
            Ok(FeatureMap::Standardize { means, scales })
        }
        FeatureMapKind::OneHotStandardize => {
            let (means, scales) = column_stats(x);
            let mut columns = Vec::with_capacity(train.dim());
            for j in 0..train.dim() {
                if train.categorical_columns().contains(&j) {
                    let mut categories: Vec<f64> = Vec::new();
                    for v in x.column(j) {
                        if !categories.iter().any(|c| (c - v).abs() < 1e-9) {
                            categories.push(*v);
                        }
                    }
                    categories.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    columns.push(ColumnEncoder::Categorical {
                        column: j,
                        categories,
                    });
                } else {
                    columns.push(ColumnEncoder::Numeric {
                        column: j,
                        mean: means[j],
                        scale: scales[j],
                    });
                }
            }
            Ok(FeatureMap::OneHotStandardize { columns })
        }
        FeatureMapKind::RandomFourier { dim } => {
            Ok(FeatureMap::RandomFourier(RandomFourierMap::fit(x, dim, seed)?))
        }
    }
}

/// Column means and standardization scales; zero-variance columns get
/// scale 1 so the column is preserved and indexing stays stable.
fn column_stats(x: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut scales = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        means.push(mean);
        scales.push(if std < 1e-12 { 1.0 } else { std });
    }
    (means, scales)
}

impl FeatureMap {
    /// Number of output columns.
    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { n_features } => *n_features,
            FeatureMap::Standardize { means, .. } => means.len(),
            FeatureMap::OneHotStandardize { columns } => columns
                .iter()
                .map(|c| match c {
                    ColumnEncoder::Numeric { .. } => 1,
                    ColumnEncoder::Categorical { categories, .. } => categories.len(),
                })
                .sum(),
            FeatureMap::RandomFourier(map) => map.dim,
        }
    }

    /// Apply the fitted transform. Deterministic given the parameters.
    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            FeatureMap::Identity { n_features } => {
                if x.ncols() != *n_features {
                    return Err(Error::DimensionMismatch {
                        expected: *n_features,
                        got: x.ncols(),
                    });
                }
                Ok(x.to_owned())
            }
            FeatureMap::Standardize { means, scales } => {
                if x.ncols() != means.len() {
                    return Err(Error::DimensionMismatch {
                        expected: means.len(),
                        got: x.ncols(),
                    });
                }
                let mut out = x.to_owned();
                for mut row in out.rows_mut() {
                    for j in 0..means.len() {
                        row[j] = (row[j] - means[j]) / scales[j];
                    }
                }
                Ok(out)
            }
            FeatureMap::OneHotStandardize { columns } => {
                if x.ncols() != columns.len() {
                    return Err(Error::DimensionMismatch {
                        expected: columns.len(),
                        got: x.ncols(),
                    });
                }
                let out_dim = self.output_dim();
                let mut out = Array2::zeros((x.nrows(), out_dim));
                for i in 0..x.nrows() {
                    let mut o = 0;
                    for enc in columns {
                        match enc {
                            ColumnEncoder::Numeric { column, mean, scale } => {
                                out[[i, o]] = (x[[i, *column]] - mean) / scale;
                                o += 1;
                            }
                            ColumnEncoder::Categorical { column, categories } => {
                                let v = x[[i, *column]];
                                for (c, cat) in categories.iter().enumerate() {
                                    if (cat - v).abs() < 1e-9 {
                                        out[[i, o + c]] = 1.0;
                                        break;
                                    }
                                }
                                o += categories.len();
                            }
                        }
                    }
                }
                Ok(out)
            }
            FeatureMap::RandomFourier(map) => {
                if x.ncols() != map.omega.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: map.omega.ncols(),
                        got: x.ncols(),
                    });
                }
                Ok(map.transform(x))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Role of an example in the experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

/// Which labels hyperparameter selection may look at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationKind {
    /// Validation rows keep their (possibly corrupted) observed labels.
    Noisy,
    /// Validation rows are scored against ground-truth labels.
    Clean,
    /// The test split doubles as the validation set.
    Oracle,
}

impl ValidationKind {
    pub fn name(&self) -> &'static str {
        match self {
            ValidationKind::Noisy => "noisy",
            ValidationKind::Clean => "clean",
            ValidationKind::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "noisy" => Ok(ValidationKind::Noisy),
            "clean" => Ok(ValidationKind::Clean),
            "oracle" => Ok(ValidationKind::Oracle),
            _ => Err(Error::UnknownIdentifier {
                what: "validation kind",
                got: s.to_string(),
                options: "noisy, clean, oracle".into(),
            }),
        }
    }
}

/// Per-example split assignment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitTags {
    pub assignment: Vec<SplitRole>,
    pub validation_kind: ValidationKind,
}

impl SplitTags {
    pub fn rows_with(&self, role: SplitRole) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(i, &r)| (r == role).then_some(i))
            .collect()
    }

    pub fn train_rows(&self) -> Vec<usize> {
        self.rows_with(SplitRole::Train)
    }

    pub fn validation_rows(&self) -> Vec<usize> {
        self.rows_with(SplitRole::Validation)
    }

    pub fn test_rows(&self) -> Vec<usize> {
        self.rows_with(SplitRole::Test)
    }
}

/// Deterministic stratified split into train/validation/test.
///
/// Stratification is by observed class with largest-remainder rounding, so
/// per-class proportions stay within one example of the global fractions.
pub fn split(
    ds: &Dataset,
    fractions: [f64; 3],
    seed: u64,
    validation_kind: ValidationKind,
) -> Result<SplitTags> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(total));
    }
    if fractions.iter().any(|&f| f < 0.0) {
        return Err(Error::BadFractions(total));
    }
    if validation_kind == ValidationKind::Clean && ds.clean_labels().is_none() {
        return Err(Error::CleanLabelsRequired);
    }

    let positive_roles = fractions.iter().filter(|&&f| f > 0.0).count();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &label) in ds.noisy_labels().iter().enumerate() {
        by_class[label].push(i);
    }

    let mut assignment = vec![SplitRole::Train; ds.n()];
    for (class, rows) in by_class.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < positive_roles {
            return Err(Error::ClassTooSmall(class));
        }
        let mut rows = rows.clone();
        let mut rng = seeding::rng(seeding::derive_labeled(seed, "split", class as u64));
        rows.shuffle(&mut rng);

        let m = rows.len() as f64;
        let raw = [fractions[0] * m, fractions[1] * m, fractions[2] * m];
        let mut counts = [raw[0] as usize, raw[1] as usize, raw[2] as usize];
        let mut rem: Vec<(f64, usize)> = raw
            .iter()
            .enumerate()
            .map(|(r, v)| (v - v.floor(), r))
            .collect();
        // Largest fractional remainder first; deterministic tie-break on role.
        rem.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut assigned: usize = counts.iter().sum();
        let mut ri = 0;
        while assigned < rows.len() {
            counts[rem[ri % 3].1] += 1;
            assigned += 1;
            ri += 1;
        }

        let mut offset = 0;
        for (role_idx, role) in [SplitRole::Train, SplitRole::Validation, SplitRole::Test]
            .iter()
            .enumerate()
        {
            for &row in rows.iter().skip(offset).take(counts[role_idx]) {
                assignment[row] = *role;
            }
            offset += counts[role_idx];
        }
    }

    Ok(SplitTags {
        assignment,
        validation_kind,
    })
}
