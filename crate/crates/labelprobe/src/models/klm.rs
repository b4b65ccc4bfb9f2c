//! Multinomial linear model trained by SGD on the softmax log-loss, over an
//! optional random Fourier feature map (the kernelized linear model).

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    carve_holdout, log_loss, softmax_rows, EarlyStopping, FittedModel, ModelStream, MAX_ITERATIONS,
};
use crate::dataset::RandomFourierMap;
use crate::error::{Error, Result};
use crate::linalg;
use crate::seeding;

/// Hyperparameters of the SGD linear model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KlmSpec {
    /// l2 penalty on the weight matrix (the bias is not penalized).
    pub alpha: f64,
    /// Constant SGD learning rate.
    pub learning_rate: f64,
    /// Dimension of the random Fourier feature map; `None` trains on the
    /// input features directly.
    #[serde(default)]
    pub rff_dim: Option<usize>,
    /// Epoch cap, clamped to [`MAX_ITERATIONS`].
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub seed: u64,
}

fn default_max_iter() -> usize {
    MAX_ITERATIONS
}

impl Default for KlmSpec {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            learning_rate: 0.1,
            rff_dim: None,
            max_iter: MAX_ITERATIONS,
            seed: 0,
        }
    }
}

/// A fitted linear model snapshot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KlmModel {
    /// `n_classes x n_features` weight matrix (features after the map).
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub rff: Option<Arc<RandomFourierMap>>,
    pub alpha: f64,
    pub learning_rate: f64,
    /// Epoch this snapshot was taken after (1-based).
    pub iteration: usize,
    pub n_classes: usize,
    /// Input dimension before the feature map.
    pub input_dim: usize,
}

impl KlmModel {
    fn map_features(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match &self.rff {
            Some(map) => map.transform(x),
            None => x.to_owned(),
        }
    }

    fn map_row(&self, x_row: ArrayView1<'_, f64>) -> Array1<f64> {
        match &self.rff {
            Some(map) => {
                let wide = x_row.insert_axis(ndarray::Axis(0));
                map.transform(wide).row(0).to_owned()
            }
            None => x_row.to_owned(),
        }
    }

    /// Logits `phi(X) W^T + b`.
    pub fn raw_scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let phi = self.map_features(x);
        let mut z = phi.dot(&self.weights.t());
        for mut row in z.rows_mut() {
            row += &self.bias;
        }
        z
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        softmax_rows(self.raw_scores(x))
    }

    fn probabilities_row(&self, phi: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut z = self.weights.dot(&phi) + &self.bias;
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        z.mapv_inplace(|v| v / sum);
        z
    }

    /// Analytic `d p_class / d x` via the softmax Jacobian, chained through
    /// the cosine features when a random Fourier map is present.
    pub fn input_gradient(&self, x_row: ArrayView1<'_, f64>, class: usize) -> Array1<f64> {
        let phi = self.map_row(x_row);
        let p = self.probabilities_row(phi.view());
        // d p_c / d z_j = p_c (delta_cj - p_j), so
        // d p_c / d phi = p_c (w_c - sum_j p_j w_j)
        let mut mixed = Array1::zeros(phi.len());
        for j in 0..self.n_classes {
            mixed.scaled_add(p[j], &self.weights.row(j));
        }
        let mut grad_phi = self.weights.row(class).to_owned() - &mixed;
        grad_phi *= p[class];
        match &self.rff {
            Some(map) => map.gradient_backprop(x_row, grad_phi.view()),
            None => grad_phi,
        }
    }

    /// Gradient of `-log p_y(x) + alpha/2 ||W||^2` w.r.t. `W`, flattened
    /// row-major: `outer(p - onehot(y), phi(x)) + alpha W`.
    pub fn parameter_gradient(&self, x_row: ArrayView1<'_, f64>, y: usize) -> Array1<f64> {
        let phi = self.map_row(x_row);
        let mut err = self.probabilities_row(phi.view());
        err[y] -= 1.0;
        let d = phi.len();
        let mut g = Array1::zeros(self.n_classes * d);
        for c in 0..self.n_classes {
            for j in 0..d {
                g[c * d + j] = err[c] * phi[j] + self.alpha * self.weights[[c, j]];
            }
        }
        g
    }

    /// Per-example regularized loss, used by the parameter-gradient oracle.
    pub fn example_loss(&self, x_row: ArrayView1<'_, f64>, y: usize) -> f64 {
        let phi = self.map_row(x_row);
        let p = self.probabilities_row(phi.view());
        let frob: f64 = self.weights.iter().map(|w| w * w).sum();
        -p[y].max(super::PROB_CLAMP).ln() + 0.5 * self.alpha * frob
    }

    /// Self-influence `g_i^T (H + damping I)^{-1} g_i` where `H` is the
    /// Gauss-Newton matrix of the regularized empirical risk over `(x, y)`.
    ///
    /// `H` is dense of size `(C D)^2`; intended for identity maps or small
    /// feature dimensions.
    pub fn self_influence(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[usize],
        damping: f64,
    ) -> Result<Vec<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        let phi = self.map_features(x);
        let n = phi.nrows();
        let d = phi.ncols();
        let c = self.n_classes;
        let dim = c * d;

        let mut h = Array2::<f64>::zeros((dim, dim));
        for i in 0..n {
            let p = self.probabilities_row(phi.row(i));
            for c1 in 0..c {
                for c2 in 0..c {
                    let a = if c1 == c2 {
                        p[c1] * (1.0 - p[c1])
                    } else {
                        -p[c1] * p[c2]
                    };
                    if a == 0.0 {
                        continue;
                    }
                    let scale = a / n as f64;
                    for d1 in 0..d {
                        let base = scale * phi[[i, d1]];
                        if base == 0.0 {
                            continue;
                        }
                        for d2 in 0..d {
                            h[[c1 * d + d1, c2 * d + d2]] += base * phi[[i, d2]];
                        }
                    }
                }
            }
        }
        for j in 0..dim {
            h[[j, j]] += self.alpha + damping;
        }
        let l = linalg::cholesky(&h)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let g = self.parameter_gradient(x.row(i), y[i]);
            let sol = linalg::cholesky_solve(&l, g.view());
            out.push(g.dot(&sol));
        }
        Ok(out)
    }
}

/// `g^T (H + damping I)^{-1} g` for an explicit Gauss-Newton matrix; test
/// hook for checking the solve path against hand-built matrices.
pub fn quadratic_influence(g: ArrayView1<'_, f64>, h: &Array2<f64>, damping: f64) -> Result<f64> {
    let mut damped = h.clone();
    for j in 0..damped.nrows() {
        damped[[j, j]] += damping;
    }
    let l = linalg::cholesky(&damped)?;
    let sol = linalg::cholesky_solve(&l, g);
    Ok(g.dot(&sol))
}

struct Trainer {
    spec: KlmSpec,
    weights: Array2<f64>,
    bias: Array1<f64>,
    rff: Option<Arc<RandomFourierMap>>,
    phi_fit: Array2<f64>,
    y_fit: Vec<usize>,
    phi_holdout: Array2<f64>,
    y_holdout: Vec<usize>,
    n_classes: usize,
    input_dim: usize,
    epoch: usize,
    cap: usize,
    stopper: EarlyStopping,
    done: bool,
}

impl Trainer {
    fn snapshot(&self) -> FittedModel {
        FittedModel::Klm(KlmModel {
            weights: self.weights.clone(),
            bias: self.bias.clone(),
            rff: self.rff.clone(),
            alpha: self.spec.alpha,
            learning_rate: self.spec.learning_rate,
            iteration: self.epoch,
            n_classes: self.n_classes,
            input_dim: self.input_dim,
        })
    }

    fn run_epoch(&mut self) {
        let eta = self.spec.learning_rate;
        let alpha = self.spec.alpha;
        let decay = (1.0 - eta * alpha).max(0.0);
        let mut order: Vec<usize> = (0..self.phi_fit.nrows()).collect();
        let mut rng = seeding::rng(seeding::derive_labeled(
            self.spec.seed,
            "epoch",
            self.epoch as u64,
        ));
        order.shuffle(&mut rng);

        for &i in &order {
            let phi = self.phi_fit.row(i);
            let mut err = {
                let mut z = self.weights.dot(&phi) + &self.bias;
                let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in z.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                z.mapv_inplace(|v| v / sum);
                z
            };
            err[self.y_fit[i]] -= 1.0;
            if decay != 1.0 {
                self.weights.mapv_inplace(|w| w * decay);
            }
            for c in 0..self.n_classes {
                self.weights.row_mut(c).scaled_add(-eta * err[c], &phi);
                self.bias[c] -= eta * err[c];
            }
        }
    }

    fn holdout_loss(&self) -> f64 {
        let mut z = self.phi_holdout.dot(&self.weights.t());
        for mut row in z.rows_mut() {
            row += &self.bias;
        }
        log_loss(softmax_rows(z).view(), &self.y_holdout)
    }
}

impl Iterator for Trainer {
    type Item = FittedModel;

    fn next(&mut self) -> Option<FittedModel> {
        if self.done || self.epoch >= self.cap {
            return None;
        }
        self.epoch += 1;
        self.run_epoch();
        if self.epoch >= self.cap {
            self.done = true;
        } else if !self.y_holdout.is_empty() {
            let loss = self.holdout_loss();
            if self.stopper.should_stop(loss) {
                self.done = true;
            }
        }
        Some(self.snapshot())
    }
}

pub(super) fn staged_fit(
    spec: &KlmSpec,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
) -> Result<ModelStream> {
    if spec.learning_rate <= 0.0 {
        return Err(Error::Model("learning rate must be positive".into()));
    }
    let (fit_rows, holdout_rows) = carve_holdout(x.nrows(), spec.seed);
    let x_fit = crate::dataset::take_rows(x, &fit_rows);
    let y_fit: Vec<usize> = fit_rows.iter().map(|&i| y[i]).collect();
    let x_holdout = crate::dataset::take_rows(x, &holdout_rows);
    let y_holdout: Vec<usize> = holdout_rows.iter().map(|&i| y[i]).collect();

    let rff = match spec.rff_dim {
        Some(dim) => Some(Arc::new(RandomFourierMap::fit(
            x_fit.view(),
            dim,
            seeding::derive_labeled(spec.seed, "rff", 0),
        )?)),
        None => None,
    };
    let phi_fit = match &rff {
        Some(map) => map.transform(x_fit.view()),
        None => x_fit,
    };
    let phi_holdout = match &rff {
        Some(map) => map.transform(x_holdout.view()),
        None => x_holdout,
    };

    let d = phi_fit.ncols();
    let trainer = Trainer {
        weights: Array2::zeros((n_classes, d)),
        bias: Array1::zeros(n_classes),
        rff,
        phi_fit,
        y_fit,
        stopper: EarlyStopping::new(!y_holdout.is_empty()),
        phi_holdout,
        y_holdout,
        n_classes,
        input_dim: x.ncols(),
        epoch: 0,
        cap: spec.max_iter.min(MAX_ITERATIONS),
        done: false,
        spec: spec.clone(),
    };
    Ok(ModelStream::new(Box::new(trainer)))
}
