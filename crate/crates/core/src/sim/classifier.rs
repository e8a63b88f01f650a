use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

/// Optimizer bookkeeping attached to a trained classifier.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMeta {
    pub iterations: usize,
    /// Max-norm of the objective gradient at the returned point.
    pub grad_norm: f64,
    pub converged: bool,
}

/// A linear classifier `f(x) = x . w / sqrt(N) + b`. Only the first
/// `support` coordinates of `weights` may be non-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub weights: Array1<f64>,
    pub bias: f64,
    pub support: usize,
    pub train_meta: TrainMeta,
}

impl TrainedClassifier {
    /// A classifier with every coordinate trainable.
    pub fn dense(weights: Array1<f64>, bias: f64) -> Self {
        let support = weights.len();
        Self {
            weights,
            bias,
            support,
            train_meta: TrainMeta::default(),
        }
    }

    /// The zero classifier; its preactivation is 0 everywhere.
    pub fn zeros(n_dim: usize) -> Self {
        Self::dense(Array1::zeros(n_dim), 0.0)
    }

    pub fn n_dim(&self) -> usize {
        self.weights.len()
    }

    /// `true` for coordinates the classifier may train.
    pub fn mask(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.weights.len()).map(move |i| i < self.support)
    }

    /// Preactivation on a single input.
    pub fn preactivation(&self, x: ArrayView1<f64>) -> f64 {
        let n = self.weights.len() as f64;
        let k = self.support;
        x.slice(ndarray::s![..k]).dot(&self.weights.slice(ndarray::s![..k])) / n.sqrt() + self.bias
    }

    /// Preactivations on every row of `inputs`.
    pub fn preactivations(&self, inputs: ArrayView2<f64>) -> Array1<f64> {
        let n = self.weights.len() as f64;
        let k = self.support;
        let mut h = inputs
            .slice(ndarray::s![.., ..k])
            .dot(&self.weights.slice(ndarray::s![..k]));
        let scale = 1.0 / n.sqrt();
        h.mapv_inplace(|v| v * scale + self.bias);
        h
    }

    /// Label 1 when the preactivation is non-negative.
    pub fn predict(&self, x: ArrayView1<f64>) -> u8 {
        u8::from(self.preactivation(x) >= 0.0)
    }
}

/// Number of trainable coordinates for a sparsity level, `floor(eta N)`.
pub fn support_size(n_dim: usize, eta: f64) -> usize {
    let k = (eta * n_dim as f64 + 1e-9).floor() as usize;
    k.clamp(1, n_dim)
}
