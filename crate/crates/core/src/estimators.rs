//! Closed-form estimators and the asymptotic test-error formula.
//!
//! For a classifier with signal overlap `m`, norm `q` and bias `b`, the
//! preactivation of a fresh point of class `y` is Gaussian with mean
//! `(2y - 1) m + b` and variance `delta q`, so
//!
//! ```text
//! eps_g = rho H((m + b) / sqrt(delta q)) + (1 - rho) H((m - b) / sqrt(delta q))
//! ```
//!
//! with `H` the standard normal upper tail. A point is assigned label 1
//! when its preactivation is non-negative.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::sim::classifier::{support_size, TrainedClassifier};

/// Macroscopic summary of a linear classifier.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MacroState {
    pub m: f64,
    pub q: f64,
    pub b: f64,
    /// Overlap with a reference (teacher) classifier, `w . w_t / N`.
    pub s: Option<f64>,
    pub teacher: Option<TeacherMacro>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherMacro {
    pub m: f64,
    pub q: f64,
    pub b: f64,
}

impl MacroState {
    pub fn new(m: f64, q: f64, b: f64) -> Self {
        Self { m, q, b, s: None, teacher: None }
    }
}

/// Upper tail of the standard normal, `P(Z > x)`.
pub fn gaussian_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Asymptotic test error of a classifier with the given macro state.
pub fn generalization_error(state: &MacroState, delta: f64, rho: f64) -> Result<f64> {
    if state.q.is_nan() || state.m.is_nan() || state.b.is_nan() {
        return Err(Error::NotANumber("macro state"));
    }
    if state.q <= 0.0 {
        return Err(Error::DegenerateClassifier(state.q));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParam {
            name: "delta",
            value: delta,
            reason: "must be positive",
        });
    }
    let scale = (delta * state.q).sqrt();
    Ok(rho * gaussian_tail((state.m + state.b) / scale)
        + (1.0 - rho) * gaussian_tail((state.m - state.b) / scale))
}

/// Bias of the plug-in estimator, `delta q / 2 log(rho / (1 - rho))`, with
/// `q` the intensive squared norm.
pub fn plugin_bias(q: f64, delta: f64, rho: f64) -> f64 {
    0.5 * delta * q * (rho / (1.0 - rho)).ln()
}

fn hebbian_weights(data: &Dataset) -> Array1<f64> {
    // (1 / (alpha sqrt(N))) sum_mu (2 y_mu - 1) x_mu with alpha = M / N
    let n = data.n_dim as f64;
    let scale = n.sqrt() / data.n_samples as f64;
    let signs: Array1<f64> = data
        .labels
        .iter()
        .map(|&y| if y == 1 { scale } else { -scale })
        .collect();
    data.inputs.t().dot(&signs)
}

fn intensive_norm(w: &Array1<f64>) -> f64 {
    w.dot(w) / w.len() as f64
}

/// The Hebbian (class-mean difference) estimator with log-odds bias.
pub fn hebbian_estimator(data: &Dataset, delta: f64, rho: f64) -> Result<TrainedClassifier> {
    if data.n_samples == 0 {
        return Err(Error::EmptyDataset { n_dim: data.n_dim, alpha: 0.0 });
    }
    let w = hebbian_weights(data);
    let b = plugin_bias(intensive_norm(&w), delta, rho);
    Ok(TrainedClassifier::dense(w, b))
}

/// The Hebbian estimator restricted to the first `floor(eta N)` coordinates.
///
/// The bias is the one of the full estimator: it is the threshold matched to
/// the trimmed preactivation, whose mean shrinks with `eta` as fast as its
/// variance.
pub fn sparse_hebbian_estimator(
    data: &Dataset,
    eta: f64,
    delta: f64,
    rho: f64,
) -> Result<TrainedClassifier> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::InvalidParam { name: "eta", value: eta, reason: "must lie in (0, 1]" });
    }
    let mut clf = hebbian_estimator(data, delta, rho)?;
    let k = support_size(data.n_dim, eta);
    clf.weights.slice_mut(ndarray::s![k..]).fill(0.0);
    clf.support = k;
    Ok(clf)
}

/// The noisy-signal teacher `w = v + sqrt(delta / alpha) z` with the
/// plug-in bias at `q = 1 + delta / alpha`. Its macro state concentrates
/// on `(m, q) = (1, 1 + delta / alpha)`.
pub fn bo_teacher_proxy(
    signal: &Array1<f64>,
    alpha: f64,
    delta: f64,
    rho: f64,
    seed: u64,
) -> Result<TrainedClassifier> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParam { name: "alpha", value: alpha, reason: "must be positive" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = (delta / alpha).sqrt();
    let w: Array1<f64> = signal
        .iter()
        .map(|&v| v + noise * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let b = bo_teacher_bias(alpha, delta, rho);
    Ok(TrainedClassifier::dense(w, b))
}

/// `delta (1 + delta / alpha) / 2 log(rho / (1 - rho))`.
pub fn bo_teacher_bias(alpha: f64, delta: f64, rho: f64) -> f64 {
    plugin_bias(1.0 + delta / alpha, delta, rho)
}

/// Macro state of the Bayes-optimal plug-in classifier for an
/// `eta`-sparse learner, expressed on the equivalent full-support problem
/// with `(alpha / eta, delta / eta)`. Returns the state and the effective
/// noise level it must be evaluated at.
pub fn bayes_optimal_state(alpha: f64, delta: f64, rho: f64, eta: f64) -> (MacroState, f64) {
    let delta_eff = delta / eta;
    let alpha_eff = alpha / eta;
    let q = 1.0 + delta_eff / alpha_eff;
    (MacroState::new(1.0, q, plugin_bias(q, delta_eff, rho)), delta_eff)
}

/// Bayes-optimal test error for an `eta`-sparse learner.
pub fn bayes_optimal_error(alpha: f64, delta: f64, rho: f64, eta: f64) -> Result<f64> {
    for (name, v) in [("alpha", alpha), ("delta", delta), ("eta", eta)] {
        if !(v > 0.0) {
            return Err(Error::InvalidParam { name, value: v, reason: "must be positive" });
        }
    }
    let (state, delta_eff) = bayes_optimal_state(alpha, delta, rho, eta);
    generalization_error(&state, delta_eff, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_dataset, sample_gmm, ModelParams, SignalKind};
    use approx::assert_abs_diff_eq;

    // H(1) to 30 digits (mpmath erfc)
    const TAIL_AT_ONE: f64 = 0.158_655_253_931_457_05;

    #[test]
    fn tail_values() {
        assert_eq!(gaussian_tail(0.0), 0.5);
        assert_abs_diff_eq!(gaussian_tail(1.0), TAIL_AT_ONE, epsilon = 1e-15);
        assert_abs_diff_eq!(gaussian_tail(-1.0), 1.0 - TAIL_AT_ONE, epsilon = 1e-15);
    }

    #[test]
    fn gen_error_examples() {
        let e = generalization_error(&MacroState::new(1.0, 1.0, 0.0), 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(e, TAIL_AT_ONE, epsilon = 1e-12);
        for rho in [0.1, 0.5, 0.8] {
            let e = generalization_error(&MacroState::new(0.0, 1.0, 0.0), 1.0, rho).unwrap();
            assert_abs_diff_eq!(e, 0.5, epsilon = 1e-15);
        }
        let a = generalization_error(&MacroState::new(0.7, 1.3, -0.2), 1.4, 0.2).unwrap();
        let b = generalization_error(&MacroState::new(1.4, 5.2, -0.4), 1.4, 0.2).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }

    #[test]
    fn gen_error_rejects_degenerate() {
        assert!(matches!(
            generalization_error(&MacroState::new(1.0, 0.0, 0.0), 1.0, 0.5),
            Err(Error::DegenerateClassifier(_))
        ));
    }

    #[test]
    fn hebbian_single_sample_aligns() {
        let d = sample_gmm(8, 1, 0.0, 0.999_999, SignalKind::Gaussian, 11).unwrap();
        assert_eq!(d.labels[0], 1);
        let clf = hebbian_estimator(&d, 1.0, 0.5).unwrap();
        let m = clf.weights.dot(&d.signal) / 8.0;
        assert!(m > 0.0);
        let x = d.inputs.row(0);
        let cos = x.dot(&clf.weights) / (x.dot(&x).sqrt() * clf.weights.dot(&clf.weights).sqrt());
        assert_abs_diff_eq!(cos, 1.0, epsilon = 1e-12);
        assert_eq!(clf.bias, 0.0);
    }

    #[test]
    fn sparse_hebbian_trims() {
        let params = ModelParams { alpha: 1.5, ..Default::default() };
        let d = sample_dataset(40, &params, 2).unwrap();
        let full = hebbian_estimator(&d, 1.0, 0.2).unwrap();
        let same = sparse_hebbian_estimator(&d, 1.0, 1.0, 0.2).unwrap();
        assert_eq!(full, same);
        let half = sparse_hebbian_estimator(&d, 0.5, 1.0, 0.2).unwrap();
        assert_eq!(half.support, 20);
        assert!(half.weights.iter().skip(20).all(|&w| w == 0.0));
        assert_eq!(half.weights.slice(ndarray::s![..20]), full.weights.slice(ndarray::s![..20]));
        assert_eq!(half.bias, full.bias);
    }

    #[test]
    fn bo_proxy_bias_and_limit() {
        assert_eq!(bo_teacher_bias(3.0, 1.0, 0.5), 0.0);
        let v = Array1::from_elem(2000, 1.0);
        let t = bo_teacher_proxy(&v, 1e6, 1.0, 0.5, 4).unwrap();
        let q = t.weights.dot(&t.weights) / 2000.0;
        let m = t.weights.dot(&v) / 2000.0;
        // cross term 2 sqrt(delta / alpha) v.h / N has standard deviation ~4.5e-5
        assert_abs_diff_eq!(q, 1.0, epsilon = 2e-4);
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn bayes_error_limits_and_rescaling() {
        let e = bayes_optimal_error(1e12, 1.0, 0.5, 1.0).unwrap();
        assert_abs_diff_eq!(e, TAIL_AT_ONE, epsilon = 1e-10);
        // {eta, alpha, delta} <-> {1, alpha / eta, delta / eta}
        for &(a, d, r, eta) in &[(2.0, 1.0, 0.2, 0.5), (4.5, 0.7, 0.35, 0.25), (1.0, 2.0, 0.5, 0.8)] {
            let sparse = bayes_optimal_error(a, d, r, eta).unwrap();
            let full = bayes_optimal_error(a / eta, d / eta, r, 1.0).unwrap();
            assert_abs_diff_eq!(sparse, full, epsilon = 1e-12);
        }
        let grid: Vec<f64> = (1..=16).map(|i| 0.5 * i as f64).collect();
        let errs: Vec<f64> = grid.iter().map(|&a| bayes_optimal_error(a, 1.0, 0.2, 1.0).unwrap()).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn sparse_bayes_state_matches_trimmed_macro_state() {
        // trimmed plug-in: m = eta, q = eta (1 + delta / alpha), full-estimator bias
        let (a, d, r, eta) = (3.0, 1.0, 0.2, 0.5);
        let q_full = 1.0 + d / a;
        let trimmed = MacroState::new(eta, eta * q_full, plugin_bias(q_full, d, r));
        let direct = generalization_error(&trimmed, d, r).unwrap();
        assert_abs_diff_eq!(direct, bayes_optimal_error(a, d, r, eta).unwrap(), epsilon = 1e-12);
    }
}
