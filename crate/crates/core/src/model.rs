//! Scalar model primitives (activation, losses, label transforms) and the
//! finite-size Gaussian-mixture generator shared by the solver and the
//! simulator.
//!
//! Data points are drawn as `x = (2y - 1) v / sqrt(N) + sqrt(delta) z` with
//! `v, z ~ N(0, I_N)` and `y ~ Bernoulli(rho)`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight of the data term in every training objective: teacher and
/// student minimize `LOSS_SCALE * sum_mu loss + lambda / 2 |w|^2`. With this
/// normalization the regularization strengths carry the meaning of the
/// reference figures (optimal teacher ridge near 0.1 to 0.15).
pub const LOSS_SCALE: f64 = 0.5;

/// Probabilities are clipped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before any log.
pub const PROB_FLOOR: f64 = 1e-15;

/// The problem instance. All fields are public so that configuration layers
/// can fill them in; every consumer calls [`ModelParams::validate`] first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Samples per input dimension, M / N.
    pub alpha: f64,
    /// Cluster noise variance.
    pub delta: f64,
    /// Fraction of points in the y = 1 cluster.
    pub rho: f64,
    /// Fraction of trainable student weights.
    pub eta: f64,
    /// Teacher ridge intensity.
    pub lambda_t: f64,
    /// Student ridge intensity.
    pub lambda_s: f64,
    /// Mixing between ground-truth (0) and teacher (1) targets.
    pub chi: f64,
    /// Distillation temperature.
    pub temp: f64,
    /// Uniform label smoothing.
    pub eps_smooth: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            delta: 1.0,
            rho: 0.2,
            eta: 0.5,
            lambda_t: 0.1,
            lambda_s: 1e-5,
            chi: 1.0,
            temp: 1.0,
            eps_smooth: 0.0,
        }
    }
}

fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<()> {
    if value.is_nan() {
        return Err(Error::NotANumber(name));
    }
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParam { name, value, reason })
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let p = self;
        check("alpha", p.alpha, p.alpha > 0.0 && p.alpha.is_finite(), "must be positive and finite")?;
        check("delta", p.delta, p.delta > 0.0 && p.delta.is_finite(), "must be positive and finite")?;
        check("rho", p.rho, p.rho > 0.0 && p.rho < 1.0, "must lie in (0, 1)")?;
        check("eta", p.eta, p.eta > 0.0 && p.eta <= 1.0, "must lie in (0, 1]")?;
        check("lambda_t", p.lambda_t, p.lambda_t >= 0.0 && p.lambda_t.is_finite(), "must be non-negative")?;
        check("lambda_s", p.lambda_s, p.lambda_s >= 0.0 && p.lambda_s.is_finite(), "must be non-negative")?;
        check("chi", p.chi, (0.0..=1.0).contains(&p.chi), "must lie in [0, 1]")?;
        check("temp", p.temp, p.temp > 0.0 && p.temp.is_finite(), "must be positive")?;
        check("eps_smooth", p.eps_smooth, (0.0..0.5).contains(&p.eps_smooth), "must lie in [0, 0.5)")?;
        Ok(())
    }

    /// Returns a validated copy.
    pub fn validated(self) -> Result<Self> {
        self.validate().map(|_| self)
    }

    /// Log prior odds `log(rho / (1 - rho))`.
    pub fn log_odds(&self) -> f64 {
        (self.rho / (1.0 - self.rho)).ln()
    }
}

/// `sigma(x / temp)`, evaluated without overflow for any finite `x`.
pub fn sigmoid(x: f64, temp: f64) -> f64 {
    let t = x / temp;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Cross-entropy `H(p, q) = -p log q - (1 - p) log(1 - q)` with `q` clipped
/// to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
///
/// NaN inputs panic; they always indicate an upstream bug.
pub fn cross_entropy(p: f64, q: f64) -> f64 {
    assert!(!p.is_nan() && !q.is_nan(), "cross_entropy received NaN (p = {p}, q = {q})");
    let q = q.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let h = -p * q.ln() - (1.0 - p) * (1.0 - q).ln();
    // H(p, p) for p in (0, 1) is the binary entropy, which can round to -0
    h.max(0.0)
}

/// Distillation loss on preactivations:
/// `(1 - chi) H(y, sigma(s)) + chi H(sigma(p / T), sigma(s / T))`.
///
/// `y` is the (possibly smoothed) ground-truth target; smoothing is the
/// caller's job (see [`smooth_label`]).
pub fn kd_loss(y: f64, teacher_preact: f64, student_preact: f64, params: &ModelParams) -> f64 {
    let truth = cross_entropy(y, sigmoid(student_preact, 1.0));
    if params.chi == 0.0 {
        return truth;
    }
    let t = params.temp;
    let soft = cross_entropy(sigmoid(teacher_preact, t), sigmoid(student_preact, t));
    (1.0 - params.chi) * truth + params.chi * soft
}

/// `y -> y (1 - eps) + (1 - y) eps`.
pub fn smooth_label(y: f64, eps: f64) -> Result<f64> {
    check("eps_smooth", eps, (0.0..0.5).contains(&eps), "must lie in [0, 0.5)")?;
    Ok(y * (1.0 - eps) + (1.0 - y) * eps)
}

/// Logit-space form of the distillation loss with analytic derivatives in
/// the student preactivation. Agrees with [`kd_loss`] wherever no
/// probability is clipped, and stays smooth where [`kd_loss`] saturates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdObjective {
    pub chi: f64,
    pub temp: f64,
}

impl KdObjective {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            chi: params.chi,
            temp: params.temp,
        }
    }

    /// Plain cross-entropy on ground-truth targets.
    pub fn ground_truth() -> Self {
        Self { chi: 0.0, temp: 1.0 }
    }

    /// Upper bound on `|d loss / d s|`.
    pub fn slope_bound(&self) -> f64 {
        (1.0 - self.chi) + self.chi / self.temp
    }

    /// `sigma(p / T)`: the soft target implied by a teacher preactivation.
    #[inline]
    pub fn soft_target(&self, teacher_preact: f64) -> f64 {
        sigmoid(teacher_preact, self.temp)
    }

    /// Loss value given the ground-truth target `y` and the soft target
    /// `pt = sigma(p / T)`.
    #[inline]
    pub fn value(&self, y: f64, pt: f64, s: f64) -> f64 {
        let mut v = 0.0;
        if self.chi < 1.0 {
            v += (1.0 - self.chi) * (y * softplus(-s) + (1.0 - y) * softplus(s));
        }
        if self.chi > 0.0 {
            let st = s / self.temp;
            v += self.chi * (pt * softplus(-st) + (1.0 - pt) * softplus(st));
        }
        v
    }

    /// First and second derivatives in `s`.
    #[inline]
    pub fn derivs(&self, y: f64, pt: f64, s: f64) -> (f64, f64) {
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        if self.chi < 1.0 {
            let sg = sigmoid(s, 1.0);
            d1 += (1.0 - self.chi) * (sg - y);
            d2 += (1.0 - self.chi) * sg * (1.0 - sg);
        }
        if self.chi > 0.0 {
            let t = self.temp;
            let sg = sigmoid(s, t);
            d1 += self.chi * (sg - pt) / t;
            d2 += self.chi * sg * (1.0 - sg) / (t * t);
        }
        (d1, d2)
    }
}

/// Label law `rho delta(y - 1) + (1 - rho) delta(y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryLabelDistribution {
    pub rho: f64,
}

impl BinaryLabelDistribution {
    pub fn new(rho: f64) -> Result<Self> {
        check("rho", rho, rho > 0.0 && rho < 1.0, "must lie in (0, 1)")?;
        Ok(Self { rho })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        u8::from(rng.random::<f64>() < self.rho)
    }

    /// The two labels with their probabilities, `[(0, 1 - rho), (1, rho)]`.
    pub fn support(&self) -> [(u8, f64); 2] {
        [(0, 1.0 - self.rho), (1, self.rho)]
    }
}

/// How the cluster-centre direction `v` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalKind {
    /// `v_i ~ N(0, 1)` i.i.d.
    #[default]
    Gaussian,
    /// The gauge-fixed choice `v = (1, ..., 1)`.
    Ones,
}

/// A finite-size training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_dim: usize,
    pub n_samples: usize,
    /// `n_samples x n_dim`, row-major.
    pub inputs: Array2<f64>,
    /// Cluster labels in `{0, 1}`; smoothing is never stored.
    pub labels: Vec<u8>,
    pub signal: Array1<f64>,
    pub seed: u64,
}

impl Dataset {
    /// Fraction of points with label 1.
    pub fn label_fraction(&self) -> f64 {
        self.labels.iter().map(|&y| f64::from(y)).sum::<f64>() / self.n_samples as f64
    }
}

/// `M = round(alpha N)`.
pub fn n_samples_for(n_dim: usize, alpha: f64) -> usize {
    (alpha * n_dim as f64).round() as usize
}

/// Draws a training set of `round(alpha N)` points, deterministically in `seed`.
pub fn sample_dataset(n_dim: usize, params: &ModelParams, seed: u64) -> Result<Dataset> {
    sample_dataset_with(n_dim, params, seed, SignalKind::Gaussian)
}

pub fn sample_dataset_with(
    n_dim: usize,
    params: &ModelParams,
    seed: u64,
    signal: SignalKind,
) -> Result<Dataset> {
    params.validate()?;
    let m = n_samples_for(n_dim, params.alpha);
    sample_gmm(n_dim, m, params.delta, params.rho, signal, seed)
        .map_err(|e| match e {
            Error::EmptyDataset { n_dim, .. } => Error::EmptyDataset {
                n_dim,
                alpha: params.alpha,
            },
            other => other,
        })
}

/// Lower-level generator taking the sample count directly. Accepts
/// `delta = 0`, the noiseless limit, which [`ModelParams`] forbids.
pub fn sample_gmm(
    n_dim: usize,
    n_samples: usize,
    delta: f64,
    rho: f64,
    signal: SignalKind,
    seed: u64,
) -> Result<Dataset> {
    check("delta", delta, delta >= 0.0 && delta.is_finite(), "must be non-negative")?;
    let labels_law = BinaryLabelDistribution::new(rho)?;
    if n_dim == 0 || n_samples == 0 {
        return Err(Error::EmptyDataset {
            n_dim,
            alpha: n_samples as f64 / n_dim.max(1) as f64,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Array1<f64> = match signal {
        SignalKind::Gaussian => (0..n_dim).map(|_| rng.sample(StandardNormal)).collect(),
        SignalKind::Ones => Array1::ones(n_dim),
    };
    let mut inputs = Array2::zeros((n_samples, n_dim));
    let mut labels = Vec::with_capacity(n_samples);
    fill_points(&mut rng, &v, delta, labels_law, &mut inputs, &mut labels);
    Ok(Dataset {
        n_dim,
        n_samples,
        inputs,
        labels,
        signal: v,
        seed,
    })
}

/// Fills every row of `inputs` with a fresh mixture point around `signal`.
pub(crate) fn fill_points<R: Rng>(
    rng: &mut R,
    signal: &Array1<f64>,
    delta: f64,
    law: BinaryLabelDistribution,
    inputs: &mut Array2<f64>,
    labels: &mut Vec<u8>,
) {
    let n_dim = signal.len();
    let centre_scale = 1.0 / (n_dim as f64).sqrt();
    let noise_scale = delta.sqrt();
    labels.clear();
    for mut row in inputs.rows_mut() {
        let y = law.sample(rng);
        let sign = if y == 1 { centre_scale } else { -centre_scale };
        for (x, &vi) in row.iter_mut().zip(signal.iter()) {
            let z: f64 = rng.sample(StandardNormal);
            *x = sign * vi + noise_scale * z;
        }
        labels.push(y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0, 1.0), 0.5);
        assert_eq!(sigmoid(0.0, 3.0), 0.5);
        // 1 / (1 + e^-1), evaluated in extended precision
        assert_abs_diff_eq!(sigmoid(2.0, 2.0), 0.731_058_578_630_004_9, epsilon = 1e-12);
        for &x in &[-30.0, -3.3, 0.7, 12.0] {
            assert_abs_diff_eq!(sigmoid(x, 1.0) + sigmoid(-x, 1.0), 1.0, epsilon = 1e-15);
        }
        assert!(sigmoid(1e4, 1.0) <= 1.0 && sigmoid(-1e4, 1.0) >= 0.0);
    }

    #[test]
    fn cross_entropy_values() {
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(cross_entropy(1.0, 0.5), ln2, epsilon = 1e-15);
        assert_abs_diff_eq!(cross_entropy(0.0, 0.5), ln2, epsilon = 1e-15);
        // -0.3 ln 0.7 - 0.7 ln 0.3
        assert_abs_diff_eq!(cross_entropy(0.3, 0.7), 0.949_783_446_209_775, epsilon = 1e-12);
        assert!(cross_entropy(1.0, 0.0).is_finite());
        assert!(cross_entropy(0.0, 1.0).is_finite());
    }

    #[test]
    #[should_panic(expected = "NaN")]
    fn cross_entropy_rejects_nan() {
        cross_entropy(f64::NAN, 0.5);
    }

    #[test]
    fn kd_loss_limits() {
        let mut p = ModelParams { chi: 0.0, ..Default::default() };
        assert_eq!(kd_loss(1.0, 7.0, 0.3, &p), cross_entropy(1.0, sigmoid(0.3, 1.0)));
        p.chi = 1.0;
        let s = sigmoid(0.8, 1.0);
        assert_abs_diff_eq!(kd_loss(0.0, 0.8, 0.8, &p), cross_entropy(s, s), epsilon = 1e-15);
        p.chi = 0.5;
        let expect = 0.5 * cross_entropy(1.0, sigmoid(-0.2, 1.0))
            + 0.5 * cross_entropy(sigmoid(0.4, 1.0), sigmoid(-0.2, 1.0));
        assert_abs_diff_eq!(kd_loss(1.0, 0.4, -0.2, &p), expect, epsilon = 1e-15);
    }

    #[test]
    fn objective_matches_kd_loss() {
        for &(chi, temp) in &[(0.0, 1.0), (1.0, 1.0), (0.3, 2.5), (0.9, 0.5)] {
            let params = ModelParams { chi, temp, ..Default::default() };
            let obj = KdObjective::new(&params);
            for &(y, p, s) in &[(1.0, 0.4, -0.2), (0.0, -2.0, 3.0), (0.9, 5.0, 1.5)] {
                let v = obj.value(y, obj.soft_target(p), s);
                assert_abs_diff_eq!(v, kd_loss(y, p, s, &params), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn smooth_label_values() {
        assert_eq!(smooth_label(1.0, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(smooth_label(0.0, 0.1).unwrap(), 0.1, epsilon = 1e-16);
        assert_eq!(smooth_label(1.0, 0.25).unwrap(), 0.75);
        assert!(smooth_label(1.0, 0.5).is_err());
        assert!(smooth_label(1.0, -0.1).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::default().validate().is_ok());
        let bad = [
            ModelParams { alpha: 0.0, ..Default::default() },
            ModelParams { delta: -1.0, ..Default::default() },
            ModelParams { rho: 1.0, ..Default::default() },
            ModelParams { eta: 0.0, ..Default::default() },
            ModelParams { eta: 1.5, ..Default::default() },
            ModelParams { lambda_t: -1e-3, ..Default::default() },
            ModelParams { chi: 1.1, ..Default::default() },
            ModelParams { temp: 0.0, ..Default::default() },
            ModelParams { eps_smooth: 0.5, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?} should be rejected");
        }
        let nan = ModelParams { rho: f64::NAN, ..Default::default() };
        assert_eq!(nan.validate(), Err(Error::NotANumber("rho")));
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let params = ModelParams { alpha: 2.0, ..Default::default() };
        let a = sample_dataset(100, &params, 7).unwrap();
        let b = sample_dataset(100, &params, 7).unwrap();
        assert_eq!(a.n_samples, 200);
        assert_eq!(a.inputs.dim(), (200, 100));
        assert_eq!(a, b);
        let c = sample_dataset(100, &params, 8).unwrap();
        assert_ne!(a.inputs, c.inputs);
    }

    #[test]
    fn noiseless_rows_sit_on_the_centres() {
        let d = sample_gmm(16, 20, 0.0, 0.3, SignalKind::Gaussian, 3).unwrap();
        for (row, &y) in d.inputs.rows().into_iter().zip(&d.labels) {
            let sign = if y == 1 { 1.0 } else { -1.0 };
            for (x, v) in row.iter().zip(d.signal.iter()) {
                assert_eq!(*x, sign * v / 4.0);
            }
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let params = ModelParams { alpha: 0.1, ..Default::default() };
        assert!(matches!(
            sample_dataset(4, &params, 0),
            Err(Error::EmptyDataset { n_dim: 4, .. })
        ));
    }

    #[test]
    fn ones_gauge() {
        let params = ModelParams::default();
        let d = sample_dataset_with(10, &params, 1, SignalKind::Ones).unwrap();
        assert!(d.signal.iter().all(|&v| v == 1.0));
    }
}
