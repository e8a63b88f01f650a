use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::TrainedClassifier;
use crate::error::{Error, Result};
use crate::estimators::{MacroState, TeacherMacro};
use crate::model::{fill_points, sigmoid, smooth_label, BinaryLabelDistribution, Dataset, KdObjective, ModelParams};

/// Training-set diagnostics of a distilled student.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean distillation loss of the student over the training set.
    pub per_pattern_loss: f64,
    /// `|w|^2 / N` of the student.
    pub weight_norm: f64,
    /// Mean squared distance between teacher and student outputs `sigma(h)`.
    pub output_mse: f64,
    /// Mean squared distance between teacher and student preactivations.
    pub preact_mse: f64,
}

/// Overlaps `m = w.v/N`, `q = w.w/N`, the bias and, when `other` is given,
/// `s = w.w~/N` together with the other classifier's own macro state.
pub fn measure_macro_state(
    clf: &TrainedClassifier,
    data: &Dataset,
    other: Option<&TrainedClassifier>,
) -> Result<MacroState> {
    let n = data.n_dim;
    if clf.n_dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: clf.n_dim() });
    }
    let nf = n as f64;
    let w = &clf.weights;
    let mut state = MacroState::new(w.dot(&data.signal) / nf, w.dot(w) / nf, clf.bias);
    if let Some(t) = other {
        if t.n_dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: t.n_dim() });
        }
        state.s = Some(w.dot(&t.weights) / nf);
        state.teacher = Some(TeacherMacro {
            m: t.weights.dot(&data.signal) / nf,
            q: t.weights.dot(&t.weights) / nf,
            b: t.bias,
        });
    }
    Ok(state)
}

/// Misclassification rate on `n_test` fresh points around `signal`, with its
/// binomial standard error.
pub fn empirical_test_error(
    clf: &TrainedClassifier,
    signal: &Array1<f64>,
    params: &ModelParams,
    n_test: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    const CHUNK: usize = 2048;
    if n_test == 0 {
        return Err(Error::InvalidParam { name: "n_test", value: 0.0, reason: "must be at least 1" });
    }
    if clf.n_dim() != signal.len() {
        return Err(Error::DimensionMismatch { expected: signal.len(), got: clf.n_dim() });
    }
    let law = BinaryLabelDistribution::new(params.rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = 0usize;
    let mut done = 0usize;
    let mut labels = Vec::with_capacity(CHUNK);
    while done < n_test {
        let rows = CHUNK.min(n_test - done);
        let mut inputs = Array2::zeros((rows, signal.len()));
        fill_points(&mut rng, signal, params.delta, law, &mut inputs, &mut labels);
        let h = clf.preactivations(inputs.view());
        errors += h
            .iter()
            .zip(&labels)
            .filter(|&(&hm, &y)| u8::from(hm >= 0.0) != y)
            .count();
        done += rows;
    }
    let p = errors as f64 / n_test as f64;
    Ok((p, (p * (1.0 - p) / n_test as f64).sqrt()))
}

/// Training-set diagnostics of a teacher/student pair.
pub fn diagnostics(
    teacher: &TrainedClassifier,
    student: &TrainedClassifier,
    data: &Dataset,
    params: &ModelParams,
) -> Result<TrainReport> {
    for clf in [teacher, student] {
        if clf.n_dim() != data.n_dim {
            return Err(Error::DimensionMismatch { expected: data.n_dim, got: clf.n_dim() });
        }
    }
    let ht = teacher.preactivations(data.inputs.view());
    let hs = student.preactivations(data.inputs.view());
    let m = data.n_samples as f64;
    let obj = KdObjective::new(params);
    let mut loss = 0.0;
    let mut out = 0.0;
    let mut pre = 0.0;
    for ((&a, &b), &y) in ht.iter().zip(hs.iter()).zip(&data.labels) {
        let target = smooth_label(f64::from(y), params.eps_smooth)?;
        loss += obj.value(target, obj.soft_target(a), b);
        let d = sigmoid(a, 1.0) - sigmoid(b, 1.0);
        out += d * d;
        pre += (a - b) * (a - b);
    }
    let w = &student.weights;
    Ok(TrainReport {
        per_pattern_loss: loss / m,
        weight_norm: w.dot(w) / data.n_dim as f64,
        output_mse: out / m,
        preact_mse: pre / m,
    })
}
