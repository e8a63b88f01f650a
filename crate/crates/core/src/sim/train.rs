//! Full-batch convex training of teacher and student.
//!
//! Both objectives have the form `c sum_mu loss(h_mu) + lambda/2 |w|^2`,
//! `c = LOSS_SCALE`, with
//! `h = X w / sqrt(N) + b` and the bias unpenalized. They are minimized by
//! L-BFGS; along a search direction the preactivations move linearly, so
//! the line search is an exact one-dimensional Newton solve costing `O(M)`
//! per evaluation.

use ndarray::{s, Array1, ArrayView2, Axis};

use super::classifier::{support_size, TrainMeta, TrainedClassifier};
use crate::error::{Error, Result};
use crate::model::{smooth_label, Dataset, KdObjective, ModelParams, LOSS_SCALE};

/// Gradient max-norm at which training stops.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Hard iteration cutoff; runs that hit it report `converged = false`.
pub const MAX_ITERS: usize = 2000;
const MEMORY: usize = 10;
/// Period at which incrementally updated preactivations are recomputed.
const REFRESH: usize = 100;

/// A training objective on a fixed dataset.
pub(crate) struct Problem<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub n_dim: usize,
    pub support: usize,
    pub lambda: f64,
    pub obj: KdObjective,
    /// Ground-truth targets (already smoothed).
    pub targets: Vec<f64>,
    /// Soft targets; ignored by a ground-truth objective.
    pub soft: Vec<f64>,
}

impl Problem<'_> {
    fn inv_sqrt_n(&self) -> f64 {
        1.0 / (self.n_dim as f64).sqrt()
    }

    /// Scaled loss derivatives for pattern `mu` at preactivation `h`.
    #[inline]
    fn derivs(&self, mu: usize, h: f64) -> (f64, f64) {
        let (d1, d2) = self.obj.derivs(self.targets[mu], self.soft[mu], h);
        (LOSS_SCALE * d1, LOSS_SCALE * d2)
    }

    /// Preactivations for the trainable weights `w` (length `support`) and bias.
    pub fn preacts(&self, w: &Array1<f64>, b: f64) -> Array1<f64> {
        let mut h = self.inputs.slice(s![.., ..self.support]).dot(w);
        let c = self.inv_sqrt_n();
        h.mapv_inplace(|v| v * c + b);
        h
    }

    #[cfg(test)]
    pub fn value(&self, w: &Array1<f64>, h: &Array1<f64>) -> f64 {
        let data: f64 = h
            .iter()
            .enumerate()
            .map(|(mu, &hm)| self.obj.value(self.targets[mu], self.soft[mu], hm))
            .sum();
        LOSS_SCALE * data + 0.5 * self.lambda * w.dot(w)
    }

    /// Gradient in `(w, b)` given the preactivations.
    pub fn gradient(&self, w: &Array1<f64>, h: &Array1<f64>) -> (Array1<f64>, f64) {
        let r: Array1<f64> = h
            .iter()
            .enumerate()
            .map(|(mu, &hm)| self.derivs(mu, hm).0)
            .collect();
        // row-wise accumulation; the strided transposed product is far slower
        let mut gw = Array1::zeros(self.support);
        for (row, &rm) in self.inputs.slice(s![.., ..self.support]).axis_iter(Axis(0)).zip(&r) {
            gw.scaled_add(rm, &row);
        }
        let c = self.inv_sqrt_n();
        gw.zip_mut_with(w, |g, &wi| *g = *g * c + self.lambda * wi);
        (gw, r.sum())
    }

    /// Second derivative of the data term in each preactivation.
    #[cfg(test)]
    pub fn curvatures(&self, h: &Array1<f64>) -> Array1<f64> {
        h.iter()
            .enumerate()
            .map(|(mu, &hm)| self.derivs(mu, hm).1)
            .collect()
    }
}

fn max_norm(gw: &Array1<f64>, gb: f64) -> f64 {
    gw.iter().fold(gb.abs(), |acc, g| acc.max(g.abs()))
}

/// Minimizer of the convex function `t -> phi(t)` on `t >= 0` given
/// `phi'(0) < 0`, from its first and second derivatives.
fn exact_line_search(mut dphi: impl FnMut(f64) -> (f64, f64), slope0: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut t = 1.0;
    for _ in 0..100 {
        let (d1, d2) = dphi(t);
        if d1.abs() <= 1e-12 * slope0.abs() {
            return t;
        }
        if d1 < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = if d2 > 0.0 { t - d1 / d2 } else { f64::NAN };
        let next = if newton > lo && newton < hi {
            newton
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * t
        };
        if (next - t).abs() <= 1e-15 * t.max(1e-300) {
            return next;
        }
        t = next;
    }
    t
}

/// L-BFGS on a [`Problem`], started from `w0` (length `support`) and `b0`.
pub(crate) fn minimize(
    problem: &Problem,
    w0: Array1<f64>,
    b0: f64,
    tol: f64,
    max_iters: usize,
) -> Result<(Array1<f64>, f64, TrainMeta)> {
    let k = problem.support;
    let c = problem.inv_sqrt_n();
    let mut w = w0;
    let mut b = b0;
    let mut h = problem.preacts(&w, b);
    let (mut gw, mut gb) = problem.gradient(&w, &h);
    let mut hist: Vec<(Array1<f64>, f64, Array1<f64>, f64, f64)> = Vec::with_capacity(MEMORY);
    let mut iterations = 0;
    loop {
        let gnorm = max_norm(&gw, gb);
        if !gnorm.is_finite() {
            return Err(Error::NotANumber("training gradient"));
        }
        if gnorm <= tol || iterations >= max_iters {
            let meta = TrainMeta { iterations, grad_norm: gnorm, converged: gnorm <= tol };
            return Ok((w, b, meta));
        }
        iterations += 1;

        // two-loop recursion on the stacked vector (w, b)
        let mut dw = gw.mapv(|g| -g);
        let mut db = -gb;
        let mut alphas = Vec::with_capacity(hist.len());
        for (sw, sb, yw, yb, rho) in hist.iter().rev() {
            let a = rho * (sw.dot(&dw) + sb * db);
            dw.scaled_add(-a, yw);
            db -= a * yb;
            alphas.push(a);
        }
        if let Some((sw, sb, yw, yb, _)) = hist.last() {
            let gamma = (sw.dot(yw) + sb * yb) / (yw.dot(yw) + yb * yb);
            dw *= gamma;
            db *= gamma;
        }
        for ((sw, sb, yw, yb, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let beta = rho * (yw.dot(&dw) + yb * db);
            dw.scaled_add(a - beta, sw);
            db += (a - beta) * sb;
        }
        let mut slope0 = gw.dot(&dw) + gb * db;
        if !(slope0 < 0.0) {
            hist.clear();
            dw = gw.mapv(|g| -g);
            db = -gb;
            slope0 = -(gw.dot(&gw) + gb * gb);
        }

        let mut dh = problem.inputs.slice(s![.., ..k]).dot(&dw);
        dh.mapv_inplace(|v| v * c + db);
        let wd = w.dot(&dw);
        let dd = dw.dot(&dw);
        let lambda = problem.lambda;
        let t = exact_line_search(
            |t| {
                let mut d1 = lambda * (wd + t * dd);
                let mut d2 = lambda * dd;
                for (mu, (&hm, &dm)) in h.iter().zip(dh.iter()).enumerate() {
                    let (l1, l2) = problem.derivs(mu, hm + t * dm);
                    d1 += l1 * dm;
                    d2 += l2 * dm * dm;
                }
                (d1, d2)
            },
            slope0,
        );

        let sw = &dw * t;
        let sb = db * t;
        w += &sw;
        b += sb;
        if iterations % REFRESH == 0 {
            h = problem.preacts(&w, b);
        } else {
            h.scaled_add(t, &dh);
        }
        let (gw_new, gb_new) = problem.gradient(&w, &h);
        let yw = &gw_new - &gw;
        let yb = gb_new - gb;
        let sy = sw.dot(&yw) + sb * yb;
        if sy > 1e-300 {
            if hist.len() == MEMORY {
                hist.remove(0);
            }
            hist.push((sw, sb, yw, yb, 1.0 / sy));
        }
        gw = gw_new;
        gb = gb_new;
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam { name: "tol", value: tol, reason: "must be positive" })
    }
}

fn finish(n_dim: usize, support: usize, w: Array1<f64>, b: f64, meta: TrainMeta) -> TrainedClassifier {
    let mut weights = Array1::zeros(n_dim);
    weights.slice_mut(s![..support]).assign(&w);
    TrainedClassifier { weights, bias: b, support, train_meta: meta }
}

fn smoothed_targets(data: &Dataset, eps: f64) -> Result<Vec<f64>> {
    data.labels.iter().map(|&y| smooth_label(f64::from(y), eps)).collect()
}

/// Regularized logistic regression on all coordinates, with smoothed labels.
pub fn train_teacher(data: &Dataset, lambda_t: f64, eps_smooth: f64, tol: f64) -> Result<TrainedClassifier> {
    if !(lambda_t >= 0.0) {
        return Err(Error::InvalidParam { name: "lambda_t", value: lambda_t, reason: "must be non-negative" });
    }
    check_tol(tol)?;
    let targets = smoothed_targets(data, eps_smooth)?;
    let problem = Problem {
        inputs: data.inputs.view(),
        n_dim: data.n_dim,
        support: data.n_dim,
        lambda: lambda_t,
        obj: KdObjective::ground_truth(),
        soft: targets.clone(),
        targets,
    };
    let (w, b, meta) = minimize(&problem, Array1::zeros(data.n_dim), 0.0, tol, MAX_ITERS)?;
    Ok(finish(data.n_dim, data.n_dim, w, b, meta))
}

pub(crate) fn student_problem<'a>(
    data: &'a Dataset,
    teacher: &TrainedClassifier,
    params: &ModelParams,
) -> Result<Problem<'a>> {
    params.validate()?;
    if teacher.n_dim() != data.n_dim {
        return Err(Error::DimensionMismatch { expected: data.n_dim, got: teacher.n_dim() });
    }
    let obj = KdObjective::new(params);
    let soft = teacher
        .preactivations(data.inputs.view())
        .iter()
        .map(|&h| obj.soft_target(h))
        .collect();
    Ok(Problem {
        inputs: data.inputs.view(),
        n_dim: data.n_dim,
        support: support_size(data.n_dim, params.eta),
        lambda: params.lambda_s,
        obj,
        targets: smoothed_targets(data, params.eps_smooth)?,
        soft,
    })
}

/// Distillation: minimizes `c sum_mu loss'(y, h~, h) + lambda/2 |w|^2` over
/// the first `floor(eta N)` weights and the bias, with the teacher fixed.
pub fn train_student_kd(
    data: &Dataset,
    teacher: &TrainedClassifier,
    params: &ModelParams,
    tol: f64,
) -> Result<TrainedClassifier> {
    check_tol(tol)?;
    let problem = student_problem(data, teacher, params)?;
    let k = problem.support;
    let (w, b, meta) = minimize(&problem, Array1::zeros(k), 0.0, tol, MAX_ITERS)?;
    Ok(finish(data.n_dim, k, w, b, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_dataset, ModelParams};
    use nalgebra::{DMatrix, DVector};

    fn params(alpha: f64) -> ModelParams {
        ModelParams { alpha, ..Default::default() }
    }

    /// Damped Newton on the stacked `(w, b)` with a dense Hessian.
    fn newton_reference(p: &Problem) -> (DVector<f64>, f64) {
        let k = p.support;
        let m = p.inputs.nrows();
        let c = 1.0 / (p.n_dim as f64).sqrt();
        let x = DMatrix::from_fn(m, k + 1, |i, j| if j < k { p.inputs[[i, j]] * c } else { 1.0 });
        let mut theta = DVector::zeros(k + 1);
        for _ in 0..100 {
            let h = &x * &theta;
            let mut g = DVector::zeros(m);
            let mut d = DVector::zeros(m);
            for i in 0..m {
                let (l1, l2) = p.obj.derivs(p.targets[i], p.soft[i], h[i]);
                g[i] = LOSS_SCALE * l1;
                d[i] = LOSS_SCALE * l2;
            }
            let mut grad = x.transpose() * g;
            let mut hess = x.transpose() * DMatrix::from_diagonal(&d) * &x;
            for j in 0..k {
                grad[j] += p.lambda * theta[j];
                hess[(j, j)] += p.lambda;
            }
            if grad.amax() < 1e-13 {
                break;
            }
            let step = hess.cholesky().expect("positive definite").solve(&grad);
            theta -= step;
        }
        let b = theta[k];
        (theta.rows(0, k).into_owned(), b)
    }

    fn assert_matches_reference(p: &Problem, clf: &TrainedClassifier) {
        let (w_ref, b_ref) = newton_reference(p);
        assert!(clf.train_meta.converged);
        for j in 0..p.support {
            assert!((clf.weights[j] - w_ref[j]).abs() < 1e-10, "w[{j}]");
        }
        assert!((clf.bias - b_ref).abs() < 1e-10);
    }

    #[test]
    fn teacher_matches_newton_reference() {
        let d = sample_dataset(60, &params(2.5), 3).unwrap();
        let clf = train_teacher(&d, 0.2, 0.1, 1e-12).unwrap();
        let targets = smoothed_targets(&d, 0.1).unwrap();
        let p = Problem {
            inputs: d.inputs.view(),
            n_dim: d.n_dim,
            support: d.n_dim,
            lambda: 0.2,
            obj: KdObjective::ground_truth(),
            soft: targets.clone(),
            targets,
        };
        assert_matches_reference(&p, &clf);
    }

    #[test]
    fn student_matches_newton_reference() {
        let mut pr = params(3.0);
        pr.chi = 0.6;
        pr.temp = 2.0;
        pr.lambda_s = 0.05;
        pr.eta = 0.4;
        let d = sample_dataset(50, &pr, 4).unwrap();
        let teacher = train_teacher(&d, 0.1, 0.0, 1e-12).unwrap();
        let clf = train_student_kd(&d, &teacher, &pr, 1e-12).unwrap();
        assert_eq!(clf.support, 20);
        let p = student_problem(&d, &teacher, &pr).unwrap();
        assert_matches_reference(&p, &clf);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut pr = params(2.0);
        pr.chi = 0.3;
        pr.temp = 1.5;
        pr.lambda_s = 0.7;
        let d = sample_dataset(40, &pr, 5).unwrap();
        let teacher = train_teacher(&d, 0.1, 0.0, 1e-10).unwrap();
        let p = student_problem(&d, &teacher, &pr).unwrap();
        let w = Array1::from_shape_fn(p.support, |j| (j as f64 * 0.37).sin());
        let b = 0.3;
        let (gw, gb) = p.gradient(&w, &p.preacts(&w, b));
        let f = |w: &Array1<f64>, b: f64| p.value(w, &p.preacts(w, b));
        let step = 1e-5;
        for j in [0, 7, p.support - 1] {
            let mut wp = w.clone();
            wp[j] += step;
            let mut wm = w.clone();
            wm[j] -= step;
            let fd = (f(&wp, b) - f(&wm, b)) / (2.0 * step);
            assert!((fd - gw[j]).abs() < 1e-6 * (1.0 + gw[j].abs()), "w[{j}]: {fd} vs {}", gw[j]);
        }
        let fd = (f(&w, b + step) - f(&w, b - step)) / (2.0 * step);
        assert!((fd - gb).abs() < 1e-6 * (1.0 + gb.abs()));
        let curv = p.curvatures(&p.preacts(&w, b));
        assert!(curv.iter().all(|&c| c > 0.0));
    }

    #[test]
    fn masked_coordinates_are_zero_and_ignored() {
        let pr = params(2.0);
        let d = sample_dataset(80, &pr, 6).unwrap();
        let teacher = train_teacher(&d, 0.1, 0.0, DEFAULT_TOL).unwrap();
        let clf = train_student_kd(&d, &teacher, &pr, DEFAULT_TOL).unwrap();
        assert_eq!(clf.support, 40);
        assert!(clf.weights.iter().skip(40).all(|&w| w == 0.0));
        // a teacher blind to the masked columns makes them irrelevant
        let mut blind = teacher.clone();
        blind.weights.slice_mut(s![40..]).fill(0.0);
        let mut scrambled = d.clone();
        scrambled.inputs.slice_mut(s![.., 40..]).mapv_inplace(|v| -3.0 * v + 1.0);
        let a = train_student_kd(&d, &blind, &pr, DEFAULT_TOL).unwrap();
        let b = train_student_kd(&scrambled, &blind, &pr, DEFAULT_TOL).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_is_deterministic() {
        let pr = params(1.5);
        let d = sample_dataset(100, &pr, 7).unwrap();
        let t1 = train_teacher(&d, 0.05, 0.0, DEFAULT_TOL).unwrap();
        let t2 = train_teacher(&d, 0.05, 0.0, DEFAULT_TOL).unwrap();
        assert_eq!(t1, t2);
        let s1 = train_student_kd(&d, &t1, &pr, DEFAULT_TOL).unwrap();
        let s2 = train_student_kd(&d, &t2, &pr, DEFAULT_TOL).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn separable_pair_drives_loss_to_zero() {
        let inputs = ndarray::array![[1.0, 0.0], [-1.0, 0.0]];
        let d = Dataset {
            n_dim: 2,
            n_samples: 2,
            inputs,
            labels: vec![1, 0],
            signal: Array1::zeros(2),
            seed: 0,
        };
        let clf = train_teacher(&d, 1e-5, 0.0, DEFAULT_TOL).unwrap();
        let h = clf.preactivations(d.inputs.view());
        let obj = KdObjective::ground_truth();
        let loss = 0.5 * (obj.value(1.0, 1.0, h[0]) + obj.value(0.0, 0.0, h[1]));
        assert!(loss < 1e-3, "loss {loss}");
        assert!(clf.weights[0] > 10.0);
        assert_eq!(clf.weights[1], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let pr = params(1.0);
        let d = sample_dataset(20, &pr, 8).unwrap();
        assert!(train_teacher(&d, -1.0, 0.0, DEFAULT_TOL).is_err());
        assert!(train_teacher(&d, 0.1, 0.0, 0.0).is_err());
        assert!(train_teacher(&d, 0.1, 0.6, DEFAULT_TOL).is_err());
        let other = sample_dataset(30, &pr, 8).unwrap();
        let t = train_teacher(&other, 0.1, 0.0, DEFAULT_TOL).unwrap();
        assert!(train_student_kd(&d, &t, &pr, DEFAULT_TOL).is_err());
    }
}
