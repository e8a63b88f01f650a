//! Zero-temperature replica-symmetric fixed points.
//!
//! Each solver alternates between the energetic channel (Gaussian
//! expectations of proximal solutions, giving the conjugate parameters)
//! and the closed-form entropic channel (giving the order parameters),
//! with the bias re-solved exactly at every step. Updates are damped
//! fixed-point steps with Anderson acceleration.

mod bo;
mod check;
mod kd;
mod teacher;
mod tune;

pub use bo::{bo_teacher_channel_error, free_entropy_bo, solve_bo_kd, BoTeacherVariant};
pub use check::{bo_gradient, kd_gradient, teacher_gradient};
pub use kd::{free_entropy_kd, solve_kd, StudentOrderParams};
pub use teacher::{free_entropy_teacher, solve_teacher, TeacherOrderParams};
pub use tune::{direct_student, minimize_log_scale, optimal_teacher, LogRange};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::MacroState;
use crate::model::ModelParams;
use crate::quadrature::QuadratureGrid;

/// Norms above this are reported as a divergence.
pub const DIVERGENCE_Q: f64 = 1e12;

/// Starting point of a fixed-point iteration; continuation sweeps pass the
/// previous solution here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    pub m: f64,
    pub q: f64,
    pub dq: f64,
    pub b: f64,
    pub s: f64,
    pub ds: f64,
}

impl Default for InitialGuess {
    fn default() -> Self {
        Self { m: 0.1, q: 1.0, dq: 1.0, b: 0.0, s: 0.0, ds: 0.0 }
    }
}

impl From<&TeacherOrderParams> for InitialGuess {
    fn from(t: &TeacherOrderParams) -> Self {
        Self { m: t.m_t, q: t.q_t, dq: t.dq_t, b: t.b_t, s: 0.0, ds: 0.0 }
    }
}

impl From<&StudentOrderParams> for InitialGuess {
    fn from(s: &StudentOrderParams) -> Self {
        Self {
            m: s.m,
            q: s.q,
            dq: s.dq,
            b: s.b,
            s: s.noise_overlap.unwrap_or(s.s),
            ds: s.ds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Weight of the previous iterate in the damped update.
    pub damping: f64,
    /// Convergence threshold on the largest relative parameter change.
    pub tol: f64,
    pub max_iters: usize,
    pub quad_order: usize,
    /// `None` selects the default starting point.
    pub init: Option<InitialGuess>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tol: 1e-11,
            max_iters: 20_000,
            quad_order: 60,
            init: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, value: f64, reason| Err(Error::InvalidParam { name, value, reason });
        if !(0.0..1.0).contains(&self.damping) {
            return bad("damping", self.damping, "must lie in [0, 1)");
        }
        if !(self.tol > 0.0) {
            return bad("tol", self.tol, "must be positive");
        }
        if self.quad_order < 20 {
            return bad("quad_order", self.quad_order as f64, "must be at least 20");
        }
        if self.max_iters == 0 {
            return bad("max_iters", 0.0, "must be positive");
        }
        Ok(())
    }

    fn grid(&self) -> Result<QuadratureGrid> {
        self.validate()?;
        QuadratureGrid::gauss_hermite(self.quad_order)
    }

    fn start(&self) -> InitialGuess {
        self.init.unwrap_or_default()
    }
}

/// Generalization error of a converged student, as a macro state.
pub fn student_macro_state(student: &StudentOrderParams) -> MacroState {
    MacroState { m: student.m, q: student.q, b: student.b, s: Some(student.s), teacher: None }
}

/// The two-point label average: `(sign, smoothed target, probability)`.
fn label_support(params: &ModelParams) -> [(f64, f64, f64); 2] {
    let eps = params.eps_smooth;
    [(1.0, 1.0 - eps, params.rho), (-1.0, eps, 1.0 - params.rho)]
}

/// Root of a decreasing function `f(b)` (given with its derivative) by
/// Newton steps, falling back to bisection once a sign change is bracketed.
fn solve_bias(mut f: impl FnMut(f64) -> Result<(f64, f64)>, b0: f64) -> Result<f64> {
    const TOL: f64 = 1e-14;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut b = b0;
    for _ in 0..200 {
        let (v, d) = f(b)?;
        if v.is_nan() || d.is_nan() {
            return Err(Error::NotANumber("bias equation"));
        }
        if v.abs() <= TOL {
            return Ok(b);
        }
        if v > 0.0 {
            lo = b;
        } else {
            hi = b;
        }
        let mut next = if d < 0.0 { b - v / d } else { f64::NAN };
        let step_cap = 4.0 * (1.0 + b.abs());
        if !next.is_finite() || (next - b).abs() > step_cap {
            next = b + step_cap.copysign(v);
        }
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - b).abs() <= 1e-15 * (1.0 + b.abs()) {
            return Ok(next);
        }
        b = next;
    }
    Err(Error::BiasBracket { lo, hi })
}

/// Damped iteration bookkeeping shared by the three solvers.
///
/// The update is an Anderson-accelerated damped fixed-point step: the next
/// iterate mixes the last few residuals so as to minimize their combination
/// (weighted by parameter scale). Components that must stay positive are
/// mixed in log coordinates. If the accelerated step is not finite, moves a
/// positive component by more than a factor `e^3`, or the residual grows
/// well past its best value, the history is dropped and a plain damped step
/// is taken; repeated sign flips under plain steps halve the step.
struct Damper {
    step: f64,
    tol: f64,
    max_iters: usize,
    memory: usize,
    xs: Vec<Vec<f64>>,
    fs: Vec<Vec<f64>>,
    best: f64,
    last_update: Vec<f64>,
    flips: usize,
    trajectory: Vec<f64>,
}

enum Progress {
    Continue,
    Converged,
}

/// Solves the small symmetric system `a x = r` by Gaussian elimination with
/// partial pivoting. Returns `None` when singular.
fn solve_small(mut a: Vec<Vec<f64>>, mut r: Vec<f64>) -> Option<Vec<f64>> {
    let n = r.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (r[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

impl Damper {
    fn new(cfg: &SolverConfig, dim: usize) -> Self {
        Self {
            step: 1.0 - cfg.damping,
            tol: cfg.tol,
            max_iters: cfg.max_iters,
            memory: dim.min(5),
            xs: Vec::new(),
            fs: Vec::new(),
            best: f64::INFINITY,
            last_update: vec![0.0; dim],
            flips: 0,
            trajectory: Vec::new(),
        }
    }

    fn restart(&mut self) {
        self.xs.clear();
        self.fs.clear();
        self.best = f64::INFINITY;
    }

    fn anderson(&self, x: &[f64], f: &[f64], scale: &[f64]) -> Option<Vec<f64>> {
        let k = self.xs.len();
        if k < 2 {
            return None;
        }
        let m = k - 1;
        let n = x.len();
        // differences of consecutive residuals and iterates
        let df: Vec<Vec<f64>> = (0..m)
            .map(|j| (0..n).map(|i| (self.fs[j + 1][i] - self.fs[j][i]) / scale[i]).collect())
            .collect();
        let dx: Vec<Vec<f64>> = (0..m)
            .map(|j| (0..n).map(|i| self.xs[j + 1][i] - self.xs[j][i]).collect())
            .collect();
        let fr: Vec<f64> = (0..n).map(|i| f[i] / scale[i]).collect();
        let mut gram = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        let mut trace = 0.0;
        for a in 0..m {
            for b in 0..m {
                gram[a][b] = (0..n).map(|i| df[a][i] * df[b][i]).sum();
            }
            rhs[a] = (0..n).map(|i| df[a][i] * fr[i]).sum();
            trace += gram[a][a];
        }
        for (a, row) in gram.iter_mut().enumerate() {
            row[a] += 1e-12 * trace + 1e-300;
        }
        let gamma = solve_small(gram, rhs)?;
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let mut v = x[i] + self.step * f[i];
                for j in 0..m {
                    v -= gamma[j] * (dx[j][i] + self.step * df[j][i] * scale[i]);
                }
                v
            })
            .collect();
        next.iter().all(|v| v.is_finite()).then_some(next)
    }

    /// Moves `x` towards `target` and reports whether the change was small.
    /// Components listed in `positive` must stay strictly positive.
    fn advance(
        &mut self,
        x: &mut [f64],
        target: &[f64],
        q_index: usize,
        positive: &[usize],
    ) -> Result<Progress> {
        let n = x.len();
        let mut change: f64 = 0.0;
        for (xi, &ti) in x.iter().zip(target) {
            if !ti.is_finite() {
                return Err(Error::NotANumber("order-parameter update"));
            }
            change = change.max((ti - *xi).abs() / xi.abs().max(1.0));
        }
        let iteration = self.trajectory.len() + 1;
        if target[q_index] > DIVERGENCE_Q {
            return Err(Error::Divergence { iterations: iteration, q: target[q_index] });
        }
        self.trajectory.push(change);
        if change < self.tol {
            x.copy_from_slice(target);
            return Ok(Progress::Converged);
        }
        if iteration >= self.max_iters {
            let keep = self.trajectory.len().saturating_sub(50);
            return Err(Error::NonConvergence {
                iterations: iteration,
                last_change: change,
                trajectory: self.trajectory.split_off(keep),
            });
        }

        // positive components are mixed in log coordinates so that every
        // proposal stays admissible
        let is_log: Vec<bool> = (0..n).map(|i| positive.contains(&i)).collect();
        let tx: Vec<f64> = (0..n).map(|i| if is_log[i] { x[i].ln() } else { x[i] }).collect();
        let f: Vec<f64> = (0..n)
            .map(|i| {
                if is_log[i] {
                    target[i].max(1e-3 * x[i]).ln() - tx[i]
                } else {
                    target[i] - x[i]
                }
            })
            .collect();
        // oscillation is only meaningful for plain damped steps; accelerated
        // steps overshoot by design
        if self.xs.len() < 2 {
            let flipped = (0..n).any(|i| {
                f[i] * self.last_update[i] < 0.0 && f[i].abs() > 0.5 * self.last_update[i].abs()
            });
            self.flips = if flipped { self.flips + 1 } else { 0 };
            if self.flips >= 3 {
                self.step = (0.5 * self.step).max(1e-3);
                self.flips = 0;
            }
        }
        if change > 1e3 * self.best {
            self.restart();
        }
        self.best = self.best.min(change);
        self.xs.push(tx.clone());
        self.fs.push(f.clone());
        if self.xs.len() > self.memory + 1 {
            self.xs.remove(0);
            self.fs.remove(0);
        }
        let scale: Vec<f64> = (0..n).map(|i| if is_log[i] { 1.0 } else { x[i].abs().max(1.0) }).collect();
        let damped: Vec<f64> = (0..n).map(|i| tx[i] + self.step * f[i]).collect();
        let next = if self.xs.len() < 2 {
            damped
        } else {
            // accelerated moves of a positive component are capped at a factor e^3
            match self.anderson(&tx, &f, &scale) {
                Some(a) if (0..n).all(|i| !is_log[i] || (a[i] - tx[i]).abs() <= 3.0) => a,
                _ => {
                    self.restart();
                    damped
                }
            }
        };
        for i in 0..n {
            self.last_update[i] = next[i] - tx[i];
            x[i] = if is_log[i] { next[i].exp() } else { next[i] };
        }
        Ok(Progress::Continue)
    }

    fn iterations(&self) -> usize {
        self.trajectory.len()
    }
}
