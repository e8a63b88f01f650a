//! One-dimensional tuning of regularization strengths.

use serde::{Deserialize, Serialize};

use super::{solve_teacher, SolverConfig, TeacherOrderParams};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// A search interval `[lo, hi]` scanned on a logarithmic grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRange {
    pub lo: f64,
    pub hi: f64,
    /// Grid points before refinement.
    pub points: usize,
}

impl Default for LogRange {
    fn default() -> Self {
        Self { lo: 1e-4, hi: 1e2, points: 13 }
    }
}

/// Minimizes `f` over `range`: a log-spaced scan followed by golden-section
/// refinement around the best grid point. Returns `(argmin, min)`.
///
/// Points where `f` fails are treated as `+inf`; if every grid point
/// fails, the first error is returned.
pub fn minimize_log_scale(
    mut f: impl FnMut(f64) -> Result<f64>,
    range: LogRange,
) -> Result<(f64, f64)> {
    if !(range.lo > 0.0 && range.hi > range.lo) || range.points < 3 {
        return Err(Error::InvalidParam { name: "range", value: range.lo, reason: "need 0 < lo < hi and at least 3 points" });
    }
    let (a, b) = (range.lo.ln(), range.hi.ln());
    let step = (b - a) / (range.points - 1) as f64;
    let mut best: Option<(usize, f64)> = None;
    let mut first_err = None;
    for i in 0..range.points {
        match f((a + step * i as f64).exp()) {
            Ok(v) if best.is_none_or(|(_, bv)| v < bv) => best = Some((i, v)),
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((i, mut fbest)) = best else {
        return Err(first_err.expect("at least one grid point was evaluated"));
    };
    let mut xbest = a + step * i as f64;
    let mut lo = (xbest - step).max(a);
    let mut hi = (xbest + step).min(b);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut g = |x: f64| f(x.exp()).unwrap_or(f64::INFINITY);
    let mut f1 = g(x1);
    let mut f2 = g(x2);
    while hi - lo > 1e-4 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = g(x2);
        }
    }
    for (x, v) in [(x1, f1), (x2, f2)] {
        if v < fbest {
            xbest = x;
            fbest = v;
        }
    }
    Ok((xbest.exp(), fbest))
}

/// Teacher with the ridge strength minimizing its test error.
pub fn optimal_teacher(
    params: &ModelParams,
    cfg: &SolverConfig,
    range: LogRange,
) -> Result<(f64, TeacherOrderParams)> {
    let (lambda, _) = minimize_log_scale(
        |l| solve_teacher(&ModelParams { lambda_t: l, ..*params }, cfg).map(|t| t.eps_g),
        range,
    )?;
    let t = solve_teacher(&ModelParams { lambda_t: lambda, ..*params }, cfg)?;
    Ok((lambda, t))
}

/// Test error of an `eta`-sparse student trained directly on the labels
/// with ridge `lambda`. It equals a dense logistic regression with
/// `alpha / eta` samples per dimension, noise `delta / eta` and ridge
/// `lambda / eta^2`.
pub fn direct_student(params: &ModelParams, lambda: f64, cfg: &SolverConfig) -> Result<TeacherOrderParams> {
    let eta = params.eta;
    let mapped = ModelParams {
        alpha: params.alpha / eta,
        delta: params.delta / eta,
        eta: 1.0,
        lambda_t: lambda / (eta * eta),
        ..*params
    };
    solve_teacher(&mapped, cfg)
}
