//! One-dimensional proximal problems forming the energetic channels:
//!
//! ```text
//! max_u  -u^2 / 2 - c * loss(v_scale * u + omega)
//! ```
//!
//! The objective is strictly concave, so the maximizer is the unique root
//! of `G(u) = -u - c v_scale loss'(h)`. Because `|loss'| <= B`, the root lies
//! in `[-c v_scale B, c v_scale B]`; Newton steps are kept inside a shrinking
//! bracket and fall back to bisection when they leave it.

use crate::error::{Error, Result};
pub use crate::model::LOSS_SCALE;
use crate::model::{KdObjective, ModelParams};

const GRAD_TOL: f64 = 1e-12;
const MAX_ITERS: usize = 200;

/// Maximizer of a proximal channel and the quantities the solver needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxPoint {
    pub u_star: f64,
    /// Maximal value `-u*^2 / 2 - c loss(h*)`.
    pub value: f64,
    /// Preactivation at the optimum, `v_scale u* + omega`.
    pub h_star: f64,
    /// `(h* - omega) / v_scale^2 = -c loss'(h*)`: derivative of the value in `omega`.
    pub slope: f64,
    /// Derivative of `slope` in `omega`, `-c loss'' / (1 + v_scale^2 c loss'')`.
    pub slope_prime: f64,
}

/// Solves `max_u -u^2/2 - c loss(y, pt, a u + omega)` for a distillation
/// objective with ground-truth target `y` and soft target `pt`.
pub fn prox_point(
    obj: &KdObjective,
    y: f64,
    pt: f64,
    omega: f64,
    v_scale: f64,
    c: f64,
) -> Result<ProxPoint> {
    let a = v_scale;
    let fail = |residual: f64| Error::ProxNonConvergence { y, omega, v_scale, residual };
    if !(a >= 0.0) || !omega.is_finite() {
        return Err(fail(f64::NAN));
    }
    let grad = |u: f64| {
        let (d1, d2) = obj.derivs(y, pt, a * u + omega);
        (-u - c * a * d1, -1.0 - c * a * a * d2)
    };
    let bound = c * a * obj.slope_bound();
    let mut lo = -bound - 1e-300;
    let mut hi = bound + 1e-300;

    let (g0, d0) = grad(0.0);
    let mut u = (-g0 / d0).clamp(lo, hi);
    let mut converged = g0 == 0.0;
    if converged {
        u = 0.0;
    }
    let mut residual = g0.abs();
    let mut prev_step = f64::INFINITY;
    for _ in 0..MAX_ITERS {
        if converged {
            break;
        }
        let (g, d) = grad(u);
        residual = g.abs();
        if residual <= GRAD_TOL * (1.0 + u.abs()) {
            converged = true;
            break;
        }
        // G is decreasing: G > 0 means the root is to the right
        if g > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        // Newton can cycle across the inflection of the loss derivative:
        // bisect unless the step lands inside the bracket and halves
        let newton = u - g / d;
        let next = if newton > lo && newton < hi && (newton - u).abs() <= 0.5 * prev_step {
            newton
        } else {
            0.5 * (lo + hi)
        };
        prev_step = (next - u).abs();
        if (next - u).abs() <= 4.0 * f64::EPSILON * (1.0 + u.abs()) {
            u = next;
            converged = true;
            break;
        }
        u = next;
    }
    if !converged {
        return Err(fail(residual));
    }
    let h = a * u + omega;
    let (d1, d2) = obj.derivs(y, pt, h);
    let value = -0.5 * u * u - c * obj.value(y, pt, h);
    Ok(ProxPoint {
        u_star: u,
        value,
        h_star: h,
        slope: -c * d1,
        slope_prime: -c * d2 / (1.0 + a * a * c * d2),
    })
}

/// `max_u -u^2/2 - H(y, sigma((v_scale u + omega) / temp))`. Returns `(u*, value)`.
pub fn prox_logistic(y: f64, omega: f64, v_scale: f64, temp: f64) -> Result<(f64, f64)> {
    let obj = KdObjective { chi: 1.0, temp };
    let p = prox_point(&obj, y, y, omega, v_scale, LOSS_SCALE)?;
    Ok((p.u_star, p.value))
}

/// `max_u -u^2/2 - c kd_loss(y, teacher_h, v_scale u + omega)`. Returns `(u*, value)`.
pub fn prox_kd(
    y: f64,
    teacher_h: f64,
    omega: f64,
    v_scale: f64,
    params: &ModelParams,
) -> Result<(f64, f64)> {
    let obj = KdObjective::new(params);
    let p = prox_point(&obj, y, obj.soft_target(teacher_h), omega, v_scale, LOSS_SCALE)?;
    Ok((p.u_star, p.value))
}
