//! Distillation from the signal-plus-noise teacher `w~ = v + sqrt(delta/alpha) h`.
//!
//! The teacher is not trained on the data, so its preactivation on a
//! training point is a plain Gaussian field
//! `h~ = (2y-1) + b~ + sqrt(delta q~) z~` with `q~ = 1 + delta/alpha` and
//! `b~ = delta q~ / 2 log(rho / (1 - rho))`. With `S = w . h / N` and the
//! physical overlap `C = m + sqrt(delta/alpha) S`, the student channel is
//!
//! ```text
//! omega = (2y-1) m + b + sqrt(delta / q~) C z~ + sqrt(delta (q - C^2/q~)) z
//! Phi   = -(mh m + Sh S + (qh dq - dqh q)/2) + eta (mh^2 + Sh^2 + qh) / (2 L) + alpha g_E
//! ```

use serde::{Deserialize, Serialize};

use super::{label_support, solve_bias, Damper, Progress, SolverConfig, StudentOrderParams};
use crate::error::{Error, Result};
use crate::estimators::{bo_teacher_bias, gaussian_tail, generalization_error, MacroState};
use crate::model::{KdObjective, ModelParams};
use crate::prox::{prox_point, LOSS_SCALE};
use crate::quadrature::QuadratureGrid;

/// Sign inside the teacher-field variance `delta (1 +- delta/alpha)`. The
/// signal-plus-noise construction has norm `1 + delta/alpha`, i.e. `Plus`;
/// `Minus` is kept so the choice stays testable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoTeacherVariant {
    #[default]
    Plus,
    Minus,
}

impl BoTeacherVariant {
    fn field_norm(self, alpha: f64, delta: f64) -> Result<f64> {
        let q = match self {
            Self::Plus => 1.0 + delta / alpha,
            Self::Minus => 1.0 - delta / alpha,
        };
        if q > 0.0 {
            Ok(q)
        } else {
            Err(Error::InvalidParam { name: "alpha", value: alpha, reason: "teacher field variance is not positive" })
        }
    }
}

/// Test error of the teacher implied by the channel's field, i.e. the
/// probability that `h~` computed with the given variant has the wrong sign
/// on a fresh point.
pub fn bo_teacher_channel_error(params: &ModelParams, variant: BoTeacherVariant) -> Result<f64> {
    params.validate()?;
    let qt = variant.field_norm(params.alpha, params.delta)?;
    let bt = bo_teacher_bias(params.alpha, params.delta, params.rho);
    let sd = (params.delta * qt).sqrt();
    Ok(params.rho * gaussian_tail((1.0 + bt) / sd) + (1.0 - params.rho) * gaussian_tail((1.0 - bt) / sd))
}

#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    g: f64,
    sg: f64,
    g2: f64,
    gp: f64,
    g_zt: f64,
    value: f64,
}

struct Channel<'a> {
    params: &'a ModelParams,
    grid: QuadratureGrid,
    qt: f64,
    bt: f64,
}

impl<'a> Channel<'a> {
    fn new(params: &'a ModelParams, variant: BoTeacherVariant, cfg: &SolverConfig) -> Result<Self> {
        Ok(Self {
            params,
            grid: cfg.grid()?,
            qt: variant.field_norm(params.alpha, params.delta)?,
            bt: bo_teacher_bias(params.alpha, params.delta, params.rho),
        })
    }

    fn overlap(&self, m: f64, s: f64) -> f64 {
        m + (self.params.delta / self.params.alpha).sqrt() * s
    }

    fn energetic(&self, m: f64, q: f64, dq: f64, s: f64, b: f64) -> Result<Moments> {
        let delta = self.params.delta;
        let obj = KdObjective::new(self.params);
        let c = self.overlap(m, s);
        let a = (delta * dq).sqrt();
        let cz = (delta * (q - c * c / self.qt).max(0.0)).sqrt();
        let c_zt = (delta / self.qt).sqrt() * c;
        let t_sd = (delta * self.qt).sqrt();
        let mut mo = Moments::default();
        for (sign, target, prob) in label_support(self.params) {
            for (zt, wt) in self.grid.iter() {
                let soft = obj.soft_target(sign + self.bt + t_sd * zt);
                let shift = sign * m + b + c_zt * zt;
                for (z, w) in self.grid.iter() {
                    let p = prox_point(&obj, target, soft, cz * z + shift, a, LOSS_SCALE)?;
                    let pw = prob * wt * w;
                    let g = p.slope;
                    mo.g += pw * g;
                    mo.sg += pw * sign * g;
                    mo.g2 += pw * g * g;
                    mo.gp += pw * p.slope_prime;
                    mo.g_zt += pw * g * zt;
                    mo.value += pw * p.value;
                }
            }
        }
        Ok(mo)
    }
}

/// Solves the student fixed point for the signal-plus-noise teacher.
///
/// `s` in the result is the physical overlap `w . w~ / N`; the overlap
/// with the teacher's noise direction, conjugate to `s_hat`, is stored in
/// `noise_overlap`. `ds` and `ds_hat` are zero.
pub fn solve_bo_kd(
    params: &ModelParams,
    cfg: &SolverConfig,
    variant: BoTeacherVariant,
) -> Result<StudentOrderParams> {
    params.validate()?;
    let ch = Channel::new(params, variant, cfg)?;
    let (alpha, delta, eta) = (params.alpha, params.delta, params.eta);
    let init = cfg.start();
    let mut x = [init.m, init.q, init.dq, init.s];
    let mut b = init.b;
    let mut damper = Damper::new(cfg, 4);
    loop {
        let [m, q, dq, s] = x;
        b = solve_bias(|b| ch.energetic(m, q, dq, s, b).map(|mo| (mo.g, mo.gp)), b)?;
        let mo = ch.energetic(m, q, dq, s, b)?;
        let c = ch.overlap(m, s);
        // derivative of g_E in C through omega at fixed q
        let d_c = (delta / ch.qt).sqrt() * mo.g_zt - delta * c / ch.qt * mo.gp;
        let m_hat = alpha * (mo.sg + d_c);
        let s_hat = alpha * (delta / alpha).sqrt() * d_c;
        let q_hat = alpha * delta * mo.g2;
        let dq_hat = -alpha * delta * mo.gp;
        let l = params.lambda_s + dq_hat;
        let target = [
            eta * m_hat / l,
            eta * (m_hat * m_hat + s_hat * s_hat + q_hat) / (l * l),
            eta / l,
            eta * s_hat / l,
        ];
        if let Progress::Converged = damper.advance(&mut x, &target, 1, &[1, 2])? {
            let [m, q, dq, s] = x;
            let eps_g = generalization_error(&MacroState::new(m, q, b), delta, params.rho)?;
            return Ok(StudentOrderParams {
                m,
                q,
                dq,
                b,
                s: ch.overlap(m, s),
                ds: 0.0,
                m_hat,
                q_hat,
                dq_hat,
                s_hat,
                ds_hat: 0.0,
                noise_overlap: Some(s),
                eps_g,
                iterations: damper.iterations(),
            });
        }
    }
}

/// Free entropy of the signal-plus-noise distillation problem. The overlap
/// variable is `student.noise_overlap` (the conjugate of `s_hat`).
pub fn free_entropy_bo(
    params: &ModelParams,
    student: &StudentOrderParams,
    cfg: &SolverConfig,
    variant: BoTeacherVariant,
) -> Result<f64> {
    let ch = Channel::new(params, variant, cfg)?;
    let st = student;
    let s = st.noise_overlap.ok_or(Error::InvalidParam {
        name: "noise_overlap",
        value: f64::NAN,
        reason: "required for the signal-plus-noise teacher",
    })?;
    let mo = ch.energetic(st.m, st.q, st.dq, s, st.b)?;
    let l = params.lambda_s + st.dq_hat;
    Ok(-(st.m_hat * st.m + st.s_hat * s + 0.5 * (st.q_hat * st.dq - st.dq_hat * st.q))
        + params.eta * (st.m_hat * st.m_hat + st.s_hat * st.s_hat + st.q_hat) / (2.0 * l)
        + params.alpha * mo.value)
}
