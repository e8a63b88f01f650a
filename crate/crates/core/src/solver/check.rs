//! Central-difference gradients of the free entropies, used to verify that a
//! returned fixed point is a stationary point.

use super::{
    free_entropy_bo, free_entropy_kd, free_entropy_teacher, BoTeacherVariant, SolverConfig,
    StudentOrderParams, TeacherOrderParams,
};
use crate::error::{Error, Result};
use crate::model::ModelParams;

const REL_STEP: f64 = 1e-5;

fn central_gradient<const N: usize>(
    x: [f64; N],
    mut phi: impl FnMut(&[f64; N]) -> Result<f64>,
) -> Result<[f64; N]> {
    let mut grad = [0.0; N];
    for i in 0..N {
        let h = if x[i] == 0.0 { REL_STEP } else { REL_STEP * x[i].abs() };
        let mut xp = x;
        xp[i] += h;
        let mut xm = x;
        xm[i] -= h;
        grad[i] = (phi(&xp)? - phi(&xm)?) / (2.0 * h);
    }
    Ok(grad)
}

/// Gradient of the teacher free entropy in
/// `(m, q, dq, b, mh, qh, dqh)` at `t`.
pub fn teacher_gradient(params: &ModelParams, t: &TeacherOrderParams, cfg: &SolverConfig) -> Result<[f64; 7]> {
    central_gradient(t.variables(), |v| free_entropy_teacher(params, &t.with_variables(v), cfg))
}

/// Gradient of the distillation free entropy in
/// `(m, q, dq, b, S, dS, mh, qh, dqh, Sh, dSh)` at `s`, teacher held fixed.
pub fn kd_gradient(
    params: &ModelParams,
    teacher: &TeacherOrderParams,
    s: &StudentOrderParams,
    cfg: &SolverConfig,
) -> Result<[f64; 11]> {
    central_gradient(s.variables(), |v| free_entropy_kd(params, teacher, &s.with_variables(v), cfg))
}

/// Gradient of the signal-plus-noise free entropy in
/// `(m, q, dq, b, S_noise, mh, qh, dqh, Sh)` at `s`.
pub fn bo_gradient(
    params: &ModelParams,
    s: &StudentOrderParams,
    cfg: &SolverConfig,
    variant: BoTeacherVariant,
) -> Result<[f64; 9]> {
    let noise = s.noise_overlap.ok_or(Error::InvalidParam {
        name: "noise_overlap",
        value: f64::NAN,
        reason: "required for the signal-plus-noise teacher",
    })?;
    let x = [s.m, s.q, s.dq, s.b, noise, s.m_hat, s.q_hat, s.dq_hat, s.s_hat];
    central_gradient(x, |v| {
        let point = StudentOrderParams {
            m: v[0],
            q: v[1],
            dq: v[2],
            b: v[3],
            noise_overlap: Some(v[4]),
            m_hat: v[5],
            q_hat: v[6],
            dq_hat: v[7],
            s_hat: v[8],
            ..*s
        };
        free_entropy_bo(params, &point, cfg, variant)
    })
}
