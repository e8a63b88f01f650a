//! Regularized logistic regression on the full input space.
//!
//! Free entropy at zero temperature:
//!
//! ```text
//! Phi = -(mh m + (qh dq - dqh q) / 2) + (mh^2 + qh) / (2 (lambda + dqh)) + alpha g_E
//! g_E = E_y E_z max_u [-u^2/2 - loss(y, sqrt(delta dq) u + sqrt(delta q) z + (2y-1) m + b)]
//! ```
//!
//! With `g = -loss'(h*)` the channel slope, stationarity gives
//! `mh = alpha E[(2y-1) g]`, `qh = alpha delta E[g^2]`,
//! `dqh = -alpha delta E[dg/domega]`, `E[g] = 0`, and the entropic side
//! `m = mh / L`, `q = (mh^2 + qh) / L^2`, `dq = 1 / L` with `L = lambda + dqh`.

use serde::{Deserialize, Serialize};

use super::{label_support, solve_bias, Damper, Progress, SolverConfig};
use crate::error::Result;
use crate::estimators::{generalization_error, MacroState};
use crate::model::{KdObjective, ModelParams};
use crate::prox::{prox_point, LOSS_SCALE};
use crate::quadrature::QuadratureGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherOrderParams {
    pub m_t: f64,
    pub q_t: f64,
    pub dq_t: f64,
    pub b_t: f64,
    pub m_hat: f64,
    pub q_hat: f64,
    pub dq_hat: f64,
    pub eps_g: f64,
    pub iterations: usize,
}

impl TeacherOrderParams {
    pub fn macro_state(&self) -> MacroState {
        MacroState::new(self.m_t, self.q_t, self.b_t)
    }

    /// `(m, q, dq, b, mh, qh, dqh)`, the variables of the free entropy.
    pub fn variables(&self) -> [f64; 7] {
        [self.m_t, self.q_t, self.dq_t, self.b_t, self.m_hat, self.q_hat, self.dq_hat]
    }

    pub fn with_variables(&self, v: &[f64; 7]) -> Self {
        Self {
            m_t: v[0],
            q_t: v[1],
            dq_t: v[2],
            b_t: v[3],
            m_hat: v[4],
            q_hat: v[5],
            dq_hat: v[6],
            ..*self
        }
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    g: f64,
    sg: f64,
    g2: f64,
    gp: f64,
    value: f64,
}

fn energetic(
    params: &ModelParams,
    grid: &QuadratureGrid,
    m: f64,
    q: f64,
    dq: f64,
    b: f64,
) -> Result<Moments> {
    let obj = KdObjective::ground_truth();
    let a = (params.delta * dq).sqrt();
    let cz = (params.delta * q.max(0.0)).sqrt();
    let mut mo = Moments::default();
    for (sign, target, prob) in label_support(params) {
        for (z, w) in grid.iter() {
            let omega = cz * z + sign * m + b;
            let p = prox_point(&obj, target, target, omega, a, LOSS_SCALE)?;
            let pw = prob * w;
            mo.g += pw * p.slope;
            mo.sg += pw * sign * p.slope;
            mo.g2 += pw * p.slope * p.slope;
            mo.gp += pw * p.slope_prime;
            mo.value += pw * p.value;
        }
    }
    Ok(mo)
}

/// Solves the fixed point for a teacher trained with ridge `lambda_t` and
/// label smoothing `eps_smooth`.
pub fn solve_teacher(params: &ModelParams, cfg: &SolverConfig) -> Result<TeacherOrderParams> {
    params.validate()?;
    let grid = cfg.grid()?;
    let (alpha, delta, lambda) = (params.alpha, params.delta, params.lambda_t);
    let init = cfg.start();
    let mut x = [init.m, init.q, init.dq];
    let mut b = init.b;
    let mut damper = Damper::new(cfg, 3);
    loop {
        let [m, q, dq] = x;
        b = solve_bias(
            |b| energetic(params, &grid, m, q, dq, b).map(|mo| (mo.g, mo.gp)),
            b,
        )?;
        let mo = energetic(params, &grid, m, q, dq, b)?;
        let m_hat = alpha * mo.sg;
        let q_hat = alpha * delta * mo.g2;
        let dq_hat = -alpha * delta * mo.gp;
        let l = lambda + dq_hat;
        let target = [m_hat / l, (m_hat * m_hat + q_hat) / (l * l), 1.0 / l];
        if let Progress::Converged = damper.advance(&mut x, &target, 1, &[1, 2])? {
            let [m, q, dq] = x;
            let eps_g = generalization_error(&MacroState::new(m, q, b), delta, params.rho)?;
            return Ok(TeacherOrderParams {
                m_t: m,
                q_t: q,
                dq_t: dq,
                b_t: b,
                m_hat,
                q_hat,
                dq_hat,
                eps_g,
                iterations: damper.iterations(),
            });
        }
    }
}

/// Teacher free entropy at an arbitrary point, on the solver's quadrature grid.
pub fn free_entropy_teacher(
    params: &ModelParams,
    point: &TeacherOrderParams,
    cfg: &SolverConfig,
) -> Result<f64> {
    let grid = cfg.grid()?;
    let t = point;
    let mo = energetic(params, &grid, t.m_t, t.q_t, t.dq_t, t.b_t)?;
    let l = params.lambda_t + t.dq_hat;
    Ok(-(t.m_hat * t.m_t + 0.5 * (t.q_hat * t.dq_t - t.dq_hat * t.q_t))
        + (t.m_hat * t.m_hat + t.q_hat) / (2.0 * l)
        + params.alpha * mo.value)
}
