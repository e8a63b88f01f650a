//! Distillation from a converged teacher to an `eta`-sparse student.
//!
//! On a training point the teacher preactivation is the proximal solution
//! `h~* = sqrt(delta dq~) u~* + omega~` with
//! `omega~ = sqrt(delta q~) z~ + (2y-1) m~ + b~`. The student channel is
//!
//! ```text
//! omega = sqrt(delta (q - S^2/q~)) z + sqrt(delta) dS / sqrt(dq~) u~*
//!       + sqrt(delta / q~) S z~ + (2y-1) m + b
//! M     = max_u [-u^2/2 - loss'(y, sigma(h~*/T), sqrt(delta dq) u + omega)]
//! ```
//!
//! and the entropic term, with `L = lambda + dqh`, `L~ = lambda~ + dqh~`, is
//!
//! ```text
//! g_s = [(mh + dSh mh~/L~)^2 + qh + 2 Sh dSh / L~ + qh~ dSh^2 / L~^2] / (2 L)
//! Phi = -(mh m + (qh dq - dqh q)/2 + Sh dS + dSh S) + eta g_s + alpha g_E
//! ```

use serde::{Deserialize, Serialize};

use super::{label_support, solve_bias, Damper, Progress, SolverConfig, TeacherOrderParams};
use crate::error::{Error, Result};
use crate::estimators::{generalization_error, MacroState};
use crate::model::{KdObjective, ModelParams};
use crate::prox::{prox_point, LOSS_SCALE};
use crate::quadrature::QuadratureGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentOrderParams {
    pub m: f64,
    pub q: f64,
    pub dq: f64,
    pub b: f64,
    /// Teacher-student overlap `w . w~ / N`.
    pub s: f64,
    pub ds: f64,
    pub m_hat: f64,
    pub q_hat: f64,
    pub dq_hat: f64,
    pub s_hat: f64,
    pub ds_hat: f64,
    /// Overlap with the noise part of a signal-plus-noise teacher; only set
    /// by [`super::solve_bo_kd`], whose `s_hat` is conjugate to it.
    pub noise_overlap: Option<f64>,
    pub eps_g: f64,
    pub iterations: usize,
}

impl StudentOrderParams {
    pub fn macro_state(&self) -> MacroState {
        MacroState::new(self.m, self.q, self.b)
    }

    /// `(m, q, dq, b, S, dS, mh, qh, dqh, Sh, dSh)`.
    pub fn variables(&self) -> [f64; 11] {
        [
            self.m, self.q, self.dq, self.b, self.s, self.ds, self.m_hat, self.q_hat, self.dq_hat,
            self.s_hat, self.ds_hat,
        ]
    }

    pub fn with_variables(&self, v: &[f64; 11]) -> Self {
        Self {
            m: v[0],
            q: v[1],
            dq: v[2],
            b: v[3],
            s: v[4],
            ds: v[5],
            m_hat: v[6],
            q_hat: v[7],
            dq_hat: v[8],
            s_hat: v[9],
            ds_hat: v[10],
            ..*self
        }
    }
}

/// Teacher proximal solution at one `(y, z~)` node.
#[derive(Debug, Clone, Copy)]
struct TeacherNode {
    sign: f64,
    target: f64,
    weight: f64,
    zt: f64,
    ut: f64,
    soft: f64,
}

fn teacher_nodes(
    params: &ModelParams,
    teacher: &TeacherOrderParams,
    grid: &QuadratureGrid,
) -> Result<Vec<TeacherNode>> {
    let truth = KdObjective::ground_truth();
    let kd = KdObjective::new(params);
    let a = (params.delta * teacher.dq_t).sqrt();
    let cz = (params.delta * teacher.q_t).sqrt();
    let mut nodes = Vec::with_capacity(2 * grid.order);
    for (sign, target, prob) in label_support(params) {
        for (zt, w) in grid.iter() {
            let omega = cz * zt + sign * teacher.m_t + teacher.b_t;
            let p = prox_point(&truth, target, target, omega, a, LOSS_SCALE)?;
            nodes.push(TeacherNode {
                sign,
                target,
                weight: prob * w,
                zt,
                ut: p.u_star,
                soft: kd.soft_target(p.h_star),
            });
        }
    }
    Ok(nodes)
}

#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    g: f64,
    sg: f64,
    g2: f64,
    gp: f64,
    g_zt: f64,
    g_ut: f64,
    value: f64,
}

#[derive(Debug, Clone, Copy)]
struct Point {
    m: f64,
    q: f64,
    dq: f64,
    s: f64,
    ds: f64,
    b: f64,
}

struct Channel<'a> {
    params: &'a ModelParams,
    teacher: &'a TeacherOrderParams,
    grid: QuadratureGrid,
    nodes: Vec<TeacherNode>,
}

impl Channel<'_> {
    fn energetic(&self, pt: &Point) -> Result<Moments> {
        let delta = self.params.delta;
        let t = self.teacher;
        let obj = KdObjective::new(self.params);
        let a = (delta * pt.dq).sqrt();
        let cz = (delta * (pt.q - pt.s * pt.s / t.q_t).max(0.0)).sqrt();
        let c_ut = (delta / t.dq_t).sqrt() * pt.ds;
        let c_zt = (delta / t.q_t).sqrt() * pt.s;
        let mut mo = Moments::default();
        for node in &self.nodes {
            let shift = c_ut * node.ut + c_zt * node.zt + node.sign * pt.m + pt.b;
            for (z, w) in self.grid.iter() {
                let p = prox_point(&obj, node.target, node.soft, cz * z + shift, a, LOSS_SCALE)?;
                let pw = node.weight * w;
                let g = p.slope;
                mo.g += pw * g;
                mo.sg += pw * node.sign * g;
                mo.g2 += pw * g * g;
                mo.gp += pw * p.slope_prime;
                mo.g_zt += pw * g * node.zt;
                mo.g_ut += pw * g * node.ut;
                mo.value += pw * p.value;
            }
        }
        Ok(mo)
    }
}

struct Hats {
    m: f64,
    q: f64,
    dq: f64,
    s: f64,
    ds: f64,
}

/// Entropic term and its stationary order parameters for given conjugates.
fn entropic(params: &ModelParams, t: &TeacherOrderParams, h: &Hats) -> (f64, [f64; 5]) {
    let eta = params.eta;
    let l = params.lambda_s + h.dq;
    let lt = params.lambda_t + t.dq_hat;
    let a1 = h.m + h.ds * t.m_hat / lt;
    let second = a1 * a1 + h.q + 2.0 * h.s * h.ds / lt + t.q_hat * h.ds * h.ds / (lt * lt);
    let m = eta * a1 / l;
    let q = eta * second / (l * l);
    let dq = eta / l;
    let s = eta * (a1 * t.m_hat / lt + h.s / lt + h.ds * t.q_hat / (lt * lt)) / l;
    let ds = eta * h.ds / (lt * l);
    (second / (2.0 * l), [m, q, dq, s, ds])
}

fn check_teacher(t: &TeacherOrderParams) -> Result<()> {
    for (name, v) in [("teacher q", t.q_t), ("teacher dq", t.dq_t)] {
        if v.is_nan() {
            return Err(Error::NotANumber(name));
        }
        if !(v > 0.0) {
            return Err(Error::InvalidParam { name: "teacher", value: v, reason: "q and dq must be positive" });
        }
    }
    Ok(())
}

/// Solves the student fixed point for a converged teacher.
pub fn solve_kd(
    params: &ModelParams,
    teacher: &TeacherOrderParams,
    cfg: &SolverConfig,
) -> Result<StudentOrderParams> {
    params.validate()?;
    check_teacher(teacher)?;
    let grid = cfg.grid()?;
    let nodes = teacher_nodes(params, teacher, &grid)?;
    let ch = Channel { params, teacher, grid, nodes };
    let (alpha, delta) = (params.alpha, params.delta);
    let t = teacher;

    let init = cfg.start();
    let mut x = [init.m, init.q, init.dq, init.s, init.ds];
    let mut b = init.b;
    let mut damper = Damper::new(cfg, 5);
    loop {
        let [m, q, dq, s, ds] = x;
        let mut pt = Point { m, q, dq, s, ds, b };
        b = solve_bias(
            |b| ch.energetic(&Point { b, ..pt }).map(|mo| (mo.g, mo.gp)),
            b,
        )?;
        pt.b = b;
        let mo = ch.energetic(&pt)?;
        let hats = Hats {
            m: alpha * mo.sg,
            q: alpha * delta * mo.g2,
            dq: -alpha * delta * mo.gp,
            s: alpha * (delta / t.dq_t).sqrt() * mo.g_ut,
            ds: alpha * ((delta / t.q_t).sqrt() * mo.g_zt - delta * s / t.q_t * mo.gp),
        };
        let (_, target) = entropic(params, t, &hats);
        if let Progress::Converged = damper.advance(&mut x, &target, 1, &[1, 2])? {
            let [m, q, dq, s, ds] = x;
            let eps_g = generalization_error(&MacroState::new(m, q, b), delta, params.rho)?;
            return Ok(StudentOrderParams {
                m,
                q,
                dq,
                b,
                s,
                ds,
                m_hat: hats.m,
                q_hat: hats.q,
                dq_hat: hats.dq,
                s_hat: hats.s,
                ds_hat: hats.ds,
                noise_overlap: None,
                eps_g,
                iterations: damper.iterations(),
            });
        }
    }
}

/// Distillation free entropy at an arbitrary student point.
pub fn free_entropy_kd(
    params: &ModelParams,
    teacher: &TeacherOrderParams,
    student: &StudentOrderParams,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_teacher(teacher)?;
    let grid = cfg.grid()?;
    let nodes = teacher_nodes(params, teacher, &grid)?;
    let ch = Channel { params, teacher, grid, nodes };
    let st = student;
    let mo = ch.energetic(&Point { m: st.m, q: st.q, dq: st.dq, s: st.s, ds: st.ds, b: st.b })?;
    let hats = Hats { m: st.m_hat, q: st.q_hat, dq: st.dq_hat, s: st.s_hat, ds: st.ds_hat };
    let (g_s, _) = entropic(params, teacher, &hats);
    Ok(-(st.m_hat * st.m
        + 0.5 * (st.q_hat * st.dq - st.dq_hat * st.q)
        + st.s_hat * st.ds
        + st.ds_hat * st.s)
        + params.eta * g_s
        + params.alpha * mo.value)
}
