//! Sweep execution.
//!
//! Grid points are grouped into continuation lines (see
//! [`SweepSpec::lines`]); a line is solved sequentially, each replica solve
//! warm-started from the previous point, while lines and simulation seeds
//! run in parallel. Records are emitted in grid order whatever the worker
//! count, and every computation depends only on its grid point and seed,
//! so the output is bit-identical across worker counts.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::time::Instant;

use kd_core::estimators::{bayes_optimal_error, bayes_optimal_state, bo_teacher_proxy};
use kd_core::model::sample_dataset;
use kd_core::sim::{
    diagnostics, empirical_test_error, measure_macro_state, train_student_kd, train_teacher, TrainReport,
    TrainedClassifier,
};
use kd_core::solver::{
    free_entropy_bo, free_entropy_kd, free_entropy_teacher, minimize_log_scale, optimal_teacher, solve_bo_kd,
    solve_kd, solve_teacher, InitialGuess, SolverConfig, StudentOrderParams, TeacherOrderParams,
};
use kd_core::{generalization_error, MacroState, ModelParams};
use rayon::prelude::*;

use crate::error::Result;
use crate::record::{EmpiricalBlock, ReplicaBlock, Stat, Status, SweepRecord};
use crate::spec::{Mode, SweepSpec, Tune};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    /// Fill the wall-time column. Off by default because timings differ
    /// between runs.
    pub timing: bool,
}

/// Seed of simulation run `k` at grid point `point`.
pub fn run_seed(base: u64, point: usize, k: usize) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(base) ^ point as u64) ^ k as u64)
}

/// Replica solutions carried along a continuation line.
#[derive(Default)]
struct Line {
    teacher: Option<TeacherOrderParams>,
    kd: Option<StudentOrderParams>,
    bo: Option<StudentOrderParams>,
}

/// Solves from `prev` when given, falling back to the configured start.
fn warm<T>(
    cfg: &SolverConfig,
    prev: Option<InitialGuess>,
    solve: impl Fn(&SolverConfig) -> kd_core::Result<T>,
) -> kd_core::Result<T> {
    if let Some(init) = prev {
        if let Ok(x) = solve(&SolverConfig { init: Some(init), ..cfg.clone() }) {
            return Ok(x);
        }
    }
    solve(cfg)
}

struct PointRun<'a> {
    spec: &'a SweepSpec,
    index: usize,
    params: ModelParams,
    timing: bool,
}

impl PointRun<'_> {
    fn record(&self, mode: Mode, started: Instant) -> SweepRecord {
        SweepRecord {
            series: self.spec.name.clone(),
            point: self.index,
            params: self.params,
            mode,
            replica: None,
            empirical: None,
            status: Status::Ok,
            wall_time: self.timing.then(|| started.elapsed().as_secs_f64()),
        }
    }

    fn failed(&self, mode: Mode, started: Instant, e: &kd_core::Error) -> SweepRecord {
        let mut rec = self.record(mode, started);
        rec.status = Status::from_core(e);
        if let kd_core::Error::NonConvergence { iterations, .. } = e {
            rec.replica = Some(ReplicaBlock {
                m: f64::NAN,
                q: f64::NAN,
                dq: f64::NAN,
                s: f64::NAN,
                ds: f64::NAN,
                b: f64::NAN,
                eps_g: f64::NAN,
                phi: f64::NAN,
                converged: false,
                iterations: *iterations,
            });
        }
        rec
    }
}

fn teacher_block(t: &TeacherOrderParams, phi: f64) -> ReplicaBlock {
    ReplicaBlock {
        m: t.m_t,
        q: t.q_t,
        dq: t.dq_t,
        s: f64::NAN,
        ds: f64::NAN,
        b: t.b_t,
        eps_g: t.eps_g,
        phi,
        converged: true,
        iterations: t.iterations,
    }
}

fn student_block(s: &StudentOrderParams, phi: f64) -> ReplicaBlock {
    ReplicaBlock {
        m: s.m,
        q: s.q,
        dq: s.dq,
        s: s.s,
        ds: s.ds,
        b: s.b,
        eps_g: s.eps_g,
        phi,
        converged: true,
        iterations: s.iterations,
    }
}

/// Applies the spec's tuning, leaving the tuned value in `params` and the
/// teacher it implies in `line`.
fn tune(spec: &SweepSpec, params: &mut ModelParams, line: &mut Line) -> kd_core::Result<()> {
    let cfg = &spec.solver;
    match spec.tune {
        None => {}
        Some(Tune::LambdaT) => {
            let prev = line.teacher.as_ref().map(InitialGuess::from);
            let (lambda, t) = warm(cfg, prev, |c| optimal_teacher(params, c, spec.tune_range))?;
            params.lambda_t = lambda;
            line.teacher = Some(t);
        }
        Some(Tune::LambdaS) => {
            let prev = line.teacher.as_ref().map(InitialGuess::from);
            let teacher = warm(cfg, prev, |c| solve_teacher(params, c))?;
            let prev = line.kd.as_ref().map(InitialGuess::from);
            let (lambda, _) = minimize_log_scale(
                |l| warm(cfg, prev, |c| solve_kd(&ModelParams { lambda_s: l, ..*params }, &teacher, c)).map(|s| s.eps_g),
                spec.tune_range,
            )?;
            params.lambda_s = lambda;
            line.teacher = Some(teacher);
        }
    }
    Ok(())
}

fn run_point(spec: &SweepSpec, index: usize, line: &mut Line, timing: bool) -> Vec<SweepRecord> {
    let started = Instant::now();
    let mut run = PointRun { spec, index, params: spec.point(index), timing };
    if let Err(e) = run.params.validate().and_then(|_| tune(spec, &mut run.params, line)) {
        *line = Line::default();
        return spec.modes.iter().map(|&m| run.failed(m, started, &e)).collect();
    }
    let params = run.params;
    let cfg = &spec.solver;
    let needs_teacher = spec.modes.iter().any(|m| matches!(m, Mode::ReplicaTeacher | Mode::ReplicaKd));
    let mut teacher = None;
    if needs_teacher {
        let solved = match (&line.teacher, spec.tune.is_some()) {
            (Some(t), true) => Ok(*t),
            _ => warm(cfg, line.teacher.as_ref().map(InitialGuess::from), |c| solve_teacher(&params, c)),
        };
        line.teacher = solved.as_ref().ok().copied();
        teacher = Some(solved);
    }

    let sim_modes: Vec<Mode> = spec.modes.iter().copied().filter(|m| m.is_simulation()).collect();
    let t0 = Instant::now();
    let simulated = if sim_modes.is_empty() { Vec::new() } else { simulate_point(spec, index, &params, &sim_modes) };
    let sim_time = timing.then(|| t0.elapsed().as_secs_f64());

    let mut out = Vec::with_capacity(spec.modes.len());
    for &mode in &spec.modes {
        let t0 = Instant::now();
        let rec = match mode {
            Mode::ReplicaTeacher => match teacher.as_ref().expect("teacher solved above") {
                Ok(t) => {
                    let phi = free_entropy_teacher(&params, t, cfg).unwrap_or(f64::NAN);
                    SweepRecord { replica: Some(teacher_block(t, phi)), ..run.record(mode, t0) }
                }
                Err(e) => run.failed(mode, t0, e),
            },
            Mode::ReplicaKd => {
                let solved = match teacher.as_ref().expect("teacher solved above") {
                    Ok(t) => warm(cfg, line.kd.as_ref().map(InitialGuess::from), |c| solve_kd(&params, t, c))
                        .map(|s| (s, free_entropy_kd(&params, t, &s, cfg).unwrap_or(f64::NAN))),
                    Err(e) => Err(e.clone()),
                };
                line.kd = solved.as_ref().ok().map(|(s, _)| *s);
                match solved {
                    Ok((s, phi)) => SweepRecord { replica: Some(student_block(&s, phi)), ..run.record(mode, t0) },
                    Err(e) => run.failed(mode, t0, &e),
                }
            }
            Mode::ReplicaBoKd => {
                let v = spec.bo_variant;
                let solved = warm(cfg, line.bo.as_ref().map(InitialGuess::from), |c| solve_bo_kd(&params, c, v));
                line.bo = solved.as_ref().ok().copied();
                match solved {
                    Ok(s) => {
                        let phi = free_entropy_bo(&params, &s, cfg, v).unwrap_or(f64::NAN);
                        SweepRecord { replica: Some(student_block(&s, phi)), ..run.record(mode, t0) }
                    }
                    Err(e) => run.failed(mode, t0, &e),
                }
            }
            Mode::Estimators => {
                let p = &params;
                let (state, _) = bayes_optimal_state(p.alpha, p.delta, p.rho, p.eta);
                match bayes_optimal_error(p.alpha, p.delta, p.rho, p.eta) {
                    Ok(eps_g) => SweepRecord {
                        replica: Some(ReplicaBlock {
                            m: state.m,
                            q: state.q,
                            dq: f64::NAN,
                            s: f64::NAN,
                            ds: f64::NAN,
                            b: state.b,
                            eps_g,
                            phi: f64::NAN,
                            converged: true,
                            iterations: 0,
                        }),
                        ..run.record(mode, t0)
                    },
                    Err(e) => run.failed(mode, t0, &e),
                }
            }
            Mode::SimulateTeacher | Mode::Simulate | Mode::SimulateBoKd => {
                let j = sim_modes.iter().position(|&m| m == mode).expect("listed above");
                let (empirical, status) = simulated[j].clone();
                SweepRecord { empirical: Some(empirical), status, wall_time: sim_time, ..run.record(mode, t0) }
            }
        };
        out.push(rec);
    }
    out
}

/// One trained classifier, measured.
struct Run {
    state: MacroState,
    eps_g: f64,
    test_error: f64,
    report: Option<TrainReport>,
    converged: bool,
    iterations: usize,
}

/// Every simulation mode of a point for seed `k`. The data set and, when
/// needed, the trained teacher are shared between modes.
fn simulate_seed(
    spec: &SweepSpec,
    index: usize,
    params: &ModelParams,
    modes: &[Mode],
    k: usize,
) -> Vec<kd_core::Result<Run>> {
    let seed = run_seed(spec.seed, index, k);
    let p = params;
    let data = match sample_dataset(spec.n_dim, p, seed) {
        Ok(d) => d,
        Err(e) => return modes.iter().map(|_| Err(e.clone())).collect(),
    };
    let mut teacher: Option<kd_core::Result<TrainedClassifier>> = None;
    let mut trained_teacher = || {
        teacher
            .get_or_insert_with(|| train_teacher(&data, p.lambda_t, p.eps_smooth, spec.tol))
            .clone()
    };
    let mut one = |mode: Mode| -> kd_core::Result<Run> {
        let (clf, teacher) = match mode {
            Mode::SimulateTeacher => (trained_teacher()?, None),
            Mode::Simulate => {
                // A pure-label student ignores the teacher, so none is trained.
                let teacher = if p.chi > 0.0 { Some(trained_teacher()?) } else { None };
                let blind = TrainedClassifier::zeros(spec.n_dim);
                let student = train_student_kd(&data, teacher.as_ref().unwrap_or(&blind), p, spec.tol)?;
                (student, teacher)
            }
            Mode::SimulateBoKd => {
                let teacher = bo_teacher_proxy(&data.signal, p.alpha, p.delta, p.rho, run_seed(seed, 1, 0))?;
                (train_student_kd(&data, &teacher, p, spec.tol)?, Some(teacher))
            }
            _ => unreachable!("not a simulation mode"),
        };
        let state = measure_macro_state(&clf, &data, teacher.as_ref())?;
        let report = match &teacher {
            Some(t) => Some(diagnostics(t, &clf, &data, p)?),
            None => None,
        };
        let test_error = if spec.n_test > 0 {
            empirical_test_error(&clf, &data.signal, p, spec.n_test, run_seed(seed, 2, 0))?.0
        } else {
            f64::NAN
        };
        let teacher_ok = match (&teacher, mode) {
            (Some(t), Mode::Simulate) => t.train_meta.converged,
            _ => true,
        };
        Ok(Run {
            eps_g: generalization_error(&state, p.delta, p.rho)?,
            state,
            test_error,
            report,
            converged: clf.train_meta.converged && teacher_ok,
            iterations: clf.train_meta.iterations,
        })
    };
    modes.iter().map(|&m| one(m)).collect()
}

/// Runs the simulation modes of a point over all seeds.
fn simulate_point(spec: &SweepSpec, index: usize, params: &ModelParams, modes: &[Mode]) -> Vec<(EmpiricalBlock, Status)> {
    let per_seed: Vec<Vec<kd_core::Result<Run>>> = (0..spec.n_seeds)
        .into_par_iter()
        .map(|k| simulate_seed(spec, index, params, modes, k))
        .collect();
    (0..modes.len())
        .map(|j| {
            let runs: Vec<&kd_core::Result<Run>> = per_seed.iter().map(|r| &r[j]).collect();
            aggregate(spec, &runs)
        })
        .collect()
}

fn aggregate(spec: &SweepSpec, runs: &[&kd_core::Result<Run>]) -> (EmpiricalBlock, Status) {
    let failure = runs.iter().find_map(|r| r.as_ref().err()).map(Status::from_core);
    let done: Vec<&Run> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
    let converged: Vec<&Run> = done.iter().copied().filter(|r| r.converged).collect();
    let used = if converged.is_empty() { &done } else { &converged };
    let stat = |f: &dyn Fn(&Run) -> Option<f64>| {
        let xs: Vec<f64> = used.iter().filter_map(|r| f(r)).collect();
        Stat::of(&xs)
    };
    let mean = |f: &dyn Fn(&TrainReport) -> f64| {
        let xs: Vec<f64> = used.iter().filter_map(|r| r.report.as_ref().map(f)).collect();
        Stat::of(&xs).mean
    };
    let block = EmpiricalBlock {
        m: stat(&|r| Some(r.state.m)),
        q: stat(&|r| Some(r.state.q)),
        s: stat(&|r| r.state.s),
        b: stat(&|r| Some(r.state.b)),
        eps_g: stat(&|r| Some(r.eps_g)),
        test_error: stat(&|r| (!r.test_error.is_nan()).then_some(r.test_error)),
        loss: mean(&|t| t.per_pattern_loss),
        weight_norm: mean(&|t| t.weight_norm),
        output_mse: mean(&|t| t.output_mse),
        preact_mse: mean(&|t| t.preact_mse),
        n_runs: spec.n_seeds,
        n_converged: converged.len(),
        train_iterations: stat(&|r| Some(r.iterations as f64)).mean,
    };
    let status = match failure {
        Some(s) => s,
        None if converged.len() == spec.n_seeds => Status::Ok,
        None => Status::NonConverged,
    };
    (block, status)
}

/// Runs a sweep, handing records to `sink` in grid order as they complete.
pub fn run_sweep_with(
    spec: &SweepSpec,
    opts: &RunOptions,
    mut sink: impl FnMut(SweepRecord) -> Result<()>,
) -> Result<()> {
    spec.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build()?;
    let lines = spec.lines();
    let (tx, rx) = mpsc::channel::<(usize, Vec<SweepRecord>)>();
    std::thread::scope(|scope| {
        let lines = &lines;
        let pool = &pool;
        scope.spawn(move || {
            pool.install(|| {
                lines.par_iter().for_each_with(tx, |tx, points| {
                    let mut line = Line::default();
                    for &i in points {
                        let recs = run_point(spec, i, &mut line, opts.timing);
                        // The receiver only goes away on a sink error.
                        let _ = tx.send((i, recs));
                    }
                });
            });
        });
        let mut pending = BTreeMap::new();
        let mut next = 0;
        let mut result = Ok(());
        for (i, recs) in rx {
            pending.insert(i, recs);
            while let Some(recs) = pending.remove(&next) {
                next += 1;
                for rec in recs {
                    if result.is_ok() {
                        result = sink(rec);
                    }
                }
            }
        }
        result
    })
}

/// Runs a sweep and collects its records.
pub fn run_sweep(spec: &SweepSpec, opts: &RunOptions) -> Result<Vec<SweepRecord>> {
    let mut out = Vec::with_capacity(spec.len() * spec.modes.len());
    run_sweep_with(spec, opts, |r| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = run_seed(0, 0, 0);
        assert_eq!(a, run_seed(0, 0, 0));
        let mut all: Vec<u64> = (0..20).flat_map(|i| (0..20).map(move |k| run_seed(7, i, k))).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 400);
        assert_ne!(run_seed(1, 0, 0), a);
    }

    #[test]
    fn warm_start_falls_back_to_cold() {
        let cfg = SolverConfig::default();
        let calls = std::cell::Cell::new(0);
        let r = warm(&cfg, Some(InitialGuess::default()), |c| {
            calls.set(calls.get() + 1);
            if c.init.is_some() {
                Err(kd_core::Error::NotANumber("test"))
            } else {
                Ok(1)
            }
        });
        assert_eq!((r, calls.get()), (Ok(1), 2));
    }
}
