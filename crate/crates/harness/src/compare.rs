//! Replica-versus-simulation comparison.
//!
//! Every simulation row is paired with the replica row of the same series,
//! parameters and counterpart mode, and each quantity gets the z-score
//! `|empirical mean - replica| / standard error`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::record::{format_float, ReplicaBlock, Stat, SweepRecord};
use crate::spec::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    EpsG,
    M,
    Q,
    S,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [Quantity::EpsG, Quantity::M, Quantity::Q, Quantity::S];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::EpsG => "eps_g",
            Quantity::M => "m",
            Quantity::Q => "q",
            Quantity::S => "s",
        }
    }

    fn pick(self, r: &ReplicaBlock, e: &crate::record::EmpiricalBlock) -> (f64, Stat) {
        match self {
            Quantity::EpsG => (r.eps_g, e.eps_g),
            Quantity::M => (r.m, e.m),
            Quantity::Q => (r.q, e.q),
            Quantity::S => (r.s, e.s),
        }
    }
}

impl std::str::FromStr for Quantity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Quantity::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| format!("unknown quantity `{s}` (expected eps_g, m, q or s)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    /// Threshold on the z-score.
    pub sigma: f64,
    /// Quantities that must all be within `sigma` for a point to pass.
    pub quantities: Vec<Quantity>,
    /// Fraction of compared points that must pass.
    pub min_fraction: f64,
    /// Fraction of seeds that must converge for a point to be compared.
    pub min_converged: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { sigma: 3.0, quantities: Quantity::ALL.to_vec(), min_fraction: 0.9, min_converged: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointComparison {
    pub key: String,
    pub mode: Mode,
    /// z-score per quantity; `None` where either side has no value.
    pub z: Vec<(Quantity, Option<f64>)>,
    /// Reason the point was left out of the summary.
    pub excluded: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub points: Vec<PointComparison>,
    pub compared: usize,
    pub within: usize,
    pub pass: bool,
}

impl Comparison {
    pub fn failing(&self) -> impl Iterator<Item = &PointComparison> {
        self.points.iter().filter(|p| p.excluded.is_none() && !p.pass)
    }
}

/// `|x - y| / se`, with 0 for exact agreement and infinity for a
/// disagreement without spread.
pub fn z_score(replica: f64, empirical: Stat) -> Option<f64> {
    if replica.is_nan() || empirical.mean.is_nan() {
        return None;
    }
    let d = (empirical.mean - replica).abs();
    if d == 0.0 {
        Some(0.0)
    } else if empirical.se > 0.0 {
        Some(d / empirical.se)
    } else {
        Some(f64::INFINITY)
    }
}

pub fn compare(replica: &[SweepRecord], empirical: &[SweepRecord], opts: &CompareOptions) -> Result<Comparison> {
    let index: HashMap<(String, Mode), &SweepRecord> = replica
        .iter()
        .filter(|r| !r.mode.is_simulation())
        .map(|r| ((r.key(), r.mode), r))
        .collect();
    let mut unmatched = Vec::new();
    let mut points = Vec::new();
    for e in empirical.iter().filter(|r| r.mode.is_simulation()) {
        let want = e.mode.replica_counterpart().expect("simulation modes have a counterpart");
        let key = e.key();
        let Some(r) = index.get(&(key.clone(), want)) else {
            unmatched.push(format!("{} [{}]", key, e.mode));
            continue;
        };
        let Some(emp) = e.empirical else {
            unmatched.push(format!("{} [{}] has no empirical values", key, e.mode));
            continue;
        };
        let rep = r.replica;
        let z: Vec<_> = opts
            .quantities
            .iter()
            .map(|&q| (q, rep.as_ref().and_then(|rb| {
                let (x, s) = q.pick(rb, &emp);
                z_score(x, s)
            })))
            .collect();
        let excluded = if !r.status.is_ok() {
            Some(format!("replica {}", r.status))
        } else if (emp.n_converged as f64) < opts.min_converged * emp.n_runs as f64 {
            Some(format!("{}/{} runs converged", emp.n_converged, emp.n_runs))
        } else {
            None
        };
        let pass = z.iter().all(|(_, z)| z.is_none_or(|z| z <= opts.sigma));
        points.push(PointComparison { key, mode: e.mode, z, excluded, pass });
    }
    if !unmatched.is_empty() {
        return Err(HarnessError::UnmatchedRows(unmatched));
    }
    let compared = points.iter().filter(|p| p.excluded.is_none()).count();
    let within = points.iter().filter(|p| p.excluded.is_none() && p.pass).count();
    let pass = compared > 0 && within as f64 >= opts.min_fraction * compared as f64;
    Ok(Comparison { points, compared, within, pass })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.points {
            write!(f, "{}\t{}", p.key, p.mode)?;
            for (q, z) in &p.z {
                write!(f, "\tz_{}={}", q.name(), z.map(format_float).unwrap_or_else(|| "-".into()))?;
            }
            match &p.excluded {
                Some(why) => writeln!(f, "\texcluded ({why})")?,
                None => writeln!(f, "\t{}", if p.pass { "within" } else { "OUTSIDE" })?,
            }
        }
        writeln!(
            f,
            "{}: {}/{} compared points within threshold ({} excluded)",
            if self.pass { "PASS" } else { "FAIL" },
            self.within,
            self.compared,
            self.points.len() - self.compared
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{EmpiricalBlock, Status};
    use kd_core::ModelParams;

    fn pair(alpha: f64, eps: f64, emp_eps: f64) -> (SweepRecord, SweepRecord) {
        let params = ModelParams { alpha, ..Default::default() };
        let replica = SweepRecord {
            series: "t".into(),
            point: 0,
            params,
            mode: Mode::ReplicaTeacher,
            replica: Some(ReplicaBlock { m: 1.0, q: 2.0, s: f64::NAN, eps_g: eps, converged: true, ..Default::default() }),
            empirical: None,
            status: Status::Ok,
            wall_time: None,
        };
        let st = |mean| Stat { mean, se: 0.01 };
        let empirical = SweepRecord {
            mode: Mode::SimulateTeacher,
            replica: None,
            empirical: Some(EmpiricalBlock {
                m: st(1.0),
                q: st(2.0),
                s: Stat::MISSING,
                b: st(0.0),
                eps_g: st(emp_eps),
                test_error: Stat::MISSING,
                loss: f64::NAN,
                weight_norm: f64::NAN,
                output_mse: f64::NAN,
                preact_mse: f64::NAN,
                n_runs: 10,
                n_converged: 10,
                train_iterations: 5.0,
            }),
            ..replica.clone()
        };
        (replica, empirical)
    }

    #[test]
    fn identical_inputs_pass() {
        let (r, e) = pair(1.0, 0.2, 0.2);
        let c = compare(&[r], &[e], &CompareOptions::default()).unwrap();
        assert!(c.pass);
        assert_eq!((c.compared, c.within), (1, 1));
        assert!(c.points[0].z.iter().all(|(_, z)| z.is_none_or(|z| z == 0.0)));
    }

    #[test]
    fn corrupted_replica_fails() {
        let (r1, e1) = pair(1.0, 0.2, 0.2);
        let (r2, e2) = pair(2.0, 0.5, 0.2);
        let c = compare(&[r1, r2], &[e1, e2], &CompareOptions::default()).unwrap();
        assert!(!c.pass);
        let bad: Vec<_> = c.failing().collect();
        assert_eq!(bad.len(), 1);
        assert!(bad[0].key.contains("|2|"));
        assert!(c.to_string().contains("OUTSIDE"));
    }

    #[test]
    fn unmatched_rows_are_a_hard_error() {
        let (r, _) = pair(1.0, 0.2, 0.2);
        let (_, e) = pair(3.0, 0.2, 0.2);
        let err = compare(&[r], &[e], &CompareOptions::default()).unwrap_err();
        assert!(matches!(err, HarnessError::UnmatchedRows(ref v) if v.len() == 1), "{err}");
    }

    #[test]
    fn nonconverged_points_are_excluded() {
        let (r, mut e) = pair(1.0, 0.2, 0.9);
        e.empirical.as_mut().unwrap().n_converged = 7;
        let c = compare(&[r], &[e], &CompareOptions::default()).unwrap();
        assert_eq!(c.compared, 0);
        assert!(!c.pass);
        assert!(c.points[0].excluded.is_some());
    }

    #[test]
    fn z_scores() {
        assert_eq!(z_score(1.0, Stat { mean: 1.03, se: 0.01 }).map(|z| (z * 1e6).round()), Some(3e6));
        assert_eq!(z_score(1.0, Stat { mean: 1.0, se: f64::NAN }), Some(0.0));
        assert_eq!(z_score(1.0, Stat { mean: 2.0, se: f64::NAN }), Some(f64::INFINITY));
        assert_eq!(z_score(f64::NAN, Stat { mean: 2.0, se: 1.0 }), None);
    }
}
