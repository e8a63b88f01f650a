//! Sweep specifications: a base parameter set, a grid over some of its
//! fields and the list of computations to run at every grid point.

use std::fmt;
use std::str::FromStr;

use kd_core::sim::DEFAULT_TOL;
use kd_core::solver::{BoTeacherVariant, LogRange, SolverConfig};
use kd_core::ModelParams;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// What is computed at a grid point. Each simulation mode has a replica
/// counterpart that predicts the same quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    ReplicaTeacher,
    ReplicaKd,
    ReplicaBoKd,
    Estimators,
    SimulateTeacher,
    Simulate,
    SimulateBoKd,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::ReplicaTeacher,
        Mode::ReplicaKd,
        Mode::ReplicaBoKd,
        Mode::Estimators,
        Mode::SimulateTeacher,
        Mode::Simulate,
        Mode::SimulateBoKd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::ReplicaTeacher => "replica-teacher",
            Mode::ReplicaKd => "replica-kd",
            Mode::ReplicaBoKd => "replica-bo-kd",
            Mode::Estimators => "estimators",
            Mode::SimulateTeacher => "simulate-teacher",
            Mode::Simulate => "simulate",
            Mode::SimulateBoKd => "simulate-bo-kd",
        }
    }

    pub fn is_simulation(self) -> bool {
        matches!(self, Mode::SimulateTeacher | Mode::Simulate | Mode::SimulateBoKd)
    }

    /// The replica mode predicting a simulation mode.
    pub fn replica_counterpart(self) -> Option<Mode> {
        match self {
            Mode::SimulateTeacher => Some(Mode::ReplicaTeacher),
            Mode::Simulate => Some(Mode::ReplicaKd),
            Mode::SimulateBoKd => Some(Mode::ReplicaBoKd),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

/// A field of [`ModelParams`] that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    Alpha,
    Delta,
    Rho,
    Eta,
    LambdaT,
    LambdaS,
    Chi,
    Temp,
    EpsSmooth,
}

impl Param {
    pub const ALL: [Param; 9] = [
        Param::Alpha,
        Param::Delta,
        Param::Rho,
        Param::Eta,
        Param::LambdaT,
        Param::LambdaS,
        Param::Chi,
        Param::Temp,
        Param::EpsSmooth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Alpha => "alpha",
            Param::Delta => "delta",
            Param::Rho => "rho",
            Param::Eta => "eta",
            Param::LambdaT => "lambda_t",
            Param::LambdaS => "lambda_s",
            Param::Chi => "chi",
            Param::Temp => "temp",
            Param::EpsSmooth => "eps_smooth",
        }
    }

    pub fn get(self, p: &ModelParams) -> f64 {
        match self {
            Param::Alpha => p.alpha,
            Param::Delta => p.delta,
            Param::Rho => p.rho,
            Param::Eta => p.eta,
            Param::LambdaT => p.lambda_t,
            Param::LambdaS => p.lambda_s,
            Param::Chi => p.chi,
            Param::Temp => p.temp,
            Param::EpsSmooth => p.eps_smooth,
        }
    }

    pub fn set(self, p: &mut ModelParams, v: f64) {
        let slot = match self {
            Param::Alpha => &mut p.alpha,
            Param::Delta => &mut p.delta,
            Param::Rho => &mut p.rho,
            Param::Eta => &mut p.eta,
            Param::LambdaT => &mut p.lambda_t,
            Param::LambdaS => &mut p.lambda_s,
            Param::Chi => &mut p.chi,
            Param::Temp => &mut p.temp,
            Param::EpsSmooth => &mut p.eps_smooth,
        };
        *slot = v;
    }
}

/// One swept parameter. In a config file the grid is given either as
/// explicit `values` or as `linspace = [lo, hi, n]` / `logspace = [lo, hi, n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AxisDef")]
pub struct Axis {
    pub param: Param,
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisDef {
    param: Param,
    values: Option<Vec<f64>>,
    linspace: Option<(f64, f64, usize)>,
    logspace: Option<(f64, f64, usize)>,
}

/// `n` points `map(t)` for `t` evenly spaced in `[0, 1]`.
fn spaced(n: usize, map: impl Fn(f64) -> f64) -> Vec<f64> {
    if n == 1 {
        return vec![map(0.0)];
    }
    (0..n).map(|i| map(i as f64 / (n - 1) as f64)).collect()
}

impl TryFrom<AxisDef> for Axis {
    type Error = String;

    fn try_from(d: AxisDef) -> std::result::Result<Self, String> {
        let values = match (d.values, d.linspace, d.logspace) {
            (Some(v), None, None) => v,
            (None, Some((lo, hi, n)), None) => spaced(n, |t| {
                // Round to 12 digits so that grid values print exactly.
                let x = lo + t * (hi - lo);
                format!("{x:.12e}").parse().unwrap_or(x)
            }),
            (None, None, Some((lo, hi, n))) => {
                if !(lo > 0.0 && hi > 0.0) {
                    return Err("logspace bounds must be positive".into());
                }
                spaced(n, |t| {
                    let x = (lo.ln() + t * (hi.ln() - lo.ln())).exp();
                    format!("{x:.12e}").parse().unwrap_or(x)
                })
            }
            _ => return Err("give exactly one of `values`, `linspace`, `logspace`".into()),
        };
        Ok(Axis { param: d.param, values })
    }
}

/// Parameter tuned by replica prediction at every grid point before any
/// mode runs; simulations then use the tuned value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tune {
    /// Teacher ridge minimizing the replica teacher error.
    LambdaT,
    /// Student ridge minimizing the replica student error.
    LambdaS,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    /// Series label written into every row.
    pub name: String,
    pub base: ModelParams,
    /// Grid axes; the first axis varies slowest.
    pub axes: Vec<Axis>,
    pub modes: Vec<Mode>,
    pub n_seeds: usize,
    pub n_dim: usize,
    pub seed: u64,
    /// Gradient tolerance of the simulator.
    pub tol: f64,
    /// Fresh points for a Monte-Carlo test error; 0 skips it.
    pub n_test: usize,
    pub tune: Option<Tune>,
    pub tune_range: LogRange,
    pub bo_variant: BoTeacherVariant,
    pub solver: SolverConfig,
    pub output_path: Option<String>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            name: "sweep".into(),
            base: ModelParams::default(),
            axes: Vec::new(),
            modes: vec![Mode::ReplicaTeacher],
            n_seeds: 10,
            n_dim: 1000,
            seed: 0,
            tol: DEFAULT_TOL,
            n_test: 0,
            tune: None,
            tune_range: LogRange::default(),
            bo_variant: BoTeacherVariant::Plus,
            solver: SolverConfig::default(),
            output_path: None,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(HarnessError::Spec { name: self.name.clone(), reason });
        if self.modes.is_empty() {
            return fail("no modes".into());
        }
        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].contains(m) {
                return fail(format!("mode `{m}` listed twice"));
            }
        }
        for (i, axis) in self.axes.iter().enumerate() {
            let name = axis.param.name();
            if self.axes[..i].iter().any(|a| a.param == axis.param) {
                return fail(format!("axis `{name}` listed twice"));
            }
            if axis.values.is_empty() {
                return fail(format!("axis `{name}` has an empty grid"));
            }
            if axis.values.iter().any(|v| !v.is_finite()) {
                return fail(format!("axis `{name}` has a non-finite value"));
            }
            if axis.values.windows(2).any(|w| w[0] >= w[1]) {
                return fail(format!("axis `{name}` is not strictly increasing"));
            }
        }
        if let Some(t) = self.tune {
            let p = match t {
                Tune::LambdaT => Param::LambdaT,
                Tune::LambdaS => Param::LambdaS,
            };
            if self.axes.iter().any(|a| a.param == p) {
                return fail(format!("`{}` is both tuned and swept", p.name()));
            }
        }
        if self.modes.iter().any(|m| m.is_simulation()) {
            if self.n_seeds == 0 {
                return fail("simulation modes need n_seeds >= 1".into());
            }
            if self.n_dim < 2 {
                return fail("simulation modes need n_dim >= 2".into());
            }
            if !(self.tol > 0.0) {
                return fail("tol must be positive".into());
            }
        }
        self.solver.validate()?;
        Ok(())
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid coordinates of point `index` (first axis slowest).
    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let mut c = vec![0; self.axes.len()];
        for (k, axis) in self.axes.iter().enumerate().rev() {
            c[k] = index % axis.values.len();
            index /= axis.values.len();
        }
        c
    }

    pub fn point(&self, index: usize) -> ModelParams {
        let mut p = self.base;
        for (axis, &i) in self.axes.iter().zip(&self.coords(index)) {
            axis.param.set(&mut p, axis.values[i]);
        }
        p
    }

    /// The axis along which replica solutions are continued: `alpha` when
    /// swept, otherwise the last axis.
    pub fn continuation_axis(&self) -> Option<usize> {
        self.axes
            .iter()
            .position(|a| a.param == Param::Alpha)
            .or_else(|| self.axes.len().checked_sub(1))
    }

    /// Grid points grouped into continuation lines, each in increasing order
    /// along the continuation axis. Lines are listed in grid order.
    pub fn lines(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let Some(k) = self.continuation_axis() else {
            return (0..n).map(|i| vec![i]).collect();
        };
        let mut lines: Vec<Vec<usize>> = Vec::new();
        let mut keys: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let mut c = self.coords(i);
            c.remove(k);
            match keys.iter().position(|key| *key == c) {
                Some(j) => lines[j].push(i),
                None => {
                    keys.push(c);
                    lines.push(vec![i]);
                }
            }
        }
        lines
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(axes: Vec<Axis>) -> SweepSpec {
        SweepSpec { axes, ..Default::default() }
    }

    #[test]
    fn grid_order_and_lines() {
        let s = spec(vec![
            Axis { param: Param::LambdaT, values: vec![0.1, 0.5] },
            Axis { param: Param::Alpha, values: vec![1.0, 2.0, 3.0] },
        ]);
        assert_eq!(s.len(), 6);
        assert_eq!(s.coords(4), vec![1, 1]);
        assert_eq!((s.point(4).lambda_t, s.point(4).alpha), (0.5, 2.0));
        assert_eq!(s.lines(), vec![vec![0, 1, 2], vec![3, 4, 5]]);

        let t = spec(vec![
            Axis { param: Param::Alpha, values: vec![1.0, 2.0] },
            Axis { param: Param::Chi, values: vec![0.0, 1.0] },
        ]);
        assert_eq!(t.lines(), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(spec(vec![]).lines(), vec![vec![0]]);
    }

    #[test]
    fn validation() {
        let unsorted = spec(vec![Axis { param: Param::Alpha, values: vec![2.0, 1.0] }]);
        assert!(unsorted.validate().is_err());
        let empty = spec(vec![Axis { param: Param::Alpha, values: vec![] }]);
        assert!(empty.validate().is_err());
        let twice = SweepSpec { modes: vec![Mode::Simulate, Mode::Simulate], ..Default::default() };
        assert!(twice.validate().is_err());
        let tuned = SweepSpec {
            tune: Some(Tune::LambdaT),
            ..spec(vec![Axis { param: Param::LambdaT, values: vec![0.1] }])
        };
        assert!(tuned.validate().is_err());
        assert!(SweepSpec::default().validate().is_ok());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>(), Ok(m));
        }
        assert!("replica".parse::<Mode>().is_err());
    }

    #[test]
    fn spaced_grids() {
        let lin: Axis = toml::from_str("param = \"alpha\"\nlinspace = [1.0, 2.0, 5]").unwrap();
        assert_eq!(lin.values, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        let log: Axis = toml::from_str("param = \"lambda_t\"\nlogspace = [1e-4, 1.0, 5]").unwrap();
        assert_eq!(log.values, vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0]);
        assert!(toml::from_str::<Axis>("param = \"alpha\"").is_err());
        assert!(toml::from_str::<Axis>("param = \"beta\"\nvalues = [1.0]").is_err());
    }
}
