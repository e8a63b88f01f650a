//! One CSV row per (grid point, mode).
//!
//! Column order is fixed: parameters, mode, replica block, empirical block,
//! status, timing. Floats carry 12 significant digits; missing values are
//! empty fields.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use kd_core::ModelParams;

use crate::error::{HarnessError, Result};
use crate::spec::{Mode, Param};

/// Replica prediction (or closed-form estimator) at a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplicaBlock {
    pub m: f64,
    pub q: f64,
    pub dq: f64,
    /// Teacher-student overlap; NaN when there is no teacher.
    pub s: f64,
    pub ds: f64,
    pub b: f64,
    pub eps_g: f64,
    pub phi: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Mean and standard error over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
}

impl Stat {
    pub const MISSING: Stat = Stat { mean: f64::NAN, se: f64::NAN };

    /// Sample mean and standard error; the error is NaN below two samples.
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len();
        if n == 0 {
            return Stat::MISSING;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Stat { mean, se: f64::NAN };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Stat { mean, se: (var / n as f64).sqrt() }
    }
}

/// Finite-size experiment averaged over seeds. Statistics are over the
/// runs whose optimizer converged, or over all runs when none did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalBlock {
    pub m: Stat,
    pub q: Stat,
    pub s: Stat,
    pub b: Stat,
    /// Closed-form test error of each trained classifier.
    pub eps_g: Stat,
    /// Monte-Carlo test error, when requested.
    pub test_error: Stat,
    pub loss: f64,
    pub weight_norm: f64,
    pub output_mse: f64,
    pub preact_mse: f64,
    pub n_runs: usize,
    pub n_converged: usize,
    pub train_iterations: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Ok,
    NonConverged,
    Diverged,
    Invalid(String),
    Error(String),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        *self == Status::Ok
    }

    pub fn from_core(e: &kd_core::Error) -> Status {
        match e {
            kd_core::Error::NonConvergence { .. } => Status::NonConverged,
            kd_core::Error::Divergence { .. } => Status::Diverged,
            kd_core::Error::InvalidParam { .. } | kd_core::Error::NotANumber(_) => Status::Invalid(e.to_string()),
            _ => Status::Error(e.to_string()),
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Ok => f.write_str("ok"),
            Status::NonConverged => f.write_str("nonconverged"),
            Status::Diverged => f.write_str("diverged"),
            Status::Invalid(m) => write!(f, "invalid: {m}"),
            Status::Error(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::str::FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "ok" => Status::Ok,
            "nonconverged" => Status::NonConverged,
            "diverged" => Status::Diverged,
            _ => match s.split_once(": ") {
                Some(("invalid", m)) => Status::Invalid(m.to_string()),
                Some(("error", m)) => Status::Error(m.to_string()),
                _ => return Err(format!("unknown status `{s}`")),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub series: String,
    pub point: usize,
    pub params: ModelParams,
    pub mode: Mode,
    pub replica: Option<ReplicaBlock>,
    pub empirical: Option<EmpiricalBlock>,
    pub status: Status,
    /// Seconds spent on the row; only written when timing is requested.
    pub wall_time: Option<f64>,
}

pub const HEADER: [&str; 43] = [
    "series",
    "point",
    "alpha",
    "delta",
    "rho",
    "eta",
    "lambda_t",
    "lambda_s",
    "chi",
    "temp",
    "eps_smooth",
    "mode",
    "m",
    "q",
    "dq",
    "s",
    "ds",
    "b",
    "eps_g",
    "phi",
    "converged",
    "iterations",
    "emp_m",
    "emp_m_se",
    "emp_q",
    "emp_q_se",
    "emp_s",
    "emp_s_se",
    "emp_b",
    "emp_b_se",
    "emp_eps_g",
    "emp_eps_g_se",
    "emp_test_error",
    "emp_test_error_se",
    "loss",
    "weight_norm",
    "output_mse",
    "preact_mse",
    "n_runs",
    "n_converged",
    "train_iterations",
    "status",
    "wall_time",
];

/// Formats with 12 significant digits; NaN becomes an empty field.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return String::new();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let r: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let a = r.abs();
    if (1e-4..1e12).contains(&a) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

fn parse_float(s: &str) -> std::result::Result<f64, String> {
    match s {
        "" => Ok(f64::NAN),
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s.parse().map_err(|_| format!("`{s}` is not a number")),
    }
}

impl SweepRecord {
    /// Join key of a row: series and formatted parameters.
    pub fn key(&self) -> String {
        let mut k = self.series.clone();
        for p in Param::ALL {
            k.push('|');
            k.push_str(&format_float(p.get(&self.params)));
        }
        k
    }

    pub fn to_row(&self) -> Vec<String> {
        let f = |x: f64| format_float(x);
        let mut row = Vec::with_capacity(HEADER.len());
        row.push(self.series.clone());
        row.push(self.point.to_string());
        row.extend(Param::ALL.iter().map(|p| f(p.get(&self.params))));
        row.push(self.mode.to_string());
        match &self.replica {
            Some(r) => {
                row.extend([r.m, r.q, r.dq, r.s, r.ds, r.b, r.eps_g, r.phi].map(f));
                row.push(r.converged.to_string());
                row.push(r.iterations.to_string());
            }
            None => row.extend(std::iter::repeat_n(String::new(), 10)),
        }
        match &self.empirical {
            Some(e) => {
                for s in [e.m, e.q, e.s, e.b, e.eps_g, e.test_error] {
                    row.push(f(s.mean));
                    row.push(f(s.se));
                }
                row.extend([e.loss, e.weight_norm, e.output_mse, e.preact_mse].map(f));
                row.push(e.n_runs.to_string());
                row.push(e.n_converged.to_string());
                row.push(f(e.train_iterations));
            }
            None => row.extend(std::iter::repeat_n(String::new(), 19)),
        }
        row.push(self.status.to_string());
        row.push(self.wall_time.map(f).unwrap_or_default());
        debug_assert_eq!(row.len(), HEADER.len());
        row
    }

    /// Parses a row by column name; `line` is used in error messages.
    pub fn from_row(cols: &HashMap<&str, &str>, line: usize) -> Result<Self> {
        let get = |c: &str| -> Result<&str> {
            cols.get(c).copied().ok_or_else(|| HarnessError::Column {
                column: c.into(),
                row: line,
                reason: "missing".into(),
            })
        };
        let bad = |c: &str, reason: String| HarnessError::Column { column: c.into(), row: line, reason };
        let num = |c: &str| -> Result<f64> { parse_float(get(c)?).map_err(|r| bad(c, r)) };
        let int = |c: &str| -> Result<usize> { get(c)?.parse().map_err(|_| bad(c, "not an integer".into())) };
        let stat = |c: &str| -> Result<Stat> { Ok(Stat { mean: num(c)?, se: num(&format!("{c}_se"))? }) };

        let mut params = ModelParams::default();
        for p in Param::ALL {
            p.set(&mut params, num(p.name())?);
        }
        let mode: Mode = get("mode")?.parse().map_err(|r| bad("mode", r))?;
        let replica = if get("converged")?.is_empty() {
            None
        } else {
            Some(ReplicaBlock {
                m: num("m")?,
                q: num("q")?,
                dq: num("dq")?,
                s: num("s")?,
                ds: num("ds")?,
                b: num("b")?,
                eps_g: num("eps_g")?,
                phi: num("phi")?,
                converged: get("converged")?.parse().map_err(|_| bad("converged", "not a boolean".into()))?,
                iterations: int("iterations")?,
            })
        };
        let empirical = if get("n_runs")?.is_empty() {
            None
        } else {
            Some(EmpiricalBlock {
                m: stat("emp_m")?,
                q: stat("emp_q")?,
                s: stat("emp_s")?,
                b: stat("emp_b")?,
                eps_g: stat("emp_eps_g")?,
                test_error: stat("emp_test_error")?,
                loss: num("loss")?,
                weight_norm: num("weight_norm")?,
                output_mse: num("output_mse")?,
                preact_mse: num("preact_mse")?,
                n_runs: int("n_runs")?,
                n_converged: int("n_converged")?,
                train_iterations: num("train_iterations")?,
            })
        };
        let wall = num("wall_time")?;
        Ok(SweepRecord {
            series: get("series")?.to_string(),
            point: int("point")?,
            params,
            mode,
            replica,
            empirical,
            status: get("status")?.parse().map_err(|r| bad("status", r))?,
            wall_time: (!wall.is_nan()).then_some(wall),
        })
    }
}

/// Streams records to a CSV sink.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, rec: &SweepRecord) -> Result<()> {
        self.inner.write_record(rec.to_row())?;
        self.inner.flush().map_err(|e| HarnessError::io("csv output", e))
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| HarnessError::io("csv output", e.into_error()))
    }
}

pub fn read_records(reader: impl std::io::Read) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let cols: HashMap<&str, &str> = headers.iter().zip(row.iter()).collect();
        out.push(SweepRecord::from_row(&cols, i + 2)?);
    }
    Ok(out)
}

pub fn read_records_file(path: &std::path::Path) -> Result<Vec<SweepRecord>> {
    let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    read_records(std::io::BufReader::new(file))
}
