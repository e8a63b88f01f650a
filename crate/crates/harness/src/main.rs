use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kd_core::solver::BoTeacherVariant;
use kd_harness::config::{env_overrides, load_specs, Override};
use kd_harness::figures::{figure_specs, replica_only, write_sweeps, write_sweeps_file, Summary, FIGURE_SPECS};
use kd_harness::{compare, read_records_file, CompareOptions, HarnessError, Mode, Quantity, Result, RunOptions, SweepSpec};

#[derive(Parser)]
#[command(name = "kdrs", version, about = "Replica predictions and simulations for knowledge distillation")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "KDRS_WORKERS")]
    workers: Option<usize>,
    /// Fill the wall-time column (makes output run-dependent).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replica prediction for the teacher.
    SolveTeacher(PointArgs),
    /// Replica prediction for the distilled student.
    SolveKd(PointArgs),
    /// Replica prediction for a student distilled from the Bayes-optimal teacher.
    SolveBoKd {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_enum, default_value = "plus")]
        variant: Variant,
    },
    /// Finite-size experiment averaged over seeds.
    Simulate {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_enum, default_value = "student")]
        kind: SimKind,
    },
    /// Run every sweep of a config file into one CSV.
    Sweep {
        #[arg(long, env = "KDRS_CONFIG")]
        config: PathBuf,
        #[arg(long, env = "KDRS_OUT")]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Z-scores of simulation rows against their replica rows.
    Compare {
        replica: PathBuf,
        empirical: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        sigma: f64,
        /// Quantities that must agree for a point to pass.
        #[arg(long, value_delimiter = ',', default_value = "eps_g,m,q,s")]
        quantities: Vec<Quantity>,
        /// Fraction of compared points that must pass.
        #[arg(long, default_value_t = 0.9)]
        min_fraction: f64,
        /// Fraction of converged seeds below which a point is excluded.
        #[arg(long, default_value_t = 0.8)]
        min_converged: f64,
    },
    /// Emit the per-figure CSVs from the checked-in specs.
    FiguresData {
        #[arg(long, env = "KDRS_OUT_DIR", default_value = "figures-data")]
        out_dir: PathBuf,
        /// Comma-separated figure names (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Skip the simulation modes.
        #[arg(long)]
        replica_only: bool,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Plus,
    Minus,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Teacher,
    Student,
    BoKd,
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    n_dim: Option<usize>,
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Set any config key, e.g. `--set base.rho=0.3` or `--set solver.tol=1e-10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl OverrideArgs {
    fn collect(&self) -> Result<Vec<Override>> {
        let mut out = env_overrides(std::env::vars());
        let flag = |k: &str, v: String| Override::new(k, &v, format!("--{}", k.replace('_', "-")));
        out.extend(self.n_dim.map(|v| flag("n_dim", v.to_string())));
        out.extend(self.n_seeds.map(|v| flag("n_seeds", v.to_string())));
        out.extend(self.seed.map(|v| flag("seed", v.to_string())));
        for s in &self.set {
            out.push(Override::parse_assignment(s)?);
        }
        Ok(out)
    }
}

#[derive(Args)]
struct PointArgs {
    /// Optional config whose first sweep supplies the defaults.
    #[arg(long, env = "KDRS_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "KDRS_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    chi: Option<f64>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    eps_smooth: Option<f64>,
    #[command(flatten)]
    overrides: OverrideArgs,
}

impl PointArgs {
    fn spec(&self, mode: Mode) -> Result<SweepSpec> {
        let mut overrides = self.overrides.collect()?;
        let fields = [
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("rho", self.rho),
            ("eta", self.eta),
            ("lambda_t", self.lambda_t),
            ("lambda_s", self.lambda_s),
            ("chi", self.chi),
            ("temp", self.temp),
            ("eps_smooth", self.eps_smooth),
        ];
        for (name, v) in fields {
            if let Some(v) = v {
                overrides.push(Override::new(&format!("base.{name}"), &v.to_string(), format!("--{name}")));
            }
        }
        let mut specs = match &self.config {
            Some(path) => load_specs(path, &overrides)?,
            None => kd_harness::config::parse_specs("", "command line", &overrides)?,
        };
        let mut spec = specs.swap_remove(0);
        spec.modes = vec![mode];
        Ok(spec)
    }
}

fn write_output(specs: &[SweepSpec], opts: &RunOptions, out: Option<&Path>) -> Result<Summary> {
    match out {
        Some(path) => write_sweeps_file(specs, opts, path),
        None => {
            let (mut sink, summary) = write_sweeps(specs, opts, std::io::stdout().lock())?;
            sink.flush().map_err(|e| HarnessError::Io { path: "stdout".into(), source: e })?;
            Ok(summary)
        }
    }
}

fn report(summary: Summary) -> ExitCode {
    eprintln!("{} rows, {} flagged", summary.rows, summary.flagged);
    if summary.flagged == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let opts = RunOptions { workers: cli.workers, timing: cli.timing };
    let point = |args: &PointArgs, mode| -> Result<ExitCode> {
        let spec = args.spec(mode)?;
        let out = args.out.clone().or_else(|| spec.output_path.clone().map(PathBuf::from));
        Ok(report(write_output(&[spec], &opts, out.as_deref())?))
    };
    match cli.command {
        Command::SolveTeacher(args) => point(&args, Mode::ReplicaTeacher),
        Command::SolveKd(args) => point(&args, Mode::ReplicaKd),
        Command::SolveBoKd { point: args, variant } => {
            let mut spec = args.spec(Mode::ReplicaBoKd)?;
            spec.bo_variant = match variant {
                Variant::Plus => BoTeacherVariant::Plus,
                Variant::Minus => BoTeacherVariant::Minus,
            };
            Ok(report(write_output(&[spec], &opts, args.out.as_deref())?))
        }
        Command::Simulate { point: args, kind } => point(
            &args,
            match kind {
                SimKind::Teacher => Mode::SimulateTeacher,
                SimKind::Student => Mode::Simulate,
                SimKind::BoKd => Mode::SimulateBoKd,
            },
        ),
        Command::Sweep { config, out, overrides } => {
            let specs = load_specs(&config, &overrides.collect()?)?;
            let out = out.or_else(|| specs.first().and_then(|s| s.output_path.clone()).map(PathBuf::from));
            Ok(report(write_output(&specs, &opts, out.as_deref())?))
        }
        Command::Compare { replica, empirical, sigma, quantities, min_fraction, min_converged } => {
            let rep = read_records_file(&replica)?;
            let emp = if empirical == replica { rep.clone() } else { read_records_file(&empirical)? };
            let c = compare(&rep, &emp, &CompareOptions { sigma, quantities, min_fraction, min_converged })?;
            print!("{c}");
            Ok(if c.pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::FiguresData { out_dir, only, replica_only: skip_sim, overrides } => {
            let overrides = overrides.collect()?;
            for name in &only {
                if !FIGURE_SPECS.iter().any(|(n, _)| n == name) {
                    return Err(HarnessError::Config { origin: "--only".into(), message: format!("no figure `{name}`") });
                }
            }
            let mut total = Summary::default();
            for (name, _) in FIGURE_SPECS.iter().filter(|(n, _)| only.is_empty() || only.iter().any(|o| o == n)) {
                let mut specs = figure_specs(name, &overrides)?;
                if skip_sim {
                    specs = replica_only(specs);
                }
                let path = out_dir.join(format!("{name}.csv"));
                let s = write_sweeps_file(&specs, &opts, &path)?;
                eprintln!("{}: {} rows, {} flagged", path.display(), s.rows, s.flagged);
                total.rows += s.rows;
                total.flagged += s.flagged;
            }
            Ok(report(total))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
