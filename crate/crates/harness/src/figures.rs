//! The checked-in sweep specs behind each figure and the CSV writer that
//! runs them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::{parse_specs, resolved_config, sidecar_path, Override};
use crate::error::{HarnessError, Result};
use crate::record::{RecordWriter, SweepRecord};
use crate::spec::SweepSpec;
use crate::sweep::{run_sweep_with, RunOptions};

macro_rules! figure {
    ($name:literal) => {
        ($name, include_str!(concat!("../specs/", $name, ".toml")))
    };
}

/// `(name, config document)` for every figure, in figure order.
pub const FIGURE_SPECS: &[(&str, &str)] = &[
    figure!("fig1_gap"),
    figure!("fig2_inheritance"),
    figure!("fig3_limits"),
    figure!("fig4_bayes_teacher"),
    figure!("fig5_double_descent"),
    figure!("fig6_label_smoothing"),
    figure!("fig7_training_diagnostics"),
    figure!("fig8_temperature"),
    figure!("fig9_balanced"),
    figure!("figA1_typical_learning"),
    figure!("figA2_direct_vs_inherited"),
    figure!("figA3_mixing"),
];

/// Loads one figure's sweeps with overrides applied.
pub fn figure_specs(name: &str, overrides: &[Override]) -> Result<Vec<SweepSpec>> {
    let (_, doc) = FIGURE_SPECS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| HarnessError::Config { origin: name.into(), message: "no such figure".into() })?;
    parse_specs(doc, name, overrides)
}

/// Drops the simulation modes, and sweeps left with no mode.
pub fn replica_only(specs: Vec<SweepSpec>) -> Vec<SweepSpec> {
    specs
        .into_iter()
        .filter_map(|mut s| {
            s.modes.retain(|m| !m.is_simulation());
            (!s.modes.is_empty()).then_some(s)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Summary {
    pub rows: usize,
    /// Rows whose status is not `ok`.
    pub flagged: usize,
}

impl Summary {
    fn add(&mut self, rec: &SweepRecord) {
        self.rows += 1;
        if !rec.status.is_ok() {
            self.flagged += 1;
        }
    }
}

/// Runs every sweep in order into one CSV stream.
pub fn write_sweeps<W: Write>(specs: &[SweepSpec], opts: &RunOptions, sink: W) -> Result<(W, Summary)> {
    let mut writer = RecordWriter::new(sink)?;
    let mut summary = Summary::default();
    for spec in specs {
        run_sweep_with(spec, opts, |rec| {
            summary.add(&rec);
            writer.write(&rec)
        })?;
    }
    Ok((writer.into_inner()?, summary))
}

/// Runs the sweeps into `path` and writes the resolved config next to it.
pub fn write_sweeps_file(specs: &[SweepSpec], opts: &RunOptions, path: &Path) -> Result<Summary> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let sidecar = sidecar_path(path);
    std::fs::write(&sidecar, resolved_config(specs)?).map_err(|e| HarnessError::io(&sidecar, e))?;
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let (mut sink, summary) = write_sweeps(specs, opts, BufWriter::new(file))?;
    sink.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(summary)
}
