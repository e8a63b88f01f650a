//! Loading sweep specs from TOML with layered overrides.
//!
//! A file holds either one sweep at the top level or several `[[sweep]]`
//! tables; top-level keys then act as defaults shared by every sweep.
//! Overrides address a key by its dotted path (`base.alpha`, `n_dim`,
//! `solver.tol`) and are applied to every sweep in the order
//! file < environment < command line.

use std::path::Path;

use serde::Serialize;
use toml::{Table, Value};

use crate::error::{HarnessError, Result};
use crate::spec::SweepSpec;

/// Prefix of environment overrides. `KDRS_N_DIM=200` sets `n_dim` and
/// `KDRS_BASE__LAMBDA_T=0.1` sets `base.lambda_t`.
pub const ENV_PREFIX: &str = "KDRS_";

/// Environment variables with the prefix that are read by the command line
/// parser rather than addressing spec keys.
pub const RESERVED_ENV: &[&str] = &["KDRS_CONFIG", "KDRS_OUT", "KDRS_OUT_DIR", "KDRS_WORKERS"];

#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
    pub origin: String,
}

impl Override {
    /// Parses `value` as a TOML value; anything that does not parse is
    /// taken as a string.
    pub fn new(path: &str, value: &str, origin: impl Into<String>) -> Self {
        let value = format!("v = {value}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(value.to_string()));
        Self { path: path.split('.').map(str::to_string).collect(), value, origin: origin.into() }
    }

    /// Parses a `path=value` assignment.
    pub fn parse_assignment(s: &str) -> Result<Self> {
        let (path, value) = s.split_once('=').ok_or_else(|| HarnessError::Config {
            origin: "--set".into(),
            message: format!("expected `key=value`, got `{s}`"),
        })?;
        Ok(Self::new(path.trim(), value.trim(), "--set"))
    }

    fn apply(&self, table: &mut Table) -> Result<()> {
        let (last, parents) = self.path.split_last().expect("override path is never empty");
        let mut t = table;
        for key in parents {
            let slot = t.entry(key.clone()).or_insert_with(|| Value::Table(Table::new()));
            t = slot.as_table_mut().ok_or_else(|| HarnessError::Config {
                origin: self.origin.clone(),
                message: format!("`{key}` is not a table"),
            })?;
        }
        t.insert(last.clone(), self.value.clone());
        Ok(())
    }
}

/// Overrides from environment variables carrying [`ENV_PREFIX`].
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<Override> {
    let mut out: Vec<Override> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && !RESERVED_ENV.contains(&k.as_str()))
        .map(|(k, v)| {
            let path = k[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
            Override::new(&path, &v, k)
        })
        .collect();
    out.sort_by(|a, b| a.origin.cmp(&b.origin));
    out
}

fn merge(defaults: &Table, table: &Table) -> Table {
    let mut out = defaults.clone();
    for (k, v) in table {
        match (out.get_mut(k), v) {
            (Some(Value::Table(d)), Value::Table(t)) => *d = merge(d, t),
            _ => {
                out.insert(k.clone(), v.clone());
            }
        }
    }
    out
}

/// Parses a config document into sweep specs.
pub fn parse_specs(text: &str, origin: &str, overrides: &[Override]) -> Result<Vec<SweepSpec>> {
    let config_err = |message: String| HarnessError::Config { origin: origin.to_string(), message };
    let mut root: Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    let tables = match root.remove("sweep") {
        None => vec![Table::new()],
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::Table(t) => Ok(t),
                _ => Err(config_err("`sweep` entries must be tables".into())),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(config_err("`sweep` must be an array of tables".into())),
    };
    let mut specs = Vec::with_capacity(tables.len());
    for t in tables {
        let mut table = merge(&root, &t);
        for o in overrides {
            o.apply(&mut table)?;
        }
        let spec: SweepSpec = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        spec.validate()?;
        specs.push(spec);
    }
    Ok(specs)
}

pub fn load_specs(path: &Path, overrides: &[Override]) -> Result<Vec<SweepSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_specs(&text, &path.display().to_string(), overrides)
}

#[derive(Serialize)]
struct Resolved<'a> {
    sweep: &'a [SweepSpec],
}

/// The fully resolved specs as a config document that loads back to the
/// same specs.
pub fn resolved_config(specs: &[SweepSpec]) -> Result<String> {
    toml::to_string(&Resolved { sweep: specs })
        .map_err(|e| HarnessError::Config { origin: "resolved config".into(), message: e.to_string() })
}

/// Path of the resolved-config file written next to a CSV.
pub fn sidecar_path(csv: &Path) -> std::path::PathBuf {
    let mut name = csv.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".config.toml");
    csv.with_file_name(name)
}
