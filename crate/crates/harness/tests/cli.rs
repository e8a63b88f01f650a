//! The `kdrs` binary: exit codes, overrides, sidecar and comparison.

use std::path::Path;
use std::process::{Command, Output};

use kd_harness::config::load_specs;
use kd_harness::{read_records_file, Mode};

fn kdrs(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kdrs"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("kdrs runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn sweep_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    write(&cfg, "modes = [\"replica-teacher\"]\naxes = [{ param = \"alpha\", values = [1.0, 2.0] }]\n");
    let out = dir.path().join("out/s.csv");
    let o = kdrs(
        &["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--set", "base.rho=0.3"],
        &[("KDRS_BASE__LAMBDA_T", "0.2")],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = read_records_file(&out).unwrap();
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| r.params.rho == 0.3 && r.params.lambda_t == 0.2));
    let sidecar = dir.path().join("out/s.csv.config.toml");
    let resolved = load_specs(&sidecar, &[]).unwrap();
    assert_eq!(resolved[0].base.rho, 0.3);
    assert_eq!(resolved[0].base.lambda_t, 0.2);
}

#[test]
fn hard_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    write(&cfg, "modes = [\"replica-teacher\"]\nn_dimm = 3\n");
    let o = kdrs(&["sweep", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_dimm"));
    let o = kdrs(&["sweep", "--config", "/nonexistent.toml"], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flagged_rows_exit_with_two() {
    let o = kdrs(&["solve-teacher", "--alpha", "2", "--set", "solver.max_iters=2"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("nonconverged"));
}

#[test]
fn point_commands_print_one_row() {
    let o = kdrs(&["solve-kd", "--alpha", "3", "--lambda-t", "0.1", "--chi", "0.5"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let recs = kd_harness::read_records(o.stdout.as_slice()).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].mode, Mode::ReplicaKd);
    assert_eq!(recs[0].params.chi, 0.5);

    let o = kdrs(&["simulate", "--kind", "bo-kd", "--alpha", "2", "--n-dim", "50", "--n-seeds", "2"], &[]);
    assert!(matches!(o.status.code(), Some(0 | 2)));
    let recs = kd_harness::read_records(o.stdout.as_slice()).unwrap();
    assert_eq!(recs[0].mode, Mode::SimulateBoKd);
    assert_eq!(recs[0].empirical.unwrap().n_runs, 2);
}

#[test]
fn compare_passes_on_agreement_and_fails_on_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    write(
        &cfg,
        "n_dim = 300\nn_seeds = 4\nmodes = [\"replica-teacher\", \"simulate-teacher\"]\n\
         base = { lambda_t = 0.5 }\naxes = [{ param = \"alpha\", values = [2.0, 3.0] }]\n",
    );
    let csv = dir.path().join("s.csv");
    let o = kdrs(&["sweep", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let c = kdrs(&["compare", csv.to_str().unwrap(), csv.to_str().unwrap(), "--quantities", "eps_g"], &[]);
    assert_eq!(c.status.code(), Some(0), "{}", String::from_utf8_lossy(&c.stdout));

    // Shift every replica test error far outside the error bars.
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "eps_g").unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&headers).unwrap();
    for row in rdr.records() {
        let row = row.unwrap();
        let fields: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, f)| if i == col && !f.is_empty() { (f.parse::<f64>().unwrap() + 0.2).to_string() } else { f.to_string() })
            .collect();
        w.write_record(&fields).unwrap();
    }
    let corrupted = dir.path().join("bad.csv");
    std::fs::write(&corrupted, w.into_inner().unwrap()).unwrap();
    let c = kdrs(&["compare", corrupted.to_str().unwrap(), csv.to_str().unwrap()], &[]);
    assert_eq!(c.status.code(), Some(2));
    let table = String::from_utf8_lossy(&c.stdout);
    assert_eq!(table.matches("OUTSIDE").count(), 2, "{table}");

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, kd_harness::record::HEADER.join(",") + "\n").unwrap();
    let c = kdrs(&["compare", empty.to_str().unwrap(), csv.to_str().unwrap()], &[]);
    assert_eq!(c.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&c.stderr).contains("no replica counterpart"));
}

#[test]
fn every_figure_spec_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = kdrs(
        &["figures-data", "--out-dir", dir.path().to_str().unwrap(), "--n-dim", "40", "--n-seeds", "2"],
        &[],
    );
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{stderr}");
    for (name, _) in kd_harness::figures::FIGURE_SPECS {
        let path = dir.path().join(format!("{name}.csv"));
        let recs = read_records_file(&path).unwrap();
        let specs = load_specs(&dir.path().join(format!("{name}.csv.config.toml")), &[]).unwrap();
        let expected: usize = specs.iter().map(|s| s.len() * s.modes.len()).sum();
        assert_eq!(recs.len(), expected, "{name}");
        // Replica rows are solved at every point; flags only come from small-N simulations.
        for r in recs.iter().filter(|r| !r.mode.is_simulation()) {
            assert!(r.status.is_ok(), "{name}: {:?} {}", r.params, r.status);
        }
    }
}
