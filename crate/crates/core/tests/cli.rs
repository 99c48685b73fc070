//! End-to-end checks of the `magres` binary and its library entry points.

use magres::cli::{compare_runs, run, CliError, ExperimentConfig, ExperimentKind, RunRecord};
use std::path::Path;
use std::process::{Command, Output};

fn magres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magres")).args(args).output().expect("binary runs")
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn manifest(dir: &Path) -> RunRecord {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn landau_levels_are_odd_multiples_of_b() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = magres(&["landau-levels", "b=1", "qmax=3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let lambdas: Vec<f64> = csv_rows(&out.join("landau_levels.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(lambdas, vec![1.0, 3.0, 5.0, 7.0]);
    let rec = manifest(&out);
    assert_eq!(rec.experiment, "landau-levels");
    assert!(rec.passed);
    assert_eq!(rec.outputs[0].sha256.len(), 64);
}

#[test]
fn toeplitz_disk_spectrum_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = magres(&["toeplitz-spectrum", "b=2", "R=1", "q=0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let eig: Vec<f64> = csv_rows(&dir.path().join("toeplitz_spectrum.csv")).iter().map(|r| r[1].parse().unwrap()).collect();
    let e = (-1.0f64).exp();
    assert!((eig[0] - (1.0 - e)).abs() < 1e-6, "{}", eig[0]);
    assert!((eig[1] - (1.0 - 2.0 * e)).abs() < 1e-6, "{}", eig[1]);
}

#[test]
fn charval_selftest_passes_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = magres(&["charval-selftest", "--seed", "7", "--threads", "1", "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    }
    let fa = std::fs::read(a.join("charval_selftest.csv")).unwrap();
    let fb = std::fs::read(b.join("charval_selftest.csv")).unwrap();
    assert_eq!(fa, fb);
    let o = magres(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["identical"], true);
}

#[test]
fn compare_flags_differences_and_schema_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(magres(&["toeplitz-spectrum", "b=2", "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(magres(&["toeplitz-spectrum", "b=2.001", "--out", b.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(magres(&["landau-levels", "--out", c.to_str().unwrap()]).status.code(), Some(0));
    // A different field changes the number of modes: never within tolerance.
    let rep = compare_runs(&a, &b, 1.0).unwrap();
    assert!(!rep.identical);
    assert_ne!(rep.artifacts[0].rows_a, rep.artifacts[0].rows_b);
    assert!(!rep.artifacts[0].within_tolerance);
    // Same shape, one perturbed cell.
    let d = dir.path().join("d");
    std::fs::create_dir(&d).unwrap();
    std::fs::copy(a.join("manifest.json"), d.join("manifest.json")).unwrap();
    let text = std::fs::read_to_string(a.join("toeplitz_spectrum.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[1] = format!("{:e}", cells[1].parse::<f64>().unwrap() + 1e-3);
    lines[1] = cells.join(",");
    std::fs::write(d.join("toeplitz_spectrum.csv"), lines.join("\n") + "\n").unwrap();
    let rep = compare_runs(&a, &d, 0.0).unwrap();
    assert!(!rep.identical && !rep.artifacts[0].within_tolerance);
    assert!((rep.artifacts[0].columns[1].max_abs_diff - 1e-3).abs() < 1e-12);
    assert!(compare_runs(&a, &d, 2e-3).unwrap().artifacts[0].within_tolerance);
    assert_eq!(magres(&["compare", a.to_str().unwrap(), c.to_str().unwrap()]).status.code(), Some(4));
    assert_eq!(magres(&["compare", a.to_str().unwrap(), dir.path().join("missing").to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["landau-levels", "no_such_key=1"],
        vec!["landau-levels", "b=-1"],
        vec!["toeplitz-spectrum", "region.shape=\"hexagon\""],
        vec!["landau-levels", "gibberish"],
        vec!["no-such-command"],
    ] {
        let mut full = args.clone();
        full.extend(["--out", out]);
        let o = magres(&full);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
    let o = magres(&["landau-levels", "no_such_key=1", "--out", out]);
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["status"], "error");
}

#[test]
fn toml_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, "b = 3.0\nqmax = 1\n[region]\nshape = \"disk\"\nradius = 0.5\n").unwrap();
    let cfg = ExperimentConfig::load(Some(&cfg_path), ExperimentKind::ToeplitzSpectrum, &["R=2".into()], Some(5)).unwrap();
    assert_eq!(cfg.b, 3.0);
    assert_eq!(cfg.qmax, 1);
    assert_eq!(cfg.region.radius, 2.0);
    assert_eq!(cfg.seed, 5);
    let cfg = ExperimentConfig::load(Some(&cfg_path), ExperimentKind::TqSpectrum, &["R=2".into(), "neumann".into()], None).unwrap();
    assert_eq!(cfg.obstacle.radius, 2.0);
    assert_eq!(cfg.boundary.kind, "neumann");
    assert!(matches!(ExperimentConfig::from_toml("bogus = 1"), Err(CliError::Config(_))));

    let out = dir.path().join("run");
    let o = magres(&["landau-levels", "qmax=0", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(csv_rows(&out.join("landau_levels.csv")), vec![vec!["0".to_string(), "3e0".to_string()]]);
}

#[test]
fn library_run_writes_manifest_with_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(None, ExperimentKind::GreenCheck, &["b=1".into()], None).unwrap();
    let rec = run(&cfg, dir.path()).unwrap();
    assert!(rec.passed, "{:?}", rec.checks);
    assert_eq!(rec, manifest(dir.path()).clone_with_time(rec.wall_time_s));
    let mut unset = cfg.clone();
    unset.experiment = None;
    assert!(matches!(run(&unset, dir.path()), Err(CliError::Config(_))));
    assert_eq!(CliError::Schema("x".into()).exit_code(), 4);
}

trait WithTime {
    fn clone_with_time(self, t: f64) -> Self;
}

impl WithTime for RunRecord {
    fn clone_with_time(mut self, t: f64) -> Self {
        self.wall_time_s = t;
        self
    }
}

#[test]
fn bem_validation_on_a_coarse_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let o = magres(&["bem-validate", "m=3", "b=1e-8", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(!csv_rows(&dir.path().join("bem_validate.csv")).is_empty());
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(magres(&["--help"]).status.code(), Some(0));
    assert_eq!(magres(&["--version"]).status.code(), Some(0));
}
