//! Batch experiment driver: configuration, orchestration and outputs.
//!
//! Every experiment reads an [`ExperimentConfig`] (TOML file plus
//! `key=value` command-line overrides; overrides win), writes CSV tables
//! into the output directory and a `manifest.json` [`RunRecord`] holding the
//! config echo, a SHA-256 hash of the inputs, the wall time, the output
//! files with their hashes and the pass/fail checks. CSV outputs depend
//! only on the config and seed, never on timing or thread count.

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

use crate::bem::{
    assemble_layer_operators, eval_layer_potential, jump_relation_check, BemQuadrature, DirichletRobinSolver,
    JumpCheckOptions, LayerKind, RobinParameter, Side,
};
use crate::bs::{t_q_matrix, AxialProfile, BirmanSchwingerFamily, BoundaryCondition, ObstacleProblem, PerturbationForm, TrialSpace};
use crate::charval::{
    counting_table, scan_characteristic_values, sector_check, synthetic_family, PolarGrid, SectorOrientation, SectorSpec,
};
use crate::green::{green_function, GreenQuadrature, QuadratureSpec};
use crate::landau::{
    default_n_modes, disk_oracle_eigenvalues, landau_level, toeplitz_matrix, CountingFunction, FieldConfig, LandauLevelIndex, Region,
};
use crate::mesh::{ShapeTag, SurfaceMesh};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{module}: {message}")]
    Numeric { module: &'static str, message: String },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Process exit code: 2 config, 3 numeric, 4 schema, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Schema(_) => 4,
            _ => 5,
        }
    }
}

macro_rules! numeric_from {
    ($ty:ty, $module:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Numeric { module: $module, message: e.to_string() }
            }
        }
    };
}
numeric_from!(crate::landau::LandauError, "landau");
numeric_from!(crate::green::GreenError, "green");
numeric_from!(crate::bem::BemError, "bem");
numeric_from!(crate::bs::BsError, "bs");
numeric_from!(crate::charval::CharvalError, "charval");
numeric_from!(crate::mesh::MeshError, "mesh");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    LandauLevels,
    ToeplitzSpectrum,
    GreenCheck,
    BemValidate,
    TqSpectrum,
    ResonanceScan,
    CharvalSelftest,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LandauLevels => "landau-levels",
            ExperimentKind::ToeplitzSpectrum => "toeplitz-spectrum",
            ExperimentKind::GreenCheck => "green-check",
            ExperimentKind::BemValidate => "bem-validate",
            ExperimentKind::TqSpectrum => "tq-spectrum",
            ExperimentKind::ResonanceScan => "resonance-scan",
            ExperimentKind::CharvalSelftest => "charval-selftest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSpec {
    /// `disk` or `polygon`.
    pub shape: String,
    pub center: [f64; 2],
    pub radius: f64,
    pub vertices: Vec<[f64; 2]>,
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self { shape: "disk".into(), center: [0.0, 0.0], radius: 1.0, vertices: Vec::new() }
    }
}

impl RegionSpec {
    fn to_region(&self) -> Result<Region, CliError> {
        match self.shape.as_str() {
            "disk" => {
                if !(self.radius > 0.0) {
                    return Err(CliError::Config(format!("region radius must be positive, got {}", self.radius)));
                }
                Ok(Region::Disk { center: self.center, radius: self.radius })
            }
            "polygon" => {
                if self.vertices.len() < 3 {
                    return Err(CliError::Config("polygon region needs at least 3 vertices".into()));
                }
                Ok(Region::Polygon { vertices: self.vertices.clone() })
            }
            s => Err(CliError::Config(format!("unknown region shape `{s}` (expected disk or polygon)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleSpec {
    /// `sphere`, `ellipsoid` or `mesh`.
    pub kind: String,
    pub center: [f64; 3],
    pub radius: f64,
    pub semi_axes: [f64; 3],
    /// ASCII mesh file for `kind = "mesh"`.
    pub path: Option<PathBuf>,
    /// Icosphere frequency (`20 m²` panels).
    pub refinement: usize,
}

impl Default for ObstacleSpec {
    fn default() -> Self {
        Self { kind: "sphere".into(), center: [0.0; 3], radius: 1.0, semi_axes: [1.0; 3], path: None, refinement: 5 }
    }
}

impl ObstacleSpec {
    fn build(&self) -> Result<SurfaceMesh, CliError> {
        if self.refinement == 0 {
            return Err(CliError::Config("obstacle refinement must be positive".into()));
        }
        match self.kind.as_str() {
            "sphere" => Ok(SurfaceMesh::icosphere(self.center, self.radius, self.refinement)?),
            "ellipsoid" => Ok(SurfaceMesh::ellipsoid(self.center, self.semi_axes, self.refinement)?),
            "mesh" => {
                let p = self.path.as_ref().ok_or_else(|| CliError::Config("obstacle kind `mesh` needs `path`".into()))?;
                Ok(SurfaceMesh::read_file(p, ShapeTag::General)?)
            }
            s => Err(CliError::Config(format!("unknown obstacle kind `{s}` (expected sphere, ellipsoid or mesh)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySpec {
    /// `dirichlet`, `neumann` or `robin`.
    pub kind: String,
    /// Constant Robin coefficient.
    pub gamma: f64,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self { kind: "dirichlet".into(), gamma: 0.0 }
    }
}

impl BoundarySpec {
    fn build(&self, n_panels: usize) -> Result<BoundaryCondition, CliError> {
        match self.kind.as_str() {
            "dirichlet" => Ok(BoundaryCondition::Dirichlet),
            "neumann" => Ok(BoundaryCondition::Robin(RobinParameter::zero(n_panels))),
            "robin" => Ok(BoundaryCondition::Robin(RobinParameter::constant(n_panels, self.gamma)?)),
            s => Err(CliError::Config(format!("unknown boundary condition `{s}` (expected dirichlet, neumann or robin)"))),
        }
    }
}

/// Experiment configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub b: f64,
    pub q: usize,
    pub qmax: usize,
    pub region: RegionSpec,
    pub obstacle: ObstacleSpec,
    pub boundary: BoundarySpec,
    pub n_modes: Option<usize>,
    pub j_max: Option<usize>,
    /// Resonance window `k_min √b < |k| < k_max √b`.
    pub k_min: f64,
    pub k_max: f64,
    pub grid_r: usize,
    pub grid_theta: usize,
    pub threshold: f64,
    pub sector_half_angle: f64,
    pub distances: Vec<f64>,
    pub selftest_dim: usize,
    pub selftest_scale: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            b: 1.0,
            q: 0,
            qmax: 3,
            region: RegionSpec::default(),
            obstacle: ObstacleSpec::default(),
            boundary: BoundarySpec::default(),
            n_modes: None,
            j_max: None,
            k_min: 0.05,
            k_max: 0.2,
            grid_r: 40,
            grid_theta: 32,
            threshold: 0.5,
            sector_half_angle: 0.3,
            distances: vec![1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0],
            selftest_dim: 12,
            selftest_scale: 1e-3,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parse from TOML text.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Load a TOML file (if any), apply overrides, set the experiment kind.
    pub fn load(path: Option<&Path>, kind: ExperimentKind, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, kind, o)?;
        }
        if let Some(s) = seed {
            table.insert("seed".into(), toml::Value::Integer(s as i64));
        }
        table.insert("experiment".into(), toml::Value::String(kind.name().into()));
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [("b", self.b), ("k_max", self.k_max), ("threshold", self.threshold), ("sector_half_angle", self.sector_half_angle)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CliError::Config(format!("`{name}` must be positive, got {v}")));
            }
        }
        if !(self.k_min > 0.0 && self.k_min < self.k_max) {
            return Err(CliError::Config(format!("need 0 < k_min < k_max, got {} and {}", self.k_min, self.k_max)));
        }
        if self.grid_r < 3 || self.grid_theta < 3 || self.selftest_dim == 0 || self.n_modes == Some(0) {
            return Err(CliError::Config("grid sizes must be at least 3 and dimensions positive".into()));
        }
        if !(self.selftest_scale >= 0.0) {
            return Err(CliError::Config("selftest_scale must be nonnegative".into()));
        }
        if self.distances.iter().any(|d| !(*d > 0.0)) {
            return Err(CliError::Config("distances must be positive".into()));
        }
        Ok(())
    }
}

/// Parse an override value as TOML, falling back to a plain string.
fn parse_value(v: &str) -> toml::Value {
    let wrapped = format!("x = {v}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("x").unwrap_or_else(|| toml::Value::String(v.into())),
        Err(_) => toml::Value::String(v.into()),
    }
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<(), CliError> {
    let (head, rest) = path.split_first().ok_or_else(|| CliError::Config("empty override key".into()))?;
    if rest.is_empty() {
        table.insert((*head).into(), value);
        return Ok(());
    }
    let entry = table.entry(head.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => set_path(t, rest, value),
        _ => Err(CliError::Config(format!("override key `{head}` is not a table"))),
    }
}

/// Apply one `key=value` override (dotted keys address nested tables). Bare
/// words select a region shape, obstacle kind or boundary condition; `R`
/// is the radius of the region (Toeplitz) or obstacle (otherwise).
fn apply_override(table: &mut toml::Table, kind: ExperimentKind, o: &str) -> Result<(), CliError> {
    let Some((key, value)) = o.split_once('=') else {
        return match o {
            "disk" | "polygon" => set_path(table, &["region", "shape"], toml::Value::String(o.into())),
            "sphere" | "ellipsoid" | "mesh" => set_path(table, &["obstacle", "kind"], toml::Value::String(o.into())),
            "dirichlet" | "neumann" | "robin" => set_path(table, &["boundary", "kind"], toml::Value::String(o.into())),
            _ => Err(CliError::Config(format!("override `{o}` is not of the form key=value"))),
        };
    };
    let key = key.trim();
    let value = parse_value(value.trim());
    let path: Vec<&str> = match key {
        "R" | "radius" if kind == ExperimentKind::ToeplitzSpectrum => vec!["region", "radius"],
        "R" | "radius" => vec!["obstacle", "radius"],
        "refinement" | "m" => vec!["obstacle", "refinement"],
        "gamma" => vec!["boundary", "gamma"],
        k => k.split('.').collect(),
    };
    set_path(table, &path, value)
}

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, passed: value <= limit }
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, passed: value >= limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Manifest of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: String,
    pub config: serde_json::Value,
    pub input_hash: String,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputEntry>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub passed: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn input_hash(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg)?);
    if cfg.obstacle.kind == "mesh" {
        if let Some(p) = &cfg.obstacle.path {
            h.update(std::fs::read(p)?);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Deterministic float formatting for CSV cells.
fn num(v: f64) -> String {
    format!("{v:e}")
}

struct Outputs {
    dir: PathBuf,
    entries: Vec<OutputEntry>,
}

impl Outputs {
    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        self.raw(name, &bytes)
    }

    fn raw(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.entries.push(OutputEntry { file: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }
}

struct Outcome {
    checks: Vec<Check>,
    notes: Vec<String>,
}

/// Run the configured experiment, writing artifacts and `manifest.json` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunRecord, CliError> {
    cfg.validate()?;
    let kind = cfg.experiment.ok_or_else(|| CliError::Config("experiment kind not set".into()))?;
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut outputs = Outputs { dir: out.to_path_buf(), entries: Vec::new() };
    let outcome = match kind {
        ExperimentKind::LandauLevels => landau_levels(cfg, &mut outputs)?,
        ExperimentKind::ToeplitzSpectrum => toeplitz_spectrum(cfg, &mut outputs)?,
        ExperimentKind::GreenCheck => green_check(cfg, &mut outputs)?,
        ExperimentKind::BemValidate => bem_validate(cfg, &mut outputs)?,
        ExperimentKind::TqSpectrum => tq_spectrum(cfg, &mut outputs)?,
        ExperimentKind::ResonanceScan => resonance_scan(cfg, &mut outputs)?,
        ExperimentKind::CharvalSelftest => charval_selftest(cfg, &mut outputs)?,
    };
    let record = RunRecord {
        experiment: kind.name().into(),
        config: serde_json::to_value(cfg)?,
        input_hash: input_hash(cfg)?,
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs: outputs.entries,
        passed: outcome.checks.iter().all(|c| c.passed),
        checks: outcome.checks,
        notes: outcome.notes,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&record)?)?;
    Ok(record)
}

fn landau_levels(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let field = FieldConfig::new(cfg.b)?;
    let rows: Vec<Vec<String>> =
        (0..=cfg.qmax).map(|q| vec![q.to_string(), num(landau_level(LandauLevelIndex(q), &field))]).collect();
    out.csv("landau_levels.csv", &["q", "lambda"], &rows)?;
    Ok(Outcome { checks: Vec::new(), notes: Vec::new() })
}

fn toeplitz_spectrum(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let region = cfg.region.to_region()?;
    let field = FieldConfig::with_center(cfg.b, region.centroid())?;
    let n_modes = cfg.n_modes.unwrap_or_else(|| default_n_modes(cfg.b, cfg.region.radius));
    let op = toeplitz_matrix(LandauLevelIndex(cfg.q), &field, &region, n_modes)?;
    let eig = op.eigenvalues();
    let oracle = match (&region, cfg.q) {
        (Region::Disk { radius, .. }, 0) => Some(disk_oracle_eigenvalues(0.5 * cfg.b * radius * radius, eig.len())?),
        _ => None,
    };
    let mut checks = Vec::new();
    let rows: Vec<Vec<String>> = eig
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let (o, e) = match &oracle {
                Some(o) => (num(o[k]), num((l - o[k]).abs())),
                None => (String::new(), String::new()),
            };
            vec![k.to_string(), num(*l), o, e]
        })
        .collect();
    out.csv("toeplitz_spectrum.csv", &["index", "eigenvalue", "disk_oracle", "abs_error"], &rows)?;
    if let Some(o) = &oracle {
        let err = eig.iter().zip(o).take(21).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        checks.push(Check::at_most("disk oracle max error (k <= 20)", err, 1e-8));
    }
    checks.push(Check::at_most("hermiticity defect", op.hermiticity_defect(), 1e-12));
    Ok(Outcome { checks, notes: vec![format!("n_modes = {n_modes}")] })
}

fn green_check(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let field = FieldConfig::new(cfg.b)?;
    let spec = QuadratureSpec::default();
    let quad = GreenQuadrature::new(spec)?;
    let fine = GreenQuadrature::new(spec.doubled())?;
    let dir = [0.6, 0.0, 0.8];
    let x = [0.3, -0.2, 0.1];
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for &r in &cfg.distances {
        let y = [x[0] + r * dir[0], x[1] + r * dir[1], x[2] + r * dir[2]];
        let g = green_function(&x, &y, &field, &quad)?;
        let g2 = green_function(&x, &y, &field, &fine)?;
        let diff = (g - g2).norm() / g2.norm();
        worst = worst.max(diff);
        let classical = 1.0 / (4.0 * PI * r);
        rows.push(vec![num(r), num(g.re), num(g.im), num(g.norm()), num(classical), num(g.norm() / classical), num(diff)]);
    }
    out.csv("green_check.csv", &["distance", "re_g", "im_g", "abs_g", "classical", "ratio", "doubling_rel_diff"], &rows)?;
    Ok(Outcome { checks: vec![Check::at_most("quadrature doubling relative change", worst, 1e-8)], notes: Vec::new() })
}

fn sphere_radius(mesh: &SurfaceMesh) -> Result<([f64; 3], f64), CliError> {
    match mesh.shape {
        ShapeTag::Sphere { center, radius } => Ok((center, radius)),
        _ => Err(CliError::Config("this experiment needs a sphere obstacle".into())),
    }
}

fn bem_validate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let mesh = cfg.obstacle.build()?;
    let (center, radius) = sphere_radius(&mesh)?;
    let field = FieldConfig::new(cfg.b)?;
    let quad = BemQuadrature::default();
    let (s, d) = assemble_layer_operators(&mesh, &field, &quad)?;
    let n = mesh.n_panels();
    let ones = crate::linalg::CVector::from_element(n, Complex64::new(1.0, 0.0));
    let mean = |v: &crate::linalg::CVector| v.iter().map(|z| z.re).sum::<f64>() / n as f64;
    let maxdev = |v: &crate::linalg::CVector, t: f64| v.iter().map(|z| (z - t).norm()).fold(0.0, f64::max);
    let s1 = s.apply(&ones)?;
    let d1 = d.apply(&ones)?;
    let dens = vec![Complex64::new(1.0, 0.0); n];
    let inner = [center[0] + 0.1 * radius, center[1] + 0.2 * radius, center[2] + 0.3 * radius];
    let outer = [center[0] + 2.0 * radius, center[1], center[2]];
    let v_in = eval_layer_potential(&mesh, &dens, LayerKind::Double, &inner, &field, &quad)?;
    let v_out = eval_layer_potential(&mesh, &dens, LayerKind::Double, &outer, &field, &quad)?;
    let dn = DirichletRobinSolver::new(&s, &d, &RobinParameter::zero(n), Side::Exterior)?.apply(&ones)?;
    let smooth: Vec<Complex64> = mesh
        .panels
        .iter()
        .map(|p| {
            let u = [(p.centroid[0] - center[0]) / radius, (p.centroid[1] - center[1]) / radius, (p.centroid[2] - center[2]) / radius];
            Complex64::new(1.0 + u[2] + 0.5 * u[0] * u[1], 0.3 * u[0])
        })
        .collect();
    let jump = jump_relation_check(&mesh, &smooth, &field, &JumpCheckOptions::default())?;
    let classical = cfg.b <= 1e-6;
    let rows_data: Vec<(&str, f64, f64, f64, f64)> = vec![
        ("single_layer_constant", mean(&s1), radius, maxdev(&s1, radius) / radius, 2e-3),
        ("double_layer_on_surface", mean(&d1), -0.5, maxdev(&d1, -0.5), 5e-3),
        ("double_layer_interior", v_in.re, -1.0, (v_in + 1.0).norm(), 5e-3),
        ("double_layer_exterior", v_out.re, 0.0, v_out.norm(), 5e-3),
        ("exterior_dn_constant", mean(&dn), -1.0 / radius, maxdev(&dn, -1.0 / radius) * radius, 5e-2),
        ("jump_double_interior", jump.double_interior, 0.0, jump.double_interior, 5e-2),
        ("jump_double_exterior", jump.double_exterior, 0.0, jump.double_exterior, 5e-2),
        ("jump_single_continuity", jump.single_continuity, 0.0, jump.single_continuity, 5e-2),
    ];
    let mut checks = Vec::new();
    let rows: Vec<Vec<String>> = rows_data
        .iter()
        .map(|(name, value, target, err, tol)| {
            if classical {
                checks.push(Check::at_most(name, *err, *tol));
            }
            vec![name.to_string(), num(*value), num(*target), num(*err), num(*tol)]
        })
        .collect();
    out.csv("bem_validate.csv", &["quantity", "value", "classical_target", "error", "tolerance"], &rows)?;
    let notes = vec![
        format!("panels = {n}"),
        if classical { "classical targets enforced (b <= 1e-6)".into() } else { "classical targets reported only (b > 1e-6)".into() },
    ];
    Ok(Outcome { checks, notes })
}

fn build_form(cfg: &ExperimentConfig) -> Result<PerturbationForm, CliError> {
    let mesh = cfg.obstacle.build()?;
    let field = FieldConfig::new(cfg.b)?;
    let bc = cfg.boundary.build(mesh.n_panels())?;
    let problem = ObstacleProblem::new(mesh, bc, field)?;
    Ok(PerturbationForm::new(problem, &BemQuadrature::default())?)
}

/// Radii of the largest disk inside and the smallest disk containing the
/// planar shadow of the obstacle, both centred on the field axis.
fn shadow_radii(mesh: &SurfaceMesh) -> (f64, f64) {
    match mesh.shape {
        ShapeTag::Sphere { center, radius } => {
            let off = center[0].hypot(center[1]);
            ((radius - off).max(0.0), radius + off)
        }
        ShapeTag::Ellipsoid { center, semi_axes } => {
            let off = center[0].hypot(center[1]);
            ((semi_axes[0].min(semi_axes[1]) - off).max(0.0), semi_axes[0].max(semi_axes[1]) + off)
        }
        ShapeTag::General => {
            let outer = mesh.vertices.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max);
            (0.0, outer)
        }
    }
}

fn tq_spectrum(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let form = build_form(cfg)?;
    let n_modes = cfg.n_modes.unwrap_or(24);
    let tq = t_q_matrix(&form, cfg.q, n_modes)?;
    let (r_in, r_out) = shadow_radii(&form.problem.mesh);
    let oracle = |r: f64| -> Result<Vec<f64>, CliError> {
        if r > 0.0 && cfg.q == 0 {
            Ok(disk_oracle_eigenvalues(0.5 * cfg.b * r * r, n_modes)?)
        } else {
            Ok(vec![f64::NAN; n_modes])
        }
    };
    let (o_in, o_out) = (oracle(r_in)?, oracle(r_out)?);
    let ratio = |l: f64, o: f64| if l > 0.0 && o > 0.0 && o < 1.0 { l.ln() / o.ln() } else { f64::NAN };
    let rows: Vec<Vec<String>> = tq
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, l)| {
            vec![k.to_string(), num(*l), num(o_in[k]), num(o_out[k]), num(ratio(*l, o_in[k])), num(ratio(*l, o_out[k]))]
        })
        .collect();
    out.csv(
        "tq_spectrum.csv",
        &["index", "eigenvalue", "oracle_inscribed", "oracle_circumscribed", "log_ratio_inscribed", "log_ratio_circumscribed"],
        &rows,
    )?;
    let path = out.dir.join("t_q.bin");
    tq.export(&path, &form.problem.field, &format!("{} {}", cfg.obstacle.kind, cfg.boundary.kind))?;
    let bytes = std::fs::read(&path)?;
    out.entries.push(OutputEntry { file: "t_q.bin".into(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
    let norm = tq.eigenvalues.first().copied().unwrap_or(0.0).abs();
    let min = tq.eigenvalues.last().copied().unwrap_or(0.0);
    Ok(Outcome {
        checks: vec![Check::at_least("min eigenvalue / norm", if norm > 0.0 { min / norm } else { 0.0 }, -1e-8)],
        notes: vec![format!("raw hermiticity defect {:.3e}", tq.hermiticity_defect)],
    })
}

fn resonance_scan(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let form = build_form(cfg)?;
    let n_modes = cfg.n_modes.unwrap_or(8);
    let j_max = cfg.j_max.unwrap_or(cfg.q + 8);
    let trial = TrialSpace::new(AxialProfile::for_obstacle(&form.problem), j_max, n_modes)?;
    let fam = BirmanSchwingerFamily::new(&form, cfg.q, &trial, j_max)?;
    let sb = cfg.b.sqrt();
    let (r_lo, r_hi) = (cfg.k_min * sb, cfg.k_max * sb);
    // Scan slightly beyond the window so boundary values are refined, then select.
    let hf = fam.holomorphic_family(1.5 * r_hi);
    let grid = PolarGrid::new(0.5 * r_lo, 1.25 * r_hi, cfg.grid_r, cfg.grid_theta)?;
    let values = scan_characteristic_values(&hf, &grid, cfg.threshold)?;
    let mut rows = Vec::new();
    let mut ks = Vec::new();
    for v in &values {
        let k = fam.momentum(v.location);
        if k.norm() > r_lo && k.norm() < r_hi {
            ks.push(k);
        }
        rows.push(vec![
            num(k.re),
            num(k.im),
            num(v.residual),
            v.multiplicity.to_string(),
            num(v.contour_radius),
            num(v.integer_defect),
        ]);
    }
    out.csv("resonances.csv", &["re_k", "im_k", "sigma_min", "multiplicity", "contour_radius", "integer_defect"], &rows)?;
    let orientation = if fam.eps > 0.0 { SectorOrientation::NegativeImaginary } else { SectorOrientation::PositiveImaginary };
    let sector = SectorSpec::new(cfg.sector_half_angle, orientation, 1e-6)?;
    let report = sector_check(&ks, &sector, r_lo, r_hi);
    let a0 = CountingFunction::new(fam.a0_eigenvalues()?, "A_q(0) on the trial space")?;
    let radii: Vec<f64> = (0..=8).map(|i| r_lo * (r_hi / r_lo).powf(i as f64 / 8.0)).collect();
    let table = counting_table(&values, &a0, &radii, r_hi, 2);
    let crow: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| vec![num(r.r), r.n_values.to_string(), r.n_a0.to_string(), r.difference.to_string()])
        .collect();
    out.csv("counting.csv", &["r", "n_values", "n_a0", "difference"], &crow)?;
    let in_window = ks.len() as f64;
    let checks = vec![
        Check::at_least("sector: fraction of values inside (inner half)", report.fraction_inner_half, 1.0),
        Check::at_most("sector: half-plane violations", report.n_half_plane_violations as f64, 0.0),
        Check::at_most("counting: max |#values - n(r, A(0))|", table.max_abs_difference as f64, 2.0),
    ];
    let mut notes = vec![
        format!("{} characteristic values in the window, {} scanned in total", in_window, values.len()),
        format!("genericity diagnostic cond(I − Ã'(0)Π) = {:.3e} (reported only)", fam.genericity_condition()?),
    ];
    if let Some(w) = fam.matrix(Complex64::new(0.0, r_hi))?.warning {
        notes.push(w);
    }
    Ok(Outcome { checks, notes })
}

fn charval_selftest(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Outcome, CliError> {
    let spectrum: Vec<f64> = (1..=cfg.selftest_dim).map(|j| 2f64.powi(-(j as i32))).collect();
    let fam = synthetic_family(&spectrum, cfg.selftest_scale, cfg.seed)?;
    let smallest = spectrum[spectrum.len() - 1];
    let grid = PolarGrid::new(0.5 * smallest, 0.9, 10 * cfg.selftest_dim, 48)?;
    let values = scan_characteristic_values(&fam, &grid, cfg.threshold)?;
    let rows: Vec<Vec<String>> = values
        .iter()
        .map(|v| {
            vec![
                num(v.location.re),
                num(v.location.im),
                num(v.residual),
                v.multiplicity.to_string(),
                num(v.contour_radius),
                num(v.integer_defect),
            ]
        })
        .collect();
    out.csv("charval_selftest.csv", &["re_k", "im_k", "sigma_min", "multiplicity", "contour_radius", "integer_defect"], &rows)?;
    let recovered = spectrum
        .iter()
        .filter(|&&s| values.iter().any(|v| (v.location - s).norm() <= 1e-2 * s))
        .count();
    let a0 = CountingFunction::new(spectrum.clone(), "planted spectrum")?;
    let radii: Vec<f64> = (1..cfg.selftest_dim).map(|j| 2f64.powf(-(j as f64) - 0.5)).collect();
    let table = counting_table(&values, &a0, &radii, 0.9, 0);
    let max_defect = values.iter().map(|v| v.integer_defect).fold(0.0, f64::max);
    let min_re = values.iter().map(|v| v.location.re).fold(f64::INFINITY, f64::min);
    let sector = SectorSpec::new(cfg.sector_half_angle, SectorOrientation::PositiveReal, 1e-8)?;
    let locs: Vec<Complex64> = values.iter().map(|v| v.location).collect();
    let sreport = sector_check(&locs, &sector, 0.5 * smallest, 0.9);
    Ok(Outcome {
        checks: vec![
            Check::at_most("max integer defect", max_defect, 1e-6),
            Check::at_least("recall", recovered as f64 / spectrum.len() as f64, 1.0),
            Check::at_most("counting transfer max difference", table.max_abs_difference as f64, 0.0),
            Check::at_least("sign rule: min Re z", min_re, -1e-8),
            Check::at_least("sector: fraction inside", sreport.fraction_inside, 1.0),
        ],
        notes: vec![format!("{} values recovered", values.len())],
    })
}

/// Per-column numeric difference between two CSV artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDiff {
    pub column: String,
    pub max_abs_diff: f64,
    pub mismatched_text_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactDiff {
    pub file: String,
    pub rows_a: usize,
    pub rows_b: usize,
    pub columns: Vec<ColumnDiff>,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub experiment: String,
    pub tolerance: f64,
    pub artifacts: Vec<ArtifactDiff>,
    /// No differences at all (every CSV identical).
    pub identical: bool,
}

fn read_manifest(path: &Path) -> Result<(PathBuf, RunRecord), CliError> {
    let file = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| CliError::Schema(format!("cannot read {}: {e}", file.display())))?;
    let rec: RunRecord = serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", file.display())))?;
    Ok((file.parent().map(Path::to_path_buf).unwrap_or_default(), rec))
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.map(|r| r.iter().map(String::from).collect())).collect::<Result<_, _>>()?;
    Ok((header, rows))
}

/// Compare the CSV artifacts of two runs (directories or manifest paths).
pub fn compare_runs(path_a: &Path, path_b: &Path, tolerance: f64) -> Result<CompareReport, CliError> {
    let (dir_a, a) = read_manifest(path_a)?;
    let (dir_b, b) = read_manifest(path_b)?;
    if a.experiment != b.experiment {
        return Err(CliError::Schema(format!("experiment kinds differ: {} vs {}", a.experiment, b.experiment)));
    }
    let mut artifacts = Vec::new();
    let mut identical = true;
    for out in a.outputs.iter().filter(|o| o.file.ends_with(".csv")) {
        if !b.outputs.iter().any(|o| o.file == out.file) {
            return Err(CliError::Schema(format!("artifact {} missing from the second run", out.file)));
        }
        let (ha, ra) = read_csv(&dir_a.join(&out.file))?;
        let (hb, rb) = read_csv(&dir_b.join(&out.file))?;
        if ha != hb {
            return Err(CliError::Schema(format!("{}: column headers differ", out.file)));
        }
        let mut cols: BTreeMap<usize, ColumnDiff> = ha
            .iter()
            .enumerate()
            .map(|(i, h)| (i, ColumnDiff { column: h.clone(), max_abs_diff: 0.0, mismatched_text_cells: 0 }))
            .collect();
        for (x, y) in ra.iter().zip(&rb) {
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                let c = cols.get_mut(&i).expect("column index");
                match (u.parse::<f64>(), v.parse::<f64>()) {
                    (Ok(p), Ok(q)) if p.is_nan() && q.is_nan() => {}
                    (Ok(p), Ok(q)) => c.max_abs_diff = c.max_abs_diff.max((p - q).abs()),
                    _ if u == v => {}
                    _ => c.mismatched_text_cells += 1,
                }
            }
        }
        let columns: Vec<ColumnDiff> = cols.into_values().collect();
        let same_shape = ra.len() == rb.len();
        let within = same_shape && columns.iter().all(|c| c.max_abs_diff <= tolerance && c.mismatched_text_cells == 0);
        if !same_shape || columns.iter().any(|c| c.max_abs_diff > 0.0 || c.mismatched_text_cells > 0) {
            identical = false;
        }
        artifacts.push(ArtifactDiff { file: out.file.clone(), rows_a: ra.len(), rows_b: rb.len(), columns, within_tolerance: within });
    }
    Ok(CompareReport { experiment: a.experiment, tolerance, artifacts, identical })
}

/// Command-line interface.
#[derive(Debug, Parser)]
#[command(name = "magres", version, about = "Magnetic obstacle resonances: experiments and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker thread cap.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// `key=value` overrides (dotted keys for nested tables) or bare words
    /// such as `disk`, `sphere`, `neumann`.
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Landau levels Λ_q = (2q+1) b.
    LandauLevels(Overrides),
    /// Eigenvalues of the Toeplitz compression p_q 1_U p_q.
    ToeplitzSpectrum(Overrides),
    /// Green kernel values, classical comparison and quadrature doubling.
    GreenCheck(Overrides),
    /// Boundary-operator validation on a sphere.
    BemValidate(Overrides),
    /// Spectrum of T_q for an obstacle.
    TqSpectrum(Overrides),
    /// Characteristic-value scan of A_q near a Landau level.
    ResonanceScan(Overrides),
    /// Self-test of the characteristic-value machinery on planted families.
    CharvalSelftest(Overrides),
    /// Compare the artifacts of two runs.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Absolute tolerance for numeric cells.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let (kind, overrides) = match &cli.command {
        Command::LandauLevels(o) => (ExperimentKind::LandauLevels, o),
        Command::ToeplitzSpectrum(o) => (ExperimentKind::ToeplitzSpectrum, o),
        Command::GreenCheck(o) => (ExperimentKind::GreenCheck, o),
        Command::BemValidate(o) => (ExperimentKind::BemValidate, o),
        Command::TqSpectrum(o) => (ExperimentKind::TqSpectrum, o),
        Command::ResonanceScan(o) => (ExperimentKind::ResonanceScan, o),
        Command::CharvalSelftest(o) => (ExperimentKind::CharvalSelftest, o),
        Command::Compare { a, b, tolerance } => {
            return match compare_runs(a, b, *tolerance) {
                Ok(rep) => {
                    out_line(&serde_json::to_string_pretty(&rep).unwrap_or_default());
                    0
                }
                Err(e) => report_error(&e),
            };
        }
    };
    let result = ExperimentConfig::load(cli.config.as_deref(), kind, &overrides.overrides, cli.seed).and_then(|cfg| run(&cfg, &cli.out));
    match result {
        Ok(rec) => {
            for c in &rec.checks {
                out_line(&format!("{} {}: {:e} (limit {:e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.limit));
            }
            out_line(&format!("{} -> {}", rec.experiment, cli.out.display()));
            if rec.passed {
                0
            } else {
                let failed: Vec<&Check> = rec.checks.iter().filter(|c| !c.passed).collect();
                eprintln!("{}", json!({ "status": "failed", "experiment": rec.experiment, "failed_checks": failed }));
                1
            }
        }
        Err(e) => report_error(&e),
    }
}

/// Write a line to stdout, ignoring closed pipes.
fn out_line(s: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{s}");
}

fn report_error(e: &CliError) -> i32 {
    let module = match e {
        CliError::Numeric { module, .. } => *module,
        _ => "cli",
    };
    eprintln!("{}", json!({ "status": "error", "module": module, "message": e.to_string() }));
    e.exit_code()
}
