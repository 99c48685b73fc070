//! Characteristic values of holomorphic matrix families.
//!
//! A point `z ≠ 0` is a characteristic value of `A` when `T(z) = I − A(z)/z`
//! is singular. This module detects them by scanning the smallest singular
//! value of `T` over a polar grid, refines candidates by Newton's method on
//! `log det T`, counts multiplicities with the contour integral
//! `(1/2πi) tr ∮ T'(z) T(z)^{-1} dz` and checks sector localization and
//! counting transfer against the eigenvalues of `A(0)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

use crate::landau::{counting_function, CountingFunction};
use crate::linalg::{c, frobenius, sigma_min, CMatrix, Factorized};

#[derive(Debug, Error)]
pub enum CharvalError {
    #[error("family evaluation failed at z = {z}: {message}")]
    Evaluation { z: Complex64, message: String },
    #[error("family returned a {got}x{got2} matrix, expected {expected}x{expected}")]
    Dimension { expected: usize, got: usize, got2: usize },
    #[error("ill-conditioned contour: σ_min(I − A/z) = {sigma_min:.3e} < 1e-8 at z = {z}")]
    IllConditionedContour { sigma_min: f64, z: Complex64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Matrix-valued evaluator; must be deterministic and safe for concurrent calls.
pub type Evaluator = Arc<dyn Fn(Complex64) -> Result<CMatrix, String> + Send + Sync>;

/// Annulus `r_min < |z| < r_max` on which a family is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusDomain {
    pub r_min: f64,
    pub r_max: f64,
}

impl AnnulusDomain {
    pub fn new(r_min: f64, r_max: f64) -> Result<Self, CharvalError> {
        if !(r_min >= 0.0 && r_max > r_min && r_max.is_finite()) {
            return Err(CharvalError::Invalid(format!("annulus needs 0 <= r_min < r_max < ∞, got ({r_min}, {r_max})")));
        }
        Ok(Self { r_min, r_max })
    }

    pub fn contains(&self, z: Complex64) -> bool {
        let r = z.norm();
        r > self.r_min && r < self.r_max
    }
}

/// A holomorphic family `z ↦ A(z)` of square matrices.
#[derive(Clone)]
pub struct HolomorphicFamily {
    evaluator: Evaluator,
    derivative: Option<Evaluator>,
    pub domain: AnnulusDomain,
    pub dim: usize,
    pub label: String,
}

impl std::fmt::Debug for HolomorphicFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HolomorphicFamily")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .field("analytic_derivative", &self.derivative.is_some())
            .finish()
    }
}

impl HolomorphicFamily {
    pub fn new(label: impl Into<String>, dim: usize, domain: AnnulusDomain, evaluator: Evaluator) -> Self {
        Self { evaluator, derivative: None, domain, dim, label: label.into() }
    }

    /// Supply an analytic derivative `A'(z)`.
    pub fn with_derivative(mut self, derivative: Evaluator) -> Self {
        self.derivative = Some(derivative);
        self
    }

    pub fn eval(&self, z: Complex64) -> Result<CMatrix, CharvalError> {
        let m = (self.evaluator)(z).map_err(|message| CharvalError::Evaluation { z, message })?;
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(CharvalError::Dimension { expected: self.dim, got: m.nrows(), got2: m.ncols() });
        }
        Ok(m)
    }

    /// `A'(z)`: analytic if supplied, else 4th-order central differences
    /// with step `h = 1e-4 |z|`.
    pub fn derivative(&self, z: Complex64) -> Result<CMatrix, CharvalError> {
        match &self.derivative {
            Some(d) => d(z).map_err(|message| CharvalError::Evaluation { z, message }),
            None => self.finite_difference(z, 1e-4 * z.norm().max(f64::MIN_POSITIVE)),
        }
    }

    fn finite_difference(&self, z: Complex64, h: f64) -> Result<CMatrix, CharvalError> {
        let h = c(h, 0.0);
        let f2 = self.eval(z + h * 2.0)?;
        let f1 = self.eval(z + h)?;
        let m1 = self.eval(z - h)?;
        let m2 = self.eval(z - h * 2.0)?;
        Ok((m1 * c(-8.0, 0.0) + f1 * c(8.0, 0.0) - f2 + m2) / (h * 12.0))
    }

    /// Relative difference between the derivative at steps `h` and `h/2`
    /// (Richardson check of the finite-difference derivative).
    pub fn derivative_richardson_defect(&self, z: Complex64) -> Result<f64, CharvalError> {
        let h = 1e-4 * z.norm();
        let a = self.finite_difference(z, h)?;
        let b = self.finite_difference(z, 0.5 * h)?;
        Ok(frobenius(&(a - &b)) / frobenius(&b).max(f64::MIN_POSITIVE))
    }

    /// `T(z) = I − A(z)/z`.
    pub fn characteristic_matrix(&self, z: Complex64) -> Result<CMatrix, CharvalError> {
        let a = self.eval(z)?;
        Ok(CMatrix::identity(self.dim, self.dim) - a / z)
    }

    /// `T'(z) = −A'(z)/z + A(z)/z²`.
    fn characteristic_derivative(&self, z: Complex64) -> Result<(CMatrix, CMatrix), CharvalError> {
        let a = self.eval(z)?;
        let da = self.derivative(z)?;
        let t = CMatrix::identity(self.dim, self.dim) - &a / z;
        let dt = &a / (z * z) - da / z;
        Ok((t, dt))
    }

    /// `σ_min(I − A(z)/z)`.
    pub fn sigma_min(&self, z: Complex64) -> Result<f64, CharvalError> {
        Ok(sigma_min(&self.characteristic_matrix(z)?))
    }
}

/// Polar grid: `n_r` logarithmically spaced radii in `[r_min, r_max]`,
/// `n_theta` angles covering `[theta_min, theta_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarGrid {
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl PolarGrid {
    /// Full-circle grid.
    pub fn new(r_min: f64, r_max: f64, n_r: usize, n_theta: usize) -> Result<Self, CharvalError> {
        Self::sector(r_min, r_max, n_r, n_theta, -PI, PI)
    }

    pub fn sector(r_min: f64, r_max: f64, n_r: usize, n_theta: usize, theta_min: f64, theta_max: f64) -> Result<Self, CharvalError> {
        if !(r_min > 0.0 && r_max > r_min) || n_r < 3 || n_theta < 3 || !(theta_max > theta_min) {
            return Err(CharvalError::Invalid("polar grid needs 0 < r_min < r_max, n_r, n_theta >= 3".into()));
        }
        Ok(Self { r_min, r_max, n_r, n_theta, theta_min, theta_max })
    }

    fn full_circle(&self) -> bool {
        (self.theta_max - self.theta_min - 2.0 * PI).abs() < 1e-12
    }

    fn radius(&self, i: usize) -> f64 {
        self.r_min * (self.r_max / self.r_min).powf(i as f64 / (self.n_r - 1) as f64)
    }

    fn angle(&self, j: usize) -> f64 {
        let n = if self.full_circle() { self.n_theta } else { self.n_theta - 1 };
        self.theta_min + (self.theta_max - self.theta_min) * j as f64 / n as f64
    }

    pub fn point(&self, i: usize, j: usize) -> Complex64 {
        Complex64::from_polar(self.radius(i), self.angle(j))
    }

    /// Relative cell size (the larger of the radial ratio − 1 and the angular step).
    pub fn relative_cell(&self) -> f64 {
        let dr = (self.r_max / self.r_min).powf(1.0 / (self.n_r - 1) as f64) - 1.0;
        let n = if self.full_circle() { self.n_theta } else { self.n_theta - 1 };
        dr.max((self.theta_max - self.theta_min) / n as f64)
    }
}

/// A refined characteristic value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicValue {
    pub location: Complex64,
    pub multiplicity: usize,
    /// `σ_min(I − A/z)` at `location`.
    pub residual: f64,
    pub contour_radius: f64,
    pub integer_defect: f64,
}

/// Result of a contour multiplicity computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityResult {
    pub value: i64,
    /// Raw quadrature value of the trace integral.
    pub raw: Complex64,
    /// Distance of `raw` to the nearest integer.
    pub integer_defect: f64,
    /// Smallest `σ_min(I − A/z)` over the contour nodes.
    pub contour_sigma_min: f64,
    pub n_nodes: usize,
}

const CONTOUR_SIGMA_FLOOR: f64 = 1e-8;
const MAX_CONTOUR_NODES: usize = 4096;

fn contour_sum(family: &HolomorphicFamily, center: Complex64, radius: f64, n: usize) -> Result<(Complex64, f64), CharvalError> {
    let terms: Vec<(Complex64, f64)> = (0..n)
        .into_par_iter()
        .map(|m| {
            let e = Complex64::from_polar(1.0, 2.0 * PI * m as f64 / n as f64);
            let z = center + e * radius;
            let (t, dt) = family.characteristic_derivative(z)?;
            let s = sigma_min(&t);
            if s < CONTOUR_SIGMA_FLOOR {
                return Err(CharvalError::IllConditionedContour { sigma_min: s, z });
            }
            let f = Factorized::new(&t, 0.0).map_err(|e| CharvalError::Invalid(e.to_string()))?;
            let x = f.solve(&dt).map_err(|e| CharvalError::Invalid(e.to_string()))?;
            // dz = i r e^{iθ} dθ; (1/2πi) ∮ → (r / n) Σ e^{iθ} tr(T^{-1}T')
            Ok((x.trace() * e * (radius / n as f64), s))
        })
        .collect::<Result<_, CharvalError>>()?;
    let total = terms.iter().map(|t| t.0).sum();
    let smin = terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    Ok((total, smin))
}

/// Number of characteristic values (with multiplicity) inside the circle
/// `|z − center| = radius`, by the trapezoidal rule with `n_quad` nodes,
/// doubled until the integer defect is below `1e-6` and stable.
pub fn multiplicity(family: &HolomorphicFamily, center: Complex64, radius: f64, n_quad: usize) -> Result<MultiplicityResult, CharvalError> {
    if !(radius > 0.0) || n_quad < 4 {
        return Err(CharvalError::Invalid("contour needs radius > 0 and at least 4 nodes".into()));
    }
    if (center.norm() - radius).abs() < 1e-15 || center.norm() < radius {
        return Err(CharvalError::Invalid("contour must not enclose or touch z = 0".into()));
    }
    let mut n = n_quad;
    let (mut raw, mut smin) = contour_sum(family, center, radius, n)?;
    loop {
        let defect = (raw.re - raw.re.round()).abs().max(raw.im.abs());
        if n * 2 > MAX_CONTOUR_NODES {
            break;
        }
        let (raw2, smin2) = contour_sum(family, center, radius, n * 2)?;
        let change = (raw2 - raw).norm();
        raw = raw2;
        smin = smin.min(smin2);
        n *= 2;
        if defect < 1e-6 && change < 1e-8 {
            break;
        }
    }
    let value = raw.re.round() as i64;
    Ok(MultiplicityResult {
        value,
        raw,
        integer_defect: (raw.re - raw.re.round()).abs().max(raw.im.abs()),
        contour_sigma_min: smin,
        n_nodes: n,
    })
}

/// Newton's method on `log det T(z)`: `z ← z − 1/tr(T^{-1} T')`.
pub fn refine(family: &HolomorphicFamily, z0: Complex64, max_iter: usize) -> Result<(Complex64, f64), CharvalError> {
    let mut z = z0;
    for _ in 0..max_iter {
        let (t, dt) = family.characteristic_derivative(z)?;
        let f = match Factorized::new(&t, 0.0) {
            Ok(f) => f,
            Err(_) => break,
        };
        let tr = match f.solve(&dt) {
            Ok(x) => x.trace(),
            Err(_) => break,
        };
        if tr.norm() == 0.0 || !tr.is_finite() {
            break;
        }
        let step = tr.inv();
        // Keep the step within the annulus scale to avoid wild jumps.
        let step = if step.norm() > 0.5 * z.norm() { step * (0.5 * z.norm() / step.norm()) } else { step };
        z -= step;
        if !family.domain.contains(z) && z.norm() < 1e-300 {
            break;
        }
        if step.norm() <= 1e-14 * z.norm() {
            break;
        }
    }
    let r = family.sigma_min(z)?;
    Ok((z, r))
}

/// Residual below which a refined candidate is accepted.
pub const REFINED_RESIDUAL_TOL: f64 = 1e-6;

/// Grid minima of `σ_min(I − A/z)` below `threshold`, refined by Newton's
/// method, de-duplicated, with contour multiplicities.
pub fn scan_characteristic_values(
    family: &HolomorphicFamily,
    grid: &PolarGrid,
    threshold: f64,
) -> Result<Vec<CharacteristicValue>, CharvalError> {
    let idx: Vec<(usize, usize)> = (0..grid.n_r).flat_map(|i| (0..grid.n_theta).map(move |j| (i, j))).collect();
    let sig: Vec<f64> = idx
        .par_iter()
        .map(|&(i, j)| family.sigma_min(grid.point(i, j)))
        .collect::<Result<_, CharvalError>>()?;
    let at = |i: usize, j: usize| sig[i * grid.n_theta + j];
    let full = grid.full_circle();
    let mut seeds = Vec::new();
    for i in 0..grid.n_r {
        for j in 0..grid.n_theta {
            let s = at(i, j);
            if s >= threshold {
                continue;
            }
            let mut is_min = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ii = i as i64 + di;
                    let mut jj = j as i64 + dj;
                    if ii < 0 || ii >= grid.n_r as i64 {
                        continue;
                    }
                    if full {
                        jj = jj.rem_euclid(grid.n_theta as i64);
                    } else if jj < 0 || jj >= grid.n_theta as i64 {
                        continue;
                    }
                    let t = at(ii as usize, jj as usize);
                    // Strict on one side so that plateaus yield a single seed.
                    if t < s || (t == s && (ii, jj) < (i as i64, j as i64)) {
                        is_min = false;
                    }
                }
            }
            if is_min {
                seeds.push(grid.point(i, j));
            }
        }
    }
    let refined: Vec<(Complex64, f64)> =
        seeds.par_iter().map(|&z| refine(family, z, 60)).collect::<Result<_, CharvalError>>()?;
    let mut found: Vec<(Complex64, f64)> = Vec::new();
    for (z, r) in refined {
        if r > REFINED_RESIDUAL_TOL || !family.domain.contains(z) || z.norm() < grid.r_min || z.norm() > grid.r_max {
            continue;
        }
        if found.iter().all(|(w, _)| (w - z).norm() > 1e-6 * z.norm()) {
            found.push((z, r));
        }
    }
    found.sort_by(|a, b| b.0.norm().partial_cmp(&a.0.norm()).unwrap().then(a.0.arg().partial_cmp(&b.0.arg()).unwrap()));
    let cell = grid.relative_cell();
    let mut out = Vec::with_capacity(found.len());
    for (k, &(z, r)) in found.iter().enumerate() {
        let nearest = found
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != k)
            .map(|(_, (w, _))| (w - z).norm())
            .fold(f64::INFINITY, f64::min);
        let radius = (0.4 * nearest).min(0.5 * cell * z.norm()).min(0.5 * z.norm());
        let m = multiplicity(family, z, radius, 64)?;
        out.push(CharacteristicValue {
            location: z,
            multiplicity: m.value.max(0) as usize,
            residual: r,
            contour_radius: radius,
            integer_defect: m.integer_defect,
        });
    }
    Ok(out)
}

/// Write scan results as CSV (`re_k, im_k, sigma_min, multiplicity, contour_radius, integer_defect`).
pub fn write_scan_csv<W: std::io::Write>(w: W, values: &[CharacteristicValue]) -> Result<(), CharvalError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["re_k", "im_k", "sigma_min", "multiplicity", "contour_radius", "integer_defect"])?;
    for v in values {
        wr.write_record([
            format!("{:.15e}", v.location.re),
            format!("{:.15e}", v.location.im),
            format!("{:.6e}", v.residual),
            v.multiplicity.to_string(),
            format!("{:.6e}", v.contour_radius),
            format!("{:.6e}", v.integer_defect),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_scan_csv_file(path: &Path, values: &[CharacteristicValue]) -> Result<(), CharvalError> {
    write_scan_csv(std::fs::File::create(path)?, values)
}

/// Which axis a sector hugs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorOrientation {
    /// `Im v ≤ tol`, `|Re v| ≤ tan θ |v|` (Dirichlet, in `k`).
    NegativeImaginary,
    /// `Im v ≥ −tol`, `|Re v| ≤ tan θ |v|` (Robin, in `k`).
    PositiveImaginary,
    /// `Re v ≥ −tol`, `|Im v| ≤ tan θ |v|` (families with `A(0) ≥ 0`, in `z`).
    PositiveReal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorSpec {
    pub half_angle: f64,
    pub orientation: SectorOrientation,
    /// Tolerance for the half-plane condition.
    pub tolerance: f64,
}

impl SectorSpec {
    pub fn new(half_angle: f64, orientation: SectorOrientation, tolerance: f64) -> Result<Self, CharvalError> {
        if !(half_angle > 0.0 && half_angle < PI / 2.0) {
            return Err(CharvalError::Invalid(format!("sector half-angle must be in (0, π/2), got {half_angle}")));
        }
        Ok(Self { half_angle, orientation, tolerance })
    }

    pub fn contains(&self, v: Complex64) -> bool {
        let t = self.half_angle.tan() * v.norm();
        match self.orientation {
            SectorOrientation::NegativeImaginary => v.im <= self.tolerance && v.re.abs() <= t,
            SectorOrientation::PositiveImaginary => v.im >= -self.tolerance && v.re.abs() <= t,
            SectorOrientation::PositiveReal => v.re >= -self.tolerance && v.im.abs() <= t,
        }
    }

    /// Whether the half-plane condition alone holds.
    pub fn half_plane(&self, v: Complex64) -> bool {
        match self.orientation {
            SectorOrientation::NegativeImaginary => v.im <= self.tolerance,
            SectorOrientation::PositiveImaginary => v.im >= -self.tolerance,
            SectorOrientation::PositiveReal => v.re >= -self.tolerance,
        }
    }

    /// Deviation `|off-axis component| / |v|` from the sector axis.
    pub fn axis_deviation(&self, v: Complex64) -> f64 {
        let off = match self.orientation {
            SectorOrientation::PositiveReal => v.im.abs(),
            _ => v.re.abs(),
        };
        off / v.norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorReport {
    pub n_values: usize,
    pub n_inside: usize,
    pub fraction_inside: f64,
    pub n_inner_half: usize,
    pub fraction_inner_half: f64,
    pub n_half_plane_violations: usize,
    pub max_axis_deviation: f64,
    /// All values in the inner half `r_inner < |v| < √(r_inner r_outer)` lie in the sector.
    pub passes: bool,
}

pub fn sector_check(values: &[Complex64], sector: &SectorSpec, r_inner: f64, r_outer: f64) -> SectorReport {
    let sel: Vec<Complex64> = values.iter().copied().filter(|v| v.norm() > r_inner && v.norm() < r_outer).collect();
    let mid = (r_inner * r_outer).sqrt();
    let inner: Vec<Complex64> = sel.iter().copied().filter(|v| v.norm() < mid).collect();
    let n_inside = sel.iter().filter(|v| sector.contains(**v)).count();
    let inner_inside = inner.iter().filter(|v| sector.contains(**v)).count();
    let frac = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    SectorReport {
        n_values: sel.len(),
        n_inside,
        fraction_inside: frac(n_inside, sel.len()),
        n_inner_half: inner.len(),
        fraction_inner_half: frac(inner_inside, inner.len()),
        n_half_plane_violations: sel.iter().filter(|v| !sector.half_plane(**v)).count(),
        max_axis_deviation: sel.iter().map(|v| sector.axis_deviation(*v)).fold(0.0, f64::max),
        passes: inner_inside == inner.len(),
    }
}

/// One row of a counting comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingRow {
    pub r: f64,
    /// Characteristic values (with multiplicity) in `r < |z| < r0`.
    pub n_values: usize,
    /// Eigenvalues of `A(0)` in `[r, r0)`.
    pub n_a0: usize,
    pub difference: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingTable {
    pub r0: f64,
    pub rows: Vec<CountingRow>,
    pub max_abs_difference: i64,
    pub bound: i64,
    pub passes: bool,
}

/// Compare counts of characteristic values and of `A(0)` eigenvalues in
/// `r < |·| < r0` for each `r` in `radii`; pass iff all differences are
/// at most `bound` in absolute value.
pub fn counting_table(values: &[CharacteristicValue], a0: &CountingFunction, radii: &[f64], r0: f64, bound: i64) -> CountingTable {
    let rows: Vec<CountingRow> = radii
        .iter()
        .map(|&r| {
            let n_values = values
                .iter()
                .filter(|v| v.location.norm() > r && v.location.norm() < r0)
                .map(|v| v.multiplicity)
                .sum();
            let n_a0 = counting_function(a0, r) - counting_function(a0, r0);
            CountingRow { r, n_values, n_a0, difference: n_values as i64 - n_a0 as i64 }
        })
        .collect();
    let max_abs_difference = rows.iter().map(|r| r.difference.abs()).max().unwrap_or(0);
    CountingTable { r0, rows, max_abs_difference, bound, passes: max_abs_difference <= bound }
}

/// Scan `family` over `grid` and compare counts against `a0` on the grid radii `radii`
/// (outer radius `grid.r_max`).
pub fn counting_transfer_check(
    family: &HolomorphicFamily,
    a0: &CountingFunction,
    grid: &PolarGrid,
    threshold: f64,
    radii: &[f64],
    bound: i64,
) -> Result<(Vec<CharacteristicValue>, CountingTable), CharvalError> {
    let values = scan_characteristic_values(family, grid, threshold)?;
    let table = counting_table(&values, a0, radii, grid.r_max, bound);
    Ok((values, table))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
    DMatrix::from_fn(n, n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(re, im)
    })
}

/// Seeded family `A(z) = U diag(spectrum) U* + z A_1 + z² A_2` with a
/// Haar-like unitary `U` and `‖A_1‖, ‖A_2‖ ≤ scale`.
pub fn synthetic_family(spectrum: &[f64], scale: f64, seed: u64) -> Result<HolomorphicFamily, CharvalError> {
    if spectrum.is_empty() || spectrum.iter().any(|v| !v.is_finite()) || !(scale >= 0.0) {
        return Err(CharvalError::Invalid("synthetic family needs a finite nonempty spectrum and scale >= 0".into()));
    }
    let n = spectrum.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let qr = gaussian_matrix(&mut rng, n).qr();
    let (q, r) = (qr.q(), qr.r());
    // Fix the phases so that the distribution is Haar and the result deterministic.
    let phases = CMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |i, _| {
        let d = r[(i, i)];
        if d.norm() > 0.0 {
            d / d.norm()
        } else {
            c(1.0, 0.0)
        }
    }));
    let u = q * phases;
    let d = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, spectrum.iter().map(|v| c(*v, 0.0))));
    let a0 = &u * d * u.adjoint();
    let normalized = |m: CMatrix| {
        let f = frobenius(&m);
        if f > 0.0 {
            m * c(scale / f, 0.0)
        } else {
            m
        }
    };
    let a1 = normalized(gaussian_matrix(&mut rng, n));
    let a2 = normalized(gaussian_matrix(&mut rng, n));
    let r_max = 2.0 * spectrum.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let domain = AnnulusDomain::new(0.0, r_max.max(1.0))?;
    let (e0, e1, e2) = (a0.clone(), a1.clone(), a2.clone());
    let eval: Evaluator = Arc::new(move |z: Complex64| Ok(&e0 + &e1 * z + &e2 * (z * z)));
    let deriv: Evaluator = Arc::new(move |z: Complex64| Ok(&a1 + &a2 * (z * 2.0)));
    Ok(HolomorphicFamily::new(format!("synthetic(n={n}, scale={scale}, seed={seed})"), n, domain, eval).with_derivative(deriv))
}

/// Family from an explicit constant matrix (no `z` dependence).
pub fn constant_family(a: CMatrix, domain: AnnulusDomain) -> HolomorphicFamily {
    let n = a.nrows();
    let zero = CMatrix::zeros(n, n);
    let eval: Evaluator = Arc::new(move |_| Ok(a.clone()));
    let deriv: Evaluator = Arc::new(move |_| Ok(zero.clone()));
    HolomorphicFamily::new("constant", n, domain, eval).with_derivative(deriv)
}
