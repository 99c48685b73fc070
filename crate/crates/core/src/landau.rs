//! Landau levels, the Landau projection kernel, an explicit orthonormal
//! angular-momentum basis of each Landau eigenspace, Toeplitz compressions
//! `p_q 1_U p_q` and eigenvalue counting functions.
//!
//! Gauge: symmetric gauge centred at `FieldConfig::gauge_center`, i.e. the
//! planar magnetic Hamiltonian is `(D_1 + b x_2/2)^2 + (D_2 - b x_1/2)^2`
//! with coordinates measured from the gauge centre. The lowest level then
//! consists of `f(z) exp(-b|z|^2/4)` with `z = x_1 + i x_2` holomorphic.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::linalg;
use crate::quad::{GaussLegendre, TriangleRule};
use crate::specfun::{self, laguerre_derivative, laguerre_unchecked, SpecfunError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandauError {
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
}

/// Constant magnetic field of strength `b` along the third axis, with the
/// symmetric gauge centred at `gauge_center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub b: f64,
    pub gauge_center: [f64; 2],
}

impl FieldConfig {
    pub fn new(b: f64) -> Result<Self, LandauError> {
        Self::with_center(b, [0.0, 0.0])
    }

    pub fn with_center(b: f64, gauge_center: [f64; 2]) -> Result<Self, LandauError> {
        if !(b > 0.0) || !b.is_finite() {
            return Err(LandauError::InvalidField(format!("b must be positive and finite, got {b}")));
        }
        if !gauge_center.iter().all(|c| c.is_finite()) {
            return Err(LandauError::InvalidField("gauge centre must be finite".into()));
        }
        Ok(Self { b, gauge_center })
    }

    /// Planar coordinates relative to the gauge centre.
    #[inline]
    pub fn relative(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0] - self.gauge_center[0], x[1] - self.gauge_center[1]]
    }

    /// Symmetric-gauge vector potential `A = (b/2)(-x_2, x_1, 0)` (planar part).
    #[inline]
    pub fn vector_potential(&self, x: [f64; 2]) -> [f64; 2] {
        let r = self.relative(x);
        [-0.5 * self.b * r[1], 0.5 * self.b * r[0]]
    }

    /// Gauge wedge `x ∧ y = x_1 y_2 - x_2 y_1` of the relative coordinates.
    #[inline]
    pub fn wedge(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        let xr = self.relative(x);
        let yr = self.relative(y);
        xr[0] * yr[1] - xr[1] * yr[0]
    }
}

/// Index `q >= 0` of a Landau level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LandauLevelIndex(pub usize);

/// Landau level `Lambda_q = (2q + 1) b`.
pub fn landau_level(q: LandauLevelIndex, field: &FieldConfig) -> f64 {
    (2 * q.0 + 1) as f64 * field.b
}

/// Integral kernel of the Landau projection `p_q`:
/// `(b/2pi) L_q(b|x-y|^2/2) exp(-(b/4)|x-y|^2 - i(b/2) x∧y)`.
pub fn projection_kernel(q: LandauLevelIndex, field: &FieldConfig, x: [f64; 2], y: [f64; 2]) -> Complex64 {
    let b = field.b;
    let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
    let lag = laguerre_unchecked(q.0, 0.0, 0.5 * b * d2);
    let modulus = b / (2.0 * PI) * lag * (-0.25 * b * d2).exp();
    Complex64::from_polar(1.0, -0.5 * b * field.wedge(x, y)) * modulus
}

/// Normalisation data shared by value and gradient evaluation of a mode.
struct ModeShape {
    ell: i64,
    n: usize,
    alpha: f64,
    norm: f64,
}

fn mode_shape(q: usize, k: usize, b: f64) -> ModeShape {
    let ell = k as i64 - q as i64;
    let n = q.min(k);
    let big = q.max(k);
    // sqrt(n!/big!) via log-gamma to stay finite for large indices.
    let log_ratio = specfun::ln_gamma(n as f64 + 1.0) - specfun::ln_gamma(big as f64 + 1.0);
    ModeShape {
        ell,
        n,
        alpha: ell.unsigned_abs() as f64,
        norm: (b / (2.0 * PI)).sqrt() * (0.5 * log_ratio).exp(),
    }
}

/// Orthonormal angular-momentum eigenfunction `phi_{q,k}` of the Landau level
/// `q`, with angular momentum `k - q` about the gauge centre:
/// `N (b/2)^{|l|/2} w^{|l|} L_n^{|l|}(s) e^{-s/2}`, `s = b r^2 / 2`,
/// `w = z` for `l >= 0` and `w = conj(z)` otherwise, `n = min(q, k)`.
pub fn angular_mode(q: LandauLevelIndex, k: usize, field: &FieldConfig, x: [f64; 2]) -> Complex64 {
    angular_mode_with_gradient(q, k, field, x).0
}

/// Value and planar gradient `(d/dx_1, d/dx_2)` of `angular_mode`.
pub fn angular_mode_with_gradient(
    q: LandauLevelIndex,
    k: usize,
    field: &FieldConfig,
    x: [f64; 2],
) -> (Complex64, [Complex64; 2]) {
    let b = field.b;
    let r = field.relative(x);
    let sh = mode_shape(q.0, k, b);
    let s = 0.5 * b * (r[0] * r[0] + r[1] * r[1]);
    let m = sh.ell.unsigned_abs() as i32;
    let sign = if sh.ell >= 0 { 1.0 } else { -1.0 };
    let w = Complex64::new(r[0], sign * r[1]);
    let pref = sh.norm * (0.5 * b).powf(0.5 * sh.alpha);
    let gauss = (-0.5 * s).exp();
    let lag = laguerre_unchecked(sh.n, sh.alpha, s);
    let dlag = laguerre_derivative(sh.n, sh.alpha, s);
    let radial = lag * gauss;
    let dradial = (dlag - 0.5 * lag) * gauss;
    let wm = w.powi(m);
    let value = wm * radial * pref;
    // d/dx_j [w^m F(s)] = m w^{m-1} dw/dx_j F + w^m F'(s) b x_j
    let wm1 = if m > 0 { w.powi(m - 1) * m as f64 } else { Complex64::new(0.0, 0.0) };
    let dw = [Complex64::new(1.0, 0.0), Complex64::new(0.0, sign)];
    let mut grad = [Complex64::new(0.0, 0.0); 2];
    for j in 0..2 {
        grad[j] = (wm1 * dw[j] * radial + wm * dradial * (b * r[j])) * pref;
    }
    (value, grad)
}

/// Values of `phi_{q,0}, ..., phi_{q,n_modes-1}` at `x`.
pub fn angular_modes(q: LandauLevelIndex, n_modes: usize, field: &FieldConfig, x: [f64; 2]) -> Vec<Complex64> {
    (0..n_modes).map(|k| angular_mode(q, k, field, x)).collect()
}

/// Planar region descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Disk { center: [f64; 2], radius: f64 },
    /// Simple polygon, vertices in order (either orientation).
    Polygon { vertices: Vec<[f64; 2]> },
    /// Indicator on a uniform grid of square cells; `mask[j * nx + i]` marks
    /// the cell `[origin + (i, j) h, origin + (i+1, j+1) h]`.
    Grid { origin: [f64; 2], spacing: f64, nx: usize, ny: usize, mask: Vec<bool> },
}

impl Region {
    /// Area centroid, used as the default gauge centre.
    pub fn centroid(&self) -> [f64; 2] {
        match self {
            Region::Disk { center, .. } => *center,
            Region::Polygon { vertices } => {
                let mut a = 0.0;
                let mut cx = 0.0;
                let mut cy = 0.0;
                let n = vertices.len();
                for i in 0..n {
                    let p = vertices[i];
                    let q = vertices[(i + 1) % n];
                    let cr = p[0] * q[1] - q[0] * p[1];
                    a += cr;
                    cx += (p[0] + q[0]) * cr;
                    cy += (p[1] + q[1]) * cr;
                }
                if a.abs() < 1e-300 {
                    return [0.0, 0.0];
                }
                [cx / (3.0 * a), cy / (3.0 * a)]
            }
            Region::Grid { origin, spacing, nx, ny, mask } => {
                let (mut sx, mut sy, mut cnt) = (0.0, 0.0, 0.0);
                for j in 0..*ny {
                    for i in 0..*nx {
                        if mask.get(j * nx + i).copied().unwrap_or(false) {
                            sx += origin[0] + (i as f64 + 0.5) * spacing;
                            sy += origin[1] + (j as f64 + 0.5) * spacing;
                            cnt += 1.0;
                        }
                    }
                }
                if cnt == 0.0 {
                    *origin
                } else {
                    [sx / cnt, sy / cnt]
                }
            }
        }
    }

    /// Planar quadrature rule `(point, weight)` for integrals over the region,
    /// resolving functions that vary on the magnetic length `1/sqrt(b)` and
    /// carry angular momenta up to `n_modes`.
    pub fn quadrature(&self, b: f64, n_modes: usize) -> Result<Vec<([f64; 2], f64)>, LandauError> {
        match self {
            Region::Disk { center, radius } => {
                if !(*radius > 0.0) || !radius.is_finite() {
                    return Err(LandauError::Quadrature(format!("disk radius must be positive, got {radius}")));
                }
                let n_r = n_modes + 30;
                let n_th = 2 * n_modes + 40;
                let gl = GaussLegendre::new(n_r);
                let radial = gl.on_interval(0.0, *radius);
                let mut rule = Vec::with_capacity(n_r * n_th);
                let dth = 2.0 * PI / n_th as f64;
                for &(r, wr) in &radial {
                    for it in 0..n_th {
                        let th = it as f64 * dth;
                        rule.push(([center[0] + r * th.cos(), center[1] + r * th.sin()], wr * r * dth));
                    }
                }
                Ok(rule)
            }
            Region::Polygon { vertices } => {
                let tris = triangulate_polygon(vertices)?;
                let h_max = 0.5 / b.sqrt();
                let rule = TriangleRule::duffy(12);
                let mut out = Vec::new();
                let mut stack: Vec<[[f64; 2]; 3]> = tris;
                while let Some(t) = stack.pop() {
                    let diam = tri_diameter(&t);
                    if diam > h_max {
                        let m01 = mid(t[0], t[1]);
                        let m12 = mid(t[1], t[2]);
                        let m20 = mid(t[2], t[0]);
                        stack.push([t[0], m01, m20]);
                        stack.push([m01, t[1], m12]);
                        stack.push([m20, m12, t[2]]);
                        stack.push([m01, m12, m20]);
                        continue;
                    }
                    let area = 0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs();
                    for (l, w) in rule.points.iter().zip(&rule.weights) {
                        let p = [
                            l[0] * t[0][0] + l[1] * t[1][0] + l[2] * t[2][0],
                            l[0] * t[0][1] + l[1] * t[1][1] + l[2] * t[2][1],
                        ];
                        out.push((p, w * area));
                    }
                }
                Ok(out)
            }
            Region::Grid { origin, spacing, nx, ny, mask } => {
                if mask.len() != nx * ny || !(*spacing > 0.0) {
                    return Err(LandauError::Quadrature("grid mask size does not match nx*ny or spacing not positive".into()));
                }
                let sub = ((spacing * b.sqrt() / 0.5).ceil() as usize).max(1);
                let gl = GaussLegendre::new(6);
                let hs = spacing / sub as f64;
                let mut out = Vec::new();
                for j in 0..*ny {
                    for i in 0..*nx {
                        if !mask[j * nx + i] {
                            continue;
                        }
                        for sj in 0..sub {
                            for si in 0..sub {
                                let x0 = origin[0] + i as f64 * spacing + si as f64 * hs;
                                let y0 = origin[1] + j as f64 * spacing + sj as f64 * hs;
                                for (px, wx) in gl.on_interval(x0, x0 + hs) {
                                    for (py, wy) in gl.on_interval(y0, y0 + hs) {
                                        out.push(([px, py], wx * wy));
                                    }
                                }
                            }
                        }
                    }
                }
                if out.is_empty() {
                    return Err(LandauError::Quadrature("grid mask selects no cells".into()));
                }
                Ok(out)
            }
        }
    }
}

fn mid(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn tri_diameter(t: &[[f64; 2]; 3]) -> f64 {
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    d(t[0], t[1]).max(d(t[1], t[2])).max(d(t[2], t[0]))
}

/// Ear-clipping triangulation of a simple polygon.
fn triangulate_polygon(vertices: &[[f64; 2]]) -> Result<Vec<[[f64; 2]; 3]>, LandauError> {
    if vertices.len() < 3 {
        return Err(LandauError::Quadrature("polygon needs at least three vertices".into()));
    }
    if vertices.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
        return Err(LandauError::Quadrature("polygon has non-finite vertices".into()));
    }
    let signed_area: f64 = (0..vertices.len())
        .map(|i| {
            let p = vertices[i];
            let q = vertices[(i + 1) % vertices.len()];
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        * 0.5;
    if signed_area.abs() < 1e-14 {
        return Err(LandauError::Quadrature("polygon has zero area".into()));
    }
    let mut idx: Vec<usize> = (0..vertices.len()).collect();
    if signed_area < 0.0 {
        idx.reverse();
    }
    let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let mut tris = Vec::new();
    let mut guard = 0;
    while idx.len() > 3 {
        guard += 1;
        if guard > 10 * vertices.len() * vertices.len() {
            return Err(LandauError::Quadrature("polygon could not be triangulated (self-intersecting?)".into()));
        }
        let n = idx.len();
        let mut clipped = false;
        for i in 0..n {
            let (ia, ib, ic) = (idx[(i + n - 1) % n], idx[i], idx[(i + 1) % n]);
            let (a, b, c) = (vertices[ia], vertices[ib], vertices[ic]);
            if cross(a, b, c) <= 0.0 {
                continue;
            }
            let contains_other = idx.iter().any(|&j| {
                if j == ia || j == ib || j == ic {
                    return false;
                }
                let p = vertices[j];
                cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
            });
            if contains_other {
                continue;
            }
            tris.push([a, b, c]);
            idx.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            return Err(LandauError::Quadrature("polygon could not be triangulated (self-intersecting?)".into()));
        }
    }
    let (a, b, c) = (vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]);
    if cross(a, b, c) <= 0.0 {
        return Err(LandauError::Quadrature("degenerate final ear".into()));
    }
    tris.push([a, b, c]);
    Ok(tris)
}

/// Toeplitz compression `p_q 1_U p_q` in the angular basis of level `q`.
#[derive(Debug, Clone)]
pub struct ToeplitzOperator {
    pub q: LandauLevelIndex,
    pub b: f64,
    pub region: Region,
    pub matrix: DMatrix<Complex64>,
    pub n_modes: usize,
}

impl ToeplitzOperator {
    /// Eigenvalues sorted in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigenvalues_desc(&self.matrix)
    }

    /// Max-norm of `T - T*`.
    pub fn hermiticity_defect(&self) -> f64 {
        linalg::hermiticity_defect(&self.matrix)
    }
}

/// Suggested angular truncation for a disk of radius `r`: `4 b r^2 / 2 + 40`.
pub fn default_n_modes(b: f64, r: f64) -> usize {
    (4.0 * 0.5 * b * r * r).ceil() as usize + 40
}

/// Assemble the matrix `T_{jk} = ∫_U conj(phi_{q,j}) phi_{q,k} dx` by
/// quadrature (Hermitian by construction).
pub fn toeplitz_matrix(
    q: LandauLevelIndex,
    field: &FieldConfig,
    region: &Region,
    n_modes: usize,
) -> Result<ToeplitzOperator, LandauError> {
    if n_modes == 0 {
        return Err(LandauError::Domain("n_modes must be at least 1".into()));
    }
    let rule = region.quadrature(field.b, n_modes + q.0)?;
    let n_pts = rule.len();
    // Rows: quadrature nodes scaled by sqrt(weight); columns: modes.
    let mut phi = DMatrix::<Complex64>::zeros(n_pts, n_modes);
    for (i, (p, w)) in rule.iter().enumerate() {
        let sw = w.sqrt();
        for k in 0..n_modes {
            phi[(i, k)] = angular_mode(q, k, field, *p) * sw;
        }
    }
    let gram = phi.adjoint() * &phi;
    Ok(ToeplitzOperator { q, b: field.b, region: region.clone(), matrix: linalg::hermitian_part(&gram), n_modes })
}

/// Sorted (descending), nonnegative eigenvalue list with a provenance note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingFunction {
    pub eigenvalues: Vec<f64>,
    pub description: String,
}

impl CountingFunction {
    /// Sort descending; values in `[-tol, 0)` with `tol = 1e-10 * max(1, max|λ|)`
    /// are clamped to zero, more negative values are rejected.
    pub fn new(mut eigenvalues: Vec<f64>, description: impl Into<String>) -> Result<Self, LandauError> {
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(LandauError::Domain("eigenvalues must be finite".into()));
        }
        let scale = eigenvalues.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-10 * scale;
        if let Some(v) = eigenvalues.iter().find(|v| **v < -tol) {
            return Err(LandauError::Domain(format!("counting function needs nonnegative eigenvalues, got {v}")));
        }
        for v in eigenvalues.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
        Ok(Self { eigenvalues, description: description.into() })
    }
}

/// Number of eigenvalues in the closed interval `[r, ∞)`.
pub fn counting_function(cf: &CountingFunction, r: f64) -> usize {
    cf.eigenvalues.iter().filter(|&&l| l >= r).count()
}

/// `n(r) ln|ln r| / |ln r|` for `0 < r < 1/e`.
pub fn counting_law_ratio(cf: &CountingFunction, r: f64) -> Result<f64, LandauError> {
    if !(r > 0.0) || r >= (-1.0_f64).exp() {
        return Err(LandauError::Domain(format!("counting law ratio needs 0 < r < 1/e, got {r}")));
    }
    let l = r.ln().abs();
    Ok(counting_function(cf, r) as f64 * l.ln() / l)
}

/// Eigenvalues `P(k+1, x)` (`k = 0..n-1`) of `p_0 1_D p_0` for a disk `D`
/// centred at the gauge centre with `x = b R^2 / 2`.
pub fn disk_oracle_eigenvalues(x: f64, n: usize) -> Result<Vec<f64>, LandauError> {
    (0..n).map(|k| Ok(specfun::reg_lower_gamma(k as f64 + 1.0, x)?)).collect()
}
