//! Boundary-reduced perturbation forms for an obstacle `K`, the planar
//! operators `T_q` and the Birman–Schwinger matrices `A_q(ik)`.
//!
//! # Perturbation forms
//!
//! For trial functions `f = φ_{j,k}(x⊥) χ(x_3)` with an axial profile `χ`
//! equal to one on a neighbourhood of the axial shadow of `K`, the form
//! `v(f, g) = ⟨H_0 f, V H_0 g⟩` is evaluated from data on `K` and `Σ`:
//!
//! * Dirichlet: `∫_K conj(f) H_0 g + ⟨f, ∂_ν^A g − DN_Ω g⟩_Σ`,
//! * Robin: `−⟨∂_Σ f, (RD_K − RD_Ω) ∂_Σ g⟩_Σ`,
//!
//! with the boundary maps of [`crate::bem`] (normal pointing out of `K`,
//! `∂_Σ = ν·∇^A + γ`). Volume and `∫_Σ conj(f) ∂_ν^A g` integrals use
//! accurate tensor rules on balls (cone tetrahedra and panel rules on
//! general meshes); terms involving a boundary map use panel collocation
//! values weighted by panel areas. The Dirichlet form is non-negative and
//! the Robin form non-positive.
//!
//! # Birman–Schwinger matrices
//!
//! Only the behaviour of `H_0^{-1} f` near `K` enters `V`. Approximating it
//! on `K` per Landau level by its average against the axial weight
//! `w = χ² / ∫χ²` turns `ε V X(ik)`, with
//! `X = z² p_q⊗r(ik) − ik (z + z² R_0(z)(I − p_q))`, into the matrix
//! `ε 𝒱 𝒵` where `𝒱` is the Gram matrix of the form on the trial space and
//! `𝒵 = diag(ζ_j)` acts level-wise:
//!
//! * `ζ_q = ½ K(ik) + ik K(−μ_q) / (2μ_q)`,
//! * `ζ_j = ik [K(−μ_j)/(2μ_j) − i K(iκ_j)/(2κ_j)]`, `j ≠ q`,
//!
//! with `μ_j = √Λ_j`, `κ_j = √(z − Λ_j)` (`Im κ_j > 0`), `z = Λ_q + k²` and
//! `K(α) = ∫∫ w(s) e^{α|s−t|} w(t) ds dt`. The returned matrix is the
//! similar matrix `ε 𝒵^{1/2} 𝒱 𝒵^{1/2}`, Hermitian whenever all `ζ_j > 0`.
//! At `k = 0` only `ζ_q = ½` survives and the matrix is `(ε/2)𝒱` on the
//! level-`q` block, i.e. the embedding of `T_q`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

use crate::bem::{
    assemble_layer_operators, BemError, BemQuadrature, BoundaryOperatorMatrix, DirichletRobinSolver, RobinDirichletSolver,
    RobinParameter, Side,
};
use crate::charval::{AnnulusDomain, Evaluator, HolomorphicFamily};
use crate::container::{self, ContainerError};
use crate::green::{axial_momentum, GreenError};
use crate::landau::{angular_mode_with_gradient, landau_level, FieldConfig, LandauLevelIndex};
use crate::linalg::{c, hermitian_part, hermiticity_defect, jacobi_hermitian, CMatrix, CVector};
use crate::mesh::{ShapeTag, SurfaceMesh};
use crate::quad::{GaussLegendre, TriangleRule};

#[derive(Debug, Error)]
pub enum BsError {
    #[error(transparent)]
    Bem(#[from] BemError),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error("branch error: {0}")]
    Branch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Boundary condition on `Σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCondition {
    Dirichlet,
    /// Robin condition `∂_Σ u = 0`; `γ ≡ 0` is Neumann.
    Robin(RobinParameter),
}

/// Obstacle, boundary condition and field.
#[derive(Debug, Clone)]
pub struct ObstacleProblem {
    pub mesh: SurfaceMesh,
    pub boundary_condition: BoundaryCondition,
    pub field: FieldConfig,
}

impl ObstacleProblem {
    pub fn new(mesh: SurfaceMesh, boundary_condition: BoundaryCondition, field: FieldConfig) -> Result<Self, BsError> {
        if let BoundaryCondition::Robin(g) = &boundary_condition {
            if g.gamma.len() != mesh.n_panels() {
                return Err(BsError::Invalid(format!("γ has {} values for {} panels", g.gamma.len(), mesh.n_panels())));
            }
        }
        Ok(Self { mesh, boundary_condition, field })
    }

    /// `ε = +1` for Dirichlet, `−1` for Robin.
    pub fn eps_sign(&self) -> f64 {
        match self.boundary_condition {
            BoundaryCondition::Dirichlet => 1.0,
            BoundaryCondition::Robin(_) => -1.0,
        }
    }

    /// Axial shadow `[min x_3, max x_3]` of the obstacle.
    pub fn axial_shadow(&self) -> [f64; 2] {
        let (lo, hi) = self.mesh.bounding_box();
        match &self.mesh.shape {
            ShapeTag::Sphere { center, radius } => [center[2] - radius, center[2] + radius],
            _ => [lo[2], hi[2]],
        }
    }

    /// Diameter of `K` (bounding-box diagonal, `2R` for spheres).
    pub fn diameter(&self) -> f64 {
        match &self.mesh.shape {
            ShapeTag::Sphere { radius, .. } => 2.0 * radius,
            _ => {
                let (lo, hi) = self.mesh.bounding_box();
                ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
            }
        }
    }
}

/// `e^{-1/t}` for `t > 0`, with derivatives.
fn bump(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let f = (-1.0 / t).exp();
    let t2 = t * t;
    (f, f / t2, f * (1.0 / (t2 * t2) - 2.0 / (t2 * t)))
}

/// Smooth step `S(t) = f(t) / (f(t) + f(1−t))` and its first two derivatives.
fn smooth_step(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let (a, a1, a2) = bump(t);
    let (cc, c1, c2) = bump(1.0 - t);
    // d/dt f(1-t) = -f'(1-t), second derivative +f''(1-t).
    let u = a + cc;
    let u1 = a1 - c1;
    let u2 = a2 + c2;
    let s = a / u;
    let s1 = a1 / u - a * u1 / (u * u);
    let s2 = a2 / u - 2.0 * a1 * u1 / (u * u) - a * u2 / (u * u) + 2.0 * a * u1 * u1 / (u * u * u);
    (s, s1, s2)
}

/// Compactly supported smooth axial profile: one on `[lo, hi]`, smooth
/// ramps of length `ramp` on both sides, zero beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxialProfile {
    pub lo: f64,
    pub hi: f64,
    pub ramp: f64,
}

impl AxialProfile {
    pub fn new(lo: f64, hi: f64, ramp: f64) -> Result<Self, BsError> {
        if !(hi >= lo) || !(ramp > 0.0) || !lo.is_finite() || !hi.is_finite() || !ramp.is_finite() {
            return Err(BsError::Invalid(format!("axial profile needs lo <= hi and ramp > 0, got [{lo}, {hi}], {ramp}")));
        }
        Ok(Self { lo, hi, ramp })
    }

    /// Profile equal to one on the axial shadow widened by 5% of its
    /// length on each side, with ramp length `1/√b`.
    pub fn for_obstacle(problem: &ObstacleProblem) -> Self {
        let [a, b] = problem.axial_shadow();
        let margin = 0.05 * (b - a).max(1e-3);
        Self { lo: a - margin, hi: b + margin, ramp: 1.0 / problem.field.b.sqrt() }
    }

    /// Whether the plateau covers the axial shadow `[a, b]`.
    pub fn covers(&self, shadow: [f64; 2]) -> bool {
        self.lo <= shadow[0] && self.hi >= shadow[1]
    }

    /// `(χ, χ', χ'')` at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        if x >= self.lo && x <= self.hi {
            (1.0, 0.0, 0.0)
        } else if x < self.lo {
            let (s, s1, s2) = smooth_step((x - (self.lo - self.ramp)) / self.ramp);
            (s, s1 / self.ramp, s2 / (self.ramp * self.ramp))
        } else {
            let (s, s1, s2) = smooth_step(((self.hi + self.ramp) - x) / self.ramp);
            (s, -s1 / self.ramp, s2 / (self.ramp * self.ramp))
        }
    }

    /// Support `[lo − ramp, hi + ramp]`.
    pub fn support(&self) -> [f64; 2] {
        [self.lo - self.ramp, self.hi + self.ramp]
    }

    /// Breakpoints for composite quadrature (ramps split in two).
    fn breaks(&self) -> Vec<f64> {
        let [s0, s1] = self.support();
        let mut b = vec![s0, s0 + 0.5 * self.ramp, self.lo];
        if self.hi > self.lo {
            b.push(self.hi);
        }
        b.push(self.hi + 0.5 * self.ramp);
        b.push(s1);
        b
    }

    /// `∫ χ²`.
    pub fn norm_sqr(&self) -> f64 {
        let gl = GaussLegendre::new(24);
        let br = self.breaks();
        br.windows(2).map(|w| gl.integrate(w[0], w[1], |x| self.eval(x).0.powi(2))).sum()
    }
}

/// A trial function `coeff · φ_{level,mode}(x⊥) χ(x_3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialFunction {
    pub level: usize,
    pub mode: usize,
    pub profile: AxialProfile,
    pub coeff: Complex64,
}

impl TrialFunction {
    pub fn new(level: usize, mode: usize, profile: AxialProfile) -> Self {
        Self { level, mode, profile, coeff: c(1.0, 0.0) }
    }

    pub fn scaled(mut self, s: Complex64) -> Self {
        self.coeff *= s;
        self
    }

    /// Value and covariant gradient `(∇ − iA) f`.
    pub fn value_and_covariant_gradient(&self, field: &FieldConfig, x: &[f64; 3]) -> (Complex64, [Complex64; 3]) {
        let (phi, g) = angular_mode_with_gradient(LandauLevelIndex(self.level), self.mode, field, [x[0], x[1]]);
        let (chi, chi1, _) = self.profile.eval(x[2]);
        let a = field.vector_potential([x[0], x[1]]);
        let i = c(0.0, 1.0);
        let v = self.coeff * phi * chi;
        let grad = [
            self.coeff * (g[0] - i * a[0] * phi) * chi,
            self.coeff * (g[1] - i * a[1] * phi) * chi,
            self.coeff * phi * chi1,
        ];
        (v, grad)
    }

    /// `H_0 f = Λ_j f − φ χ''`.
    pub fn h0_value(&self, field: &FieldConfig, x: &[f64; 3]) -> Complex64 {
        let (phi, _) = angular_mode_with_gradient(LandauLevelIndex(self.level), self.mode, field, [x[0], x[1]]);
        let (chi, _, chi2) = self.profile.eval(x[2]);
        let lam = landau_level(LandauLevelIndex(self.level), field);
        self.coeff * phi * (lam * chi - chi2)
    }
}

/// Trial space `{φ_{j,k} ⊗ χ : j ≤ j_max, k < n_modes}` with one axial profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpace {
    pub profile: AxialProfile,
    pub entries: Vec<(usize, usize)>,
}

impl TrialSpace {
    /// Levels `0..=j_max`, modes `0..n_modes` each (level-major order).
    pub fn new(profile: AxialProfile, j_max: usize, n_modes: usize) -> Result<Self, BsError> {
        Self::with_levels(profile, &(0..=j_max).collect::<Vec<_>>(), n_modes)
    }

    pub fn with_levels(profile: AxialProfile, levels: &[usize], n_modes: usize) -> Result<Self, BsError> {
        if n_modes == 0 || levels.is_empty() {
            return Err(BsError::Invalid("trial space needs at least one level and one mode".into()));
        }
        let entries = levels.iter().flat_map(|&j| (0..n_modes).map(move |k| (j, k))).collect();
        Ok(Self { profile, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn functions(&self) -> Vec<TrialFunction> {
        self.entries.iter().map(|&(j, k)| TrialFunction::new(j, k, self.profile)).collect()
    }

    /// `L²(ℝ³)` Gram matrix; the planar modes are orthonormal, so it is
    /// `∫χ² · I`.
    pub fn gram(&self) -> CMatrix {
        CMatrix::identity(self.len(), self.len()) * c(self.profile.norm_sqr(), 0.0)
    }
}

/// Point/weight rule for integrals over `K`.
#[derive(Debug, Clone)]
struct VolumeRule {
    points: Vec<([f64; 3], f64)>,
}

/// Point/weight/normal rule for integrals over `Σ`.
#[derive(Debug, Clone)]
struct SurfaceRule {
    points: Vec<([f64; 3], f64, [f64; 3])>,
}

/// Resolution needed by a set of trial functions: `(max |angular momentum|, max level)`.
fn trial_extent(fs: &[TrialFunction]) -> (usize, usize) {
    let m = fs.iter().map(|f| (f.mode as i64 - f.level as i64).unsigned_abs() as usize).max().unwrap_or(0);
    let j = fs.iter().map(|f| f.level.min(f.mode)).max().unwrap_or(0);
    (m, j)
}

fn ball_rule(center: [f64; 3], radius: f64, m: usize, j: usize) -> VolumeRule {
    let n_r = m + 2 * j + 24;
    let n_t = m + 2 * j + 24;
    let n_p = 2 * m + 24;
    let gr = GaussLegendre::new(n_r).on_interval(0.0, radius);
    let gt = GaussLegendre::new(n_t).on_interval(-1.0, 1.0);
    let dp = 2.0 * PI / n_p as f64;
    let mut points = Vec::with_capacity(n_r * n_t * n_p);
    for &(r, wr) in &gr {
        for &(ct, wt) in &gt {
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            for ip in 0..n_p {
                let p = ip as f64 * dp;
                points.push((
                    [center[0] + r * st * p.cos(), center[1] + r * st * p.sin(), center[2] + r * ct],
                    wr * wt * dp * r * r,
                ));
            }
        }
    }
    VolumeRule { points }
}

fn sphere_surface_rule(center: [f64; 3], radius: f64, m: usize, j: usize) -> SurfaceRule {
    let n_t = m + 2 * j + 32;
    let n_p = 2 * m + 32;
    let gt = GaussLegendre::new(n_t).on_interval(-1.0, 1.0);
    let dp = 2.0 * PI / n_p as f64;
    let mut points = Vec::with_capacity(n_t * n_p);
    for &(ct, wt) in &gt {
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        for ip in 0..n_p {
            let p = ip as f64 * dp;
            let nu = [st * p.cos(), st * p.sin(), ct];
            points.push((
                [center[0] + radius * nu[0], center[1] + radius * nu[1], center[2] + radius * nu[2]],
                wt * dp * radius * radius,
                nu,
            ));
        }
    }
    SurfaceRule { points }
}

/// Cone tetrahedralization from the vertex centroid with a collapsed
/// tensor Gauss rule on each tetrahedron (requires `K` star-shaped with
/// respect to that point).
fn cone_rule(mesh: &SurfaceMesh, n: usize) -> VolumeRule {
    let apex = mesh.vertex_centroid();
    let gl = GaussLegendre::new(n).on_interval(0.0, 1.0);
    let mut points = Vec::new();
    for j in 0..mesh.n_panels() {
        let [b, cc, d] = mesh.flat_triangle(j);
        let e1 = [b[0] - apex[0], b[1] - apex[1], b[2] - apex[2]];
        let e2 = [cc[0] - b[0], cc[1] - b[1], cc[2] - b[2]];
        let e3 = [d[0] - cc[0], d[1] - cc[1], d[2] - cc[2]];
        // 6 V = |e1 · ((c - apex) × (d - apex))|
        let ca = [cc[0] - apex[0], cc[1] - apex[1], cc[2] - apex[2]];
        let da = [d[0] - apex[0], d[1] - apex[1], d[2] - apex[2]];
        let cr = [ca[1] * da[2] - ca[2] * da[1], ca[2] * da[0] - ca[0] * da[2], ca[0] * da[1] - ca[1] * da[0]];
        let six_v = (e1[0] * cr[0] + e1[1] * cr[1] + e1[2] * cr[2]).abs();
        for &(s, ws) in &gl {
            for &(t, wt) in &gl {
                for &(r, wr) in &gl {
                    let p = [
                        apex[0] + s * (e1[0] + t * (e2[0] + r * e3[0])),
                        apex[1] + s * (e1[1] + t * (e2[1] + r * e3[1])),
                        apex[2] + s * (e1[2] + t * (e2[2] + r * e3[2])),
                    ];
                    points.push((p, six_v * s * s * t * ws * wt * wr));
                }
            }
        }
    }
    VolumeRule { points }
}

fn panel_surface_rule(mesh: &SurfaceMesh) -> SurfaceRule {
    let rule = TriangleRule::degree5();
    let mut points = Vec::new();
    for j in 0..mesh.n_panels() {
        for nd in mesh.panel_nodes(j, &rule) {
            points.push((nd.point, nd.weight, nd.normal));
        }
    }
    SurfaceRule { points }
}

/// Cached boundary maps of a perturbation form.
enum FormMaps {
    Dirichlet { dn_exterior: DirichletRobinSolver },
    Robin { rd_interior: RobinDirichletSolver, rd_exterior: RobinDirichletSolver, gamma: Vec<f64> },
}

/// The quadratic form of `V` restricted to boundary data.
pub struct PerturbationForm {
    pub problem: ObstacleProblem,
    pub single_layer: BoundaryOperatorMatrix,
    pub double_layer: BoundaryOperatorMatrix,
    maps: FormMaps,
}

/// Gram matrix of the form with diagnostics.
#[derive(Debug, Clone)]
pub struct FormGram {
    /// Hermitian part of the assembled matrix `[v(f_a, f_b)]`.
    pub matrix: CMatrix,
    /// `max |G − G*|` of the raw assembled matrix.
    pub hermiticity_defect: f64,
}

impl PerturbationForm {
    /// Assemble **S**, **D** and the boundary maps needed by the condition.
    pub fn new(problem: ObstacleProblem, quad: &BemQuadrature) -> Result<Self, BsError> {
        let (s, d) = assemble_layer_operators(&problem.mesh, &problem.field, quad)?;
        Self::from_operators(problem, s, d)
    }

    /// Reuse previously assembled layer operators (same mesh and field).
    pub fn from_operators(problem: ObstacleProblem, s: BoundaryOperatorMatrix, d: BoundaryOperatorMatrix) -> Result<Self, BsError> {
        if s.dim() != problem.mesh.n_panels() || s.field != problem.field || d.field != problem.field {
            return Err(BsError::Invalid("layer operators do not match the obstacle problem".into()));
        }
        let maps = match &problem.boundary_condition {
            BoundaryCondition::Dirichlet => {
                let zero = RobinParameter::zero(s.dim());
                FormMaps::Dirichlet { dn_exterior: DirichletRobinSolver::new(&s, &d, &zero, Side::Exterior)? }
            }
            BoundaryCondition::Robin(g) => FormMaps::Robin {
                rd_interior: RobinDirichletSolver::new(&s, &d, g, Side::Interior)?,
                rd_exterior: RobinDirichletSolver::new(&s, &d, g, Side::Exterior)?,
                gamma: g.gamma.clone(),
            },
        };
        Ok(Self { problem, single_layer: s, double_layer: d, maps })
    }

    pub fn eps_sign(&self) -> f64 {
        self.problem.eps_sign()
    }

    /// Condition diagnostics of the cached maps: `(condition estimate, σ_min estimate)` per map.
    pub fn map_diagnostics(&self) -> Vec<(String, f64, Option<f64>)> {
        match &self.maps {
            FormMaps::Dirichlet { dn_exterior } => vec![("S (exterior DN)".into(), dn_exterior.condition_estimate(), None)],
            FormMaps::Robin { rd_interior, rd_exterior, .. } => vec![
                ("D + Sγ + 1/2 (interior RD)".into(), rd_interior.condition_estimate(), Some(rd_interior.sigma_min)),
                ("D + Sγ - 1/2 (exterior RD)".into(), rd_exterior.condition_estimate(), Some(rd_exterior.sigma_min)),
            ],
        }
    }

    fn rules(&self, fs: &[TrialFunction]) -> (VolumeRule, SurfaceRule) {
        let (m, j) = trial_extent(fs);
        match &self.problem.mesh.shape {
            ShapeTag::Sphere { center, radius } => (ball_rule(*center, *radius, m, j), sphere_surface_rule(*center, *radius, m, j)),
            _ => (cone_rule(&self.problem.mesh, 6), panel_surface_rule(&self.problem.mesh)),
        }
    }

    fn check_functions(&self, fs: &[TrialFunction]) -> Result<(), BsError> {
        let shadow = self.problem.axial_shadow();
        if let Some(f) = fs.iter().find(|f| !f.profile.covers(shadow)) {
            return Err(BsError::Invalid(format!(
                "axial profile plateau [{}, {}] does not cover the axial shadow [{}, {}]",
                f.profile.lo, f.profile.hi, shadow[0], shadow[1]
            )));
        }
        Ok(())
    }

    /// Raw matrix `[v(f_a, f_b)]`.
    fn raw_gram(&self, fs: &[TrialFunction]) -> Result<CMatrix, BsError> {
        self.check_functions(fs)?;
        let field = self.problem.field;
        let panels = &self.problem.mesh.panels;
        let n = fs.len();
        let np = panels.len();
        // Traces and covariant normal derivatives at collocation points.
        let mut trace = CMatrix::zeros(np, n);
        let mut dnorm = CMatrix::zeros(np, n);
        for (i, p) in panels.iter().enumerate() {
            for (a, f) in fs.iter().enumerate() {
                let (v, g) = f.value_and_covariant_gradient(&field, &p.centroid);
                trace[(i, a)] = v;
                dnorm[(i, a)] = g[0] * p.normal[0] + g[1] * p.normal[1] + g[2] * p.normal[2];
            }
        }
        let weights: Vec<f64> = panels.iter().map(|p| p.area).collect();
        let weighted_inner = |left: &CMatrix, right: &CMatrix| -> CMatrix {
            let mut out = CMatrix::zeros(n, n);
            for a in 0..n {
                for b in 0..n {
                    let mut s = c(0.0, 0.0);
                    for i in 0..np {
                        s += left[(i, a)].conj() * right[(i, b)] * weights[i];
                    }
                    out[(a, b)] = s;
                }
            }
            out
        };
        let apply_cols = |op: &(dyn Fn(&CVector) -> Result<CVector, BemError> + Sync), m: &CMatrix| -> Result<CMatrix, BsError> {
            let cols: Vec<CVector> =
                (0..n).into_par_iter().map(|b| op(&m.column(b).into_owned())).collect::<Result<_, BemError>>()?;
            Ok(CMatrix::from_fn(np, n, |i, b| cols[b][i]))
        };
        match &self.maps {
            FormMaps::Dirichlet { dn_exterior } => {
                let (vol, surf) = self.rules(fs);
                // ∫_K conj(f_a) H_0 f_b
                let mut gram = CMatrix::zeros(n, n);
                let vol_terms: Vec<CMatrix> = vol
                    .points
                    .par_chunks(4096)
                    .map(|chunk| {
                        let mut acc = CMatrix::zeros(n, n);
                        let mut vals = vec![c(0.0, 0.0); n];
                        let mut h0 = vec![c(0.0, 0.0); n];
                        for (x, w) in chunk {
                            for (a, f) in fs.iter().enumerate() {
                                vals[a] = f.value_and_covariant_gradient(&field, x).0;
                                h0[a] = f.h0_value(&field, x);
                            }
                            for a in 0..n {
                                let va = vals[a].conj() * *w;
                                for b in 0..n {
                                    acc[(a, b)] += va * h0[b];
                                }
                            }
                        }
                        acc
                    })
                    .collect();
                for t in vol_terms {
                    gram += t;
                }
                // ∫_Σ conj(f_a) ∂_ν^A f_b
                let mut vals = vec![c(0.0, 0.0); n];
                let mut dn = vec![c(0.0, 0.0); n];
                for (x, w, nu) in &surf.points {
                    for (a, f) in fs.iter().enumerate() {
                        let (v, g) = f.value_and_covariant_gradient(&field, x);
                        vals[a] = v;
                        dn[a] = g[0] * nu[0] + g[1] * nu[1] + g[2] * nu[2];
                    }
                    for a in 0..n {
                        let va = vals[a].conj() * *w;
                        for b in 0..n {
                            gram[(a, b)] += va * dn[b];
                        }
                    }
                }
                // − ⟨f_a, DN_Ω f_b⟩
                let dn_traces = apply_cols(&|v| dn_exterior.apply(v), &trace)?;
                gram -= weighted_inner(&trace, &dn_traces);
                Ok(gram)
            }
            FormMaps::Robin { rd_interior, rd_exterior, gamma } => {
                let mut robin = dnorm.clone();
                for i in 0..np {
                    for a in 0..n {
                        robin[(i, a)] += trace[(i, a)] * gamma[i];
                    }
                }
                let rk = apply_cols(&|v| rd_interior.apply(v), &robin)?;
                let ro = apply_cols(&|v| rd_exterior.apply(v), &robin)?;
                Ok(-weighted_inner(&robin, &(rk - ro)))
            }
        }
    }

    /// Gram matrix `[v(f_a, f_b)]` (Hermitian part) over the given functions.
    pub fn gram(&self, fs: &[TrialFunction]) -> Result<FormGram, BsError> {
        let raw = self.raw_gram(fs)?;
        Ok(FormGram { hermiticity_defect: hermiticity_defect(&raw), matrix: hermitian_part(&raw) })
    }
}

/// `v(φ, ψ) = ⟨H_0 φ, V H_0 ψ⟩` (antilinear in `φ`).
pub fn v_form(form: &PerturbationForm, phi: &TrialFunction, psi: &TrialFunction) -> Result<Complex64, BsError> {
    let g = form.raw_gram(&[*phi, *psi])?;
    Ok(g[(0, 1)])
}

/// Matrix of `T_q` in the angular basis of level `q`, with eigenvalues.
#[derive(Debug, Clone)]
pub struct TqMatrix {
    pub q: usize,
    pub matrix: CMatrix,
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    pub hermiticity_defect: f64,
}

impl TqMatrix {
    pub fn export(&self, path: &Path, field: &FieldConfig, label: &str) -> Result<(), BsError> {
        let header = json!({ "kind": "t_q", "q": self.q, "b": field.b, "label": label });
        container::write_matrix_file(path, &header, &self.matrix)?;
        Ok(())
    }
}

/// `T_q = (ε/2) [v(φ_{q,k} ⊗ χ, φ_{q,k'} ⊗ χ)]` for the default profile of the obstacle.
pub fn t_q_matrix(form: &PerturbationForm, q: usize, n_modes: usize) -> Result<TqMatrix, BsError> {
    t_q_matrix_with_profile(form, q, n_modes, &AxialProfile::for_obstacle(&form.problem))
}

/// [`t_q_matrix`] with an explicit axial profile.
pub fn t_q_matrix_with_profile(form: &PerturbationForm, q: usize, n_modes: usize, profile: &AxialProfile) -> Result<TqMatrix, BsError> {
    if n_modes == 0 {
        return Err(BsError::Invalid("n_modes must be positive".into()));
    }
    let fs: Vec<TrialFunction> = (0..n_modes).map(|k| TrialFunction::new(q, k, *profile)).collect();
    let g = form.gram(&fs)?;
    let matrix = g.matrix * c(0.5 * form.eps_sign(), 0.0);
    let (mut eigenvalues, _) = jacobi_hermitian(&matrix, false);
    eigenvalues.reverse();
    Ok(TqMatrix { q, matrix, eigenvalues, hermiticity_defect: g.hermiticity_defect })
}

/// Extreme eigenvalues of the form's Gram matrix on a trial space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Spectral norm of the Gram matrix.
    pub scale: f64,
    pub hermiticity_defect: f64,
    /// `+1` if the form must be non-negative (Dirichlet), `−1` if non-positive (Robin).
    pub expected_sign: f64,
    pub tolerance: f64,
    pub passes: bool,
}

/// Check sign-definiteness of the form on `trial` with tolerance `1e-8 · scale`.
pub fn sign_check(form: &PerturbationForm, trial: &TrialSpace) -> Result<SignReport, BsError> {
    let g = form.gram(&trial.functions())?;
    let (vals, _) = jacobi_hermitian(&g.matrix, false);
    let min = vals.first().copied().unwrap_or(0.0);
    let max = vals.last().copied().unwrap_or(0.0);
    let scale = min.abs().max(max.abs());
    let tolerance = 1e-8;
    let sign = form.eps_sign();
    let passes = if sign > 0.0 { min >= -tolerance * scale } else { max <= tolerance * scale };
    Ok(SignReport {
        min_eigenvalue: min,
        max_eigenvalue: max,
        scale,
        hermiticity_defect: g.hermiticity_defect,
        expected_sign: sign,
        tolerance,
        passes,
    })
}

/// Discretized `K(α) = Σ c_p e^{α d_p}`, normalized so that `K(0) = 1`.
#[derive(Debug, Clone)]
pub struct AxialKernel {
    pairs: Vec<(f64, f64)>,
}

impl AxialKernel {
    /// Nested Gauss rule for `∫∫ w(s) w(t) e^{α|s−t|}` with `w = χ²`,
    /// splitting the inner integral at `s` so the kink is resolved.
    pub fn new(profile: &AxialProfile, nodes_per_panel: usize) -> Self {
        let gl = GaussLegendre::new(nodes_per_panel);
        let breaks = profile.breaks();
        let [lo, hi] = profile.support();
        let w = |x: f64| profile.eval(x).0.powi(2);
        let mut pairs = Vec::new();
        for seg in breaks.windows(2) {
            for (s, ws) in gl.on_interval(seg[0], seg[1]) {
                let outer = ws * w(s);
                if outer == 0.0 {
                    continue;
                }
                let mut inner_breaks: Vec<f64> = breaks.iter().copied().filter(|b| *b > lo && *b < hi).collect();
                inner_breaks.push(lo);
                inner_breaks.push(hi);
                inner_breaks.push(s);
                inner_breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
                inner_breaks.dedup();
                for iseg in inner_breaks.windows(2) {
                    for (t, wt) in gl.on_interval(iseg[0], iseg[1]) {
                        let cw = outer * wt * w(t);
                        if cw != 0.0 {
                            pairs.push(((s - t).abs(), cw));
                        }
                    }
                }
            }
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        for p in pairs.iter_mut() {
            p.1 /= total;
        }
        Self { pairs }
    }

    pub fn eval(&self, alpha: Complex64) -> Complex64 {
        self.pairs.iter().map(|(d, cw)| (alpha * d).exp() * cw).sum()
    }
}

/// Output of [`BirmanSchwingerFamily::matrix`].
#[derive(Debug, Clone)]
pub struct AqMatrix {
    pub matrix: CMatrix,
    pub ik: Complex64,
    pub z: Complex64,
    /// `ζ_j` for `j = 0..=j_max`.
    pub zeta: Vec<Complex64>,
    /// `exp(−√(Λ_{J+1} − Λ_q − |k|²) d(K))`.
    pub tail_estimate: f64,
    pub warning: Option<String>,
}

impl AqMatrix {
    pub fn export(&self, path: &Path, field: &FieldConfig, q: usize) -> Result<(), BsError> {
        let header = json!({
            "kind": "a_q",
            "q": q,
            "b": field.b,
            "ik": [self.ik.re, self.ik.im],
            "tail_estimate": self.tail_estimate,
        });
        container::write_matrix_file(path, &header, &self.matrix)?;
        Ok(())
    }
}

/// `k ↦ A_q(ik)` on a fixed trial space; the form Gram is computed once.
#[derive(Debug, Clone)]
pub struct BirmanSchwingerFamily {
    pub q: usize,
    pub j_max: usize,
    pub eps: f64,
    pub field: FieldConfig,
    pub trial: TrialSpace,
    /// Hermitian Gram `𝒱` of the form on the trial space.
    pub gram: CMatrix,
    pub diameter: f64,
    kernel: AxialKernel,
}

impl BirmanSchwingerFamily {
    pub fn new(form: &PerturbationForm, q: usize, trial: &TrialSpace, j_max: usize) -> Result<Self, BsError> {
        if j_max < q + 2 {
            return Err(BsError::Invalid(format!("J_max = {j_max} must be at least q + 2 = {}", q + 2)));
        }
        if let Some(&(j, _)) = trial.entries.iter().find(|(j, _)| *j > j_max) {
            return Err(BsError::Invalid(format!("trial entry on level {j} exceeds J_max = {j_max}")));
        }
        let g = form.gram(&trial.functions())?;
        Ok(Self {
            q,
            j_max,
            eps: form.eps_sign(),
            field: form.problem.field,
            trial: trial.clone(),
            gram: g.matrix,
            diameter: form.problem.diameter(),
            kernel: AxialKernel::new(&trial.profile, 24),
        })
    }

    /// Restrict to levels `0..=j_max` (for truncation studies).
    pub fn truncated(&self, j_max: usize) -> Result<Self, BsError> {
        if j_max < self.q + 2 || j_max > self.j_max {
            return Err(BsError::Invalid(format!("cannot truncate J_max {} to {j_max}", self.j_max)));
        }
        let keep: Vec<usize> = (0..self.trial.len()).filter(|&a| self.trial.entries[a].0 <= j_max).collect();
        let gram = CMatrix::from_fn(keep.len(), keep.len(), |a, b| self.gram[(keep[a], keep[b])]);
        let trial = TrialSpace { profile: self.trial.profile, entries: keep.iter().map(|&a| self.trial.entries[a]).collect() };
        Ok(Self { j_max, gram, trial, ..self.clone() })
    }

    /// Level weights `ζ_j(ik)` for `j = 0..=j_max`.
    pub fn zeta(&self, ik: Complex64) -> Result<Vec<Complex64>, BsError> {
        let b = self.field.b;
        let k = ik * c(0.0, -1.0);
        if k.norm() >= (2.0 * b).sqrt() {
            return Err(BsError::Branch(format!("|k| = {} outside the single-level window |k| < √(2b) = {}", k.norm(), (2.0 * b).sqrt())));
        }
        let lam = |j: usize| landau_level(LandauLevelIndex(j), &self.field);
        let z = lam(self.q) + k * k;
        (0..=self.j_max)
            .map(|j| {
                let mu = lam(j).sqrt();
                let k_mu = self.kernel.eval(c(-mu, 0.0)) / (2.0 * mu);
                if j == self.q {
                    Ok(0.5 * self.kernel.eval(ik) + ik * k_mu)
                } else {
                    let kappa = axial_momentum(lam(j), z)?;
                    if kappa.im < 0.0 {
                        return Err(BsError::Branch(format!("Im κ_{j} < 0 at z = {z}")));
                    }
                    let kk = c(0.0, 1.0) * self.kernel.eval(c(0.0, 1.0) * kappa) / (2.0 * kappa);
                    Ok(ik * (k_mu - kk))
                }
            })
            .collect()
    }

    /// `ε 𝒵^{1/2} 𝒱 𝒵^{1/2}` at the spectral parameter `ik`.
    pub fn matrix(&self, ik: Complex64) -> Result<AqMatrix, BsError> {
        let zeta = self.zeta(ik)?;
        let sq: Vec<Complex64> = self.trial.entries.iter().map(|&(j, _)| zeta[j].sqrt()).collect();
        let n = self.trial.len();
        let matrix = CMatrix::from_fn(n, n, |a, b| self.gram[(a, b)] * sq[a] * sq[b] * self.eps);
        let b = self.field.b;
        let k = ik * c(0.0, -1.0);
        let lam = |j: usize| landau_level(LandauLevelIndex(j), &self.field);
        let gap = (lam(self.j_max + 1) - lam(self.q) - k.norm_sqr()).max(0.0);
        let tail = (-gap.sqrt() * self.diameter).exp();
        let warning = (tail > 1e-6).then(|| {
            format!("dropped-level estimate {tail:.2e} exceeds 1e-6 at J_max = {} (b = {b}); raise J_max", self.j_max)
        });
        Ok(AqMatrix { matrix, ik, z: lam(self.q) + k * k, zeta, tail_estimate: tail, warning })
    }

    /// Family in the variable `w = ε·ik` whose characteristic values
    /// (`I − Ã(w)/w` singular) are the resonance parameters.
    pub fn characteristic_matrix(&self, w: Complex64) -> Result<CMatrix, BsError> {
        Ok(self.matrix(w * self.eps)?.matrix)
    }

    /// Eigenvalues of `Ã(0)` (descending), i.e. of `T_q` padded with zeros.
    pub fn a0_eigenvalues(&self) -> Result<Vec<f64>, BsError> {
        let a0 = hermitian_part(&self.matrix(c(0.0, 0.0))?.matrix);
        let (mut v, _) = jacobi_hermitian(&a0, false);
        v.reverse();
        Ok(v)
    }

    /// Genericity diagnostic: the 2-norm condition number of `I − Ã′(0) Π`,
    /// where `Ã(w) = ε 𝒵(ε w) 𝒱` is the holomorphic form of the family (same
    /// characteristic values as `ε 𝒵^{1/2} 𝒱 𝒵^{1/2}`) and `Π` is the
    /// orthogonal projector onto `ker Ã(0)`. Reported only; a large value
    /// flags a near-failure of invertibility that no finite test can decide.
    pub fn genericity_condition(&self) -> Result<f64, BsError> {
        let n = self.trial.len();
        let h = 1e-4 * self.field.b.sqrt();
        let z0 = self.zeta(c(0.0, 0.0))?;
        let (zp, zm) = (self.zeta(c(h, 0.0))?, self.zeta(c(-h, 0.0))?);
        // d/dw = ε d/d(ik); the level weights are real-analytic on the real ik axis.
        let level = |a: usize| self.trial.entries[a].0;
        let a0 = CMatrix::from_fn(n, n, |a, b| self.gram[(a, b)] * z0[level(a)] * self.eps);
        let a1 = CMatrix::from_fn(n, n, |a, b| self.gram[(a, b)] * (zp[level(a)] - zm[level(a)]) / (2.0 * h));
        let svd = a0.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| BsError::Invalid("SVD failed for Ã(0)".into()))?;
        let s_max = svd.singular_values.iter().fold(0.0f64, |m, s| m.max(*s));
        let mut proj = CMatrix::zeros(n, n);
        for (i, s) in svd.singular_values.iter().enumerate() {
            if *s <= 1e-10 * s_max {
                let v = v_t.row(i).adjoint();
                proj += &v * v.adjoint();
            }
        }
        let m = CMatrix::identity(n, n) - a1 * proj;
        let sv = m.singular_values();
        let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(l, h), s| (l.min(*s), h.max(*s)));
        Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
    }
}

/// Galerkin matrix of `A_q(ik)` on `trial` (levels up to `j_max`).
pub fn assemble_a_q(form: &PerturbationForm, q: usize, k: Complex64, trial: &TrialSpace, j_max: usize) -> Result<AqMatrix, BsError> {
    BirmanSchwingerFamily::new(form, q, trial, j_max)?.matrix(c(0.0, 1.0) * k)
}

impl BirmanSchwingerFamily {
    /// Wrap as a [`HolomorphicFamily`] in `w = ε·ik` on `|w| < r_max`
    /// (clamped to the single-level window `|k| < √(2b)`).
    pub fn holomorphic_family(&self, r_max: f64) -> HolomorphicFamily {
        let r_max = r_max.min(0.999 * (2.0 * self.field.b).sqrt());
        let me = self.clone();
        let eval: Evaluator = Arc::new(move |w: Complex64| me.characteristic_matrix(w).map_err(|e| format!("bs: {e}")));
        let label = format!("A_{}(ik), {}, b = {}", self.q, if self.eps > 0.0 { "dirichlet" } else { "robin" }, self.field.b);
        HolomorphicFamily::new(label, self.trial.len(), AnnulusDomain { r_min: 0.0, r_max }, eval)
    }

    /// Resonance momentum `k` for a characteristic value `w = ε·ik`.
    pub fn momentum(&self, w: Complex64) -> Complex64 {
        w * self.eps * c(0.0, -1.0)
    }
}
