//! Boundary operators for the magnetic Green function on a closed surface
//! `Σ = ∂K`: Nyström collocation matrices of the single layer **S** and
//! the double layer **D**, off-surface layer potentials, a jump-relation
//! check, and the Dirichlet–Robin / Robin–Dirichlet maps.
//!
//! Conventions. Densities are piecewise constant on panels and represented
//! by their panel values; collocation points are the panel centroids (on
//! the exact sphere for sphere-tagged meshes). The normal `ν` points out
//! of `K`, and the double layer uses the kernel
//! `ν_y·(∇_y + iA(y)) G_0(x, y)` (see [`crate::green::double_layer_kernel`]).
//! With this orientation the double-layer potential `𝒟φ` has the limits
//! `−½φ + Dφ` from inside `K` and `+½φ + Dφ` from outside, and the
//! Robin trace is `∂_Σ u = ν·∇^A u + γ u`. Field-harmonic functions then
//! satisfy
//!
//! * inside `K`: `S ∂_Σ u = (D + Sγ + ½) u`,
//! * outside `K`: `S ∂_Σ u = (D + Sγ − ½) u`,
//!
//! which define the Dirichlet–Robin maps; their inverses are the
//! Robin–Dirichlet maps `(D + Sγ ± ½)^{-1} S`.
//!
//! The discrete single layer is symmetrized in the `L²(Σ)` sense: with
//! `W = diag(panel areas)`, the matrix `W^{1/2} S W^{-1/2}` (the operator in
//! the orthonormal panel basis) is replaced by its Hermitian part. Raw
//! collocation with unequal panel areas is not symmetric, and the raw
//! defect is kept as a diagnostic.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use thiserror::Error;

use crate::container::{self, ContainerError};
use crate::green::{
    double_layer_kernel, green_function, green_pair, near_diagonal_principal, GreenError, GreenQuadrature, QuadratureSpec,
    SpacePoint,
};
use crate::landau::FieldConfig;
use crate::linalg::{c, norm1, CMatrix, CVector, Factorized, LinalgError};
use crate::mesh::{dist, MeshError, ShapeTag, SurfaceMesh, SurfaceNode};
use crate::quad::{barycentric_point, TriangleRule};

#[derive(Debug, Error)]
pub enum BemError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Green(#[from] GreenError),
    #[error("point is too close to the surface: distance {distance:e} < {limit:e}")]
    TooClose { distance: f64, limit: f64 },
    #[error("single layer is singular at the discrete level (1-norm condition estimate {cond:e})")]
    SingularS { cond: f64 },
    #[error("boundary operator D + Sγ ± 1/2 is near-singular: σ_min ≈ {sigma_min:e}, norm {norm:e}")]
    NearSingular { sigma_min: f64, norm: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid Robin parameter: {0}")]
    Robin(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// Which boundary operator a matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    SingleLayer,
    DoubleLayer,
    DirichletRobinInterior,
    DirichletRobinExterior,
    RobinDirichletInterior,
    RobinDirichletExterior,
}

/// Interior (`K`) or exterior (`Ω`) side of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Interior,
    Exterior,
}

impl Side {
    /// The jump constant entering `D + Sγ + jump`: `+½` inside, `−½` outside.
    pub fn jump(self) -> f64 {
        match self {
            Side::Interior => 0.5,
            Side::Exterior => -0.5,
        }
    }
}

/// Layer-potential type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Single,
    Double,
}

/// Real Robin coefficient `γ` sampled at the panel centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobinParameter {
    pub gamma: Vec<f64>,
}

impl RobinParameter {
    pub fn new(gamma: Vec<f64>) -> Result<Self, BemError> {
        if let Some(i) = gamma.iter().position(|g| !g.is_finite()) {
            return Err(BemError::Robin(format!("γ at panel {i} is not finite")));
        }
        Ok(Self { gamma })
    }

    /// `γ ≡ 0` (Neumann).
    pub fn zero(n: usize) -> Self {
        Self { gamma: vec![0.0; n] }
    }

    pub fn constant(n: usize, value: f64) -> Result<Self, BemError> {
        Self::new(vec![value; n])
    }

    pub fn is_zero(&self) -> bool {
        self.gamma.iter().all(|g| *g == 0.0)
    }

    fn summary(&self) -> serde_json::Value {
        let n = self.gamma.len().max(1) as f64;
        let min = self.gamma.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.gamma.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        json!({ "min": min, "max": max, "mean": self.gamma.iter().sum::<f64>() / n })
    }
}

/// Diagnostics attached to an assembled or derived operator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperatorDiagnostics {
    /// Hermiticity defect of the raw collocation single layer in the
    /// orthonormal panel basis, before symmetrization.
    pub raw_hermiticity_defect: Option<f64>,
    /// 1-norm condition estimate of the factorized matrix.
    pub condition_estimate: Option<f64>,
    /// Estimated smallest singular value of the factorized matrix.
    pub sigma_min_estimate: Option<f64>,
}

/// A dense boundary operator acting on panel values.
#[derive(Debug, Clone)]
pub struct BoundaryOperatorMatrix {
    pub kind: OperatorKind,
    pub matrix: CMatrix,
    pub field: FieldConfig,
    pub mesh_hash: String,
    pub areas: Vec<f64>,
    pub gamma: RobinParameter,
    pub diagnostics: OperatorDiagnostics,
}

impl BoundaryOperatorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &CVector) -> Result<CVector, BemError> {
        if v.len() != self.dim() {
            return Err(BemError::Dimension(format!("vector of length {} for a {}-panel operator", v.len(), self.dim())));
        }
        Ok(&self.matrix * v)
    }

    /// The operator in the `L²(Σ)`-orthonormal panel basis,
    /// `W^{1/2} M W^{-1/2}`.
    pub fn orthonormal_matrix(&self) -> CMatrix {
        let s: Vec<f64> = self.areas.iter().map(|a| a.sqrt()).collect();
        CMatrix::from_fn(self.dim(), self.dim(), |i, j| self.matrix[(i, j)] * (s[i] / s[j]))
    }

    /// `max |M̂ − M̂*|` for `M̂` the orthonormal-basis matrix.
    pub fn weighted_hermiticity_defect(&self) -> f64 {
        crate::linalg::hermiticity_defect(&self.orthonormal_matrix())
    }

    /// Export to the binary container (JSON header: kind, b, γ summary, mesh hash).
    pub fn export(&self, path: &Path) -> Result<(), BemError> {
        let header = json!({
            "kind": self.kind,
            "b": self.field.b,
            "gauge_center": self.field.gauge_center,
            "gamma": self.gamma.summary(),
            "mesh_hash": self.mesh_hash,
            "diagnostics": self.diagnostics,
        });
        container::write_matrix_file(path, &header, &self.matrix)?;
        Ok(())
    }
}

/// Quadrature controls for boundary assembly and potential evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BemQuadrature {
    /// Use the 3-point rule when `distance / diameter >= far_ratio`.
    pub far_ratio: f64,
    /// Use the 7-point rule when `distance / diameter >= mid_ratio`.
    pub mid_ratio: f64,
    /// Adaptive subdivision stops once `distance / diameter >= near_ratio`
    /// for the sub-triangle.
    pub near_ratio: f64,
    /// Maximum subdivision depth for near-field panels.
    pub max_depth: usize,
    /// Duffy order for the principal part on the self panel.
    pub self_order: usize,
    /// Duffy order for the bounded remainder on the self panel.
    pub remainder_order: usize,
    /// Smallest admissible offset for off-surface evaluation, relative to
    /// the diameter of the nearest panel.
    pub min_offset_ratio: f64,
    /// Quadrature for the Green function itself.
    pub green: QuadratureSpec,
}

impl Default for BemQuadrature {
    fn default() -> Self {
        Self {
            far_ratio: 6.0,
            mid_ratio: 2.5,
            near_ratio: 1.5,
            max_depth: 12,
            self_order: 12,
            remainder_order: 6,
            min_offset_ratio: 0.02,
            green: QuadratureSpec::default(),
        }
    }
}

impl BemQuadrature {
    /// A uniformly more accurate configuration (for convergence checks).
    pub fn refined(&self) -> Self {
        Self {
            far_ratio: self.far_ratio * 1.5,
            mid_ratio: self.mid_ratio * 1.5,
            near_ratio: self.near_ratio * 1.5,
            max_depth: self.max_depth + 2,
            self_order: self.self_order * 2,
            remainder_order: self.remainder_order * 2,
            min_offset_ratio: self.min_offset_ratio,
            green: self.green.doubled(),
        }
    }
}

/// Precomputed per-panel rules shared by all rows.
struct Assembler<'a> {
    mesh: &'a SurfaceMesh,
    field: FieldConfig,
    green: GreenQuadrature,
    opts: BemQuadrature,
    far_nodes: Vec<Vec<SurfaceNode>>,
    mid_nodes: Vec<Vec<SurfaceNode>>,
    deg5: TriangleRule,
    duffy_self: TriangleRule,
    duffy_rem: TriangleRule,
}

#[derive(Clone, Copy)]
struct Want {
    s: bool,
    d: bool,
}

impl<'a> Assembler<'a> {
    fn new(mesh: &'a SurfaceMesh, field: &FieldConfig, opts: &BemQuadrature) -> Result<Self, BemError> {
        let green = GreenQuadrature::new(opts.green)?;
        let deg2 = TriangleRule::degree2();
        let deg5 = TriangleRule::degree5();
        let far_nodes = (0..mesh.n_panels()).map(|j| mesh.panel_nodes(j, &deg2)).collect();
        let mid_nodes = (0..mesh.n_panels()).map(|j| mesh.panel_nodes(j, &deg5)).collect();
        Ok(Self {
            mesh,
            field: *field,
            green,
            opts: opts.clone(),
            far_nodes,
            mid_nodes,
            deg5,
            duffy_self: TriangleRule::duffy(opts.self_order),
            duffy_rem: TriangleRule::duffy(opts.remainder_order),
        })
    }

    /// Add `w G(x,y)` and `w K_D(x,y)` over `nodes`.
    fn accumulate(&self, x: &SpacePoint, nodes: &[SurfaceNode], want: Want, acc: &mut (Complex64, Complex64)) -> Result<(), BemError> {
        for nd in nodes {
            if want.d {
                let p = green_pair(x, &nd.point, &self.field, &self.green)?;
                if want.s {
                    acc.0 += p.value * nd.weight;
                }
                acc.1 += double_layer_kernel(&p, x, &nd.point, &nd.normal, &self.field) * nd.weight;
            } else {
                acc.0 += green_function(x, &nd.point, &self.field, &self.green)? * nd.weight;
            }
        }
        Ok(())
    }

    /// Adaptive integration over the image of a flat sub-triangle of panel `j`.
    fn adaptive(
        &self,
        j: usize,
        x: &SpacePoint,
        tri: &[[f64; 3]; 3],
        depth: usize,
        want: Want,
        acc: &mut (Complex64, Complex64),
    ) -> Result<(), BemError> {
        let centroid = barycentric_point(tri, &[1.0 / 3.0; 3]);
        let diam = dist(&tri[0], &tri[1]).max(dist(&tri[1], &tri[2])).max(dist(&tri[2], &tri[0]));
        let d = dist(x, &self.project(&centroid));
        if d >= self.opts.near_ratio * diam || depth >= self.opts.max_depth {
            let mut nodes = Vec::with_capacity(self.deg5.points.len());
            self.mesh.sub_triangle_nodes(j, tri, &self.deg5, &mut nodes);
            return self.accumulate(x, &nodes, want, acc);
        }
        let m01 = mid(&tri[0], &tri[1]);
        let m12 = mid(&tri[1], &tri[2]);
        let m20 = mid(&tri[2], &tri[0]);
        for child in [[tri[0], m01, m20], [m01, tri[1], m12], [m20, m12, tri[2]], [m01, m12, m20]] {
            self.adaptive(j, x, &child, depth + 1, want, acc)?;
        }
        Ok(())
    }

    /// Map a flat-panel point to the surface (radial projection for spheres).
    fn project(&self, p: &[f64; 3]) -> [f64; 3] {
        match &self.mesh.shape {
            ShapeTag::Sphere { center, radius } => {
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                [center[0] + radius * d[0] / r, center[1] + radius * d[1] / r, center[2] + radius * d[2] / r]
            }
            _ => *p,
        }
    }

    /// Integrals of `G_0(x,·)` and the double-layer kernel over panel `j`
    /// for a point `x` not on panel `j`.
    fn panel_integrals(&self, j: usize, x: &SpacePoint, want: Want) -> Result<(Complex64, Complex64), BemError> {
        let panel = &self.mesh.panels[j];
        let ratio = dist(x, &panel.centroid) / panel.diameter;
        let mut acc = (c(0.0, 0.0), c(0.0, 0.0));
        if ratio >= self.opts.far_ratio {
            self.accumulate(x, &self.far_nodes[j], want, &mut acc)?;
        } else if ratio >= self.opts.mid_ratio {
            self.accumulate(x, &self.mid_nodes[j], want, &mut acc)?;
        } else {
            self.adaptive(j, x, &self.mesh.flat_triangle(j), 0, want, &mut acc)?;
        }
        Ok(acc)
    }

    /// Self-panel integrals at the collocation point of panel `i`.
    ///
    /// The single layer subtracts the principal part
    /// `e^{-i(b/2)x⊥∧y⊥}/(4π|x−y|)`, integrated by a high-order Duffy rule,
    /// and integrates the bounded remainder with a lower-order rule. The
    /// double-layer kernel is only weakly singular on the panel and is
    /// integrated directly with the high-order rule.
    fn self_integrals(&self, i: usize, want: Want) -> Result<(Complex64, Complex64), BemError> {
        let x = self.mesh.panels[i].centroid;
        let t = self.mesh.flat_triangle(i);
        let fc = self.mesh.flat_centroid(i);
        let mut s_val = c(0.0, 0.0);
        let mut d_val = c(0.0, 0.0);
        let mut nodes = Vec::new();
        for sub in [[fc, t[0], t[1]], [fc, t[1], t[2]], [fc, t[2], t[0]]] {
            nodes.clear();
            self.mesh.sub_triangle_nodes(i, &sub, &self.duffy_self, &mut nodes);
            for nd in &nodes {
                if want.s {
                    s_val += near_diagonal_principal(&x, &nd.point, &self.field)? * nd.weight;
                }
                if want.d {
                    let p = green_pair(&x, &nd.point, &self.field, &self.green)?;
                    d_val += double_layer_kernel(&p, &x, &nd.point, &nd.normal, &self.field) * nd.weight;
                }
            }
            if want.s {
                nodes.clear();
                self.mesh.sub_triangle_nodes(i, &sub, &self.duffy_rem, &mut nodes);
                for nd in &nodes {
                    let g = green_function(&x, &nd.point, &self.field, &self.green)?;
                    let p = near_diagonal_principal(&x, &nd.point, &self.field)?;
                    s_val += (g - p) * nd.weight;
                }
            }
        }
        Ok((s_val, d_val))
    }

    /// Row `i` of **S** and/or **D**.
    fn row(&self, i: usize, want: Want) -> Result<(Vec<Complex64>, Vec<Complex64>), BemError> {
        let n = self.mesh.n_panels();
        let x = self.mesh.panels[i].centroid;
        let mut s_row = if want.s { vec![c(0.0, 0.0); n] } else { Vec::new() };
        let mut d_row = if want.d { vec![c(0.0, 0.0); n] } else { Vec::new() };
        for j in 0..n {
            let (sv, dv) = if j == i { self.self_integrals(i, want)? } else { self.panel_integrals(j, &x, want)? };
            if want.s {
                s_row[j] = sv;
            }
            if want.d {
                d_row[j] = dv;
            }
        }
        Ok((s_row, d_row))
    }

    fn rows(&self, want: Want) -> Result<(Option<CMatrix>, Option<CMatrix>), BemError> {
        let n = self.mesh.n_panels();
        let rows: Vec<(Vec<Complex64>, Vec<Complex64>)> =
            (0..n).into_par_iter().map(|i| self.row(i, want)).collect::<Result<_, _>>()?;
        let s = want.s.then(|| CMatrix::from_fn(n, n, |i, j| rows[i].0[j]));
        let d = want.d.then(|| CMatrix::from_fn(n, n, |i, j| rows[i].1[j]));
        Ok((s, d))
    }

    fn operator(&self, kind: OperatorKind, matrix: CMatrix, diagnostics: OperatorDiagnostics) -> BoundaryOperatorMatrix {
        BoundaryOperatorMatrix {
            kind,
            matrix,
            field: self.field,
            mesh_hash: self.mesh.content_hash(),
            areas: self.mesh.panels.iter().map(|p| p.area).collect(),
            gamma: RobinParameter::zero(self.mesh.n_panels()),
            diagnostics,
        }
    }

    fn single_layer_operator(&self, raw: CMatrix) -> BoundaryOperatorMatrix {
        let areas: Vec<f64> = self.mesh.panels.iter().map(|p| p.area).collect();
        let (sym, raw_defect) = symmetrize_weighted(&raw, &areas);
        self.operator(
            OperatorKind::SingleLayer,
            sym,
            OperatorDiagnostics { raw_hermiticity_defect: Some(raw_defect), ..Default::default() },
        )
    }
}

fn mid(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]
}

/// Replace `W^{1/2} S W^{-1/2}` by its Hermitian part; returns the
/// symmetrized nodal matrix and the raw defect.
fn symmetrize_weighted(s: &CMatrix, areas: &[f64]) -> (CMatrix, f64) {
    let n = s.nrows();
    let mut out = s.clone();
    let mut defect: f64 = 0.0;
    for i in 0..n {
        out[(i, i)] = c(s[(i, i)].re, 0.0);
        defect = defect.max(2.0 * s[(i, i)].im.abs());
        for j in (i + 1)..n {
            let r = (areas[i] / areas[j]).sqrt();
            let hij = s[(i, j)] * r;
            let hji = s[(j, i)] / r;
            defect = defect.max((hij - hji.conj()).norm());
            let h = 0.5 * (hij + hji.conj());
            out[(i, j)] = h / r;
            out[(j, i)] = h.conj() * r;
        }
    }
    (out, defect)
}

/// Assemble the single layer `S_ij ≈ ∫_{panel j} G_0(x_i, y) dσ(y)`.
pub fn assemble_single_layer(mesh: &SurfaceMesh, field: &FieldConfig, quad: &BemQuadrature) -> Result<BoundaryOperatorMatrix, BemError> {
    let a = Assembler::new(mesh, field, quad)?;
    let (s, _) = a.rows(Want { s: true, d: false })?;
    Ok(a.single_layer_operator(s.expect("requested")))
}

/// Assemble the double layer `D_ij ≈ ∫_{panel j} ν_y·(∇_y + iA(y)) G_0(x_i, y) dσ(y)`.
pub fn assemble_double_layer(mesh: &SurfaceMesh, field: &FieldConfig, quad: &BemQuadrature) -> Result<BoundaryOperatorMatrix, BemError> {
    let a = Assembler::new(mesh, field, quad)?;
    let (_, d) = a.rows(Want { s: false, d: true })?;
    Ok(a.operator(OperatorKind::DoubleLayer, d.expect("requested"), OperatorDiagnostics::default()))
}

/// Assemble **S** and **D** in one pass, sharing kernel evaluations.
pub fn assemble_layer_operators(
    mesh: &SurfaceMesh,
    field: &FieldConfig,
    quad: &BemQuadrature,
) -> Result<(BoundaryOperatorMatrix, BoundaryOperatorMatrix), BemError> {
    let a = Assembler::new(mesh, field, quad)?;
    let (s, d) = a.rows(Want { s: true, d: true })?;
    let s = a.single_layer_operator(s.expect("requested"));
    let d = a.operator(OperatorKind::DoubleLayer, d.expect("requested"), OperatorDiagnostics::default());
    Ok((s, d))
}

/// Distance from `x` to the surface and the diameter of the nearest panel.
pub fn distance_to_surface(mesh: &SurfaceMesh, x: &SpacePoint) -> (f64, f64) {
    let nearest = (0..mesh.n_panels())
        .map(|j| (j, point_triangle_distance(x, &mesh.flat_triangle(j))))
        .fold((0, f64::INFINITY), |acc, (j, d)| if d < acc.1 { (j, d) } else { acc });
    let d = match &mesh.shape {
        ShapeTag::Sphere { center, radius } => (dist(x, center) - radius).abs(),
        _ => nearest.1,
    };
    (d, mesh.panels[nearest.0].diameter)
}

/// Closest distance from a point to a flat triangle.
fn point_triangle_distance(p: &[f64; 3], t: &[[f64; 3]; 3]) -> f64 {
    let sub = |a: &[f64; 3], b: &[f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let (a, b, cc) = (t[0], t[1], t[2]);
    let ab = sub(&b, &a);
    let ac = sub(&cc, &a);
    let ap = sub(p, &a);
    let d1 = dot(&ab, &ap);
    let d2 = dot(&ac, &ap);
    let at = |u: f64, v: f64| [a[0] + u * ab[0] + v * ac[0], a[1] + u * ab[1] + v * ac[1], a[2] + u * ab[2] + v * ac[2]];
    if d1 <= 0.0 && d2 <= 0.0 {
        return dist(p, &a);
    }
    let bp = sub(p, &b);
    let d3 = dot(&ab, &bp);
    let d4 = dot(&ac, &bp);
    if d3 >= 0.0 && d4 <= d3 {
        return dist(p, &b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return dist(p, &at(v, 0.0));
    }
    let cp = sub(p, &cc);
    let d5 = dot(&ab, &cp);
    let d6 = dot(&ac, &cp);
    if d6 >= 0.0 && d5 <= d6 {
        return dist(p, &cc);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return dist(p, &at(0.0, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return dist(p, &at(1.0 - w, w));
    }
    let denom = 1.0 / (va + vb + vc);
    dist(p, &at(vb * denom, vc * denom))
}

fn check_density(mesh: &SurfaceMesh, density: &[Complex64]) -> Result<(), BemError> {
    if density.len() != mesh.n_panels() {
        return Err(BemError::Dimension(format!("density has {} values for {} panels", density.len(), mesh.n_panels())));
    }
    Ok(())
}

/// Evaluate the single- or double-layer potential of a piecewise-constant
/// density at an off-surface point.
pub fn eval_layer_potential(
    mesh: &SurfaceMesh,
    density: &[Complex64],
    kind: LayerKind,
    x: &SpacePoint,
    field: &FieldConfig,
    quad: &BemQuadrature,
) -> Result<Complex64, BemError> {
    check_density(mesh, density)?;
    let a = Assembler::new(mesh, field, quad)?;
    let (s, d) = potentials_at(&a, density, x, Want { s: kind == LayerKind::Single, d: kind == LayerKind::Double })?;
    Ok(match kind {
        LayerKind::Single => s,
        LayerKind::Double => d,
    })
}

fn potentials_at(a: &Assembler, density: &[Complex64], x: &SpacePoint, want: Want) -> Result<(Complex64, Complex64), BemError> {
    let (d, diam) = distance_to_surface(a.mesh, x);
    let limit = a.opts.min_offset_ratio * diam;
    if !(d >= limit) {
        return Err(BemError::TooClose { distance: d, limit });
    }
    let mut s = c(0.0, 0.0);
    let mut dl = c(0.0, 0.0);
    for (j, phi) in density.iter().enumerate() {
        if *phi == c(0.0, 0.0) {
            continue;
        }
        let (sv, dv) = a.panel_integrals(j, x, want)?;
        s += sv * phi;
        dl += dv * phi;
    }
    Ok((s, dl))
}

/// Options for [`jump_relation_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpCheckOptions {
    /// Offset `h` along `±ν` relative to the diameter of the sampled panel.
    pub offset_ratio: f64,
    /// Number of sampled collocation points (evenly spaced in panel order).
    pub n_samples: usize,
    pub quad: BemQuadrature,
}

impl Default for JumpCheckOptions {
    fn default() -> Self {
        Self { offset_ratio: 0.05, n_samples: 32, quad: BemQuadrature::default() }
    }
}

/// Maximum residuals of the limit relations, relative to `max |φ|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpReport {
    /// `max |𝒟φ(x − hν) − (−½φ + Dφ)(x)|`.
    pub double_interior: f64,
    /// `max |𝒟φ(x + hν) − (+½φ + Dφ)(x)|`.
    pub double_exterior: f64,
    /// `max_± |𝒮φ(x ± hν) − (Sφ)(x)|`.
    pub single_continuity: f64,
    pub n_samples: usize,
    pub mean_offset: f64,
}

impl JumpReport {
    pub fn max_double(&self) -> f64 {
        self.double_interior.max(self.double_exterior)
    }
}

/// Compare off-surface layer potentials at `x_i ± hν_i` with the on-surface
/// limits `∓½φ + Dφ` and `Sφ` at sampled collocation points `x_i`.
pub fn jump_relation_check(
    mesh: &SurfaceMesh,
    density: &[Complex64],
    field: &FieldConfig,
    opts: &JumpCheckOptions,
) -> Result<JumpReport, BemError> {
    check_density(mesh, density)?;
    let scale = density.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let n = mesh.n_panels();
    let n_samples = opts.n_samples.clamp(1, n);
    if scale == 0.0 {
        return Ok(JumpReport { double_interior: 0.0, double_exterior: 0.0, single_continuity: 0.0, n_samples, mean_offset: 0.0 });
    }
    let a = Assembler::new(mesh, field, &opts.quad)?;
    let both = Want { s: true, d: true };
    let samples: Vec<usize> = (0..n_samples).map(|k| k * n / n_samples).collect();
    let results: Vec<(f64, f64, f64, f64)> = samples
        .par_iter()
        .map(|&i| -> Result<_, BemError> {
            let p = &mesh.panels[i];
            let h = opts.offset_ratio * p.diameter;
            let (s_row, d_row) = a.row(i, both)?;
            let s_lim: Complex64 = s_row.iter().zip(density).map(|(k, f)| k * f).sum();
            let d_lim: Complex64 = d_row.iter().zip(density).map(|(k, f)| k * f).sum();
            let x = p.centroid;
            let nu = p.normal;
            let inside = [x[0] - h * nu[0], x[1] - h * nu[1], x[2] - h * nu[2]];
            let outside = [x[0] + h * nu[0], x[1] + h * nu[1], x[2] + h * nu[2]];
            let (s_in, d_in) = potentials_at(&a, density, &inside, both)?;
            let (s_out, d_out) = potentials_at(&a, density, &outside, both)?;
            let phi = density[i];
            let r_int = (d_in - (d_lim - phi * 0.5)).norm();
            let r_ext = (d_out - (d_lim + phi * 0.5)).norm();
            let r_s = (s_in - s_lim).norm().max((s_out - s_lim).norm());
            Ok((r_int, r_ext, r_s, h))
        })
        .collect::<Result<_, _>>()?;
    let fold = |f: fn(&(f64, f64, f64, f64)) -> f64| results.iter().map(f).fold(0.0, f64::max) / scale;
    Ok(JumpReport {
        double_interior: fold(|r| r.0),
        double_exterior: fold(|r| r.1),
        single_continuity: fold(|r| r.2),
        n_samples,
        mean_offset: results.iter().map(|r| r.3).sum::<f64>() / results.len() as f64,
    })
}

fn check_pair(s: &BoundaryOperatorMatrix, d: &BoundaryOperatorMatrix, gamma: &RobinParameter) -> Result<(), BemError> {
    if s.kind != OperatorKind::SingleLayer || d.kind != OperatorKind::DoubleLayer {
        return Err(BemError::Dimension(format!("expected (single, double) layers, got ({:?}, {:?})", s.kind, d.kind)));
    }
    if s.dim() != d.dim() || gamma.gamma.len() != s.dim() {
        return Err(BemError::Dimension(format!("S is {}, D is {}, γ has {} values", s.dim(), d.dim(), gamma.gamma.len())));
    }
    Ok(())
}

/// Minimum reciprocal condition number accepted for the single layer.
const MIN_RCOND_S: f64 = 1e-14;
/// Near-singularity threshold `σ_min < RD_SINGULAR_RATIO · ‖A‖₁`.
const RD_SINGULAR_RATIO: f64 = 1e-10;

/// Applies `S^{-1}(D + jump) φ + γ φ` using a cached factorization of `S`.
pub struct DirichletRobinSolver {
    s_lu: Factorized,
    d_shifted: CMatrix,
    gamma: Vec<f64>,
    pub side: Side,
}

impl DirichletRobinSolver {
    pub fn new(s: &BoundaryOperatorMatrix, d: &BoundaryOperatorMatrix, gamma: &RobinParameter, side: Side) -> Result<Self, BemError> {
        check_pair(s, d, gamma)?;
        let s_lu = Factorized::new(&s.matrix, MIN_RCOND_S).map_err(|e| match e {
            LinalgError::Singular { cond } => BemError::SingularS { cond },
            other => other.into(),
        })?;
        let mut d_shifted = d.matrix.clone();
        for i in 0..d_shifted.nrows() {
            d_shifted[(i, i)] += side.jump();
        }
        Ok(Self { s_lu, d_shifted, gamma: gamma.gamma.clone(), side })
    }

    pub fn condition_estimate(&self) -> f64 {
        self.s_lu.cond1_estimate
    }

    pub fn apply(&self, phi: &CVector) -> Result<CVector, BemError> {
        if phi.len() != self.gamma.len() {
            return Err(BemError::Dimension(format!("trace of length {} for {} panels", phi.len(), self.gamma.len())));
        }
        let mut out = self.s_lu.solve_vec(&(&self.d_shifted * phi))?;
        for (k, g) in self.gamma.iter().enumerate() {
            out[k] += phi[k] * *g;
        }
        Ok(out)
    }
}

/// Applies `(D + Sγ + jump)^{-1} S g` using a cached factorization.
pub struct RobinDirichletSolver {
    lu: Factorized,
    s: CMatrix,
    pub side: Side,
    pub sigma_min: f64,
    pub norm: f64,
}

impl RobinDirichletSolver {
    pub fn new(s: &BoundaryOperatorMatrix, d: &BoundaryOperatorMatrix, gamma: &RobinParameter, side: Side) -> Result<Self, BemError> {
        Self::with_jump_scale(s, d, gamma, side, 1.0)
    }

    /// As [`RobinDirichletSolver::new`] with the jump constant multiplied
    /// by `jump_scale` (so that `(cS, cD)` with `jump_scale = c` reproduces
    /// the map of `(S, D)`).
    pub fn with_jump_scale(
        s: &BoundaryOperatorMatrix,
        d: &BoundaryOperatorMatrix,
        gamma: &RobinParameter,
        side: Side,
        jump_scale: f64,
    ) -> Result<Self, BemError> {
        check_pair(s, d, gamma)?;
        let a = robin_operator(s, d, gamma, side.jump() * jump_scale);
        let norm = norm1(&a);
        let lu = Factorized::new(&a, 0.0).map_err(|e| match e {
            LinalgError::Singular { .. } => BemError::NearSingular { sigma_min: 0.0, norm },
            other => other.into(),
        })?;
        let sigma_min = lu.sigma_min_estimate(8)?;
        if sigma_min < RD_SINGULAR_RATIO * norm {
            return Err(BemError::NearSingular { sigma_min, norm });
        }
        Ok(Self { lu, s: s.matrix.clone(), side, sigma_min, norm })
    }

    pub fn condition_estimate(&self) -> f64 {
        self.lu.cond1_estimate
    }

    pub fn apply(&self, g: &CVector) -> Result<CVector, BemError> {
        if g.len() != self.s.nrows() {
            return Err(BemError::Dimension(format!("data of length {} for {} panels", g.len(), self.s.nrows())));
        }
        Ok(self.lu.solve_vec(&(&self.s * g))?)
    }
}

/// `D + Sγ + jump·I`.
fn robin_operator(s: &BoundaryOperatorMatrix, d: &BoundaryOperatorMatrix, gamma: &RobinParameter, jump: f64) -> CMatrix {
    let n = s.dim();
    let mut a = d.matrix.clone();
    for j in 0..n {
        let g = gamma.gamma[j];
        if g != 0.0 {
            for i in 0..n {
                a[(i, j)] += s.matrix[(i, j)] * g;
            }
        }
        a[(j, j)] += jump;
    }
    a
}

/// Dirichlet–Robin map `S^{-1}(D + Sγ + jump)`, with `jump = +½` inside and
/// `−½` outside; `γ = 0` gives the Dirichlet–Neumann map.
///
/// Computed as `S^{-1}(D + jump) + γ` by an LU solve, so that the
/// `γ`-dependence is exactly `map(γ) − map(0) = diag(γ)`.
pub fn dirichlet_robin_map(
    s: &BoundaryOperatorMatrix,
    d: &BoundaryOperatorMatrix,
    gamma: &RobinParameter,
    side: Side,
) -> Result<BoundaryOperatorMatrix, BemError> {
    let solver = DirichletRobinSolver::new(s, d, gamma, side)?;
    let mut m = solver.s_lu.solve(&solver.d_shifted)?;
    for (k, g) in gamma.gamma.iter().enumerate() {
        m[(k, k)] += *g;
    }
    Ok(BoundaryOperatorMatrix {
        kind: match side {
            Side::Interior => OperatorKind::DirichletRobinInterior,
            Side::Exterior => OperatorKind::DirichletRobinExterior,
        },
        matrix: m,
        field: s.field,
        mesh_hash: s.mesh_hash.clone(),
        areas: s.areas.clone(),
        gamma: gamma.clone(),
        diagnostics: OperatorDiagnostics { condition_estimate: Some(solver.condition_estimate()), ..Default::default() },
    })
}

/// Robin–Dirichlet map `(D + Sγ + jump)^{-1} S`.
pub fn robin_dirichlet_map(
    s: &BoundaryOperatorMatrix,
    d: &BoundaryOperatorMatrix,
    gamma: &RobinParameter,
    side: Side,
) -> Result<BoundaryOperatorMatrix, BemError> {
    robin_dirichlet_map_with_jump_scale(s, d, gamma, side, 1.0)
}

/// [`robin_dirichlet_map`] with the jump constant scaled by `jump_scale`.
pub fn robin_dirichlet_map_with_jump_scale(
    s: &BoundaryOperatorMatrix,
    d: &BoundaryOperatorMatrix,
    gamma: &RobinParameter,
    side: Side,
    jump_scale: f64,
) -> Result<BoundaryOperatorMatrix, BemError> {
    let solver = RobinDirichletSolver::with_jump_scale(s, d, gamma, side, jump_scale)?;
    let m = solver.lu.solve(&s.matrix)?;
    Ok(BoundaryOperatorMatrix {
        kind: match side {
            Side::Interior => OperatorKind::RobinDirichletInterior,
            Side::Exterior => OperatorKind::RobinDirichletExterior,
        },
        matrix: m,
        field: s.field,
        mesh_hash: s.mesh_hash.clone(),
        areas: s.areas.clone(),
        gamma: gamma.clone(),
        diagnostics: OperatorDiagnostics {
            condition_estimate: Some(solver.condition_estimate()),
            sigma_min_estimate: Some(solver.sigma_min),
            ..Default::default()
        },
    })
}
