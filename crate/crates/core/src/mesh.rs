//! Triangulated closed surfaces `Σ = ∂K`: icosahedral sphere meshes,
//! ASCII triangle-list I/O, validity checks and per-panel quadrature.
//!
//! Normals point out of the enclosed region `K` (positive signed volume).
//! Sphere-tagged meshes are treated as curved: quadrature nodes of the flat
//! panel are projected radially onto the exact sphere, with the matching
//! surface Jacobian; collocation points are the projected centroids.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::green::SpacePoint;
use crate::quad::{barycentric_point, TriangleRule};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("mesh file {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Analytic shape of the surface, when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeTag {
    Sphere { center: [f64; 3], radius: f64 },
    Ellipsoid { center: [f64; 3], semi_axes: [f64; 3] },
    General,
}

/// Geometry of one panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    /// Collocation point on `Σ`.
    pub centroid: SpacePoint,
    /// Surface area (exact spherical area for sphere-tagged meshes).
    pub area: f64,
    /// Outward unit normal at the collocation point.
    pub normal: [f64; 3],
    /// Longest edge of the flat triangle.
    pub diameter: f64,
}

/// One node of a surface quadrature rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceNode {
    pub point: SpacePoint,
    pub weight: f64,
    pub normal: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub vertices: Vec<SpacePoint>,
    pub triangles: Vec<[usize; 3]>,
    pub panels: Vec<Panel>,
    pub shape: ShapeTag,
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
fn scale(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Euclidean distance.
pub fn dist(a: &SpacePoint, b: &SpacePoint) -> f64 {
    norm(&sub(a, b))
}

impl SurfaceMesh {
    /// Build a mesh from raw data, validating closedness, orientation and
    /// panel areas.
    pub fn new(vertices: Vec<SpacePoint>, triangles: Vec<[usize; 3]>, shape: ShapeTag) -> Result<Self, MeshError> {
        validate(&vertices, &triangles)?;
        let panels = triangles.iter().map(|t| panel_geometry(&vertices, t, &shape)).collect::<Vec<_>>();
        if let Some((i, p)) = panels.iter().enumerate().find(|(_, p)| !(p.area > 0.0)) {
            return Err(MeshError::Invalid(format!("panel {i} has nonpositive area {}", p.area)));
        }
        Ok(Self { vertices, triangles, panels, shape })
    }

    /// Geodesic sphere: each face of an icosahedron split into `frequency²`
    /// triangles, vertices projected on the sphere (`20 frequency²` panels).
    pub fn icosphere(center: [f64; 3], radius: f64, frequency: usize) -> Result<Self, MeshError> {
        if frequency == 0 || !(radius > 0.0) {
            return Err(MeshError::Invalid("icosphere needs frequency >= 1 and radius > 0".into()));
        }
        let (verts, tris) = unit_icosphere(frequency);
        let vertices = verts.iter().map(|v| [center[0] + radius * v[0], center[1] + radius * v[1], center[2] + radius * v[2]]).collect();
        Self::new(vertices, tris, ShapeTag::Sphere { center, radius })
    }

    /// Ellipsoid obtained by scaling a unit icosphere; panels are flat.
    pub fn ellipsoid(center: [f64; 3], semi_axes: [f64; 3], frequency: usize) -> Result<Self, MeshError> {
        if frequency == 0 || semi_axes.iter().any(|a| !(*a > 0.0)) {
            return Err(MeshError::Invalid("ellipsoid needs frequency >= 1 and positive semi-axes".into()));
        }
        let (verts, tris) = unit_icosphere(frequency);
        let vertices = verts
            .iter()
            .map(|v| [center[0] + semi_axes[0] * v[0], center[1] + semi_axes[1] * v[1], center[2] + semi_axes[2] * v[2]])
            .collect();
        Self::new(vertices, tris, ShapeTag::Ellipsoid { center, semi_axes })
    }

    pub fn n_panels(&self) -> usize {
        self.panels.len()
    }

    /// Total surface area.
    pub fn total_area(&self) -> f64 {
        self.panels.iter().map(|p| p.area).sum()
    }

    /// Largest panel diameter.
    pub fn max_diameter(&self) -> f64 {
        self.panels.iter().map(|p| p.diameter).fold(0.0, f64::max)
    }

    /// Signed enclosed volume (positive for outward orientation).
    pub fn signed_volume(&self) -> f64 {
        signed_volume(&self.vertices, &self.triangles)
    }

    /// Flat triangle of panel `j`.
    pub fn flat_triangle(&self, j: usize) -> [[f64; 3]; 3] {
        let t = self.triangles[j];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// Quadrature nodes on the part of panel `j` that is the image of the
    /// flat sub-triangle `sub_tri` (a sub-triangle of the flat panel).
    pub fn sub_triangle_nodes(&self, j: usize, sub_tri: &[[f64; 3]; 3], rule: &TriangleRule, out: &mut Vec<SurfaceNode>) {
        let n_flat = {
            let t = self.flat_triangle(j);
            let c = cross(&sub(&t[1], &t[0]), &sub(&t[2], &t[0]));
            scale(&c, 1.0 / norm(&c))
        };
        let c = cross(&sub(&sub_tri[1], &sub_tri[0]), &sub(&sub_tri[2], &sub_tri[0]));
        let flat_area = 0.5 * norm(&c);
        match &self.shape {
            ShapeTag::Sphere { center, radius } => {
                for (l, w) in rule.points.iter().zip(&rule.weights) {
                    let p = barycentric_point(sub_tri, l);
                    let d = sub(&p, center);
                    let r = norm(&d);
                    let u = scale(&d, 1.0 / r);
                    // dA_sphere = R² (d·n_flat) / |d|³ dA_flat
                    let jac = radius * radius * dot(&d, &n_flat) / (r * r * r);
                    out.push(SurfaceNode {
                        point: [center[0] + radius * u[0], center[1] + radius * u[1], center[2] + radius * u[2]],
                        weight: w * flat_area * jac,
                        normal: u,
                    });
                }
            }
            _ => {
                for (l, w) in rule.points.iter().zip(&rule.weights) {
                    out.push(SurfaceNode { point: barycentric_point(sub_tri, l), weight: w * flat_area, normal: n_flat });
                }
            }
        }
    }

    /// Quadrature nodes over the whole panel `j`.
    pub fn panel_nodes(&self, j: usize, rule: &TriangleRule) -> Vec<SurfaceNode> {
        let mut out = Vec::with_capacity(rule.points.len());
        self.sub_triangle_nodes(j, &self.flat_triangle(j), rule, &mut out);
        out
    }

    /// Flat-parameter preimage of the collocation point of panel `j`
    /// (the flat centroid).
    pub fn flat_centroid(&self, j: usize) -> [f64; 3] {
        let t = self.flat_triangle(j);
        barycentric_point(&t, &[1.0 / 3.0; 3])
    }

    /// Write the ASCII triangle-list format (`nv nt`, vertices, 0-based triangles).
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn write_file(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_ascii())?;
        Ok(())
    }

    /// Parse the ASCII triangle-list format.
    pub fn from_ascii(text: &str, shape: ShapeTag, origin: &str) -> Result<Self, MeshError> {
        let perr = |detail: String| MeshError::Parse { path: origin.to_string(), detail };
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| perr("empty file".into()))?;
        let hv: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|e| perr(format!("bad header `{header}`: {e}"))))
            .collect::<Result<_, _>>()?;
        if hv.len() != 2 {
            return Err(perr(format!("header must be `nv nt`, got `{header}`")));
        }
        let (nv, nt) = (hv[0], hv[1]);
        let mut vertices = Vec::with_capacity(nv);
        for i in 0..nv {
            let l = lines.next().ok_or_else(|| perr(format!("missing vertex line {i}")))?;
            let c: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| perr(format!("vertex {i}: {e}"))))
                .collect::<Result<_, _>>()?;
            if c.len() != 3 || c.iter().any(|x| !x.is_finite()) {
                return Err(perr(format!("vertex {i} must have three finite coordinates")));
            }
            vertices.push([c[0], c[1], c[2]]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for i in 0..nt {
            let l = lines.next().ok_or_else(|| perr(format!("missing triangle line {i}")))?;
            let c: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|e| perr(format!("triangle {i}: {e}"))))
                .collect::<Result<_, _>>()?;
            if c.len() != 3 {
                return Err(perr(format!("triangle {i} must have three indices")));
            }
            triangles.push([c[0], c[1], c[2]]);
        }
        if lines.next().is_some() {
            return Err(perr("trailing data after the declared triangles".into()));
        }
        Self::new(vertices, triangles, shape)
    }

    pub fn read_file(path: &Path, shape: ShapeTag) -> Result<Self, MeshError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_ascii(&text, shape, &path.display().to_string())
    }

    /// SHA-256 of the canonical ASCII serialization.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_ascii().as_bytes());
        format!("{:x}", h.finalize())
    }

    /// Bounding box `(min, max)` of the vertices.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for c in 0..3 {
                lo[c] = lo[c].min(v[c]);
                hi[c] = hi[c].max(v[c]);
            }
        }
        (lo, hi)
    }

    /// Vertex centroid, used as apex of the interior cone tetrahedralization.
    pub fn vertex_centroid(&self) -> [f64; 3] {
        let n = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for k in 0..3 {
                c[k] += v[k] / n;
            }
        }
        c
    }
}

fn signed_volume(vertices: &[SpacePoint], triangles: &[[usize; 3]]) -> f64 {
    triangles
        .iter()
        .map(|t| dot(&vertices[t[0]], &cross(&vertices[t[1]], &vertices[t[2]])) / 6.0)
        .sum()
}

fn validate(vertices: &[SpacePoint], triangles: &[[usize; 3]]) -> Result<(), MeshError> {
    if triangles.len() < 4 {
        return Err(MeshError::Invalid("a closed surface needs at least four triangles".into()));
    }
    let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
    for (k, t) in triangles.iter().enumerate() {
        if t.iter().any(|&i| i >= vertices.len()) {
            return Err(MeshError::Invalid(format!("triangle {k} references a missing vertex")));
        }
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            return Err(MeshError::Invalid(format!("triangle {k} is degenerate")));
        }
        for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            *directed.entry(e).or_insert(0) += 1;
        }
    }
    for (&(a, b), &n) in &directed {
        if n != 1 {
            return Err(MeshError::Invalid(format!("directed edge ({a},{b}) used {n} times (inconsistent orientation or non-manifold)")));
        }
        if !directed.contains_key(&(b, a)) {
            return Err(MeshError::Invalid(format!("edge ({a},{b}) is a boundary edge; surface is not closed")));
        }
    }
    let vol = signed_volume(vertices, triangles);
    if !(vol > 0.0) {
        return Err(MeshError::Invalid(format!("signed volume {vol} is not positive; normals must point outward")));
    }
    Ok(())
}

fn panel_geometry(vertices: &[SpacePoint], t: &[usize; 3], shape: &ShapeTag) -> Panel {
    let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
    let cr = cross(&sub(&b, &a), &sub(&c, &a));
    let flat_area = 0.5 * norm(&cr);
    let diameter = dist(&a, &b).max(dist(&b, &c)).max(dist(&c, &a));
    let flat_c = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0, (a[2] + b[2] + c[2]) / 3.0];
    match shape {
        ShapeTag::Sphere { center, radius } => {
            let ua = scale(&sub(&a, center), 1.0 / dist(&a, center));
            let ub = scale(&sub(&b, center), 1.0 / dist(&b, center));
            let uc = scale(&sub(&c, center), 1.0 / dist(&c, center));
            // Spherical excess: tan(E/2) = |a·(b×c)| / (1 + a·b + b·c + c·a).
            let num = dot(&ua, &cross(&ub, &uc)).abs();
            let den = 1.0 + dot(&ua, &ub) + dot(&ub, &uc) + dot(&uc, &ua);
            let excess = 2.0 * num.atan2(den);
            let d = sub(&flat_c, center);
            let u = scale(&d, 1.0 / norm(&d));
            Panel {
                centroid: [center[0] + radius * u[0], center[1] + radius * u[1], center[2] + radius * u[2]],
                area: radius * radius * excess,
                normal: u,
                diameter,
            }
        }
        _ => Panel { centroid: flat_c, area: flat_area, normal: scale(&cr, 1.0 / norm(&cr)), diameter },
    }
}

/// Unit icosphere of the given frequency (vertices on the unit sphere,
/// outward-oriented triangles).
fn unit_icosphere(m: usize) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let base = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let faces: [[usize; 3]; 20] = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let mut verts: Vec<[f64; 3]> = Vec::new();
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut key_of = |p: [f64; 3], verts: &mut Vec<[f64; 3]>| -> usize {
        let n = norm(&p);
        let u = scale(&p, 1.0 / n);
        let key = [(u[0] * 1e9).round() as i64, (u[1] * 1e9).round() as i64, (u[2] * 1e9).round() as i64];
        *index.entry(key).or_insert_with(|| {
            verts.push(u);
            verts.len() - 1
        })
    };
    let mut tris = Vec::with_capacity(20 * m * m);
    let mf = m as f64;
    for f in &faces {
        let (a, b, c) = (base[f[0]], base[f[1]], base[f[2]]);
        // grid[i][j] = a + (i/m)(b - a) + (j/m)(c - a), i + j <= m
        let mut grid = vec![vec![0usize; m + 1]; m + 1];
        for i in 0..=m {
            for j in 0..=(m - i) {
                let p = [
                    a[0] + (i as f64 / mf) * (b[0] - a[0]) + (j as f64 / mf) * (c[0] - a[0]),
                    a[1] + (i as f64 / mf) * (b[1] - a[1]) + (j as f64 / mf) * (c[1] - a[1]),
                    a[2] + (i as f64 / mf) * (b[2] - a[2]) + (j as f64 / mf) * (c[2] - a[2]),
                ];
                grid[i][j] = key_of(p, &mut verts);
            }
        }
        for i in 0..m {
            for j in 0..(m - i) {
                tris.push([grid[i][j], grid[i + 1][j], grid[i][j + 1]]);
                if i + j + 1 < m {
                    tris.push([grid[i + 1][j], grid[i + 1][j + 1], grid[i][j + 1]]);
                }
            }
        }
    }
    // Orient every triangle outward.
    for t in tris.iter_mut() {
        let (a, b, c) = (verts[t[0]], verts[t[1]], verts[t[2]]);
        let n = cross(&sub(&b, &a), &sub(&c, &a));
        let centroid = [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]];
        if dot(&n, &centroid) < 0.0 {
            t.swap(1, 2);
        }
    }
    (verts, tris)
}
