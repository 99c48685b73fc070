//! Quadrature building blocks: Gauss–Legendre rules, composite interval
//! rules and symmetric triangle rules.

use std::f64::consts::PI;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes and weights of the `n`-point rule, computed by Newton iteration
    /// on the Legendre three-term recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton.
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// The rule mapped to `[a, b]` as `(node, weight)` pairs.
    pub fn on_interval(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| (mid + half * x, half * w))
            .collect()
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.on_interval(a, b).into_iter().map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Composite Gauss–Legendre rule over the panels delimited by `breaks`
/// (which must be increasing), with `n` nodes per panel.
pub fn composite_rule(breaks: &[f64], n: usize) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(n);
    breaks
        .windows(2)
        .flat_map(|w| gl.on_interval(w[0], w[1]))
        .collect()
}

/// A quadrature rule on the reference triangle with vertices
/// `(0,0), (1,0), (0,1)`, given in barycentric coordinates; weights sum to 1
/// (multiply by the triangle area).
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// One-point centroid rule (degree 1).
    pub fn centroid() -> Self {
        Self { points: vec![[1.0 / 3.0; 3]], weights: vec![1.0] }
    }

    /// Three-point interior rule (degree 2).
    pub fn degree2() -> Self {
        let a = 2.0 / 3.0;
        let b = 1.0 / 6.0;
        Self {
            points: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
        }
    }

    /// Seven-point Radon rule (degree 5).
    pub fn degree5() -> Self {
        let s15 = 15.0_f64.sqrt();
        let a1 = (6.0 - s15) / 21.0;
        let b1 = (9.0 + 2.0 * s15) / 21.0;
        let a2 = (6.0 + s15) / 21.0;
        let b2 = (9.0 - 2.0 * s15) / 21.0;
        let w0 = 9.0 / 40.0;
        let w1 = (155.0 - s15) / 1200.0;
        let w2 = (155.0 + s15) / 1200.0;
        Self {
            points: vec![
                [1.0 / 3.0; 3],
                [b1, a1, a1],
                [a1, b1, a1],
                [a1, a1, b1],
                [b2, a2, a2],
                [a2, b2, a2],
                [a2, a2, b2],
            ],
            weights: vec![w0, w1, w1, w1, w2, w2, w2],
        }
    }

    /// Collapsed (Duffy) tensor Gauss rule of order `n` per direction; exact
    /// for smooth integrands to high order and usable for integrands with a
    /// point singularity at the first vertex (barycentric `[1,0,0]`).
    pub fn duffy(n: usize) -> Self {
        let gl = GaussLegendre::new(n);
        let rule = gl.on_interval(0.0, 1.0);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for &(s, ws) in &rule {
            for &(t, wt) in &rule {
                // Map unit square to triangle with the collapsed edge at vertex 0:
                // distance from vertex 0 scales with s.
                let l1 = s * (1.0 - t);
                let l2 = s * t;
                points.push([1.0 - l1 - l2, l1, l2]);
                // Jacobian of (s,t) -> (l1,l2) is s; reference area is 1/2.
                weights.push(2.0 * ws * wt * s);
            }
        }
        Self { points, weights }
    }
}

/// Evaluate the point with barycentric coordinates `l` on the triangle `tri`.
pub fn barycentric_point(tri: &[[f64; 3]; 3], l: &[f64; 3]) -> [f64; 3] {
    let mut p = [0.0; 3];
    for c in 0..3 {
        p[c] = l[0] * tri[0][c] + l[1] * tri[1][c] + l[2] * tri[2][c];
    }
    p
}
