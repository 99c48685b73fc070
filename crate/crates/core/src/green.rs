//! The magnetic heat kernel, the Green function `G_0` of `H_0^{-1}` and its
//! magnetic normal derivative, near-diagonal principal parts, and the 1D
//! axial resolvent kernels.
//!
//! With `u = b t`, `G_0(x, y) = e^{-i(b/2) x⊥∧y⊥} I(x, y)` where
//!
//! ```text
//! I = b^{1/2} / (4π)^{3/2} ∫_0^∞ exp(-(b/4)[Δ_3²/u + coth(u) ρ²]) / (√u sinh u) du,
//! ```
//!
//! `Δ = x - y`, `ρ = |Δ⊥|`. The integral is split at `u = s` (default 1).
//! On `[0, s]` the integrand is written as `e^{-β/u} u^{-3/2} g(u)` with
//! `β = b|Δ|²/4` and `g(u) = (u/sinh u) exp(-(bρ²/4)(coth u - 1/u))`; the
//! part `∫ e^{-β/u} u^{-3/2} du` is an incomplete gamma function (via the
//! substitution `v = 1/u`) carrying the whole `1/(4π|x-y|)` singularity, and
//! the remainder `2∫ e^{-β/t²}(g(t²) - 1)/t² dt` is a smooth integral done by
//! Gauss–Legendre on dyadic panels in `t = √u`. On `[s, s + T]` the integrand
//! decays like `e^{-u}` and a graded composite Gauss–Legendre rule is used;
//! the tail beyond `s + T` is below `2 e^{-(s+T)}` relative to the scale.
//! The `y`-gradient of `I` is treated the same way with `g` replaced by
//! `(u coth u) g` resp. `g` and one more power of `1/u`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::landau::FieldConfig;
use crate::quad::GaussLegendre;
use crate::specfun;

/// A point of `R^3` as `[x_1, x_2, x_3]`; `x⊥ = (x_1, x_2)`, `x_3` is the
/// coordinate along the field.
pub type SpacePoint = [f64; 3];

/// Radius below which kernel evaluations are refused.
pub const SINGULARITY_GUARD: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GreenError {
    #[error("kernel evaluated at coincident points (|x-y| = {distance:e} < {SINGULARITY_GUARD:e})")]
    Singularity { distance: f64 },
    #[error("branch error: z = {z} coincides with the level energy {level}")]
    Branch { z: Complex64, level: f64 },
    #[error("domain error: {0}")]
    Domain(String),
}

/// Node counts and split parameters of the `G_0` quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Split point `s` of the `u` integral.
    pub split_point: f64,
    /// Gauss–Legendre nodes per dyadic panel of the `[0, s]` leg.
    pub n_inner: usize,
    /// Gauss–Legendre nodes per panel of the `[s, s + T]` leg.
    pub n_outer: usize,
    /// Length `T` of the truncated `[s, ∞)` leg.
    pub tail_cutoff: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { split_point: 1.0, n_inner: 8, n_outer: 10, tail_cutoff: 36.0 }
    }
}

impl QuadratureSpec {
    /// The same split with twice the nodes on both legs.
    pub fn doubled(&self) -> Self {
        Self { n_inner: 2 * self.n_inner, n_outer: 2 * self.n_outer, ..*self }
    }

    pub fn validate(&self) -> Result<(), GreenError> {
        if !(self.split_point > 0.0 && self.split_point <= 4.0) {
            return Err(GreenError::Domain(format!("split point must lie in (0, 4], got {}", self.split_point)));
        }
        if self.n_inner == 0 || self.n_outer == 0 {
            return Err(GreenError::Domain("node counts must be positive".into()));
        }
        if !(self.tail_cutoff >= 28.0) {
            return Err(GreenError::Domain(format!(
                "tail cutoff {} leaves a truncated tail above 1e-12",
                self.tail_cutoff
            )));
        }
        Ok(())
    }
}

/// Bernoulli numbers `B_2, B_4, ..., B_16`.
const BERNOULLI: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Smooth auxiliary functions of `u` on the inner leg, divided by `u^2`
/// where they vanish to second order:
/// `m = coth u - 1/u`, `m2 = (m - u/3)/u²`, `s2 = ln(sinh u / u)/u²`,
/// `p2 = ln(u coth u)/u²`.
#[derive(Debug, Clone, Copy)]
struct InnerNode {
    t: f64,
    w: f64,
    u: f64,
    m: f64,
    m2: f64,
    s2: f64,
    p2: f64,
}

fn inner_node(t: f64, w: f64) -> InnerNode {
    let u = t * t;
    let (m, m2, s2, p2) = if u < 0.5 {
        // Series from the Bernoulli expansions of coth, ln(sinh u/u), ln cosh u.
        let u2 = u * u;
        let mut m = 0.0;
        let mut m2 = 0.0;
        let mut s2 = 0.0;
        let mut p2 = 0.0;
        let mut fact = 1.0; // (2n)!
        let mut pow4 = 1.0; // 2^{2n}
        let mut upow = 1.0; // u^{2n-2}
        for (i, &bn) in BERNOULLI.iter().enumerate() {
            let n = i + 1;
            fact *= (2 * n - 1) as f64 * (2 * n) as f64;
            pow4 *= 4.0;
            let cn = pow4 * bn / fact; // coefficient of u^{2n-1} in m
            let s_coef = cn / (2 * n) as f64; // coefficient of u^{2n} in ln(sinh u/u)
            let p_coef = pow4 * (pow4 - 2.0) * bn / ((2 * n) as f64 * fact); // in ln(u coth u)
            m += cn * upow * u;
            if n >= 2 {
                m2 += cn * upow / u; // u^{2n-1}/u² = u^{2n-3}
            }
            s2 += s_coef * upow;
            p2 += p_coef * upow;
            upow *= u2;
        }
        (m, m2, s2, p2)
    } else {
        let m = 1.0 / u.tanh() - 1.0 / u;
        let u2 = u * u;
        let m2 = (m - u / 3.0) / u2;
        let s2 = (u.sinh() / u).ln() / u2;
        let p2 = (u / u.tanh()).ln() / u2;
        (m, m2, s2, p2)
    };
    InnerNode { t, w, u, m, m2, s2, p2 }
}

/// Outer-leg node with the `(x, y)`-independent factors folded in.
#[derive(Debug, Clone, Copy)]
struct OuterNode {
    inv_u: f64,
    coth: f64,
    /// `w / (√u sinh u)`
    e1: f64,
    /// `w / (u^{3/2} sinh u)`
    e3: f64,
}

/// Precomputed node tables for `G_0` and its gradient.
#[derive(Debug, Clone)]
pub struct GreenQuadrature {
    spec: QuadratureSpec,
    /// Dyadic panels of the `t = √u` variable, largest first.
    inner: Vec<Vec<InnerNode>>,
    outer: Vec<OuterNode>,
    t_max: f64,
}

/// Maximum number of dyadic panels on the inner leg.
const MAX_DYADIC: usize = 60;

impl GreenQuadrature {
    pub fn new(spec: QuadratureSpec) -> Result<Self, GreenError> {
        spec.validate()?;
        let gl_in = GaussLegendre::new(spec.n_inner);
        let t_max = spec.split_point.sqrt();
        let inner = (0..MAX_DYADIC)
            .map(|k| {
                let hi = t_max * 0.5_f64.powi(k as i32);
                gl_in.on_interval(0.5 * hi, hi).into_iter().map(|(t, w)| inner_node(t, w)).collect()
            })
            .collect();
        let s = spec.split_point;
        // Graded panels whose lengths grow as the e^{-u} factor shrinks.
        const OFFSETS: [f64; 9] = [0.0, 1.0, 2.5, 4.5, 7.0, 10.5, 15.0, 21.0, 28.0];
        let mut breaks: Vec<f64> = OFFSETS.iter().filter(|&&o| o < spec.tail_cutoff).map(|o| s + o).collect();
        breaks.push(s + spec.tail_cutoff);
        let gl_out = GaussLegendre::new(spec.n_outer);
        let outer = breaks
            .windows(2)
            .flat_map(|w| gl_out.on_interval(w[0], w[1]))
            .map(|(u, w)| {
                let sh = u.sinh();
                OuterNode { inv_u: 1.0 / u, coth: 1.0 / u.tanh(), e1: w / (u.sqrt() * sh), e3: w / (u.powf(1.5) * sh) }
            })
            .collect();
        Ok(Self { spec, inner, outer, t_max })
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    /// `I(x, y)` and, if `with_gradient`, the reduced gradient integrals
    /// `(J_1, J_3)` with `∂_{y_j} I = (b/2)(x_j - y_j) J_1` (`j = 1, 2`) and
    /// `∂_{y_3} I = (b/2)(x_3 - y_3) J_3`. `delta = x - y` must be nonzero.
    pub fn integrals(&self, delta: [f64; 3], b: f64, with_gradient: bool) -> KernelIntegrals {
        let rho2 = delta[0] * delta[0] + delta[1] * delta[1];
        let d2 = rho2 + delta[2] * delta[2];
        let beta = 0.25 * b * d2;
        let c0 = 0.25 * b * rho2;
        let a1 = -c0 / 3.0;
        let pref = b.sqrt() / (4.0 * PI).powf(1.5);
        let s = self.spec.split_point;

        // Incomplete-gamma singular parts.
        let xs = beta / s;
        let q_half = specfun::reg_upper_gamma(0.5, xs).unwrap_or(0.0);
        let sqrt_pi = PI.sqrt();
        let i_sing = (PI / beta).sqrt() * q_half;

        // Number of dyadic panels: stop where e^{-β/t²} is negligible or the
        // omitted sliver is below 1e-17 of the singular part.
        let sb = beta.sqrt();
        let k_beta = ((8.0 * self.t_max / sb).log2().ceil().max(1.0)) as usize;
        let j_scale = beta.powf(-1.5);
        let mut k_max = 1;
        while k_max < k_beta.min(MAX_DYADIC) {
            // Bound on the omitted sliver [0, t_k]: |(g-1)/u| <= |a| + t², |R| <= 1 + c0².
            let tk = self.t_max * 0.5_f64.powi(k_max as i32);
            let small_i = 2.0 * tk * (a1.abs() + tk * tk) <= 1e-17 * i_sing;
            let small_j = !with_gradient || 2.0 * tk * (1.0 + c0 * c0) <= 1e-17 * j_scale;
            if small_i && small_j {
                break;
            }
            k_max += 1;
        }

        let mut i_rem = 0.0;
        let mut j1_rem = 0.0;
        let mut j3_rem = 0.0;
        for panel in self.inner.iter().take(k_max) {
            for nd in panel {
                let arg = beta / (nd.t * nd.t);
                if arg > 745.0 {
                    continue;
                }
                let ex = nd.w * (-arg).exp();
                let l_over_u = -c0 * nd.m / nd.u - nd.s2 * nd.u;
                let l = l_over_u * nd.u;
                i_rem += ex * expm1_over(l, l_over_u);
                if with_gradient {
                    let mg = -c0 * nd.m2 - nd.s2;
                    let rg = mg + l_over_u * l_over_u * psi2(l);
                    let l1 = l + nd.p2 * nd.u * nd.u;
                    let l1_over_u = l_over_u + nd.p2 * nd.u;
                    let rg1 = mg + nd.p2 + l1_over_u * l1_over_u * psi2(l1);
                    j1_rem += ex * rg1;
                    j3_rem += ex * rg;
                }
            }
        }

        let mut i_far = 0.0;
        let mut j1_far = 0.0;
        let mut j3_far = 0.0;
        let ax = 0.25 * b * delta[2] * delta[2];
        for nd in &self.outer {
            let e = (-(ax * nd.inv_u) - c0 * nd.coth).exp();
            i_far += nd.e1 * e;
            if with_gradient {
                j1_far += nd.e1 * nd.coth * e;
                j3_far += nd.e3 * e;
            }
        }

        let i_val = pref * (i_sing + 2.0 * i_rem + i_far);
        let (j1, j3) = if with_gradient {
            // Γ(3/2, x) / Γ(3/2) = Q(1/2, x) + x^{1/2} e^{-x} / Γ(3/2).
            let q_3half = q_half + xs.sqrt() * (-xs).exp() / (0.5 * sqrt_pi);
            let j_sing = beta.powf(-1.5) * 0.5 * sqrt_pi * q_3half + a1 * i_sing;
            (pref * (j_sing + 2.0 * j1_rem + j1_far), pref * (j_sing + 2.0 * j3_rem + j3_far))
        } else {
            (0.0, 0.0)
        };
        KernelIntegrals { i: i_val, j1, j3, i_far: pref * i_far }
    }
}

/// `expm1(L)/u` given `L` and `L/u`.
#[inline]
fn expm1_over(l: f64, l_over_u: f64) -> f64 {
    if l.abs() < 1e-5 {
        l_over_u * (1.0 + 0.5 * l + l * l / 6.0)
    } else {
        l.exp_m1() / l * l_over_u
    }
}

/// `(e^L - 1 - L)/L²` evaluated without cancellation.
#[inline]
fn psi2(l: f64) -> f64 {
    if l.abs() < 0.1 {
        let mut term = 0.5;
        let mut sum = 0.5;
        for k in 3..14 {
            term *= l / k as f64;
            sum += term;
        }
        sum
    } else {
        (l.exp_m1() - l) / (l * l)
    }
}

/// Real integrals entering `G_0` and its gradient (see `GreenQuadrature::integrals`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelIntegrals {
    pub i: f64,
    pub j1: f64,
    pub j3: f64,
    /// Contribution of the `[s, ∞)` leg to `I`.
    pub i_far: f64,
}

fn distance(x: &SpacePoint, y: &SpacePoint) -> f64 {
    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
}

fn guard(x: &SpacePoint, y: &SpacePoint) -> Result<[f64; 3], GreenError> {
    let d = distance(x, y);
    if !(d >= SINGULARITY_GUARD) {
        return Err(GreenError::Singularity { distance: d });
    }
    Ok([x[0] - y[0], x[1] - y[1], x[2] - y[2]])
}

/// Gauge phase `e^{-i(b/2) x⊥∧y⊥}`.
#[inline]
pub fn gauge_phase(field: &FieldConfig, x: &SpacePoint, y: &SpacePoint) -> Complex64 {
    Complex64::from_polar(1.0, -0.5 * field.b * field.wedge([x[0], x[1]], [y[0], y[1]]))
}

/// `ln sinh v` for `v > 0`, safe for large `v`.
fn ln_sinh(v: f64) -> f64 {
    if v > 20.0 {
        v + (-(-2.0 * v).exp()).ln_1p() - std::f64::consts::LN_2
    } else {
        v.sinh().ln()
    }
}

/// Magnetic heat kernel
/// `(4πt)^{-1/2} (b / (4π sinh bt)) exp(-Δ_3²/4t - (b/4) coth(bt) ρ² - i(b/2) x⊥∧y⊥)`,
/// evaluated in the log domain.
pub fn heat_kernel(t: f64, x: &SpacePoint, y: &SpacePoint, field: &FieldConfig) -> Result<Complex64, GreenError> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(GreenError::Domain(format!("time must be positive, got {t}")));
    }
    let b = field.b;
    let bt = b * t;
    let rho2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
    let d3 = x[2] - y[2];
    let coth = 1.0 / bt.tanh();
    let log_mod = -0.5 * (4.0 * PI * t).ln() + b.ln() - (4.0 * PI).ln() - ln_sinh(bt) - d3 * d3 / (4.0 * t) - 0.25 * b * coth * rho2;
    Ok(gauge_phase(field, x, y) * log_mod.exp())
}

/// Green function `G_0(x, y)` of `H_0^{-1}`.
pub fn green_function(
    x: &SpacePoint,
    y: &SpacePoint,
    field: &FieldConfig,
    quad: &GreenQuadrature,
) -> Result<Complex64, GreenError> {
    let delta = guard(x, y)?;
    let k = quad.integrals(delta, field.b, false);
    Ok(gauge_phase(field, x, y) * k.i)
}

/// Value and `y`-gradient data of `G_0` at one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenPair {
    /// `G_0(x, y)`.
    pub value: Complex64,
    /// `e^{-i(b/2)x⊥∧y⊥}`.
    pub phase: Complex64,
    /// `I(x, y)`.
    pub i: f64,
    /// `∇_y I(x, y)`.
    pub grad_y_i: [f64; 3],
}

/// `G_0` together with `∇_y I`.
pub fn green_pair(x: &SpacePoint, y: &SpacePoint, field: &FieldConfig, quad: &GreenQuadrature) -> Result<GreenPair, GreenError> {
    let delta = guard(x, y)?;
    let k = quad.integrals(delta, field.b, true);
    let h = 0.5 * field.b;
    let phase = gauge_phase(field, x, y);
    Ok(GreenPair {
        value: phase * k.i,
        phase,
        i: k.i,
        grad_y_i: [h * delta[0] * k.j1, h * delta[1] * k.j1, h * delta[2] * k.j3],
    })
}

/// Double-layer kernel `ν·(∇_y + iA(y)) G_0(x, y)`.
///
/// This is the normal derivative that appears in Green's representation
/// formula for solutions of `(∇ - iA)² u = 0`: since `G_0(x, ·)` is the
/// complex conjugate of `G_0(·, x)`, the covariant derivative `∇ - iA` of
/// `G_0(·, x)` becomes `∇ + iA` on `G_0(x, ·)`. Differentiating the gauge
/// phase gives `-iA(x)`, so the kernel equals
/// `e^{-i(b/2)x⊥∧y⊥} ν·∇_y I + i ν·A(y - x) G_0(x, y)`; its principal part
/// and jump behaviour coincide with those of `ν·(∇_y - iA(y)) G_0`, which
/// differs by the smooth term `-i ν·(A(x) + A(y)) G_0` instead.
pub fn green_normal_derivative(
    x: &SpacePoint,
    y: &SpacePoint,
    nu: &[f64; 3],
    field: &FieldConfig,
    quad: &GreenQuadrature,
) -> Result<Complex64, GreenError> {
    let nn = (nu[0] * nu[0] + nu[1] * nu[1] + nu[2] * nu[2]).sqrt();
    if (nn - 1.0).abs() > 1e-8 {
        return Err(GreenError::Domain(format!("normal must have unit length, got |ν| = {nn}")));
    }
    let p = green_pair(x, y, field, quad)?;
    Ok(double_layer_kernel(&p, x, y, nu, field))
}

/// Assemble `ν·(∇_y + iA(y)) G_0` from precomputed pair data.
#[inline]
pub fn double_layer_kernel(p: &GreenPair, x: &SpacePoint, y: &SpacePoint, nu: &[f64; 3], field: &FieldConfig) -> Complex64 {
    let dn = nu[0] * p.grad_y_i[0] + nu[1] * p.grad_y_i[1] + nu[2] * p.grad_y_i[2];
    // A(y - x) = (b/2)(-(y_2 - x_2), y_1 - x_1, 0)
    let h = 0.5 * field.b;
    let ad = nu[0] * (-h * (y[1] - x[1])) + nu[1] * (h * (y[0] - x[0]));
    p.phase * dn + Complex64::new(0.0, ad) * p.value
}

/// Principal part `e^{-i(b/2)x⊥∧y⊥} / (4π|x - y|)`.
pub fn near_diagonal_principal(x: &SpacePoint, y: &SpacePoint, field: &FieldConfig) -> Result<Complex64, GreenError> {
    let delta = guard(x, y)?;
    let d = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
    Ok(gauge_phase(field, x, y) / (4.0 * PI * d))
}

/// Root `κ = √(z - Λ)` on the branch `Im κ > 0` (outgoing boundary value
/// `κ > 0` when `z - Λ` is real positive).
pub fn axial_momentum(level_energy: f64, z: Complex64) -> Result<Complex64, GreenError> {
    let w = z - level_energy;
    if w.norm() < 1e-300 {
        return Err(GreenError::Branch { z, level: level_energy });
    }
    let mut kappa = w.sqrt();
    if kappa.im < 0.0 {
        kappa = -kappa;
    }
    if kappa.im == 0.0 && kappa.re < 0.0 {
        kappa = -kappa;
    }
    Ok(kappa)
}

/// Kernel of `(-∂_3² + Λ - z)^{-1}` on the line: `i e^{iκ|x_3 - y_3|} / (2κ)`
/// with `κ = √(z - Λ)`, `Im κ > 0`. At `z = 0` this is
/// `e^{-√Λ |x_3 - y_3|} / (2√Λ)`.
pub fn axial_resolvent_kernel(level_energy: f64, z: Complex64, x3: f64, y3: f64) -> Result<Complex64, GreenError> {
    if !(level_energy > 0.0) {
        return Err(GreenError::Domain(format!("level energy must be positive, got {level_energy}")));
    }
    let kappa = axial_momentum(level_energy, z)?;
    let d = (x3 - y3).abs();
    Ok(Complex64::i() * (Complex64::i() * kappa * d).exp() / (2.0 * kappa))
}

/// Kernel `½ e^{z|x_3 - y_3|}`.
pub fn r_kernel(z: Complex64, x3: f64, y3: f64) -> Complex64 {
    0.5 * (z * (x3 - y3).abs()).exp()
}
