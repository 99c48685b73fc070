//! Acceptance harness: one PASS/FAIL line per criterion, with the measured
//! values, limits and wall time. INFO lines carry context that is not part
//! of a criterion. Exits nonzero if any criterion fails.

use magres::bem::{
    assemble_layer_operators, eval_layer_potential, jump_relation_check, BemQuadrature, BoundaryOperatorMatrix,
    JumpCheckOptions, LayerKind, RobinParameter,
};
use magres::bs::{
    assemble_a_q, sign_check, t_q_matrix, AxialProfile, BirmanSchwingerFamily, BoundaryCondition, ObstacleProblem,
    PerturbationForm, TrialSpace,
};
use magres::charval::{
    constant_family, counting_table, counting_transfer_check, scan_characteristic_values, synthetic_family,
    AnnulusDomain, HolomorphicFamily, PolarGrid,
};
use magres::green::{green_function, GreenQuadrature, QuadratureSpec};
use magres::landau::{
    counting_function, counting_law_ratio, disk_oracle_eigenvalues, projection_kernel, toeplitz_matrix,
    CountingFunction, FieldConfig, LandauLevelIndex, Region,
};
use magres::linalg::CMatrix;
use magres::mesh::SurfaceMesh;
use magres::quad::GaussLegendre;
use magres::specfun::{laguerre, reg_lower_gamma};
use nalgebra::DVector;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

/// Outcome of one criterion: sub-check lines plus an overall verdict.
struct Criterion {
    id: usize,
    title: &'static str,
    lines: Vec<String>,
    passed: bool,
    limit_s: f64,
    started: Instant,
}

impl Criterion {
    fn new(id: usize, title: &'static str, limit_s: f64) -> Self {
        Self { id, title, lines: Vec::new(), passed: true, limit_s, started: Instant::now() }
    }

    fn check(&mut self, ok: bool, text: String) {
        self.passed &= ok;
        self.lines.push(format!("    [{}] {text}", if ok { "ok" } else { "FAIL" }));
    }

    fn info(&mut self, text: String) {
        self.lines.push(format!("    [INFO] {text}"));
    }

    fn finish(mut self) -> bool {
        let t = self.started.elapsed().as_secs_f64();
        if self.limit_s.is_finite() {
            self.check(t < self.limit_s, format!("runtime {t:.1} s < {} s", self.limit_s));
        }
        println!("criterion {:2}: {} — {} ({t:.1} s)", self.id, if self.passed { "PASS" } else { "FAIL" }, self.title);
        for l in &self.lines {
            println!("{l}");
        }
        self.passed
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Exact `L_q(t) = Σ C(q,k) (−t)^k / k!` in rational arithmetic.
fn laguerre_exact(q: usize, t: f64) -> f64 {
    let t = BigRational::from_float(t).expect("finite argument");
    let (mut sum, mut binom, mut fact, mut pow) = (BigRational::zero(), BigInt::one(), BigInt::one(), BigRational::one());
    for k in 0..=q {
        if k > 0 {
            binom = binom * BigInt::from(q + 1 - k) / BigInt::from(k);
            fact *= BigInt::from(k);
            pow = -pow * &t;
        }
        sum += &pow * BigRational::from_integer(binom.clone()) / BigRational::from_integer(fact.clone());
    }
    sum.to_f64().expect("representable")
}

/// `γ(k+1, 1)/k! = e^{−1} Σ_{j>k} 1/j!`, summed without cancellation.
fn disk_oracle_at_one(k: usize) -> f64 {
    let mut term = 1.0f64;
    for j in 1..=k + 1 {
        term /= j as f64;
    }
    let mut sum = 0.0f64;
    let mut j = k + 1;
    while term > 1e-40 * sum.max(f64::MIN_POSITIVE) {
        sum += term;
        j += 1;
        term /= j as f64;
    }
    sum * (-1.0f64).exp()
}

fn polar_rule(center: [f64; 2], r: f64, n_r: usize, n_th: usize) -> Vec<([f64; 2], f64)> {
    let dth = 2.0 * PI / n_th as f64;
    let mut out = Vec::new();
    for (rr, wr) in GaussLegendre::new(n_r).on_interval(0.0, r) {
        for i in 0..n_th {
            let th = (i as f64 + 0.5) * dth;
            out.push(([center[0] + rr * th.cos(), center[1] + rr * th.sin()], wr * rr * dth));
        }
    }
    out
}

fn criterion_1() -> bool {
    // The time budget applies to the library evaluations, not the exact oracle.
    let mut cr = Criterion::new(1, "special functions", f64::INFINITY);
    let mut worst = 0.0f64;
    let mut impl_time = 0.0;
    for q in 0..=50 {
        for i in 0..=100 {
            let t = 0.5 * i as f64;
            let exact = laguerre_exact(q, t);
            let t0 = Instant::now();
            let got = laguerre(q, t).expect("in domain");
            impl_time += t0.elapsed().as_secs_f64();
            worst = worst.max((got - exact).abs() / exact.abs().max(f64::MIN_POSITIVE));
        }
    }
    cr.check(worst <= 1e-10, format!("Laguerre recurrence vs exact expansion, q ≤ 50, t ≤ 50: max rel err {worst:.2e} ≤ 1e-10"));
    let p = reg_lower_gamma(1.0, 1.0).expect("in domain");
    let err = (p + (-1.0f64).exp_m1()).abs();
    cr.check(err <= 1e-12, format!("P(1,1) = 1 − e⁻¹: error {err:.2e} ≤ 1e-12"));
    cr.check(impl_time < 1.0, format!("runtime of the library evaluations {impl_time:.3} s < 1 s"));
    cr.finish()
}

fn criterion_2() -> bool {
    let mut cr = Criterion::new(2, "Landau projection", 30.0);
    let mut worst_diag = 0.0f64;
    for &b in &[0.3, 1.0, 2.5] {
        let f = FieldConfig::with_center(b, [0.4, -0.7]).unwrap();
        for q in 0..8 {
            for x in [[0.0, 0.0], [1.3, -0.2], [-4.0, 2.5]] {
                let v = projection_kernel(LandauLevelIndex(q), &f, x, x);
                worst_diag = worst_diag.max((v - b / (2.0 * PI)).norm() / (b / (2.0 * PI)));
            }
        }
    }
    cr.check(worst_diag <= 1e-14, format!("diagonal = b/2π: max rel deviation {worst_diag:.1e}"));
    let f = FieldConfig::new(1.0).unwrap();
    let (x, y) = ([0.3, -0.2], [-0.5, 0.4]);
    let rule = polar_rule([-0.1, 0.1], 14.0, 160, 160);
    let mut worst = 0.0f64;
    for q in 0..4 {
        let lq = LandauLevelIndex(q);
        let acc: Complex64 = rule.iter().map(|(z, w)| projection_kernel(lq, &f, x, *z) * projection_kernel(lq, &f, *z, y) * *w).sum();
        let exact = projection_kernel(lq, &f, x, y);
        worst = worst.max((acc - exact).norm() / exact.norm());
    }
    cr.check(worst <= 1e-6, format!("idempotency ∫P(x,z)P(z,y)dz = P(x,y), q ≤ 3: max rel defect {worst:.2e} ≤ 1e-6"));
    cr.finish()
}

fn criterion_3() -> bool {
    let mut cr = Criterion::new(3, "disk Toeplitz oracle and counting trend", 10.0);
    let f = FieldConfig::new(2.0).unwrap();
    let op = toeplitz_matrix(LandauLevelIndex(0), &f, &Region::Disk { center: [0.0, 0.0], radius: 1.0 }, 40).unwrap();
    let eig = op.eigenvalues();
    let err = (0..=20).map(|k| (eig[k] - disk_oracle_at_one(k)).abs()).fold(0.0, f64::max);
    cr.check(err <= 1e-8, format!("eigenvalues vs γ(k+1,1)/k!, k ≤ 20: max abs err {err:.2e} ≤ 1e-8"));
    let cf = CountingFunction::new(disk_oracle_eigenvalues(1.0, 200).unwrap(), "disk oracle").unwrap();
    // Counts frozen from an independent 50-digit evaluation.
    for (r, n) in [(1e-10, 12usize), (1e-20, 20), (1e-40, 34)] {
        let got = counting_function(&cf, r);
        cr.check(got == n, format!("n({r:e}) = {got} (high-precision oracle {n})"));
    }
    let ratios: Vec<f64> = [1e-10, 1e-20, 1e-40].iter().map(|&r| counting_law_ratio(&cf, r).unwrap()).collect();
    let monotone = ratios.windows(2).all(|w| (w[1] - 1.0).abs() < (w[0] - 1.0).abs());
    cr.check(
        monotone,
        format!(
            "counting-law ratio at r = 1e-10, 1e-20, 1e-40: {:.4}, {:.4}, {:.4}; |ratio − 1| decreasing: {monotone}",
            ratios[0], ratios[1], ratios[2]
        ),
    );
    let deep: Vec<String> =
        [1e-80, 1e-160, 1e-300].iter().map(|&r| format!("{r:e}: {:.4}", counting_law_ratio(&cf, r).unwrap())).collect();
    cr.info(format!("the ratio peaks near 1e-40 and then descends slowly: {}", deep.join(", ")));
    cr.finish()
}

fn criterion_4() -> bool {
    let mut cr = Criterion::new(4, "Green kernel", 60.0);
    let quad = GreenQuadrature::new(QuadratureSpec::default()).unwrap();
    let quad2 = GreenQuadrature::new(QuadratureSpec::default().doubled()).unwrap();
    let x = [0.2, -0.1, 0.3];
    let at = |d: [f64; 3], s: f64| [x[0] + s * d[0], x[1] + s * d[1], x[2] + s * d[2]];
    let dir = {
        let v = [0.6f64, -0.3, 0.74];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [v[0] / n, v[1] / n, v[2] / n]
    };
    let weak = FieldConfig::new(1e-12).unwrap();
    let mut worst = 0.0f64;
    for r in [0.05, 0.5, 1.0] {
        let g = green_function(&x, &at(dir, r), &weak, &quad).unwrap();
        let newton = 1.0 / (4.0 * PI * r);
        worst = worst.max((g - newton).norm() / newton);
    }
    cr.check(worst <= 1e-6, format!("b = 1e-12, |x−y| ∈ {{0.05, 0.5, 1}}: max rel deviation from 1/(4π|x−y|) {worst:.2e} ≤ 1e-6"));
    let b8 = FieldConfig::new(1e-8).unwrap();
    let g8 = green_function(&x, &at(dir, 1.0), &b8, &quad).unwrap();
    cr.info(format!(
        "at b = 1e-8, |x−y| = 1 the deviation is {:.2e}: the leading weak-field correction is −0.4277·√b·|x−y| (relative)",
        (g8 * 4.0 * PI - 1.0).norm()
    ));
    let strong = FieldConfig::new(1.0).unwrap();
    let g = green_function(&x, &at(dir, 1e-3), &strong, &quad).unwrap();
    let s = 4.0 * PI * 1e-3 * g.norm();
    cr.check((0.95..=1.05).contains(&s), format!("b = 1, |x−y| = 1e-3: 4π|x−y||G₀| = {s:.6} ∈ [0.95, 1.05]"));
    let mut worst = 0.0f64;
    for &bb in &[1e-8, 1.0, 4.0] {
        let fb = FieldConfig::with_center(bb, [0.1, 0.2]).unwrap();
        for r in [1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 4.0] {
            let y = at(dir, r);
            let a = green_function(&x, &y, &fb, &quad).unwrap();
            let d = green_function(&x, &y, &fb, &quad2).unwrap();
            worst = worst.max((a - d).norm() / d.norm());
        }
    }
    cr.check(worst < 1e-8, format!("quadrature doubling: max rel change {worst:.2e} < 1e-8"));
    cr.finish()
}

fn ones(n: usize) -> DVector<Complex64> {
    DVector::from_element(n, c(1.0, 0.0))
}

fn criterion_5() -> bool {
    let mut cr = Criterion::new(5, "BEM classical oracles (unit sphere, 2000 panels, b = 1e-8)", 300.0);
    let field = FieldConfig::new(1e-8).unwrap();
    let quad = BemQuadrature::default();
    let mesh = SurfaceMesh::icosphere([0.0; 3], 1.0, 10).unwrap();
    let n = mesh.n_panels();
    cr.info(format!("{n} panels"));
    let (s, d) = assemble_layer_operators(&mesh, &field, &quad).unwrap();
    let s1 = (&s.matrix * ones(n)).iter().map(|z| (z - 1.0).norm()).fold(0.0, f64::max);
    cr.check(s1 <= 2e-3, format!("single layer, constant density: max |S1 − 1| = {s1:.2e} ≤ 2e-3"));
    let d1 = (&d.matrix * ones(n)).iter().map(|z| (z + 0.5).norm()).fold(0.0, f64::max);
    cr.check(d1 <= 5e-3, format!("double layer on the surface: max |D1 + ½| = {d1:.2e} ≤ 5e-3"));
    let dens = vec![c(1.0, 0.0); n];
    let mut inside = 0.0f64;
    for p in [[0.0, 0.0, 0.0], [0.1, 0.2, 0.3], [-0.5, 0.3, -0.2]] {
        let v = eval_layer_potential(&mesh, &dens, LayerKind::Double, &p, &field, &quad).unwrap();
        inside = inside.max((v + 1.0).norm());
    }
    cr.check(inside <= 5e-3, format!("double layer inside: max |𝒟1 + 1| = {inside:.2e} ≤ 5e-3"));
    let mut outside = 0.0f64;
    for p in [[1.5, 0.2, 0.3], [0.0, 0.0, 2.5], [-3.0, 1.0, 0.5]] {
        let v = eval_layer_potential(&mesh, &dens, LayerKind::Double, &p, &field, &quad).unwrap();
        outside = outside.max(v.norm());
    }
    cr.check(outside <= 5e-3, format!("double layer outside: max |𝒟1| = {outside:.2e} ≤ 5e-3"));
    let smooth = |m: &SurfaceMesh| -> Vec<Complex64> {
        m.panels.iter().map(|p| c(1.0 + p.centroid[2] + 0.5 * p.centroid[0] * p.centroid[1], 0.3 * p.centroid[0])).collect()
    };
    let coarse = SurfaceMesh::icosphere([0.0; 3], 1.0, 5).unwrap();
    let opts = JumpCheckOptions::default();
    let jc = jump_relation_check(&coarse, &smooth(&coarse), &field, &opts).unwrap().max_double();
    let jf = jump_relation_check(&mesh, &smooth(&mesh), &field, &opts).unwrap().max_double();
    cr.check(jf <= 5e-2 && jc <= 5e-2, format!("jump residuals at offset 0.05·panel diameter: {jc:.2e} (500 panels), {jf:.2e} (2000 panels) ≤ 5e-2"));
    cr.check(jf < jc, "jump residual decreases under refinement".into());
    cr.finish()
}

struct Operators {
    mesh: SurfaceMesh,
    field: FieldConfig,
    s: BoundaryOperatorMatrix,
    d: BoundaryOperatorMatrix,
}

impl Operators {
    fn new(radius: f64, refinement: usize, b: f64) -> Self {
        let mesh = SurfaceMesh::icosphere([0.0; 3], radius, refinement).unwrap();
        let field = FieldConfig::new(b).unwrap();
        let (s, d) = assemble_layer_operators(&mesh, &field, &BemQuadrature::default()).unwrap();
        Self { mesh, field, s, d }
    }

    fn form(&self, bc: BoundaryCondition) -> PerturbationForm {
        let p = ObstacleProblem::new(self.mesh.clone(), bc, self.field).unwrap();
        PerturbationForm::from_operators(p, self.s.clone(), self.d.clone()).unwrap()
    }

    fn robin(&self, gamma: f64) -> BoundaryCondition {
        BoundaryCondition::Robin(RobinParameter::constant(self.mesh.n_panels(), gamma).unwrap())
    }
}

fn criterion_6(ops: &Operators) -> bool {
    let mut cr = Criterion::new(6, "sign-definiteness of the perturbation form (30-dimensional trial space)", 300.0);
    let trial = |f: &PerturbationForm| TrialSpace::new(AxialProfile::for_obstacle(&f.problem), 2, 10).unwrap();
    let dir = ops.form(BoundaryCondition::Dirichlet);
    let t = trial(&dir);
    cr.info(format!("trial space dimension {}", t.len()));
    let r = sign_check(&dir, &t).unwrap();
    cr.check(
        r.min_eigenvalue >= -1e-8 * r.scale,
        format!("Dirichlet: min eigenvalue {:.2e} ≥ −1e-8·norm (norm {:.3e})", r.min_eigenvalue, r.scale),
    );
    for (label, gamma) in [("Neumann (γ = 0)", 0.0), ("Robin γ = +1", 1.0)] {
        let f = ops.form(ops.robin(gamma));
        let r = sign_check(&f, &trial(&f)).unwrap();
        cr.check(
            r.max_eigenvalue <= 1e-8 * r.scale,
            format!("{label}: max eigenvalue {:.2e} ≤ +1e-8·norm (norm {:.3e})", r.max_eigenvalue, r.scale),
        );
    }
    let f = ops.form(ops.robin(-1.0));
    let r = sign_check(&f, &trial(&f)).unwrap();
    cr.info(format!(
        "Robin γ = −1 (trace ∂_ν + γ with an attractive wall) is indefinite: eigenvalues in [{:.2e}, {:.2e}]",
        r.min_eigenvalue, r.max_eigenvalue
    ));
    cr.finish()
}

fn criterion_7(ops: &Operators, radius: f64) -> bool {
    let mut cr = Criterion::new(7, "T_q consistency", 600.0);
    let form = ops.form(BoundaryCondition::Dirichlet);
    let trial = TrialSpace::new(AxialProfile::for_obstacle(&form.problem), 4, 6).unwrap();
    let a0 = assemble_a_q(&form, 0, c(0.0, 0.0), &trial, 4).unwrap().matrix;
    let t6 = t_q_matrix(&form, 0, 6).unwrap().matrix;
    let mut emb = CMatrix::zeros(trial.len(), trial.len());
    for (a, &(ja, ka)) in trial.entries.iter().enumerate() {
        for (bb, &(jb, kb)) in trial.entries.iter().enumerate() {
            if ja == 0 && jb == 0 {
                emb[(a, bb)] = t6[(ka, kb)];
            }
        }
    }
    let err = (&a0 - &emb).iter().map(|z| z.norm()).fold(0.0, f64::max);
    cr.check(err <= 1e-8, format!("A_0(0) vs T_0 embedding: max entry difference {err:.2e} ≤ 1e-8"));
    let tq = t_q_matrix(&form, 0, 24).unwrap();
    let top = tq.eigenvalues[0];
    let min = *tq.eigenvalues.last().unwrap();
    cr.check(min >= -1e-8 * top, format!("eigenvalues nonnegative: min {min:.2e}, top {top:.3e}"));
    let b = ops.field.b;
    let oracle = disk_oracle_eigenvalues(0.5 * b * radius * radius, 24).unwrap();
    let ratios: Vec<f64> = (5..=20).map(|k| tq.eigenvalues[k].ln() / oracle[k].ln()).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(*r), h.max(*r)));
    cr.check(
        lo >= 0.5 && hi <= 2.0,
        format!("ln λ_k / ln λ_k(disk of the shadow radius {radius}), k = 5..20: range [{lo:.3}, {hi:.3}] ⊂ [0.5, 2]"),
    );
    let inner = disk_oracle_eigenvalues(0.25 * b * radius * radius, 24).unwrap();
    let r_in: Vec<f64> = [5usize, 10, 20].iter().map(|&k| tq.eigenvalues[k].ln() / inner[k].ln()).collect();
    cr.info(format!("against the disk of radius R/√2 the ratios at k = 5, 10, 20 are {:.3}, {:.3}, {:.3}", r_in[0], r_in[1], r_in[2]));
    cr.finish()
}

/// Characteristic values of `A(z) = A0 + zA1 + z²A2` from the Schur form of
/// the companion linearization of `(−A2 z² + (I − A1) z − A0) x = 0`.
fn quadratic_oracle(family: &HolomorphicFamily) -> Vec<Complex64> {
    let n = family.dim;
    let f0 = family.eval(c(0.0, 0.0)).unwrap();
    let f1 = family.eval(c(1.0, 0.0)).unwrap();
    let fm = family.eval(c(-1.0, 0.0)).unwrap();
    let a2 = (&f1 + &fm - &f0 * c(2.0, 0.0)) * c(0.5, 0.0);
    let a1 = (&f1 - &fm) * c(0.5, 0.0);
    let a2_inv = a2.try_inverse().expect("invertible leading coefficient");
    let id = CMatrix::identity(n, n);
    let mut m = CMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, n), (n, n)).copy_from(&id);
    m.view_mut((n, 0), (n, n)).copy_from(&(-(&a2_inv * &f0)));
    m.view_mut((n, n), (n, n)).copy_from(&(&a2_inv * (id - a1)));
    m.schur().eigenvalues().expect("triangular Schur form").iter().copied().collect()
}

fn criterion_8() -> bool {
    let mut cr = Criterion::new(8, "characteristic-value self-tests", 120.0);
    let spectrum: Vec<f64> = (1..=10).map(|j| 2f64.powi(-j)).collect();
    let grid = PolarGrid::new(0.5 * spectrum[9], 0.9, 80, 48).unwrap();
    let (mut max_defect, mut recalled, mut planted, mut min_re, mut max_loc_err) = (0.0f64, 0usize, 0usize, f64::INFINITY, 0.0f64);
    for seed in [1u64, 7, 42] {
        let fam = synthetic_family(&spectrum, 1e-3, seed).unwrap();
        let vals = scan_characteristic_values(&fam, &grid, 0.5).unwrap();
        let exact: Vec<Complex64> = quadratic_oracle(&fam).into_iter().filter(|w| w.norm() > grid.r_min && w.norm() < grid.r_max).collect();
        planted += exact.len();
        for w in &exact {
            if let Some(v) = vals.iter().min_by(|a, b| (a.location - w).norm().total_cmp(&(b.location - w).norm())) {
                let e = (v.location - w).norm();
                max_loc_err = max_loc_err.max(e);
                if e < 1e-8 {
                    recalled += 1;
                }
            }
        }
        for v in &vals {
            max_defect = max_defect.max(v.integer_defect);
            min_re = min_re.min(v.location.re);
        }
    }
    cr.check(max_defect < 1e-6, format!("planted families: max multiplicity integer defect {max_defect:.2e} < 1e-6"));
    cr.check(
        recalled == planted && planted == 30,
        format!("recall {recalled}/{planted} against companion-matrix roots (max location error {max_loc_err:.1e})"),
    );
    cr.check(min_re >= -1e-8, format!("sign rule for A(0) ≥ 0: min Re z = {min_re:.3e} ≥ −1e-8"));
    let mut worst_diff = 0i64;
    // Counting radii chosen off the planted spectra: a value on a circle is
    // counted by n(r) but not by the open annulus.
    let radii: Vec<f64> = (0..=12).map(|i| 0.83 * 0.6f64.powi(i)).collect();
    for (i, seed) in [3u64, 5].iter().enumerate() {
        let spec: Vec<f64> = [0.6, 0.3, 0.3, 0.12, 0.05, 0.04, 0.011].iter().map(|x| x * (1.0 - 0.1 * i as f64)).collect();
        let a0 = CountingFunction::new(spec.clone(), "diagonal").unwrap();
        let fam = synthetic_family(&spec, 0.0, *seed).unwrap();
        let g = PolarGrid::new(0.005, 0.9, 60, 32).unwrap();
        let (_, t) = counting_transfer_check(&fam, &a0, &g, 0.5, &radii, 0).unwrap();
        worst_diff = worst_diff.max(t.max_abs_difference);
        let d = CMatrix::from_diagonal(&DVector::from_iterator(spec.len(), spec.iter().map(|x| c(*x, 0.0))));
        let cf = constant_family(d, AnnulusDomain::new(0.0, 2.0).unwrap());
        let vals = scan_characteristic_values(&cf, &g, 0.5).unwrap();
        worst_diff = worst_diff.max(counting_table(&vals, &a0, &radii, g.r_max, 0).max_abs_difference);
    }
    cr.check(worst_diff == 0, format!("counting transfer on diagonal families: max |#values − n(r, A(0))| = {worst_diff}"));
    cr.finish()
}

fn criterion_9() -> bool {
    let mut cr = Criterion::new(9, "sector localization near Λ₀ (sphere R = 1.5, b = 1)", 1800.0);
    let ops = Operators::new(1.5, 6, 1.0);
    let (k_lo, k_hi) = (0.05, 0.2);
    let tan = 0.3f64.tan();
    for (label, bc) in [("Dirichlet", BoundaryCondition::Dirichlet), ("Neumann", ops.robin(0.0))] {
        let form = ops.form(bc);
        let trial = TrialSpace::new(AxialProfile::for_obstacle(&form.problem), 12, 8).unwrap();
        let fam = BirmanSchwingerFamily::new(&form, 0, &trial, 12).unwrap();
        let hf = fam.holomorphic_family(0.5);
        let grid = PolarGrid::new(0.5 * k_lo, 1.25 * k_hi, 30, 24).unwrap();
        let vals = scan_characteristic_values(&hf, &grid, 0.5).unwrap();
        let ks: Vec<Complex64> = vals.iter().map(|v| fam.momentum(v.location)).filter(|k| k.norm() >= k_lo && k.norm() <= k_hi).collect();
        let shown: Vec<String> = ks.iter().map(|k| format!("{:.4e}{:+.4e}i", k.re, k.im)).collect();
        cr.info(format!("{label}: {} value(s) with |k| ∈ [{k_lo}, {k_hi}]: [{}]", ks.len(), shown.join(", ")));
        if label == "Dirichlet" {
            let ok = ks.iter().all(|k| k.im <= 1e-6 && k.re.abs() <= tan * k.norm());
            cr.check(ok, "Dirichlet: every value has Im k ≤ 1e-6 and |Re k| ≤ tan(0.3)|k|".into());
        } else {
            let ok = ks.iter().all(|k| k.im >= -1e-6);
            cr.check(ok, "Neumann: every value has Im k ≥ −1e-6".into());
        }
        let a0 = CountingFunction::new(fam.a0_eigenvalues().unwrap(), "A_0(0)").unwrap();
        let radii: Vec<f64> = (0..=8).map(|i| 0.02 * 10f64.powf(i as f64 / 8.0)).collect();
        let table = counting_table(&vals, &a0, &radii, 0.2, 2);
        let counts: Vec<String> = table.rows.iter().map(|r| format!("{}/{}", r.n_values, r.n_a0)).collect();
        cr.check(
            table.passes,
            format!("{label}: counts (values/n(r,T₀)) over r ∈ [0.02, 0.2]: {} — max |diff| {} ≤ 2", counts.join(" "), table.max_abs_difference),
        );
    }
    cr.finish()
}

fn magres(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_magres")).args(args).output().map(|o| o.status.code().is_some()).unwrap_or(false)
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map(|rd| {
            rd.filter_map(|e| e.ok())
                .filter(|e| e.file_name() != "manifest.json")
                .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn manifest_without_time(dir: &Path) -> Option<serde_json::Value> {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).ok()?).ok()?;
    v.as_object_mut()?.remove("wall_time_s");
    Some(v)
}

fn criterion_10() -> bool {
    let mut cr = Criterion::new(10, "determinism of every CLI experiment", f64::INFINITY);
    let dir = tempfile::tempdir().unwrap();
    let experiments: [(&str, &[&str]); 7] = [
        ("landau-levels", &["b=1.3", "qmax=5"]),
        ("toeplitz-spectrum", &["b=2", "R=1"]),
        ("green-check", &["b=1"]),
        ("bem-validate", &["b=1e-8", "m=3"]),
        ("tq-spectrum", &["b=1", "m=3", "n_modes=12"]),
        ("resonance-scan", &["b=1", "m=3", "n_modes=4", "j_max=6", "grid_r=12", "grid_theta=12"]),
        ("charval-selftest", &[]),
    ];
    for (name, overrides) in experiments {
        let runs: Vec<_> = ["a", "b"]
            .iter()
            .map(|tag| {
                let out = dir.path().join(format!("{name}-{tag}"));
                let mut args = vec![name, "--threads", "1", "--seed", "7", "--out", out.to_str().unwrap()];
                args.extend_from_slice(overrides);
                let ran = magres(&args);
                (ran, artifacts(&out), manifest_without_time(&out))
            })
            .collect();
        let (a, b) = (&runs[0], &runs[1]);
        let ok = a.0 && b.0 && !a.1.is_empty() && a.1 == b.1 && a.2.is_some() && a.2 == b.2;
        let bytes: usize = a.1.iter().map(|(_, v)| v.len()).sum();
        cr.check(ok, format!("{name}: {} artifact(s), {bytes} bytes, identical on rerun", a.1.len()));
    }
    cr.finish()
}

fn main() {
    // Honour `cargo test -- --list` and name filters used by the harness.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5()];
    let ops = Operators::new(1.0, 5, 1.0);
    results.push(criterion_6(&ops));
    results.push(criterion_7(&ops, 1.0));
    results.push(criterion_8());
    results.push(criterion_9());
    results.push(criterion_10());
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
