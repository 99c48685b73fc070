//! Dense complex linear-algebra helpers shared by the numerical modules:
//! Hermitian parts, a deterministic Jacobi eigensolver with high relative
//! accuracy for graded positive matrices, LU solves with condition
//! estimates, and smallest-singular-triplet extraction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (1-norm condition estimate {cond:e})")]
    Singular { cond: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `(A + A*) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    let mut h = a.clone();
    let n = a.nrows();
    for i in 0..n {
        h[(i, i)] = c(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)].conj());
            h[(i, j)] = v;
            h[(j, i)] = v.conj();
        }
    }
    h
}

/// `max_{ij} |A_ij - conj(A_ji)|`.
pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

/// Largest entry modulus.
pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Eigenvalues of a Hermitian matrix (only the upper triangle and the real
/// part of the diagonal are read) by cyclic two-sided Jacobi rotations.
///
/// The stopping rule `|a_pq| <= eps sqrt(|a_pp a_qq|)` gives eigenvalues
/// with small *relative* error for positive definite matrices of the form
/// `D A D` with well-conditioned `A`, which is what graded Toeplitz-type
/// matrices look like. Returned in ascending order.
pub fn jacobi_hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    jacobi_hermitian(a, false).0
}

/// Eigenvalues (ascending) and, if requested, eigenvectors (columns) of a
/// Hermitian matrix by cyclic Jacobi.
pub fn jacobi_hermitian(a: &CMatrix, want_vectors: bool) -> (Vec<f64>, Option<CMatrix>) {
    let n = a.nrows();
    let mut m = hermitian_part(a);
    let mut v = if want_vectors { Some(CMatrix::identity(n, n)) } else { None };
    const EPS: f64 = 1e-16;
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let mag = apq.norm();
                if mag == 0.0 {
                    continue;
                }
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                if mag <= EPS * (app.abs() * aqq.abs()).sqrt() || mag < 1e-300 {
                    m[(p, q)] = c(0.0, 0.0);
                    m[(q, p)] = c(0.0, 0.0);
                    continue;
                }
                rotated = true;
                let phase = apq / mag; // e^{i phi}
                let theta = (aqq - app) / (2.0 * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                let pc = phase.conj(); // e^{-i phi}
                // Columns: A <- A U with U = [[c, s], [-s e^{-i phi}, c e^{-i phi}]].
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = akp * cs - akq * pc * sn;
                    m[(k, q)] = akp * sn + akq * pc * cs;
                }
                // Rows: A <- U* A.
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = apk * cs - aqk * phase * sn;
                    m[(q, k)] = apk * sn + aqk * phase * cs;
                }
                m[(p, q)] = c(0.0, 0.0);
                m[(q, p)] = c(0.0, 0.0);
                m[(p, p)] = c(app - t * mag, 0.0);
                m[(q, q)] = c(aqq + t * mag, 0.0);
                if let Some(vm) = v.as_mut() {
                    for k in 0..n {
                        let vkp = vm[(k, p)];
                        let vkq = vm[(k, q)];
                        vm[(k, p)] = vkp * cs - vkq * pc * sn;
                        vm[(k, q)] = vkp * sn + vkq * pc * cs;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[(i, i)].re.partial_cmp(&m[(j, j)].re).unwrap());
    let vals: Vec<f64> = idx.iter().map(|&i| m[(i, i)].re).collect();
    let vecs = v.map(|vm| {
        let mut out = CMatrix::zeros(n, n);
        for (new, &old) in idx.iter().enumerate() {
            out.set_column(new, &vm.column(old));
        }
        out
    });
    (vals, vecs)
}

/// Eigenvalues of a Hermitian matrix in descending order.
pub fn hermitian_eigenvalues_desc(a: &CMatrix) -> Vec<f64> {
    let mut v = jacobi_hermitian_eigenvalues(a);
    v.reverse();
    v
}

/// LU factorization with a 1-norm condition estimate.
pub struct Factorized {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    pub norm1: f64,
    pub cond1_estimate: f64,
}

impl Factorized {
    /// Factor `a`; fails when the estimated reciprocal condition number is
    /// below `min_rcond`.
    pub fn new(a: &CMatrix, min_rcond: f64) -> Result<Self, LinalgError> {
        if a.nrows() != a.ncols() {
            return Err(LinalgError::Dimension(format!("{}x{} is not square", a.nrows(), a.ncols())));
        }
        let norm1 = norm1(a);
        let lu = a.clone().lu();
        let inv_norm = match estimate_inverse_norm1(&lu, a.nrows()) {
            Some(v) => v,
            None => return Err(LinalgError::Singular { cond: f64::INFINITY }),
        };
        let cond = norm1 * inv_norm;
        if !cond.is_finite() || 1.0 / cond < min_rcond {
            return Err(LinalgError::Singular { cond });
        }
        Ok(Self { lu, norm1, cond1_estimate: cond })
    }

    pub fn solve(&self, rhs: &CMatrix) -> Result<CMatrix, LinalgError> {
        self.lu.solve(rhs).ok_or(LinalgError::Singular { cond: self.cond1_estimate })
    }

    pub fn solve_vec(&self, rhs: &CVector) -> Result<CVector, LinalgError> {
        self.lu.solve(rhs).ok_or(LinalgError::Singular { cond: self.cond1_estimate })
    }

    /// Solve `A* x = b`.
    pub fn solve_adjoint_vec(&self, rhs: &CVector) -> Result<CVector, LinalgError> {
        let n = self.lu.l().nrows();
        lu_adjoint_solver(&self.lu, n)(rhs).ok_or(LinalgError::Singular { cond: self.cond1_estimate })
    }

    /// Estimate of the smallest singular value by inverse iteration on
    /// `A* A` (each step one solve with `A` and one with `A*`). The
    /// returned value is an upper bound that converges to `σ_min`.
    pub fn sigma_min_estimate(&self, iterations: usize) -> Result<f64, LinalgError> {
        let n = self.lu.l().nrows();
        // Deterministic start vector with no special structure.
        let mut v = CVector::from_fn(n, |i, _| c(1.0 + ((i * 7919) % 101) as f64 / 101.0, ((i * 104729) % 37) as f64 / 37.0 - 0.5));
        let nv = v.norm();
        v /= c(nv, 0.0);
        let mut est = f64::INFINITY;
        for _ in 0..iterations.max(1) {
            let y = self.solve_adjoint_vec(&v)?;
            let w = self.solve_vec(&y)?;
            let nw = w.norm();
            if !nw.is_finite() || nw == 0.0 {
                return Err(LinalgError::Singular { cond: f64::INFINITY });
            }
            est = 1.0 / nw.sqrt();
            v = w / c(nw, 0.0);
        }
        Ok(est)
    }
}

/// Matrix 1-norm (max column sum).
pub fn norm1(a: &CMatrix) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager–Higham estimate of `||A^{-1}||_1` from an LU factorization.
fn estimate_inverse_norm1(lu: &nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>, n: usize) -> Option<f64> {
    let adj = lu_adjoint_solver(lu, n);
    let mut x = CVector::from_element(n, c(1.0 / n as f64, 0.0));
    let mut est = 0.0;
    for _ in 0..5 {
        let y = lu.solve(&x)?;
        let new_est: f64 = y.iter().map(|z| z.norm()).sum();
        if !new_est.is_finite() {
            return None;
        }
        let xi = y.map(|z| if z.norm() > 0.0 { z / z.norm() } else { c(1.0, 0.0) });
        let z = adj(&xi)?;
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, -1.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let ztx: f64 = z.iter().zip(x.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        if new_est <= est || zmax <= ztx {
            est = est.max(new_est);
            break;
        }
        est = new_est;
        x = CVector::zeros(n);
        x[jmax] = c(1.0, 0.0);
    }
    Some(est)
}

/// Solver for `A* x = b` reusing an LU factorization of `A`.
fn lu_adjoint_solver<'a>(
    lu: &'a nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
) -> impl Fn(&CVector) -> Option<CVector> + 'a {
    move |b: &CVector| {
        // A = P^T L U  =>  A* = U* L* P.  Solve U* w = b, L* v = w, x = P^T v.
        let l = lu.l();
        let u = lu.u();
        let w = u.adjoint().solve_lower_triangular(b)?;
        let v = l.adjoint().solve_upper_triangular(&w)?;
        let mut x = v;
        lu.p().inv_permute_rows(&mut x);
        debug_assert_eq!(x.len(), n);
        Some(x)
    }
}

/// Smallest singular value of a square matrix.
pub fn sigma_min(a: &CMatrix) -> f64 {
    let svd = a.clone().svd(false, false);
    svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Smallest singular triplet `(sigma, u, v)` with `A v = sigma u`.
pub fn smallest_singular_triplet(a: &CMatrix) -> (f64, CVector, CVector) {
    let svd = a.clone().svd(true, true);
    let (imin, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let u = svd.u.as_ref().expect("requested U").column(imin).into_owned();
    let v = svd.v_t.as_ref().expect("requested V^T").row(imin).adjoint();
    (smin, u, v)
}

/// Largest singular value.
pub fn sigma_max(a: &CMatrix) -> f64 {
    let svd = a.clone().svd(false, false);
    svd.singular_values.iter().cloned().fold(0.0, f64::max)
}

/// Frobenius norm.
pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
