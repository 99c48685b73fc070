//! Numerical machinery for resonances of three-dimensional magnetic
//! Schrödinger operators near Landau levels.
//!
//! Modules, bottom-up:
//!
//! * [`specfun`] — Laguerre polynomials and incomplete gamma functions.
//! * [`landau`] — Landau levels, projections, angular bases, Toeplitz
//!   compressions and counting functions.
//! * [`green`] — the magnetic heat kernel, the Green function `G_0`, its
//!   normal derivative and 1D axial kernels.
//! * [`mesh`] and [`bem`] — surface meshes and the boundary operators
//!   **S**, **D**, layer potentials and Dirichlet/Robin maps.
//! * [`bs`] — boundary-reduced perturbation forms, `T_q` and the
//!   Birman–Schwinger Galerkin matrices `A_q(ik)`.
//! * [`charval`] — characteristic values of holomorphic matrix families.
//! * [`cli`] — experiment driver used by the `magres` binary.

pub mod bem;
pub mod bs;
pub mod charval;
pub mod cli;
pub mod container;
pub mod green;
pub mod landau;
pub mod linalg;
pub mod mesh;
pub mod quad;
pub mod specfun;
