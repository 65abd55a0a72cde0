//! Numerical laboratory for inverse boundary value problems on conformally
//! Euclidean geometries.
//!
//! The library builds, at desk scale, every constructive object in the
//! log-log stability analysis for the Schrödinger and Calderón problems on
//! cylinders ℝ × M₀ over a simple conformally Euclidean disk M₀:
//!
//! - `geometry`: geodesics of g₀ = e^{2λ}(dx² + dy²) on the closed unit disk,
//!   exit times, Jacobi fields, boundary normal charts, and the influx fan
//!   ∂₊SM₀ with its Santaló weight μ = -g₀(X, N₀).
//! - `spectral`: Dirichlet eigenbasis of -Δ_{g₀} and spectral Sobolev norms,
//!   plus the Laplace-Beltrami basis of the cylinder boundary.
//! - `xray`: attenuated geodesic ray transform I_σ, its adjoint I*_σ, and the
//!   normal operator N_σ = I*_σ I_σ with Tikhonov inversion.
//! - `cgo`: complex geometrical optics solutions e^{∓τ(s + iψ)}(a + r) with
//!   quantified Carleman remainder estimates.
//! - `boundary`: forward Dirichlet solves on the cylinder segment, weak normal
//!   derivatives, Dirichlet-to-Neumann maps, and Cauchy-data distances.
//! - `stability`: the chained inequalities from the integral identity through
//!   the low-frequency bound, harmonic majorants, analytic extension, and the
//!   final log-log modulus, each with measured fitted constants.

pub mod boundary;
pub mod cgo;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod spectral;
pub mod stability;
pub mod xray;

pub use expr::Expr;
pub use geometry::SimpleSurface;
