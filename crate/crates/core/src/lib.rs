//! Desk-scale numerical laboratory for dilute FENE dumbbell suspensions with
//! memory: a corotational Navier–Stokes / Fokker–Planck system in which the
//! configuration density carries a Riemann–Liouville time-fractional
//! derivative of order `alpha` in (1/2, 1].
//!
//! The crate is organised around six cooperating modules:
//!
//! * [`fractional`] — discrete fractional calculus: power-law kernels,
//!   Grünwald–Letnikov weights, product-rectangle convolution, and the
//!   identity/inequality checks the solvers rely on.
//! * [`model`] — bead-spring model data: spring potentials and forces,
//!   Maxwellian weights, the corotational velocity-gradient split, Kramers
//!   stress, and the nondimensionalization map.
//! * [`quadrature`] — Gauss–Jacobi / Gauss–Legendre rules and configuration-
//!   space quadratures used by the spectral bases and stress integrals.
//! * [`galerkin`] — divergence-free Fourier × Maxwellian-weighted polynomial
//!   Galerkin discretization with the fractional memory stepped implicitly.
//! * [`langevin`] — subordinated Langevin Monte Carlo: inverse-stable clocks
//!   driving Euler–Maruyama dumbbell paths, plus empirical densities.
//! * [`diagnostics`] — mass, energy-ledger, corotational-nullity, and
//!   solver-vs-Monte-Carlo comparison checks.
//! * [`config`] / [`cli`] — strict flat key-value run configuration and the
//!   command-line pipeline (`run`, `resume`, `verify`, `mc`, `convergence`,
//!   `verify-kernels`).

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod fractional;
pub mod galerkin;
pub mod langevin;
pub mod model;
pub mod quadrature;
