//! Quadrature rules for configuration-space integrals.
//!
//! The configuration domain is a ball (FENE: radius `sqrt(b)`; Hookean:
//! truncated at `R_h = 6`). Integrals of the form
//!
//! ```text
//! ∫_D  M(q)^p  ·  polynomial(q)  dq
//! ```
//!
//! reduce in polar/spherical coordinates to a radial integral against a
//! Jacobi-type weight plus an angular integral of trigonometric (d = 2) or
//! spherical-polynomial (d = 3) factors. The radial rules are Gauss rules
//! built by Golub–Welsch from the three-term recurrence of the orthogonal
//! polynomials of the weight, so polynomial integrands are integrated to
//! machine precision; the angular rules (trapezoid on the circle, product
//! Gauss–Legendre × trapezoid on the sphere) are likewise exact for the
//! trigonometric degrees in play.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

/// One quadrature rule: nodes and weights on some interval or manifold.
#[derive(Debug, Clone)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss–Jacobi rule on [0, 1] with weight `(1 - u)^a * u^b`, `a, b > -1`.
///
/// Built by Golub–Welsch: the symmetric tridiagonal Jacobi matrix of the
/// monic orthogonal polynomials is diagonalized; nodes are the eigenvalues
/// and weights are `mu_0 * (first eigenvector component)^2` where `mu_0` is
/// the total weight mass `B(b+1, a+1)`.
pub fn gauss_jacobi_01(n: usize, a: f64, b: f64) -> Rule1d {
    assert!(n >= 1, "rule needs at least one node");
    assert!(a > -1.0 && b > -1.0, "Jacobi exponents must exceed -1");

    // Standard Jacobi recurrence on [-1, 1] with weight (1-x)^a (1+x)^b:
    // alpha_k (diagonal) and beta_k (off-diagonal squared) of the monic
    // three-term recurrence.
    let ab = a + b;
    let mut diag = vec![0.0f64; n];
    let mut off = vec![0.0f64; n.saturating_sub(1)];
    diag[0] = (b - a) / (ab + 2.0);
    for k in 1..n {
        let kf = k as f64;
        let denom = (2.0 * kf + ab) * (2.0 * kf + ab + 2.0);
        diag[k] = (b * b - a * a) / denom;
        let num = if k == 1 {
            4.0 * kf * (kf + a) * (kf + b) * (kf + ab)
        } else {
            4.0 * kf * (kf + a) * (kf + b) * (kf + ab)
        };
        let den = (2.0 * kf + ab - 1.0) * (2.0 * kf + ab).powi(2) * (2.0 * kf + ab + 1.0);
        off[k - 1] = (num / den).sqrt();
    }

    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        m[(k, k)] = diag[k];
        if k + 1 < n {
            m[(k, k + 1)] = off[k];
            m[(k + 1, k)] = off[k];
        }
    }
    let eig = m.symmetric_eigen();

    // mu_0 on [-1,1]: 2^(a+b+1) B(a+1, b+1).
    let ln_mu0 = (ab + 1.0) * std::f64::consts::LN_2 + ln_gamma(a + 1.0) + ln_gamma(b + 1.0)
        - ln_gamma(ab + 2.0);
    let mu0 = ln_mu0.exp();

    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let v = eig.eigenvectors.column(i);
            (x, mu0 * v[0] * v[0])
        })
        .collect();
    pairs.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

    // Map x in [-1,1] with weight (1-x)^a (1+x)^b to u in [0,1] with weight
    // (1-u)^a u^b: u = (1+x)/2, du = dx/2, and the weight picks up 2^(a+b).
    let scale = 0.5f64.powf(ab + 1.0);
    Rule1d {
        nodes: pairs.iter().map(|p| 0.5 * (p.0 + 1.0)).collect(),
        weights: pairs.iter().map(|p| p.1 * scale).collect(),
    }
}

/// Gauss–Legendre rule on [lo, hi].
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Rule1d {
    let base = gauss_jacobi_01(n, 0.0, 0.0);
    let span = hi - lo;
    Rule1d {
        nodes: base.nodes.iter().map(|u| lo + span * u).collect(),
        weights: base.weights.iter().map(|w| w * span).collect(),
    }
}

/// Uniform trapezoid rule on the circle [0, 2π) with `n` nodes — exact for
/// trigonometric polynomials of degree < n.
pub fn circle_trapezoid(n: usize) -> Rule1d {
    let h = 2.0 * std::f64::consts::PI / n as f64;
    Rule1d {
        nodes: (0..n).map(|k| k as f64 * h).collect(),
        weights: vec![h; n],
    }
}

/// A quadrature over a d-dimensional ball: flat lists of node coordinates
/// and weights. The weights carry only the geometric measure (surface ×
/// radial Jacobian, plus any factored-out radial kernel noted by the caller).
#[derive(Debug, Clone)]
pub struct BallRule {
    pub dim: usize,
    /// Node coordinates, node-major (`dim` entries per node).
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl BallRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    /// Integrate a function of the node coordinates.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.node(i))).sum()
    }
}

/// Product rule on the ball of radius `r_max` in dimension `dim` (2 or 3)
/// from a radial rule on [0, 1] (in the scaled variable `r / r_max`) whose
/// weights already absorb any radial kernel, combined with an exact angular
/// rule of trigonometric degree at least `angular_degree`.
///
/// The returned weights include the full volume Jacobian `r^(dim-1) dr dS`.
/// If the radial rule was built against a kernel `K(r)`, the caller's
/// integrand must omit that kernel.
pub fn ball_product_rule(
    dim: usize,
    r_max: f64,
    radial: &Rule1d,
    angular_degree: usize,
) -> BallRule {
    match dim {
        2 => {
            let n_theta = (2 * angular_degree + 4).max(8);
            let ang = circle_trapezoid(n_theta);
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for (r_s, w_r) in radial.nodes.iter().zip(&radial.weights) {
                let r = r_s * r_max;
                for (th, w_a) in ang.nodes.iter().zip(&ang.weights) {
                    nodes.push(r * th.cos());
                    nodes.push(r * th.sin());
                    weights.push(w_r * w_a);
                }
            }
            BallRule {
                dim,
                nodes,
                weights,
            }
        }
        3 => {
            // Product Gauss–Legendre in cos(phi) × trapezoid in theta:
            // exact for spherical polynomials of the matching degree.
            let n_mu = angular_degree + 2;
            let mu_rule = gauss_legendre(n_mu, -1.0, 1.0);
            let n_theta = (2 * angular_degree + 4).max(8);
            let ang = circle_trapezoid(n_theta);
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for (r_s, w_r) in radial.nodes.iter().zip(&radial.weights) {
                let r = r_s * r_max;
                for (mu, w_m) in mu_rule.nodes.iter().zip(&mu_rule.weights) {
                    let s = (1.0 - mu * mu).max(0.0).sqrt();
                    for (th, w_a) in ang.nodes.iter().zip(&ang.weights) {
                        nodes.push(r * s * th.cos());
                        nodes.push(r * s * th.sin());
                        nodes.push(r * mu);
                        weights.push(w_r * w_m * w_a);
                    }
                }
            }
            BallRule {
                dim,
                nodes,
                weights,
            }
        }
        _ => panic!("ball quadrature supports dim 2 or 3, got {dim}"),
    }
}

/// Radial rule on [0, 1] (scaled radius `s = r / r_max`) for integrands of
/// the form `(1 - s^2)^p * polynomial(s^2) * s^(dim-1)`, exact for radial
/// polynomial degree up to `2 * n_nodes - 1` in `s^2`.
///
/// Substituting `u = s^2` gives the Jacobi weight `(1-u)^p u^(dim/2 - 1)`
/// up to the factor `1/2`; the returned weights absorb the kernel
/// `(1 - s^2)^p`, the Jacobian `s^(dim-1) ds`, and the `r_max^dim` volume
/// scale, so the caller integrates plain functions of the node radius.
pub fn radial_jacobi_rule(dim: usize, r_max: f64, p: f64, n_nodes: usize) -> Rule1d {
    let b = dim as f64 / 2.0 - 1.0;
    let base = gauss_jacobi_01(n_nodes, p, b);
    let vol_scale = 0.5 * r_max.powi(dim as i32);
    Rule1d {
        nodes: base.nodes.iter().map(|u| u.sqrt()).collect(),
        weights: base.weights.iter().map(|w| w * vol_scale).collect(),
    }
}

/// Radial rule on [0, 1] for a general smooth kernel `K(s)` (used for the
/// truncated Gaussian weight): Gauss–Legendre in `s` with the kernel and
/// Jacobian folded into the weights.
pub fn radial_kernel_rule(
    dim: usize,
    r_max: f64,
    kernel: impl Fn(f64) -> f64,
    n_nodes: usize,
) -> Rule1d {
    let base = gauss_legendre(n_nodes, 0.0, 1.0);
    let vol_scale = r_max.powi(dim as i32);
    Rule1d {
        nodes: base.nodes.clone(),
        weights: base
            .nodes
            .iter()
            .zip(&base.weights)
            .map(|(s, w)| w * kernel(*s) * s.powi(dim as i32 - 1) * vol_scale)
            .collect(),
    }
}

/// Solve the small least-squares problem `A c = y` (used by basis builders).
pub fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    a.clone()
        .svd(true, true)
        .solve(y, 1e-13)
        .expect("least squares")
}
