//! Run-time audits of the coupled solver: mass books, an energy ledger with
//! explicit constants, stress-bound checks, rotation-neutrality residuals,
//! and marginal densities for comparison against the walker ensemble.
//!
//! The energy ledger tracks two inequalities that the discrete scheme
//! satisfies *exactly* (not just asymptotically in the step size), so any
//! violation flags an implementation bug rather than discretization error:
//!
//! * **Velocity.**  Testing the momentum update with the new velocity and
//!   absorbing the explicit advection into a half-step of numerical
//!   dissipation gives, for every step count `N`,
//!
//!   ```text
//!   ½|Uᴺ|² + (ν/2) Σ_{n≤N} dt |∇uⁿ|²
//!     ≤ ½|U⁰|² + Σ_{n<N} (dt²/2) |A(Uⁿ,Uⁿ)|²
//!       + (γ_c² C_b² / 2ν) Σ_{n<N} dt ‖Ψⁿ‖²,
//!   ```
//!
//!   where `C_b` is the elastic stress bound (`|τ(x)|_F ≤ C_b ‖ψ̂(x,·)‖`).
//!   The advection term is the scheme's explicit-transport slack and is
//!   reported separately.
//!
//! * **Density.**  Testing the density update with the companion field and
//!   using that the pairing of a backward difference with the fractional
//!   history stencil has a positive-definite convolution kernel gives
//!
//!   ```text
//!   Σ_{k≤N} dt [ (1/2λ)‖∇_q Φᵏ‖² + ε‖∇_x Φᵏ‖² ]
//!     ≤ dt^{α-1} ‖Ψ⁰‖² + Σ_{k≤N} dt^α |⟨T(Uᵏ)Φ*ᵏ, Ψᵏ-Ψᵏ⁻¹⟩|,
//!   ```
//!
//!   the last sum being the density-side transport slack (zero when the
//!   transport operator commutes with the step, tiny otherwise).
//!
//! The ledger's `energy_lhs` is the four-term sum (kinetic energy, viscous
//! dissipation, elongation-space dissipation, center-of-mass dissipation)
//! and `energy_rhs_bound` the matching right-hand sides.  At order one the
//! weights collapse and both inequalities reduce to classical energy
//! estimates.

use nalgebra::DMatrix;

use crate::galerkin::{ConfigBasis, ScalarBasis, Solver};
use crate::langevin::Histogram;

/// One audited step of a solver run.
#[derive(Debug, Clone)]
pub struct DiagnosticRecord {
    pub step: usize,
    pub t: f64,
    /// Physical total mass of the density.
    pub mass: f64,
    /// Kinetic energy `½|Uⁿ|²`.
    pub u_energy: f64,
    /// Accumulated viscous dissipation `(ν/2) Σ dt |∇u|²`.
    pub grad_u_dissipation: f64,
    /// Companion-field norm `‖Φⁿ‖` (reported, not part of the ledger).
    pub phi_l2: f64,
    /// Accumulated elongation-space dissipation of the companion field.
    pub phi_grad_q: f64,
    /// Accumulated center-of-mass dissipation of the companion field.
    pub phi_grad_x: f64,
    /// Four-term ledger left side.
    pub energy_lhs: f64,
    /// Explicit-constant right side; `energy_lhs ≤ energy_rhs_bound` holds
    /// for a correct implementation.
    pub energy_rhs_bound: f64,
    /// Accumulated explicit-advection slack `Σ (dt²/2)|A(Uⁿ,Uⁿ)|²`.
    pub adv_slack: f64,
    /// Energy pairing of the companion field with its own rotation term;
    /// zero to round-off because rotation is skew-symmetric.
    pub corotational_residual: f64,
    /// Elastic stress norm `‖τ(Ψⁿ)‖_{L²}`.
    pub stress_norm: f64,
    /// Its theoretical bound `C_b ‖Ψⁿ‖`.
    pub stress_bound: f64,
}

/// Elastic stress norm `‖τ‖_{L²}` of a coefficient matrix: spatial modes
/// are orthonormal, so the square is a sum over modes of Frobenius norms.
pub fn stress_field_norm(ops: &crate::galerkin::AssembledOperators, psi: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for a in 0..ops.n_x {
        let mut tau = DMatrix::zeros(ops.dim, ops.dim);
        for m in 0..ops.n_q {
            tau += ops.stress_k[m].scale(psi[(a, m)]);
        }
        total += tau.norm_squared();
    }
    total.sqrt()
}

/// Largest mass drift over a run, relative to the initial mass.
pub fn mass_drift(solver: &Solver) -> f64 {
    let m0 = solver.density(0)[(0, 0)];
    (0..=solver.completed())
        .map(|n| (solver.density(n)[(0, 0)] - m0).abs())
        .fold(0.0, f64::max)
        / m0.abs().max(f64::MIN_POSITIVE)
}

/// Audit a completed (or partial) run step by step.
pub fn diagnose(solver: &Solver, config: &ConfigBasis) -> Vec<DiagnosticRecord> {
    let ops = &solver.ops;
    let params = &solver.params;
    let dt = solver.settings.dt;
    let alpha = solver.settings.alpha.value();
    let nu = 1.0 / params.reynolds;
    let c_b = config.space.stress_bound_constant();
    let scale = dt.powf(alpha - 1.0);
    let dim = ops.dim;

    let grad_energy = |u: &nalgebra::DVector<f64>| -> f64 {
        u.iter()
            .zip(&ops.visc_u)
            .map(|(&ui, &k2)| k2 * ui * ui)
            .sum()
    };

    let psi0_norm2 = solver.density(0).norm_squared();
    let u0_energy = 0.5 * solver.velocity(0).norm_squared();

    let mut records = Vec::with_capacity(solver.completed() + 1);
    let mut visc_cum = 0.0;
    let mut adv_slack_cum = 0.0;
    let mut forcing_cum = 0.0;
    let mut phi_grad_q_cum = 0.0;
    let mut phi_grad_x_cum = 0.0;
    let mut transport_slack_cum = 0.0;

    for n in 0..=solver.completed() {
        let u = solver.velocity(n);
        let psi = solver.density(n);
        let phi = solver.companion(n);

        if n > 0 {
            let psi_prev = solver.density(n - 1);
            visc_cum += 0.5 * nu * dt * grad_energy(u);
            let adv = ops.advect(solver.velocity(n - 1), solver.velocity(n - 1));
            adv_slack_cum += 0.5 * dt * dt * adv.norm_squared();
            forcing_cum +=
                dt * params.gamma_c.powi(2) * c_b.powi(2) / (2.0 * nu) * psi_prev.norm_squared();

            // Companion dissipation at this step.
            let sq_phi = &phi * ops.stiff_q.transpose();
            let grad_q: f64 = phi.iter().zip(sq_phi.iter()).map(|(a, b)| a * b).sum();
            phi_grad_q_cum += dt / (2.0 * params.lambda) * grad_q;
            let mut grad_x = 0.0;
            for a in 0..ops.n_x {
                let row: f64 = (0..ops.n_q).map(|m| phi[(a, m)] * phi[(a, m)]).sum();
                grad_x += ops.lap_x[a] * row;
            }
            phi_grad_x_cum += dt * params.epsilon * grad_x;

            // Transport slack: the explicit evaluant pairs with the step
            // increment instead of canceling exactly.
            let delta = psi - psi_prev;
            let phi_star = &phi - &delta.scale(scale);
            let t_star = ops.transport(u, &phi_star);
            let pairing: f64 = t_star.iter().zip(delta.iter()).map(|(a, b)| a * b).sum();
            transport_slack_cum += dt.powf(alpha) * pairing.abs();
        }

        let u_energy = 0.5 * u.norm_squared();
        let rot = ops.rotation_only(u, &phi);
        let corot: f64 = phi.iter().zip(rot.iter()).map(|(a, b)| a * b).sum();

        let energy_lhs = u_energy + visc_cum + phi_grad_q_cum + phi_grad_x_cum;
        let energy_rhs_bound = u0_energy
            + adv_slack_cum
            + forcing_cum
            + scale * psi0_norm2
            + transport_slack_cum;

        records.push(DiagnosticRecord {
            step: n,
            t: solver.time(n),
            mass: crate::galerkin::total_mass(psi, dim),
            u_energy,
            grad_u_dissipation: visc_cum,
            phi_l2: phi.norm(),
            phi_grad_q: phi_grad_q_cum,
            phi_grad_x: phi_grad_x_cum,
            energy_lhs,
            energy_rhs_bound,
            adv_slack: adv_slack_cum,
            corotational_residual: corot.abs(),
            stress_norm: stress_field_norm(ops, psi),
            stress_bound: c_b * psi.norm(),
        });
    }
    records
}

/// Marginal density of the elongation variable: the physical density
/// integrated over the box, `ρ(q) = M(q) (2π)^{d/2} Σ_m Ψ[0][m] Y_m(q)`,
/// zero outside the admissible domain.  Integrates to the total mass.
pub fn q_marginal<'a>(
    scalar: &ScalarBasis,
    config: &'a ConfigBasis,
    psi: &DMatrix<f64>,
) -> impl Fn(&[f64]) -> f64 + 'a {
    let box_factor = (2.0 * std::f64::consts::PI).powf(scalar.dim as f64 / 2.0);
    let coeffs: Vec<f64> = (0..config.len()).map(|m| psi[(0, m)] * box_factor).collect();
    let r2_max = config.space.r_max * config.space.r_max;
    move |q: &[f64]| {
        let r2: f64 = q.iter().map(|v| v * v).sum();
        if r2 >= r2_max {
            return 0.0;
        }
        let m = config.space.maxwellian(q);
        let poly: f64 = config
            .modes
            .iter()
            .zip(&coeffs)
            .map(|(mode, &c)| c * mode.poly.eval(q))
            .sum();
        m * poly
    }
}

/// Total-variation distance between a walker histogram and the solver's
/// elongation marginal.
pub fn compare_with_walkers(
    hist: &Histogram,
    scalar: &ScalarBasis,
    config: &ConfigBasis,
    psi: &DMatrix<f64>,
) -> f64 {
    hist.tv_against_density(q_marginal(scalar, config, psi))
}
