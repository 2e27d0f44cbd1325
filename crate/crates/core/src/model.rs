//! Bead-spring dumbbell model data: spring laws, Maxwellian weights, the
//! corotational velocity-gradient split, Kramers stress, and the map from
//! laboratory parameters to the nondimensional groups used by the solvers.
//!
//! Nondimensional spring laws (configuration `q`, `s = |q|^2 / 2`):
//!
//! ```text
//! Hookean:  U(s) = s,                    F(q) = q
//! FENE:     U(s) = -(b/2) ln(1 - 2s/b),  F(q) = q / (1 - |q|^2 / b),   b > 2
//! ```
//!
//! `b` is the squared maximum extension; the FENE force diverges at
//! `|q| -> sqrt(b)` and the admissible domain is the open ball of that
//! radius. The Hookean domain is all of R^d, truncated for quadrature at
//! `R_H = 6` (six standard deviations of its Gaussian Maxwellian
//! `M ∝ exp(-|q|^2/2)`). The condition `b > 2` keeps `M |F|^2 |q|^2`
//! integrable, which the Kramers stress bound needs.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::quadrature::{ball_product_rule, radial_jacobi_rule, radial_kernel_rule, BallRule};

/// Truncation radius (in units of the Gaussian standard deviation) of the
/// Hookean configuration domain.
pub const HOOKEAN_RADIUS: f64 = 6.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("FENE extensibility must satisfy b > 2, got {0}")]
    BadExtensibility(f64),
    #[error("configuration dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("physical parameter {name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Spring force law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpringModel {
    Hookean,
    Fene { b: f64 },
}

impl SpringModel {
    pub fn fene(b: f64) -> Result<Self, ModelError> {
        if !(b > 2.0) || !b.is_finite() {
            return Err(ModelError::BadExtensibility(b));
        }
        Ok(SpringModel::Fene { b })
    }

    /// Radius of the admissible (or truncated) configuration ball.
    pub fn domain_radius(self) -> f64 {
        match self {
            SpringModel::Hookean => HOOKEAN_RADIUS,
            SpringModel::Fene { b } => b.sqrt(),
        }
    }
}

/// Spring potential `U(s)`, `s = |q|^2 / 2`.
///
/// # Panics
/// Panics for FENE when `s >= b/2` (outside the admissible ball).
pub fn potential(spring: SpringModel, s: f64) -> f64 {
    match spring {
        SpringModel::Hookean => s,
        SpringModel::Fene { b } => {
            let arg = 1.0 - 2.0 * s / b;
            assert!(arg > 0.0, "FENE potential needs |q|^2 < b, got s = {s}");
            -(b / 2.0) * arg.ln()
        }
    }
}

/// Derivative `U'(s)`; equals 1 for Hookean and `1 / (1 - 2s/b)` for FENE.
pub fn potential_slope(spring: SpringModel, s: f64) -> f64 {
    match spring {
        SpringModel::Hookean => 1.0,
        SpringModel::Fene { b } => {
            let arg = 1.0 - 2.0 * s / b;
            assert!(arg > 0.0, "FENE force needs |q|^2 < b, got s = {s}");
            1.0 / arg
        }
    }
}

/// Spring force `F(q) = U'(|q|^2/2) q`.
pub fn spring_force(spring: SpringModel, q: &[f64]) -> Vec<f64> {
    let s = 0.5 * q.iter().map(|v| v * v).sum::<f64>();
    let slope = potential_slope(spring, s);
    q.iter().map(|v| slope * v).collect()
}

/// Corotational split of a velocity gradient into its symmetric rate-of-
/// strain part `sigma = (G + G^T)/2` and antisymmetric vorticity part
/// `omega = (G - G^T)/2`; `q^T omega q = 0` for every `q`.
pub fn vorticity_split(grad_u: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    assert_eq!(grad_u.nrows(), grad_u.ncols(), "gradient must be square");
    let gt = grad_u.transpose();
    let sigma = (grad_u + &gt) * 0.5;
    let omega = (grad_u - gt) * 0.5;
    (sigma, omega)
}

/// Laboratory-scale inputs for one solvent/polymer pair.
#[derive(Debug, Clone, Copy)]
pub struct PhysicalParams {
    /// Thermal energy k_B * mu_T [J].
    pub thermal_energy: f64,
    /// Spring stiffness H [kg / s^2].
    pub spring_stiffness: f64,
    /// Bead drag coefficient zeta [kg / s].
    pub drag: f64,
    /// Fluid mass density rho [kg / m^3].
    pub density: f64,
    /// Solvent dynamic viscosity eta [kg / (m s)].
    pub viscosity: f64,
    /// Polymer number density N [1 / m^3].
    pub number_density: f64,
    /// Reference speed U_0 [m / s].
    pub speed: f64,
    /// Reference length L_0 [m].
    pub length: f64,
}

/// Nondimensional parameter group driving both solvers.
#[derive(Debug, Clone, Copy)]
pub struct ModelParams {
    pub dim: usize,
    pub spring: SpringModel,
    /// Relaxation group lambda = zeta / (4 H T_0).
    pub lambda: f64,
    /// Center-of-mass diffusivity epsilon = k_B mu_T / (2 zeta U_0 L_0).
    pub epsilon: f64,
    /// Stress coupling prefactor gamma_c = k_B mu_T N / (rho U_0^2 L_0^3).
    pub gamma_c: f64,
    /// Reynolds number rho U_0 L_0 / eta.
    pub reynolds: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim != 2 && self.dim != 3 {
            return Err(ModelError::BadDimension(self.dim));
        }
        for (name, value) in [
            ("lambda", self.lambda),
            ("reynolds", self.reynolds),
        ] {
            if !(value > 0.0) {
                return Err(ModelError::NonPositiveParameter { name, value });
            }
        }
        for (name, value) in [("epsilon", self.epsilon), ("gamma_c", self.gamma_c)] {
            if !(value >= 0.0) {
                return Err(ModelError::NonPositiveParameter { name, value });
            }
        }
        if let SpringModel::Fene { b } = self.spring {
            SpringModel::fene(b)?;
        }
        Ok(())
    }
}

/// Derived reference scales reported alongside the nondimensional groups.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceScales {
    /// Equilibrium spring length ell_0 = sqrt(k_B mu_T / H) [m].
    pub spring_length: f64,
    /// Convective time T_0 = L_0 / U_0 [s] (also the memory time scale tau_0).
    pub convective_time: f64,
}

/// Map laboratory parameters to the nondimensional groups.
pub fn nondimensionalize(
    phys: &PhysicalParams,
    dim: usize,
    spring: SpringModel,
) -> Result<(ModelParams, ReferenceScales), ModelError> {
    for (name, value) in [
        ("thermal_energy", phys.thermal_energy),
        ("spring_stiffness", phys.spring_stiffness),
        ("drag", phys.drag),
        ("density", phys.density),
        ("viscosity", phys.viscosity),
        ("number_density", phys.number_density),
        ("speed", phys.speed),
        ("length", phys.length),
    ] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(ModelError::NonPositiveParameter { name, value });
        }
    }
    let spring_length = (phys.thermal_energy / phys.spring_stiffness).sqrt();
    let convective_time = phys.length / phys.speed;
    let params = ModelParams {
        dim,
        spring,
        lambda: phys.drag / (4.0 * phys.spring_stiffness * convective_time),
        epsilon: phys.thermal_energy / (2.0 * phys.drag * phys.speed * phys.length),
        gamma_c: phys.thermal_energy * phys.number_density
            / (phys.density * phys.speed.powi(2) * phys.length.powi(3)),
        reynolds: phys.density * phys.speed * phys.length / phys.viscosity,
    };
    params.validate()?;
    Ok((
        params,
        ReferenceScales {
            spring_length,
            convective_time,
        },
    ))
}

/// Quadrature-backed view of one configuration space: normalized Maxwellian
/// rules for plain, stress, and stress-bound integrals.
///
/// * `m_rule` absorbs the normalized Maxwellian `M(q)`; use it for
///   `∫ M f dq`.
/// * `stress_rule` absorbs `M(q) U'(|q|^2/2)`; use it for Kramers-stress
///   integrands written as `q q^T ψ̂`, which are then polynomial for
///   polynomial `ψ̂` (the FENE force pole is inside the weight).
/// * `bound_rule` absorbs `M(q) U'(|q|^2/2)^2`, used for the stress-bound
///   constant `C_b`.
#[derive(Debug, Clone)]
pub struct ConfigSpace {
    pub dim: usize,
    pub spring: SpringModel,
    pub r_max: f64,
    /// Maxwellian normalizer Z = ∫ exp(-U) dq over the domain.
    pub z: f64,
    pub m_rule: BallRule,
    pub stress_rule: BallRule,
    bound_rule: BallRule,
}

impl ConfigSpace {
    /// Build rules exact for radial polynomial degree `2 * radial_nodes - 1`
    /// (in `r^2`) and angular trigonometric degree `angular_degree`.
    pub fn build(
        dim: usize,
        spring: SpringModel,
        radial_nodes: usize,
        angular_degree: usize,
    ) -> Result<Self, ModelError> {
        if dim != 2 && dim != 3 {
            return Err(ModelError::BadDimension(dim));
        }
        let r_max = spring.domain_radius();
        let (raw_m, raw_stress, raw_bound) = match spring {
            SpringModel::Fene { b } => {
                if !(b > 2.0) {
                    return Err(ModelError::BadExtensibility(b));
                }
                (
                    radial_jacobi_rule(dim, r_max, b / 2.0, radial_nodes),
                    radial_jacobi_rule(dim, r_max, b / 2.0 - 1.0, radial_nodes),
                    radial_jacobi_rule(dim, r_max, b / 2.0 - 2.0, radial_nodes),
                )
            }
            SpringModel::Hookean => {
                let kern = |s: f64| (-(r_max * s).powi(2) / 2.0).exp();
                let rule = radial_kernel_rule(dim, r_max, kern, radial_nodes);
                (rule.clone(), rule.clone(), rule)
            }
        };
        let mut m_rule = ball_product_rule(dim, r_max, &raw_m, angular_degree);
        let mut stress_rule = ball_product_rule(dim, r_max, &raw_stress, angular_degree);
        let mut bound_rule = ball_product_rule(dim, r_max, &raw_bound, angular_degree);
        let z = m_rule.integrate(|_| 1.0);
        for w in m_rule
            .weights
            .iter_mut()
            .chain(stress_rule.weights.iter_mut())
            .chain(bound_rule.weights.iter_mut())
        {
            *w /= z;
        }
        Ok(Self {
            dim,
            spring,
            r_max,
            z,
            m_rule,
            stress_rule,
            bound_rule,
        })
    }

    /// Normalized Maxwellian `M(q) = exp(-U(|q|^2/2)) / Z`.
    pub fn maxwellian(&self, q: &[f64]) -> f64 {
        self.maxwellian_unnormalized(q) / self.z
    }

    /// `exp(-U(|q|^2/2))` without the normalizer.
    pub fn maxwellian_unnormalized(&self, q: &[f64]) -> f64 {
        let s = 0.5 * q.iter().map(|v| v * v).sum::<f64>();
        (-potential(self.spring, s)).exp()
    }

    /// Kramers stress of a configuration density factor:
    /// `C(M ψ̂) = ∫ F(q) q^T M(q) ψ̂(q) dq`.
    pub fn kramers_stress(&self, psihat: impl Fn(&[f64]) -> f64) -> DMatrix<f64> {
        let d = self.dim;
        let mut c = DMatrix::zeros(d, d);
        for n in 0..self.stress_rule.len() {
            let q = self.stress_rule.node(n);
            let w = self.stress_rule.weights[n] * psihat(q);
            for i in 0..d {
                for j in 0..d {
                    c[(i, j)] += w * q[i] * q[j];
                }
            }
        }
        c
    }

    /// Stress-bound constant `C_b = ( ∫ M |F(q)|^2 |q|^2 dq )^(1/2)`, so that
    /// `|C(M ψ̂)|_F <= C_b ||ψ̂||_{L^2_M}` pointwise in x.
    pub fn stress_bound_constant(&self) -> f64 {
        self.bound_rule
            .integrate(|q| {
                let r2 = q.iter().map(|v| v * v).sum::<f64>();
                r2 * r2
            })
            .sqrt()
    }

    /// `L^2_M` norm of a configuration function via the Maxwellian rule.
    pub fn l2m_norm(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.m_rule.integrate(|q| f(q).powi(2)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;

    fn beta_fn(x: f64, y: f64) -> f64 {
        gamma(x) * gamma(y) / gamma(x + y)
    }

    #[test]
    fn potential_closed_forms() {
        assert_relative_eq!(potential(SpringModel::Hookean, 1.7), 1.7);
        let fene = SpringModel::fene(10.0).unwrap();
        // -(10/2) ln(1 - 2/10) = -5 ln 0.8
        assert_relative_eq!(potential(fene, 1.0), -5.0 * 0.8f64.ln(), max_relative = 1e-14);
        assert_relative_eq!(potential(fene, 1.0), 1.1157177565710487, max_relative = 1e-12);
        assert_relative_eq!(potential(fene, 0.0), 0.0);
    }

    #[test]
    fn fene_requires_b_above_two() {
        assert!(SpringModel::fene(2.0).is_err());
        assert!(SpringModel::fene(1.5).is_err());
        assert!(SpringModel::fene(2.0 + 1e-9).is_ok());
    }

    #[test]
    fn spring_force_closed_forms_and_gradient_consistency() {
        let fene4 = SpringModel::fene(4.0).unwrap();
        let f = spring_force(fene4, &[1.0, 0.0]);
        assert_relative_eq!(f[0], 4.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(f[1], 0.0);

        let hook = SpringModel::Hookean;
        let f = spring_force(hook, &[0.3, -1.2, 2.0]);
        assert_eq!(f, vec![0.3, -1.2, 2.0]);

        // F = grad_q U(|q|^2/2) by central differences.
        for spring in [hook, fene4] {
            let q = [0.7, -0.4];
            let f = spring_force(spring, &q);
            let h = 1e-6;
            for c in 0..2 {
                let mut qp = q;
                let mut qm = q;
                qp[c] += h;
                qm[c] -= h;
                let s = |qq: &[f64; 2]| 0.5 * (qq[0] * qq[0] + qq[1] * qq[1]);
                let fd = (potential(spring, s(&qp)) - potential(spring, s(&qm))) / (2.0 * h);
                assert_relative_eq!(f[c], fd, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn fene_approaches_hookean_at_large_extensibility() {
        // |U_b(s) - s| = O(1/b) at fixed s.
        let s = 0.8;
        let e3 = (potential(SpringModel::fene(1e3).unwrap(), s) - s).abs();
        let e4 = (potential(SpringModel::fene(1e4).unwrap(), s) - s).abs();
        assert!(e3 < 1e-3 && e4 < 1e-4);
        let ratio = e3 / e4;
        assert!((8.0..12.0).contains(&ratio), "O(1/b) ratio {ratio}");
    }

    #[test]
    fn vorticity_split_properties() {
        let g = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let (sigma, omega) = vorticity_split(&g);
        assert_relative_eq!(sigma[(0, 1)], 0.5);
        assert_relative_eq!(sigma[(1, 0)], 0.5);
        assert_relative_eq!(omega[(0, 1)], 0.5);
        assert_relative_eq!(omega[(1, 0)], -0.5);
        let rec = &sigma + &omega;
        assert_relative_eq!((rec - &g).norm(), 0.0, epsilon = 1e-15);

        // q^T omega q = 0 for any q.
        for q in [[1.0, 0.3], [-2.0, 1.7], [0.0, 5.0]] {
            let qv = nalgebra::DVector::from_row_slice(&q);
            let val = (qv.transpose() * &omega * &qv)[(0, 0)];
            assert!(val.abs() < 1e-15);
        }
    }

    #[test]
    fn maxwellian_values_and_normalization() {
        let space = ConfigSpace::build(2, SpringModel::fene(10.0).unwrap(), 24, 12).unwrap();
        // Unnormalized value at |q| = 1: (1 - 1/10)^5 = 0.59049.
        let q = [1.0, 0.0];
        assert_relative_eq!(
            space.maxwellian_unnormalized(&q),
            0.59049,
            max_relative = 1e-12
        );
        // Z against the Beta closed form: Z = pi b B(1, b/2+1) for d = 2.
        let want = std::f64::consts::PI * 10.0 * beta_fn(1.0, 6.0);
        assert_relative_eq!(space.z, want, max_relative = 1e-12);
        // Normalized rule integrates M to 1.
        assert_relative_eq!(space.m_rule.integrate(|_| 1.0), 1.0, epsilon = 1e-10);

        let hook = ConfigSpace::build(2, SpringModel::Hookean, 48, 12).unwrap();
        assert_relative_eq!(hook.m_rule.integrate(|_| 1.0), 1.0, epsilon = 1e-10);
        // Gaussian normalizer on the truncated ball: 2 pi (1 - e^{-18}).
        let want = 2.0 * std::f64::consts::PI * (1.0 - (-18.0f64).exp());
        assert_relative_eq!(hook.z, want, max_relative = 1e-12);
    }

    #[test]
    fn maxwellian_log_gradient_matches_spring_force() {
        // grad_q(-log M) = U'(|q|^2/2) q = F(q), by finite differences.
        let space = ConfigSpace::build(2, SpringModel::fene(10.0).unwrap(), 24, 12).unwrap();
        let q = [0.8, -1.1];
        let f = spring_force(space.spring, &q);
        let h = 1e-6;
        for c in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[c] += h;
            qm[c] -= h;
            let fd = -(space.maxwellian(&qp).ln() - space.maxwellian(&qm).ln()) / (2.0 * h);
            assert_relative_eq!(f[c], fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn equilibrium_kramers_stress_is_identity() {
        // ∫ M U' q q^T dq = I ∫ M dq by parts (boundary term vanishes),
        // so C(M · 1) = I exactly for FENE.
        let space = ConfigSpace::build(2, SpringModel::fene(10.0).unwrap(), 24, 12).unwrap();
        let c = space.kramers_stress(|_| 1.0);
        assert_relative_eq!(c[(0, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(c[(1, 1)], 1.0, max_relative = 1e-12);
        assert!(c[(0, 1)].abs() < 1e-13 && c[(1, 0)].abs() < 1e-13);

        // Truncated-Gaussian case agrees up to the e^{-18} boundary term.
        let hook = ConfigSpace::build(2, SpringModel::Hookean, 48, 12).unwrap();
        let c = hook.kramers_stress(|_| 1.0);
        assert_relative_eq!(c[(0, 0)], 1.0, max_relative = 1e-6);
        assert_relative_eq!(c[(1, 1)], 1.0, max_relative = 1e-6);
        assert!(c[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn anisotropic_kramers_stress_matches_beta_oracle() {
        // psihat = q1^2: C_11 = ∫ M U' q1^4, C_22 = ∫ M U' q1^2 q2^2 with
        // radial Beta closed forms and angular moments 3pi/4 and pi/4.
        let b = 10.0;
        let space = ConfigSpace::build(2, SpringModel::fene(b).unwrap(), 24, 12).unwrap();
        let c = space.kramers_stress(|q| q[0] * q[0]);
        // Radial factor: ∫_0^1 (1-u)^(b/2-1) u^2 du * b^3 / (2 Z'), worked in
        // the scaled variable; assemble via Beta functions.
        let z = std::f64::consts::PI * b * beta_fn(1.0, b / 2.0 + 1.0);
        let radial = 0.5 * b.powi(3) * beta_fn(3.0, b / 2.0);
        let c11 = (3.0 * std::f64::consts::PI / 4.0) * radial / z;
        let c22 = (std::f64::consts::PI / 4.0) * radial / z;
        assert_relative_eq!(c[(0, 0)], c11, max_relative = 1e-11);
        assert_relative_eq!(c[(1, 1)], c22, max_relative = 1e-11);
        assert!(c[(0, 1)].abs() < 1e-13);
    }

    #[test]
    fn stress_bound_constant_closed_form_and_bound_holds() {
        // C_b^2 = b^2 E_M[u^2/(1-u)^2] = 10 for b = 10, d = 2.
        let space = ConfigSpace::build(2, SpringModel::fene(10.0).unwrap(), 24, 16).unwrap();
        let cb = space.stress_bound_constant();
        assert_relative_eq!(cb * cb, 10.0, max_relative = 1e-11);

        // |C(M psihat)|_F <= C_b ||psihat||_{L^2_M} on random polynomials.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let psi = |q: &[f64]| {
                a[0] + a[1] * q[0] + a[2] * q[1] + a[3] * q[0] * q[1]
                    + a[4] * q[0] * q[0]
                    + a[5] * q[1] * q[1]
            };
            let c = space.kramers_stress(psi);
            let norm = space.l2m_norm(psi);
            assert!(
                c.norm() <= cb * norm * (1.0 + 1e-12),
                "bound violated: {} > {}",
                c.norm(),
                cb * norm
            );
        }
    }

    #[test]
    fn nondimensional_groups_and_scales() {
        let phys = PhysicalParams {
            thermal_energy: 4e-21,
            spring_stiffness: 1e-6,
            drag: 6e-9,
            density: 1e3,
            viscosity: 1e-3,
            number_density: 1e20,
            speed: 1e-3,
            length: 1e-5,
        };
        let (params, scales) =
            nondimensionalize(&phys, 2, SpringModel::fene(10.0).unwrap()).unwrap();
        // ell_0 = sqrt(4e-21 / 1e-6) = 6.3246e-8 m.
        assert_relative_eq!(scales.spring_length, 6.324555320336759e-8, max_relative = 1e-12);
        assert_relative_eq!(scales.convective_time, 1e-2, max_relative = 1e-14);
        assert_relative_eq!(
            params.lambda,
            6e-9 / (4.0 * 1e-6 * 1e-2),
            max_relative = 1e-14
        );
        assert_relative_eq!(params.reynolds, 1e3 * 1e-3 * 1e-5 / 1e-3, max_relative = 1e-14);

        // epsilon / (1/(2 lambda)) = (ell_0 / (2 L_0))^2.
        let lhs = params.epsilon * 2.0 * params.lambda;
        let rhs = (scales.spring_length / (2.0 * phys.length)).powi(2);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    #[test]
    fn nondimensionalize_rejects_nonpositive_inputs() {
        let mut phys = PhysicalParams {
            thermal_energy: 4e-21,
            spring_stiffness: 1e-6,
            drag: 6e-9,
            density: 1e3,
            viscosity: 1e-3,
            number_density: 1e20,
            speed: 1e-3,
            length: 1e-5,
        };
        phys.drag = 0.0;
        assert!(nondimensionalize(&phys, 2, SpringModel::Hookean).is_err());
    }
}
