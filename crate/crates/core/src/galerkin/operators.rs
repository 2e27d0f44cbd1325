//! Assembly of the coupled spectral operators.
//!
//! With `u(x) = Σ_i U_i h_i(x)` in the divergence-free basis and the scaled
//! density `ψ̂(x, q) = Σ_{a,m} Ψ[a][m] X_a(x) Y_m(q)` in the tensor basis,
//! the semidiscrete system reads
//!
//! ```text
//! dU_l/dt  = - Σ_{ij} A[i][j][l] U_i U_j - ν |k_l|² U_l
//!            - γ_c Σ_{a,m} (K_m : G[a][l]) Ψ[a][m]
//! dΨ/dt    = - T(U) Φ - D Φ
//! ```
//!
//! where `Φ` holds the coefficients of the fractional-in-time companion of
//! `ψ̂` (they coincide when the derivative order is one), `T(U)` is the
//! transport operator (advection across the box plus rigid rotation of the
//! elongation by the local vorticity) and `D` is the block-diagonal
//! dissipation (elongation-space diffusion plus center-of-mass diffusion).
//!
//! The transport operator is skew-symmetric, so it cannot feed or drain the
//! density's energy; the mass row `(a, m) = (0, 0)` of both `T` and `D`
//! vanishes identically, so the total mass is frozen at its initial value up
//! to round-off.  Both facts are quadrature-exact and are pinned by tests.
//!
//! Every integral over the periodic box runs on a tensor trapezoid rule
//! sized to be exact for the trigonometric degrees that occur; integrals in
//! the elongation variable use the Maxwellian-weighted rules carried by the
//! configuration basis.

use nalgebra::DMatrix;

use crate::model::{ModelError, ModelParams};

use super::basis::{ConfigBasis, ScalarBasis, TorusRule, VelocityBasis};

/// Hard cap on basis sizes, keeping assembly and dense solves at desk scale.
pub const MAX_MODES: usize = 64;

/// Index pairs `(row, col)` of the antisymmetric generators in `dim`
/// dimensions; the vorticity matrix decomposes as `ω = Σ_g w_g J_g` with
/// `J_g` carrying `+1` at the pair and `-1` at its transpose.
pub fn spin_pairs(dim: usize) -> Vec<(usize, usize)> {
    match dim {
        2 => vec![(0, 1)],
        3 => vec![(0, 1), (0, 2), (1, 2)],
        d => panic!("unsupported dimension {d}"),
    }
}

/// Dense operator tensors for one discretization.
pub struct AssembledOperators {
    pub dim: usize,
    pub n_u: usize,
    pub n_x: usize,
    pub n_q: usize,
    /// Advection tensor `A[i][j][l] = ∫ ((h_i·∇) h_j)·h_l dx`, flat with
    /// index `(i * n_u + j) * n_u + l`; skew in `(j, l)`.
    pub adv_u: Vec<f64>,
    /// Stokes eigenvalue `|k_l|²` per velocity mode.
    pub visc_u: Vec<f64>,
    /// Laplace eigenvalue `|k_a|²` per scalar mode.
    pub lap_x: Vec<f64>,
    /// Scalar advection matrices `adv_x[i][(a, b)] = ∫ (h_i·∇X_b) X_a dx`,
    /// one skew matrix per velocity mode.
    pub adv_x: Vec<DMatrix<f64>>,
    /// Vorticity overlap `rot_x[i][g][(a, b)] = ∫ w_{i,g}(x) X_a X_b dx`
    /// where `w_{i,g}` is the `g`-th spin component of mode `i`'s vorticity;
    /// symmetric in `(a, b)`.
    pub rot_x: Vec<Vec<DMatrix<f64>>>,
    /// Elongation rotation `rot_q[g][(n, m)] = ∫ M (J_g q·∇Y_n) Y_m dq`;
    /// antisymmetric with zero diagonal.
    pub rot_q: Vec<DMatrix<f64>>,
    /// Diffusion stiffness `stiff_q[(n, m)] = ∫ M ∇Y_n·∇Y_m dq`, symmetric
    /// positive semidefinite with a zero first row and column.
    pub stiff_q: DMatrix<f64>,
    /// Per-mode elastic stress `K_m = ∫ F(q) qᵀ M Y_m dq` (symmetric d×d).
    pub stress_k: Vec<DMatrix<f64>>,
    /// Velocity-gradient overlap `G[a][l] = ∫ X_a ∇h_l dx` (d×d, entry
    /// `(i, j) = ∫ X_a ∂_j h_{l,i} dx`).
    pub stress_g: Vec<Vec<DMatrix<f64>>>,
    /// Assembled force coupling, `γ_c` folded in: row `l`, column `m·n_x + a`
    /// holds `γ_c (K_m : G[a][l])`; the velocity forcing is
    /// `-stress_op · vec(Ψ)` with `Ψ` flattened column-major.
    pub stress_op: DMatrix<f64>,
}

impl AssembledOperators {
    /// Advection tensor entry `A[i][j][l]`.
    pub fn adv(&self, i: usize, j: usize, l: usize) -> f64 {
        self.adv_u[(i * self.n_u + j) * self.n_u + l]
    }

    /// Quadratic advection form: `out_l = Σ_{ij} A[i][j][l] u_i v_j`.
    pub fn advect(
        &self,
        u: &nalgebra::DVector<f64>,
        v: &nalgebra::DVector<f64>,
    ) -> nalgebra::DVector<f64> {
        let n = self.n_u;
        let mut out = nalgebra::DVector::zeros(n);
        for i in 0..n {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            for j in 0..n {
                let c = ui * v[j];
                if c == 0.0 {
                    continue;
                }
                let base = (i * n + j) * n;
                for l in 0..n {
                    out[l] += c * self.adv_u[base + l];
                }
            }
        }
        out
    }

    /// Elastic force on the velocity modes: `-stress_op · vec(Ψ)`.
    pub fn stress_force(&self, psi: &DMatrix<f64>) -> nalgebra::DVector<f64> {
        let flat = nalgebra::DVector::from_column_slice(psi.as_slice());
        -(&self.stress_op * flat)
    }

    /// Transport applied to density coefficients: advection by the velocity
    /// with coefficients `u` plus corotational rotation.  Skew-symmetric as
    /// an operator on the `(a, m)` coefficient space for every `u`.
    pub fn transport(&self, u: &nalgebra::DVector<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_x, self.n_q);
        for i in 0..self.n_u {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            out += (&self.adv_x[i] * phi).scale(ui);
            for (g, rx) in self.rot_x[i].iter().enumerate() {
                // Weak rotation term: gradient on the test function, sign
                // from integration by parts against the Maxwellian weight.
                out -= (rx * phi * self.rot_q[g].transpose()).scale(ui);
            }
        }
        out
    }

    /// Rotation part of [`Self::transport`] alone: how the local vorticity
    /// stirs the elongation variable.  Skew-symmetric, so its energy pairing
    /// with `phi` itself vanishes to round-off.
    pub fn rotation_only(&self, u: &nalgebra::DVector<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_x, self.n_q);
        for i in 0..self.n_u {
            let ui = u[i];
            if ui == 0.0 {
                continue;
            }
            for (g, rx) in self.rot_x[i].iter().enumerate() {
                out -= (rx * phi * self.rot_q[g].transpose()).scale(ui);
            }
        }
        out
    }

    /// Dissipation applied to density coefficients: elongation diffusion
    /// `(1/2λ) stiff_q` plus center-of-mass diffusion `ε |k_a|²`, block
    /// diagonal over scalar modes.
    pub fn dissipation(
        &self,
        lambda: f64,
        epsilon: f64,
        phi: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let mut out = phi * self.stiff_q.transpose().scale(1.0 / (2.0 * lambda));
        for a in 0..self.n_x {
            let factor = epsilon * self.lap_x[a];
            for m in 0..self.n_q {
                out[(a, m)] += factor * phi[(a, m)];
            }
        }
        out
    }

    /// Largest violation of the rotation integration-by-parts identity,
    /// `max_g |rot_q[g] + rot_q[g]ᵀ|_∞`: moving the elongation gradient from
    /// the test to the trial function flips the sign exactly, because the
    /// rotation field `J_g q` is divergence-free, tangent to spheres, and
    /// orthogonal to the Maxwellian drift.
    pub fn rotation_identity_residual(&self) -> f64 {
        self.rot_q
            .iter()
            .map(|r| {
                let s = r + r.transpose();
                s.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
            })
            .fold(0.0, f64::max)
    }
}

/// Assemble every operator tensor for the given parameter set and bases.
pub fn assemble(
    params: &ModelParams,
    velocity: &VelocityBasis,
    scalar: &ScalarBasis,
    config: &ConfigBasis,
) -> Result<AssembledOperators, ModelError> {
    let dim = params.dim;
    if velocity.dim != dim || scalar.dim != dim || config.dim() != dim {
        return Err(ModelError::Invalid(format!(
            "basis dimensions ({}, {}, {}) disagree with the model dimension {dim}",
            velocity.dim,
            scalar.dim,
            config.dim()
        )));
    }
    if config.space.spring != params.spring {
        return Err(ModelError::Invalid(
            "configuration basis was built for a different spring model".into(),
        ));
    }
    let (n_u, n_x, n_q) = (velocity.len(), scalar.len(), config.len());
    for (label, n) in [("velocity", n_u), ("elongation", n_q)] {
        if n > MAX_MODES {
            return Err(ModelError::Invalid(format!(
                "{label} basis has {n} modes, exceeding the cap of {MAX_MODES}"
            )));
        }
    }

    // One torus rule exact for triple products from either spatial basis.
    let max_cut = velocity.cutoff.max(scalar.cutoff) as usize;
    let rule = TorusRule::new(dim, 3 * max_cut + 2);
    let pairs = spin_pairs(dim);
    let n_g = pairs.len();

    let mut adv_u = vec![0.0; n_u * n_u * n_u];
    let mut adv_x = vec![DMatrix::zeros(n_x, n_x); n_u];
    let mut rot_x = vec![vec![DMatrix::zeros(n_x, n_x); n_g]; n_u];
    let mut stress_g = vec![vec![DMatrix::zeros(dim, dim); n_u]; n_x];

    for node in 0..rule.len() {
        let x = rule.node(node);
        let w = rule.weight;
        let hv: Vec<Vec<f64>> = velocity.modes.iter().map(|m| m.eval(x)).collect();
        let hg: Vec<Vec<Vec<f64>>> = velocity.modes.iter().map(|m| m.grad(x)).collect();
        let xv: Vec<f64> = scalar.modes.iter().map(|m| m.eval(x)).collect();
        let xg: Vec<Vec<f64>> = scalar.modes.iter().map(|m| m.grad(x)).collect();

        // Advection tensor A[i][j][l].
        for i in 0..n_u {
            for j in 0..n_u {
                // (h_i·∇) h_j at this node.
                let mut conv = vec![0.0; dim];
                for (c, entry) in conv.iter_mut().enumerate() {
                    *entry = (0..dim).map(|cc| hv[i][cc] * hg[j][c][cc]).sum();
                }
                let base = (i * n_u + j) * n_u;
                for l in 0..n_u {
                    let dot: f64 = conv.iter().zip(&hv[l]).map(|(a, b)| a * b).sum();
                    adv_u[base + l] += w * dot;
                }
            }
        }

        for i in 0..n_u {
            // Scalar advection (h_i·∇X_b) X_a.
            for a in 0..n_x {
                for b in 0..n_x {
                    let dot: f64 = (0..dim).map(|c| hv[i][c] * xg[b][c]).sum();
                    adv_x[i][(a, b)] += w * xv[a] * dot;
                }
            }
            // Spin components of the mode's vorticity.
            for (g, &(p, q)) in pairs.iter().enumerate() {
                let spin = 0.5 * (hg[i][p][q] - hg[i][q][p]);
                if spin == 0.0 {
                    continue;
                }
                for a in 0..n_x {
                    for b in 0..n_x {
                        rot_x[i][g][(a, b)] += w * spin * xv[a] * xv[b];
                    }
                }
            }
            // Velocity-gradient overlap for the stress coupling.
            for a in 0..n_x {
                for r in 0..dim {
                    for c in 0..dim {
                        stress_g[a][i][(r, c)] += w * xv[a] * hg[i][r][c];
                    }
                }
            }
        }
    }

    // Elongation-space tensors on the Maxwellian rule.
    let m_rule = &config.space.m_rule;
    let n_nodes = m_rule.len();
    let mut stiff_q = DMatrix::zeros(n_q, n_q);
    let mut rot_q = vec![DMatrix::zeros(n_q, n_q); n_g];
    for node in 0..n_nodes {
        let q = m_rule.node(node);
        let w = m_rule.weights[node];
        for n in 0..n_q {
            let gn = &config.grads[n][node * dim..(node + 1) * dim];
            for m in 0..n_q {
                let gm = &config.grads[m][node * dim..(node + 1) * dim];
                let dot: f64 = gn.iter().zip(gm).map(|(a, b)| a * b).sum();
                stiff_q[(n, m)] += w * dot;
                for (g, &(p, c)) in pairs.iter().enumerate() {
                    // (J_g q)·∇Y_n  with  J_g q = (…, +q_c, …, -q_p, …).
                    let spin_dot = q[c] * gn[p] - q[p] * gn[c];
                    rot_q[g][(n, m)] += w * spin_dot * config.values[m][node];
                }
            }
        }
    }

    // Per-mode Kramers stress on the force-weighted rule.
    let stress_k: Vec<DMatrix<f64>> = config
        .modes
        .iter()
        .map(|mode| config.space.kramers_stress(|q| mode.poly.eval(q)))
        .collect();

    // Force coupling with γ_c folded in; column layout matches the
    // column-major flattening of Ψ (n_x × n_q).
    let mut stress_op = DMatrix::zeros(n_u, n_x * n_q);
    for l in 0..n_u {
        for m in 0..n_q {
            for a in 0..n_x {
                let contib: f64 = (0..dim)
                    .map(|r| {
                        (0..dim)
                            .map(|c| stress_k[m][(r, c)] * stress_g[a][l][(r, c)])
                            .sum::<f64>()
                    })
                    .sum();
                stress_op[(l, m * n_x + a)] = params.gamma_c * contib;
            }
        }
    }

    let visc_u = velocity.modes.iter().map(|m| m.wave_norm2()).collect();
    let lap_x = scalar.modes.iter().map(|m| m.wave_norm2()).collect();

    Ok(AssembledOperators {
        dim,
        n_u,
        n_x,
        n_q,
        adv_u,
        visc_u,
        lap_x,
        adv_x,
        rot_x,
        rot_q,
        stiff_q,
        stress_k,
        stress_g,
        stress_op,
    })
}
