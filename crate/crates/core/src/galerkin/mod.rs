//! Coupled spectral solver for the flow–density system.
//!
//! The solver advances velocity coefficients `U` and density coefficients
//! `Ψ` on a uniform time grid.  The density's time derivative is classical;
//! all transport and dissipation acts on the history-weighted companion
//! field `Φ`, whose coefficients are the discrete fractional derivative (of
//! order `1 - α`) of the `Ψ` history.  At `α = 1` the weights collapse to
//! the identity stencil and the scheme becomes a standard semi-implicit
//! method, a degeneration that is tested against an independently coded
//! classical stepper.
//!
//! One step performs, in order:
//!
//! 1. a velocity update with explicit advection and elastic forcing and an
//!    exact diagonal solve for implicit viscosity,
//! 2. a density update with explicit transport (newest history value
//!    lagged) and implicit dissipation, solved per scalar mode with a
//!    cached Cholesky factorization,
//! 3. an optional fixed-point refresh of the velocity–density coupling,
//! 4. a mass-conservation audit that rejects the step on drift.
//!
//! The full coefficient histories stay in memory: the fractional memory
//! needs them, checkpoints store them, and resumed runs therefore reproduce
//! the original trajectory bit for bit.

pub mod basis;
pub mod operators;

pub use basis::{
    build_config_basis, build_scalar_basis, build_velocity_basis, ConfigBasis, Phase, Poly,
    ScalarBasis, TorusRule, VelocityBasis,
};
pub use operators::{assemble, spin_pairs, AssembledOperators, MAX_MODES};

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Dyn};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fractional::{gl_weights, FractionalOrder};
use crate::model::{ModelError, ModelParams, SpringModel};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid solver input: {0}")]
    Invalid(String),
    #[error("mass drifted by {drift:.3e} at step {step}; the step was rejected")]
    MassDrift { step: usize, drift: f64 },
    #[error("non-finite state produced at step {step}")]
    NotFinite { step: usize },
    #[error("implicit solve failed at step {step}")]
    LinearSolve { step: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
}

/// Time-stepping controls.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    /// Derivative order of the density's time-fractional term; the coupled
    /// scheme requires `α > 1/2`.
    pub alpha: FractionalOrder,
    pub dt: f64,
    /// Number of steps in the full run; fixes the history-weight table.
    pub n_steps: usize,
    /// Extra fixed-point sweeps refreshing the velocity–density coupling
    /// after the basic update (zero keeps the plain scheme).
    pub picard_iters: usize,
    /// Early-exit tolerance for the fixed-point sweeps.
    pub picard_tol: f64,
}

impl SolverSettings {
    fn validate(&self) -> Result<(), SolverError> {
        if self.alpha.value() <= 0.5 {
            return Err(SolverError::Invalid(format!(
                "the coupled scheme needs a derivative order above 1/2, got {}",
                self.alpha.value()
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SolverError::Invalid(format!(
                "step size must be positive, got {}",
                self.dt
            )));
        }
        if self.n_steps == 0 {
            return Err(SolverError::Invalid("at least one step is required".into()));
        }
        if self.picard_iters > 0 && !(self.picard_tol > 0.0) {
            return Err(SolverError::Invalid(
                "fixed-point refinement needs a positive tolerance".into(),
            ));
        }
        Ok(())
    }
}

/// Density coefficients of the uniform unit-mass state: the constant in
/// both the box and the elongation variable, normalized so the total mass
/// is one.
pub fn equilibrium_density(scalar: &ScalarBasis, config: &ConfigBasis) -> DMatrix<f64> {
    let mut psi = DMatrix::zeros(scalar.len(), config.len());
    psi[(0, 0)] = (2.0 * std::f64::consts::PI).powf(-(scalar.dim as f64) / 2.0);
    psi
}

/// Total mass carried by density coefficients: only the doubly constant
/// mode contributes, weighted by the box volume it is normalized against.
pub fn total_mass(psi: &DMatrix<f64>, dim: usize) -> f64 {
    // ∫ X_0 dx = (2π)^{d/2} and the Maxwellian weight integrates to one.
    psi[(0, 0)] * (2.0 * std::f64::consts::PI).powf(dim as f64 / 2.0)
}

/// Coupled time stepper holding the full coefficient histories.
pub struct Solver {
    pub params: ModelParams,
    pub settings: SolverSettings,
    pub ops: AssembledOperators,
    /// History weights: binomial stencil of order `1 - α`, one per step.
    weights: Vec<f64>,
    /// Per-scalar-mode Cholesky factors of the implicit density system,
    /// deduplicated across modes sharing a Laplace eigenvalue.
    factor_of_mode: Vec<usize>,
    factors: Vec<nalgebra::linalg::Cholesky<f64, Dyn>>,
    u_hist: Vec<DVector<f64>>,
    psi_hist: Vec<DMatrix<f64>>,
    mass0: f64,
}

impl Solver {
    pub fn new(
        params: ModelParams,
        ops: AssembledOperators,
        settings: SolverSettings,
        u0: DVector<f64>,
        psi0: DMatrix<f64>,
    ) -> Result<Self, SolverError> {
        settings.validate()?;
        if u0.len() != ops.n_u {
            return Err(SolverError::Invalid(format!(
                "initial velocity has {} coefficients, the basis has {}",
                u0.len(),
                ops.n_u
            )));
        }
        if psi0.nrows() != ops.n_x || psi0.ncols() != ops.n_q {
            return Err(SolverError::Invalid(format!(
                "initial density is {}x{}, the bases give {}x{}",
                psi0.nrows(),
                psi0.ncols(),
                ops.n_x,
                ops.n_q
            )));
        }
        if !(u0.iter().all(|v| v.is_finite()) && psi0.iter().all(|v| v.is_finite())) {
            return Err(SolverError::Invalid("initial data contains non-finite entries".into()));
        }

        let weights = gl_weights(1.0 - settings.alpha.value(), settings.n_steps);
        let scale = settings.dt.powf(settings.alpha.value() - 1.0);

        // Implicit density matrix per scalar mode:
        //   I/dt + dt^{α-1} [ stiff_q/(2λ) + ε |k_a|² I ],
        // symmetric positive definite, shared across modes with equal |k_a|².
        let mut by_eigenvalue: HashMap<u64, usize> = HashMap::new();
        let mut factors = Vec::new();
        let mut factor_of_mode = Vec::with_capacity(ops.n_x);
        for a in 0..ops.n_x {
            let key = ops.lap_x[a].to_bits();
            let idx = match by_eigenvalue.get(&key) {
                Some(&idx) => idx,
                None => {
                    let mut m = ops.stiff_q.scale(scale / (2.0 * params.lambda));
                    let diag = 1.0 / settings.dt + scale * params.epsilon * ops.lap_x[a];
                    for i in 0..ops.n_q {
                        m[(i, i)] += diag;
                    }
                    let chol = nalgebra::linalg::Cholesky::new(m)
                        .ok_or_else(|| SolverError::LinearSolve { step: 0 })?;
                    factors.push(chol);
                    by_eigenvalue.insert(key, factors.len() - 1);
                    factors.len() - 1
                }
            };
            factor_of_mode.push(idx);
        }

        let mass0 = psi0[(0, 0)];
        Ok(Solver {
            params,
            settings,
            ops,
            weights,
            factor_of_mode,
            factors,
            u_hist: vec![u0],
            psi_hist: vec![psi0],
            mass0,
        })
    }

    /// Number of completed steps; state indices run `0..=completed()`.
    pub fn completed(&self) -> usize {
        self.u_hist.len() - 1
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.settings.dt
    }

    pub fn velocity(&self, n: usize) -> &DVector<f64> {
        &self.u_hist[n]
    }

    pub fn density(&self, n: usize) -> &DMatrix<f64> {
        &self.psi_hist[n]
    }

    pub fn history_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Companion-field coefficients at step `n`: the discrete fractional
    /// derivative of order `1 - α` of the density history.
    pub fn companion(&self, n: usize) -> DMatrix<f64> {
        let scale = self.settings.dt.powf(self.settings.alpha.value() - 1.0);
        let mut phi = DMatrix::zeros(self.ops.n_x, self.ops.n_q);
        for (j, &w) in self.weights.iter().take(n + 1).enumerate() {
            if w != 0.0 {
                phi += self.psi_hist[n - j].scale(w);
            }
        }
        phi.scale(scale)
    }

    fn velocity_update(&self, u_n: &DVector<f64>, psi_stress: &DMatrix<f64>) -> DVector<f64> {
        let dt = self.settings.dt;
        let nu = 1.0 / self.params.reynolds;
        let rhs = u_n.scale(1.0 / dt) - self.ops.advect(u_n, u_n)
            + self.ops.stress_force(psi_stress);
        DVector::from_fn(self.ops.n_u, |l, _| {
            rhs[l] / (1.0 / dt + nu * self.ops.visc_u[l])
        })
    }

    fn density_update(
        &self,
        psi_n: &DMatrix<f64>,
        hist: &DMatrix<f64>,
        u_transport: &DVector<f64>,
        phi_transport: &DMatrix<f64>,
        step: usize,
    ) -> Result<DMatrix<f64>, SolverError> {
        let dt = self.settings.dt;
        let scale = dt.powf(self.settings.alpha.value() - 1.0);
        let rhs = psi_n.scale(1.0 / dt)
            - self.ops.transport(u_transport, phi_transport)
            - self
                .ops
                .dissipation(self.params.lambda, self.params.epsilon, hist)
                .scale(scale);
        let mut psi_next = DMatrix::zeros(self.ops.n_x, self.ops.n_q);
        for a in 0..self.ops.n_x {
            let col = rhs.row(a).transpose();
            let sol = self.factors[self.factor_of_mode[a]].solve(&col);
            if !sol.iter().all(|v| v.is_finite()) {
                return Err(SolverError::LinearSolve { step });
            }
            psi_next.row_mut(a).copy_from(&sol.transpose());
        }
        Ok(psi_next)
    }

    /// Advance one step.
    pub fn step(&mut self) -> Result<(), SolverError> {
        let n = self.completed();
        if n >= self.settings.n_steps {
            return Err(SolverError::Invalid(
                "the configured number of steps is already completed".into(),
            ));
        }
        let next = n + 1;
        let dt = self.settings.dt;
        let scale = dt.powf(self.settings.alpha.value() - 1.0);

        // Weighted history sum, newest value excluded: H = Σ_{j≥1} w_j Ψ^{n+1-j}.
        let mut hist = DMatrix::zeros(self.ops.n_x, self.ops.n_q);
        for j in 1..=next {
            let w = self.weights[j];
            if w != 0.0 {
                hist += self.psi_hist[next - j].scale(w);
            }
        }

        let psi_n = self.psi_hist[n].clone();
        let u_n = self.u_hist[n].clone();

        let mut u_next = self.velocity_update(&u_n, &psi_n);
        // Transport sees the companion field with the newest value lagged.
        let phi_star = (&psi_n + &hist).scale(scale);
        let mut psi_next = self.density_update(&psi_n, &hist, &u_next, &phi_star, next)?;

        for _ in 0..self.settings.picard_iters {
            let u_ref = self.velocity_update(&u_n, &psi_next);
            let phi_ref = (&psi_next + &hist).scale(scale);
            let psi_ref = self.density_update(&psi_n, &hist, &u_ref, &phi_ref, next)?;
            let delta = (&u_ref - &u_next).norm() + (&psi_ref - &psi_next).norm();
            u_next = u_ref;
            psi_next = psi_ref;
            if delta < self.settings.picard_tol {
                break;
            }
        }

        if !(u_next.iter().all(|v| v.is_finite()) && psi_next.iter().all(|v| v.is_finite())) {
            return Err(SolverError::NotFinite { step: next });
        }
        let drift = (psi_next[(0, 0)] - self.mass0).abs();
        if drift > 1e-10 * self.mass0.abs().max(1.0) {
            return Err(SolverError::MassDrift { step: next, drift });
        }

        self.u_hist.push(u_next);
        self.psi_hist.push(psi_next);
        Ok(())
    }

    /// Advance to the configured horizon.
    pub fn run_to_end(&mut self) -> Result<(), SolverError> {
        while self.completed() < self.settings.n_steps {
            self.step()?;
        }
        Ok(())
    }

    /// Digest of the history weights that influenced the first `count`
    /// states.  The binomial weights are a prefix-stable sequence — they do
    /// not depend on the planned horizon — so a resume under a longer plan
    /// can still be validated against it.
    fn weights_digest(&self, count: usize) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for w in self.weights.iter().take(count) {
            hasher.update(w.to_le_bytes());
        }
        hasher.finalize().into()
    }

    /// Serialize the complete state (parameters, history weights digest and
    /// both coefficient histories) to `path`, atomically.
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), SolverError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        push_u32(&mut buf, CHECKPOINT_VERSION);
        push_u32(&mut buf, self.ops.dim as u32);
        push_u32(&mut buf, self.ops.n_u as u32);
        push_u32(&mut buf, self.ops.n_x as u32);
        push_u32(&mut buf, self.ops.n_q as u32);
        push_f64(&mut buf, self.settings.alpha.value());
        push_f64(&mut buf, self.settings.dt);
        push_f64(&mut buf, self.params.lambda);
        push_f64(&mut buf, self.params.epsilon);
        push_f64(&mut buf, self.params.gamma_c);
        push_f64(&mut buf, self.params.reynolds);
        let (kind, b) = match self.params.spring {
            SpringModel::Hookean => (0u32, 0.0),
            SpringModel::Fene { b } => (1u32, b),
        };
        push_u32(&mut buf, kind);
        push_f64(&mut buf, b);
        push_u64(&mut buf, self.settings.n_steps as u64);
        push_u64(&mut buf, self.completed() as u64);
        buf.extend_from_slice(&self.weights_digest(self.completed() + 1));
        for u in &self.u_hist {
            for &v in u.iter() {
                push_f64(&mut buf, v);
            }
        }
        for psi in &self.psi_hist {
            for &v in psi.as_slice() {
                push_f64(&mut buf, v);
            }
        }
        let digest: [u8; 32] = Sha256::digest(&buf).into();
        buf.extend_from_slice(&digest);

        let tmp = path.with_extension("ckp.tmp");
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Rebuild a solver from a checkpoint, validating that parameters,
    /// discretization sizes and history weights all match the freshly
    /// assembled configuration.
    pub fn resume_from(
        path: &Path,
        params: ModelParams,
        ops: AssembledOperators,
        settings: SolverSettings,
    ) -> Result<Solver, SolverError> {
        let buf = std::fs::read(path)?;
        if buf.len() < CHECKPOINT_MAGIC.len() + 32 {
            return Err(SolverError::Checkpoint("file is too short".into()));
        }
        let (body, stored_digest) = buf.split_at(buf.len() - 32);
        let digest: [u8; 32] = Sha256::digest(body).into();
        if digest != stored_digest {
            return Err(SolverError::Checkpoint(
                "integrity digest mismatch; the file is corrupt or truncated".into(),
            ));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.bytes(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(SolverError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(SolverError::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let dim = r.u32()? as usize;
        let n_u = r.u32()? as usize;
        let n_x = r.u32()? as usize;
        let n_q = r.u32()? as usize;
        if (dim, n_u, n_x, n_q) != (ops.dim, ops.n_u, ops.n_x, ops.n_q) {
            return Err(SolverError::Checkpoint(format!(
                "discretization mismatch: file has dim {dim}, sizes ({n_u}, {n_x}, {n_q})"
            )));
        }
        let alpha = r.f64()?;
        let dt = r.f64()?;
        let lambda = r.f64()?;
        let epsilon = r.f64()?;
        let gamma_c = r.f64()?;
        let reynolds = r.f64()?;
        let kind = r.u32()?;
        let spring_b = r.f64()?;
        let spring_matches = match (kind, params.spring) {
            (0, SpringModel::Hookean) => true,
            (1, SpringModel::Fene { b }) => b == spring_b,
            _ => false,
        };
        if alpha != settings.alpha.value()
            || dt != settings.dt
            || lambda != params.lambda
            || epsilon != params.epsilon
            || gamma_c != params.gamma_c
            || reynolds != params.reynolds
            || !spring_matches
        {
            return Err(SolverError::Checkpoint(
                "model or stepping parameters disagree with the checkpoint".into(),
            ));
        }
        let n_steps_total = r.u64()? as usize;
        let completed = r.u64()? as usize;
        if completed > n_steps_total {
            return Err(SolverError::Checkpoint(
                "completed step count exceeds the planned horizon".into(),
            ));
        }
        // The configured plan may extend past the checkpoint's (resuming an
        // interrupted run keeps its horizon; a longer one is an exact
        // continuation), but it must at least cover the work already done.
        if completed > settings.n_steps {
            return Err(SolverError::Checkpoint(format!(
                "checkpoint has completed {completed} steps, the configuration plans only {}",
                settings.n_steps
            )));
        }
        let stored_weights: [u8; 32] = r
            .bytes(32)?
            .try_into()
            .expect("fixed-size digest slice");

        let mut solver = Solver::new(
            params,
            ops,
            settings,
            DVector::zeros(n_u),
            DMatrix::zeros(n_x, n_q),
        )?;
        if solver.weights_digest(completed + 1) != stored_weights {
            return Err(SolverError::Checkpoint(
                "history-weight digest disagrees with the checkpoint".into(),
            ));
        }

        let mut u_hist = Vec::with_capacity(completed + 1);
        for _ in 0..=completed {
            let mut u = DVector::zeros(n_u);
            for i in 0..n_u {
                u[i] = r.f64()?;
            }
            u_hist.push(u);
        }
        let mut psi_hist = Vec::with_capacity(completed + 1);
        for _ in 0..=completed {
            let mut vals = Vec::with_capacity(n_x * n_q);
            for _ in 0..n_x * n_q {
                vals.push(r.f64()?);
            }
            psi_hist.push(DMatrix::from_column_slice(n_x, n_q, &vals));
        }
        if r.pos != r.buf.len() {
            return Err(SolverError::Checkpoint("trailing bytes after histories".into()));
        }
        solver.mass0 = psi_hist[0][(0, 0)];
        solver.u_hist = u_hist;
        solver.psi_hist = psi_hist;
        Ok(solver)
    }
}

const CHECKPOINT_MAGIC: &[u8] = b"FELABCKP";
const CHECKPOINT_VERSION: u32 = 1;

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], SolverError> {
        if self.pos + n > self.buf.len() {
            return Err(SolverError::Checkpoint("unexpected end of file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, SolverError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("width checked")))
    }

    fn u64(&mut self) -> Result<u64, SolverError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("width checked")))
    }

    fn f64(&mut self) -> Result<f64, SolverError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().expect("width checked")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fractional::{gl_fractional_integral, SampledPath, TimeGrid};
    use approx::assert_abs_diff_eq;

    fn shear_setup(
        alpha: f64,
        dt: f64,
        n_steps: usize,
    ) -> (ModelParams, AssembledOperators, DVector<f64>, DMatrix<f64>) {
        let spring = SpringModel::fene(10.0).unwrap();
        let params = ModelParams {
            dim: 2,
            spring,
            lambda: 1.2,
            epsilon: 0.15,
            gamma_c: 0.6,
            reynolds: 3.0,
        };
        let velocity = build_velocity_basis(2, 1).unwrap();
        let scalar = build_scalar_basis(2, 1).unwrap();
        let config = build_config_basis(2, spring, 10).unwrap();
        let ops = assemble(&params, &velocity, &scalar, &config).unwrap();

        // Shear wave plus a mild anisotropic density perturbation; the mass
        // coefficient stays at its equilibrium value.
        let mut u0 = DVector::zeros(ops.n_u);
        let shear = velocity
            .modes
            .iter()
            .position(|m| m.wave == vec![0, 1] && m.phase == Phase::Sine)
            .expect("unit shell shear mode");
        u0[shear] = 0.3;
        let mut psi0 = equilibrium_density(&scalar, &config);
        psi0[(1, 3)] = 0.05;
        psi0[(2, 1)] = -0.02;
        psi0[(0, 4)] = 0.01;
        let _ = (alpha, dt, n_steps);
        (params, ops, u0, psi0)
    }

    fn settings(alpha: f64, dt: f64, n_steps: usize) -> SolverSettings {
        SolverSettings {
            alpha: FractionalOrder::new(alpha).unwrap(),
            dt,
            n_steps,
            picard_iters: 0,
            picard_tol: 1e-8,
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let spring = SpringModel::fene(10.0).unwrap();
        let params = ModelParams {
            dim: 2,
            spring,
            lambda: 1.0,
            epsilon: 0.1,
            gamma_c: 0.5,
            reynolds: 1.0,
        };
        let velocity = build_velocity_basis(2, 1).unwrap();
        let scalar = build_scalar_basis(2, 1).unwrap();
        let config = build_config_basis(2, spring, 10).unwrap();
        let ops = assemble(&params, &velocity, &scalar, &config).unwrap();
        let psi0 = equilibrium_density(&scalar, &config);
        let u0 = DVector::zeros(ops.n_u);
        let mut solver =
            Solver::new(params, ops, settings(0.75, 0.01, 20), u0, psi0.clone()).unwrap();
        solver.run_to_end().unwrap();
        for n in 0..=20 {
            assert!(solver.velocity(n).amax() < 1e-14, "flow appeared at step {n}");
            let diff = (solver.density(n) - &psi0).amax();
            assert!(diff < 1e-12, "density moved by {diff} at step {n}");
        }
    }

    /// Classical semi-implicit stepper written independently of the solver:
    /// dense system matrix, LU factorization, raw index loops.  At `α = 1`
    /// the fractional scheme must reproduce it step for step.
    fn classical_imex(
        params: &ModelParams,
        ops: &AssembledOperators,
        dt: f64,
        n_steps: usize,
        u0: DVector<f64>,
        psi0: DMatrix<f64>,
    ) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
        let (n_u, n_x, n_q) = (ops.n_u, ops.n_x, ops.n_q);
        let nxq = n_x * n_q;
        let nu = 1.0 / params.reynolds;
        let flat = |a: usize, m: usize| m * n_x + a;

        let mut system = DMatrix::zeros(nxq, nxq);
        for a in 0..n_x {
            for m in 0..n_q {
                for m2 in 0..n_q {
                    system[(flat(a, m), flat(a, m2))] +=
                        ops.stiff_q[(m, m2)] / (2.0 * params.lambda);
                }
                system[(flat(a, m), flat(a, m))] +=
                    1.0 / dt + params.epsilon * ops.lap_x[a];
            }
        }
        let lu = system.lu();

        let mut us = vec![u0];
        let mut psis = vec![psi0];
        for _ in 0..n_steps {
            let u = us.last().unwrap().clone();
            let psi = psis.last().unwrap().clone();

            let mut u_next = DVector::zeros(n_u);
            for l in 0..n_u {
                let mut rhs = u[l] / dt;
                for i in 0..n_u {
                    for j in 0..n_u {
                        rhs -= ops.adv_u[(i * n_u + j) * n_u + l] * u[i] * u[j];
                    }
                }
                for a in 0..n_x {
                    for m in 0..n_q {
                        rhs -= ops.stress_op[(l, flat(a, m))] * psi[(a, m)];
                    }
                }
                u_next[l] = rhs / (1.0 / dt + nu * ops.visc_u[l]);
            }

            let mut rhs = DVector::zeros(nxq);
            for a in 0..n_x {
                for m in 0..n_q {
                    let mut t = 0.0;
                    for i in 0..n_u {
                        if u_next[i] == 0.0 {
                            continue;
                        }
                        let mut per_mode = 0.0;
                        for b in 0..n_x {
                            per_mode += ops.adv_x[i][(a, b)] * psi[(b, m)];
                            for (g, rx) in ops.rot_x[i].iter().enumerate() {
                                for m2 in 0..n_q {
                                    per_mode -=
                                        rx[(a, b)] * psi[(b, m2)] * ops.rot_q[g][(m, m2)];
                                }
                            }
                        }
                        t += u_next[i] * per_mode;
                    }
                    rhs[flat(a, m)] = psi[(a, m)] / dt - t;
                }
            }
            let sol = lu.solve(&rhs).expect("classical stepper solve");
            let mut psi_next = DMatrix::zeros(n_x, n_q);
            for a in 0..n_x {
                for m in 0..n_q {
                    psi_next[(a, m)] = sol[flat(a, m)];
                }
            }
            us.push(u_next);
            psis.push(psi_next);
        }
        (us, psis)
    }

    #[test]
    fn order_one_degenerates_to_the_classical_scheme() {
        let dt = 0.02;
        let n_steps = 32;
        let (params, ops, u0, psi0) = shear_setup(1.0, dt, n_steps);
        let (ref_u, ref_psi) = classical_imex(&params, &ops, dt, n_steps, u0.clone(), psi0.clone());
        let mut solver =
            Solver::new(params, ops, settings(1.0, dt, n_steps), u0, psi0).unwrap();
        solver.run_to_end().unwrap();
        for n in 0..=n_steps {
            let du = (solver.velocity(n) - &ref_u[n]).amax();
            let dpsi = (solver.density(n) - &ref_psi[n]).amax();
            assert!(du < 1e-10, "velocity deviates by {du} at step {n}");
            assert!(dpsi < 1e-10, "density deviates by {dpsi} at step {n}");
        }
    }

    #[test]
    fn mass_stays_frozen_in_a_stirred_flow() {
        let (params, ops, u0, psi0) = shear_setup(0.8, 5e-3, 50);
        let mass = psi0[(0, 0)];
        let mut solver =
            Solver::new(params, ops, settings(0.8, 5e-3, 50), u0, psi0).unwrap();
        solver.run_to_end().unwrap();
        for n in 0..=50 {
            assert!(
                (solver.density(n)[(0, 0)] - mass).abs() < 1e-13,
                "mass drifted at step {n}"
            );
        }
    }

    #[test]
    fn companion_field_inverts_back_to_the_density() {
        // The companion field is the discrete derivative of order 1-α of
        // the density history; applying the matching discrete integral must
        // return the density exactly, entry by entry.
        let alpha = 0.7;
        let dt = 0.01;
        let n_steps = 24;
        let (params, ops, u0, psi0) = shear_setup(alpha, dt, n_steps);
        let mut solver =
            Solver::new(params, ops, settings(alpha, dt, n_steps), u0, psi0).unwrap();
        solver.run_to_end().unwrap();

        let grid = TimeGrid::new(dt, n_steps).unwrap();
        let beta = FractionalOrder::new(1.0 - alpha).unwrap();
        for (a, m) in [(0usize, 0usize), (1, 3), (2, 1), (4, 7)] {
            let phi_vals: Vec<f64> =
                (0..=n_steps).map(|n| solver.companion(n)[(a, m)]).collect();
            let phi_path = SampledPath::new(grid, 1, phi_vals).unwrap();
            let back = gl_fractional_integral(beta, &phi_path);
            for n in 0..=n_steps {
                assert_abs_diff_eq!(
                    back.value(n)[0],
                    solver.density(n)[(a, m)],
                    epsilon = 1e-11
                );
            }
        }
    }

    #[test]
    fn checkpoint_resume_is_bit_identical() {
        let dt = 0.01;
        let n_steps = 24;
        let (params, ops, u0, psi0) = shear_setup(0.75, dt, n_steps);
        let mut reference =
            Solver::new(params, ops, settings(0.75, dt, n_steps), u0.clone(), psi0.clone())
                .unwrap();
        reference.run_to_end().unwrap();

        let (params2, ops2, _, _) = shear_setup(0.75, dt, n_steps);
        let mut first_half =
            Solver::new(params2, ops2, settings(0.75, dt, n_steps), u0, psi0).unwrap();
        for _ in 0..12 {
            first_half.step().unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let ckp = dir.path().join("state.ckp");
        first_half.save_checkpoint(&ckp).unwrap();

        let (params3, ops3, _, _) = shear_setup(0.75, dt, n_steps);
        let mut resumed =
            Solver::resume_from(&ckp, params3, ops3, settings(0.75, dt, n_steps)).unwrap();
        assert_eq!(resumed.completed(), 12);
        resumed.run_to_end().unwrap();

        for n in 0..=n_steps {
            for (a, b) in reference.velocity(n).iter().zip(resumed.velocity(n).iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "velocity bits differ at step {n}");
            }
            for (a, b) in reference.density(n).iter().zip(resumed.density(n).iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "density bits differ at step {n}");
            }
        }
    }

    #[test]
    fn checkpoint_rejects_corruption_and_mismatch() {
        let dt = 0.01;
        let (params, ops, u0, psi0) = shear_setup(0.75, dt, 8);
        let mut solver =
            Solver::new(params, ops, settings(0.75, dt, 8), u0, psi0).unwrap();
        for _ in 0..4 {
            solver.step().unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let ckp = dir.path().join("state.ckp");
        solver.save_checkpoint(&ckp).unwrap();

        // Flip one byte in the middle: the integrity digest must catch it.
        let mut bytes = std::fs::read(&ckp).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&ckp, &bytes).unwrap();
        let (p2, o2, _, _) = shear_setup(0.75, dt, 8);
        let err = Solver::resume_from(&ckp, p2, o2, settings(0.75, dt, 8));
        assert!(matches!(err, Err(SolverError::Checkpoint(_))));

        // Restore the file but resume with a different step size: rejected.
        solver.save_checkpoint(&ckp).unwrap();
        let (p3, o3, _, _) = shear_setup(0.75, dt, 8);
        let err = Solver::resume_from(&ckp, p3, o3, settings(0.75, 0.02, 8));
        assert!(matches!(err, Err(SolverError::Checkpoint(_))));
    }

    #[test]
    fn rejects_orders_at_or_below_one_half() {
        let (params, ops, u0, psi0) = shear_setup(0.5, 0.01, 4);
        let err = Solver::new(params, ops, settings(0.5, 0.01, 4), u0, psi0);
        assert!(matches!(err, Err(SolverError::Invalid(_))));
    }

    #[test]
    fn picard_refinement_converges_toward_the_coupled_update() {
        // With refreshes enabled the step must stay finite, conserve mass,
        // and differ from the plain scheme by no more than an O(dt²)
        // coupling correction.
        let dt = 0.01;
        let (params, ops, u0, psi0) = shear_setup(0.8, dt, 10);
        let mut plain =
            Solver::new(params, ops, settings(0.8, dt, 10), u0.clone(), psi0.clone()).unwrap();
        plain.run_to_end().unwrap();

        let (params2, ops2, _, _) = shear_setup(0.8, dt, 10);
        let mut refined = Solver::new(
            params2,
            ops2,
            SolverSettings { picard_iters: 5, ..settings(0.8, dt, 10) },
            u0,
            psi0,
        )
        .unwrap();
        refined.run_to_end().unwrap();

        let du = (plain.velocity(10) - refined.velocity(10)).amax();
        assert!(du > 0.0, "refinement had no effect at all");
        assert!(du < 10.0 * dt * dt, "refinement drifted too far: {du}");
        assert!(
            (refined.density(10)[(0, 0)] - plain.density(10)[(0, 0)]).abs() < 1e-13,
            "refinement broke mass conservation"
        );
    }
}
