//! Subordinated Langevin sampler for the dumbbell density.
//!
//! Each path carries a center of mass `x` on the periodic box and an
//! elongation `q`, evolved by Euler–Maruyama in an auxiliary *operational*
//! time:
//!
//! ```text
//! dx = u(x) ds + √(2ε) dB,      dq = (ω(u(x)) q - F(q)/(2λ)) ds + √(1/λ) dW.
//! ```
//!
//! Physical observations read the path at the inverse of a one-sided stable
//! subordinator, `(X_t, Q_t) = (x, q)(E_t)`: trapping the walk behind the
//! subordinator's jumps is exactly what turns the classical forward
//! equation into its time-fractional counterpart, so histograms of this
//! ensemble converge to the density the spectral solver evolves.  At order
//! one the subordinator degenerates to the identity — `E_t = t` with no
//! random draws — and the sampler becomes a plain Langevin scheme.
//!
//! Determinism is part of the contract: every path owns a counter-based
//! generator seeded on a per-path stream, and histogram counts are integers
//! merged by addition, so results are bit-identical for any worker-thread
//! count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::galerkin::VelocityBasis;
use crate::model::{spring_force, vorticity_split, SpringModel};

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid sampler input: {0}")]
    Invalid(String),
    #[error("elongation update failed {retries} retries at path {path}")]
    RetriesExhausted { path: usize, retries: usize },
    #[error("initializer rejection loop stalled; the density bound is too loose or wrong")]
    InitStalled,
}

// ---------------------------------------------------------------------------
// One-sided stable subordinator and its inverse
// ---------------------------------------------------------------------------

/// One sample of the standard one-sided stable law of index `alpha`,
/// normalized so that `E[exp(-s S)] = exp(-s^alpha)`.
///
/// Uses the Kanter representation: with `θ` uniform on `(0, π)` and `W`
/// standard exponential,
/// `S = sin(αθ) sin((1-α)θ)^{(1-α)/α} sin(θ)^{-1/α} W^{-(1-α)/α}`.
pub fn stable_sample(alpha: f64, rng: &mut impl Rng) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "stable index must lie in (0, 1)");
    let theta = std::f64::consts::PI * rng.gen::<f64>();
    let w: f64 = -rng.gen::<f64>().ln();
    let ratio = (1.0 - alpha) / alpha;
    (alpha * theta).sin()
        * ((1.0 - alpha) * theta).sin().powf(ratio)
        * theta.sin().powf(-1.0 / alpha)
        * w.powf(-ratio)
}

/// Increment of the stable subordinator over an operational-time step
/// `delta`, using self-similarity: `S_{τ+δ} - S_τ ~ δ^{1/α} S`.  At
/// `alpha = 1` the subordinator is the identity and the increment is
/// `delta` exactly, with no draws consumed.
pub fn subordinator_increment(alpha: f64, delta: f64, rng: &mut impl Rng) -> f64 {
    if alpha == 1.0 {
        return delta;
    }
    delta.powf(1.0 / alpha) * stable_sample(alpha, rng)
}

/// Inverse-subordinator tracker for one path: resolves `E_t = inf{τ : S_τ > t}`
/// on a fixed operational mesh of spacing `fine_step` by sweeping the
/// subordinator forward and buffering the overshooting increment, so
/// successive queries see one consistent realization.
#[derive(Clone, Debug)]
struct InverseSubordinator {
    /// Operational time reached so far (a multiple of `fine_step`).
    tau: f64,
    /// Subordinator value at `tau`.
    s: f64,
    /// Increment drawn for the next mesh cell but not yet consumed.
    pending: Option<f64>,
}

impl InverseSubordinator {
    fn new() -> Self {
        InverseSubordinator { tau: 0.0, s: 0.0, pending: None }
    }

    /// Operational time at physical time `t`; queries must be nondecreasing.
    fn op_time_at(
        &mut self,
        alpha: f64,
        fine_step: f64,
        t: f64,
        rng: &mut impl Rng,
    ) -> f64 {
        if alpha == 1.0 {
            return t;
        }
        loop {
            let inc = match self.pending.take() {
                Some(inc) => inc,
                None => subordinator_increment(alpha, fine_step, rng),
            };
            if self.s + inc > t {
                self.pending = Some(inc);
                return self.tau;
            }
            self.s += inc;
            self.tau += fine_step;
        }
    }
}

/// Sample the inverse subordinator of one fresh path at the given
/// nondecreasing physical times.
pub fn inverse_subordinator_path(
    alpha: f64,
    fine_step: f64,
    times: &[f64],
    rng: &mut impl Rng,
) -> Vec<f64> {
    assert!(alpha > 0.0 && alpha <= 1.0, "index must lie in (0, 1]");
    assert!(fine_step > 0.0, "mesh spacing must be positive");
    let mut inv = InverseSubordinator::new();
    let mut last = 0.0;
    times
        .iter()
        .map(|&t| {
            assert!(t >= last, "query times must be nondecreasing");
            last = t;
            inv.op_time_at(alpha, fine_step, t, rng)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Flow fields seen by the walkers
// ---------------------------------------------------------------------------

/// Velocity and vorticity sampled at a walker's position.
pub trait FlowField: Sync {
    fn velocity(&self, x: &[f64]) -> Vec<f64>;
    /// Antisymmetric part of the velocity gradient at `x`.
    fn vorticity(&self, x: &[f64]) -> DMatrix<f64>;
}

/// Fluid at rest.
pub struct StillFluid(pub usize);

impl FlowField for StillFluid {
    fn velocity(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.0]
    }

    fn vorticity(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::zeros(self.0, self.0)
    }
}

/// Frozen spectral velocity field: the walkers see the flow the coefficient
/// vector describes, held fixed for the duration of one advance.
pub struct SpectralFlow<'a> {
    pub basis: &'a VelocityBasis,
    pub coeffs: DVector<f64>,
}

impl FlowField for SpectralFlow<'_> {
    fn velocity(&self, x: &[f64]) -> Vec<f64> {
        self.basis.field(&self.coeffs, x)
    }

    fn vorticity(&self, x: &[f64]) -> DMatrix<f64> {
        let g = self.basis.field_grad(&self.coeffs, x);
        let d = self.basis.dim;
        let grad = DMatrix::from_fn(d, d, |i, j| g[i][j]);
        vorticity_split(&grad).1
    }
}

// ---------------------------------------------------------------------------
// Ensemble
// ---------------------------------------------------------------------------

/// Spring seen by the walkers: `Free` removes the force entirely (pure
/// subordinated diffusion, the anomalous-scaling benchmark).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WalkerSpring {
    Free,
    Spring(SpringModel),
}

/// Sampler controls.
#[derive(Debug, Clone, Copy)]
pub struct McSettings {
    /// Fractional order of the target dynamics, in (0, 1].
    pub alpha: f64,
    /// Relaxation number λ of the elongation drift.
    pub lambda: f64,
    /// Center-of-mass diffusivity ε.
    pub epsilon: f64,
    /// Operational mesh spacing for the subordinator sweep.
    pub fine_step: f64,
    /// Largest Euler–Maruyama substep in operational time.
    pub em_step: f64,
    /// Retry budget when a finitely extensible elongation update leaves the
    /// admissible ball.
    pub max_retries: usize,
}

impl McSettings {
    fn validate(&self) -> Result<(), McError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(McError::Invalid(format!(
                "fractional order must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
            ("fine_step", self.fine_step),
            ("em_step", self.em_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(McError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_retries == 0 {
            return Err(McError::Invalid("retry budget must be at least one".into()));
        }
        Ok(())
    }
}

struct Path {
    x: Vec<f64>,
    q: Vec<f64>,
    rng: ChaCha8Rng,
    inv: InverseSubordinator,
    /// Operational time the walker has integrated to.
    op_time: f64,
}

/// Ensemble of subordinated Langevin walkers.
pub struct Ensemble {
    pub dim: usize,
    pub spring: WalkerSpring,
    pub settings: McSettings,
    t_now: f64,
    paths: Vec<Path>,
}

/// Initial law of the walkers.
pub enum InitialLaw<'a> {
    /// Elongations from the spring's Maxwellian, centers uniform on the box.
    Equilibrium,
    /// All walkers at the origin of elongation space, centers uniform.
    Origin,
    /// Elongations from the density `M(q) ψ̂(q)`: `factor` is `ψ̂` and
    /// `bound` any upper bound for it on the domain.  Centers uniform.
    WeightedMaxwellian { factor: &'a (dyn Fn(&[f64]) -> f64 + Sync), bound: f64 },
}

fn sample_maxwellian(
    dim: usize,
    spring: SpringModel,
    rng: &mut impl Rng,
) -> Vec<f64> {
    match spring {
        SpringModel::Fene { b } => {
            // |q|²/b follows Beta(d/2, b/2 + 1); directions are uniform.
            let shape_r = dim as f64 / 2.0;
            let shape_tail = b / 2.0 + 1.0;
            let g1 = sample_gamma(shape_r, rng);
            let g2 = sample_gamma(shape_tail, rng);
            let r = (b * g1 / (g1 + g2)).sqrt();
            scale_to_radius(dim, r, rng)
        }
        SpringModel::Hookean => loop {
            let q: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            if q.iter().map(|v| v * v).sum::<f64>() <= spring.domain_radius().powi(2) {
                return q;
            }
        },
    }
}

/// Marsaglia–Tsang gamma sampler (shape ≥ 1 here, scale one).
fn sample_gamma(shape: f64, rng: &mut impl Rng) -> f64 {
    debug_assert!(shape >= 0.5);
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = (1.0 + c * z).powi(3);
        if v <= 0.0 {
            continue;
        }
        let u: f64 = rng.gen();
        if u.ln() < 0.5 * z * z + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

fn scale_to_radius(dim: usize, r: f64, rng: &mut impl Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.into_iter().map(|v| v * r / norm).collect()
}

impl Ensemble {
    /// Spawn `n_paths` walkers.  Every walker owns generator stream
    /// `path index` of the master seed, so the ensemble law is independent
    /// of how work is split across threads.
    pub fn new(
        dim: usize,
        spring: WalkerSpring,
        settings: McSettings,
        n_paths: usize,
        seed: u64,
        init: InitialLaw,
    ) -> Result<Self, McError> {
        settings.validate()?;
        if !(2..=3).contains(&dim) {
            return Err(McError::Invalid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n_paths == 0 {
            return Err(McError::Invalid("at least one path is required".into()));
        }
        let tau = 2.0 * std::f64::consts::PI;
        let paths: Result<Vec<Path>, McError> = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(p as u64);
                let x: Vec<f64> = (0..dim).map(|_| tau * rng.gen::<f64>()).collect();
                let q = match (&init, spring) {
                    (InitialLaw::Origin, _) => vec![0.0; dim],
                    (InitialLaw::Equilibrium, WalkerSpring::Spring(s)) => {
                        sample_maxwellian(dim, s, &mut rng)
                    }
                    (InitialLaw::Equilibrium, WalkerSpring::Free) => {
                        return Err(McError::Invalid(
                            "a free walker has no equilibrium law; use Origin".into(),
                        ))
                    }
                    (
                        InitialLaw::WeightedMaxwellian { factor, bound },
                        WalkerSpring::Spring(s),
                    ) => {
                        if !(*bound > 0.0) {
                            return Err(McError::Invalid(
                                "the density factor bound must be positive".into(),
                            ));
                        }
                        let mut q = None;
                        for _ in 0..100_000 {
                            let cand = sample_maxwellian(dim, s, &mut rng);
                            let accept = factor(&cand) / bound;
                            if accept > 1.0 + 1e-9 {
                                return Err(McError::Invalid(
                                    "the density factor exceeds its stated bound".into(),
                                ));
                            }
                            if rng.gen::<f64>() < accept {
                                q = Some(cand);
                                break;
                            }
                        }
                        q.ok_or(McError::InitStalled)?
                    }
                    (InitialLaw::WeightedMaxwellian { .. }, WalkerSpring::Free) => {
                        return Err(McError::Invalid(
                            "a weighted Maxwellian needs a spring model".into(),
                        ))
                    }
                };
                Ok(Path { x, q, rng, inv: InverseSubordinator::new(), op_time: 0.0 })
            })
            .collect();
        Ok(Ensemble { dim, spring, settings, t_now: 0.0, paths: paths? })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.t_now
    }

    /// Advance every walker to physical time `t` under the (frozen) flow.
    pub fn advance_to(&mut self, t: f64, flow: &impl FlowField) -> Result<(), McError> {
        if t < self.t_now {
            return Err(McError::Invalid(format!(
                "cannot advance backward: at {} asked for {t}",
                self.t_now
            )));
        }
        let s = self.settings;
        let dim = self.dim;
        let spring = self.spring;
        let tau = 2.0 * std::f64::consts::PI;
        self.paths
            .par_iter_mut()
            .enumerate()
            .try_for_each(|(idx, path)| -> Result<(), McError> {
                let target_op =
                    path.inv.op_time_at(s.alpha, s.fine_step, t, &mut path.rng);
                while path.op_time < target_op - 1e-15 * target_op.max(1.0) {
                    let remaining = target_op - path.op_time;
                    let h = remaining.min(s.em_step);

                    let u = flow.velocity(&path.x);
                    let omega = flow.vorticity(&path.x);

                    // Center-of-mass update, wrapped onto the box.
                    let xstep = (2.0 * s.epsilon * h).sqrt();
                    for c in 0..dim {
                        let n: f64 = path.rng.sample(StandardNormal);
                        path.x[c] = (path.x[c] + u[c] * h + xstep * n).rem_euclid(tau);
                    }

                    // Elongation drift: rigid rotation minus spring force.
                    let mut drift = vec![0.0; dim];
                    for r in 0..dim {
                        for c in 0..dim {
                            drift[r] += omega[(r, c)] * path.q[c];
                        }
                    }
                    if let WalkerSpring::Spring(model) = spring {
                        let f = spring_force(model, &path.q);
                        for c in 0..dim {
                            drift[c] -= f[c] / (2.0 * s.lambda);
                        }
                    }

                    let qstep = (h / s.lambda).sqrt();
                    let mut accepted = false;
                    for _ in 0..s.max_retries {
                        let cand: Vec<f64> = (0..dim)
                            .map(|c| {
                                let n: f64 = path.rng.sample(StandardNormal);
                                path.q[c] + drift[c] * h + qstep * n
                            })
                            .collect();
                        let admissible = match spring {
                            WalkerSpring::Spring(SpringModel::Fene { b }) => {
                                cand.iter().map(|v| v * v).sum::<f64>() < b
                            }
                            _ => true,
                        };
                        if admissible {
                            path.q = cand;
                            accepted = true;
                            break;
                        }
                    }
                    if !accepted {
                        return Err(McError::RetriesExhausted {
                            path: idx,
                            retries: s.max_retries,
                        });
                    }
                    path.op_time += h;
                }
                Ok(())
            })?;
        self.t_now = t;
        Ok(())
    }

    /// Mean squared elongation across the ensemble.
    pub fn mean_square_elongation(&self) -> f64 {
        let total: f64 = self
            .paths
            .iter()
            .map(|p| p.q.iter().map(|v| v * v).sum::<f64>())
            .sum();
        total / self.paths.len() as f64
    }

    /// Histogram of elongations over the box `[lo, hi]^d`.
    pub fn elongation_histogram(&self, lo: f64, hi: f64, bins_per_axis: usize) -> Histogram {
        let mut hist = Histogram::new(self.dim, lo, hi, bins_per_axis);
        // Integer counts merged by addition: identical for any work split.
        let counts = self
            .paths
            .par_iter()
            .fold(
                || vec![0u64; hist.counts.len()],
                |mut acc, p| {
                    if let Some(idx) = hist.bin_index(&p.q) {
                        acc[idx] += 1;
                    }
                    acc
                },
            )
            .reduce(
                || vec![0u64; hist.counts.len()],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            );
        hist.counts = counts;
        hist.total = self.paths.len() as u64;
        hist
    }

    /// Elongation of path `p` (test and diagnostic access).
    pub fn elongation(&self, p: usize) -> &[f64] {
        &self.paths[p].q
    }

    /// Center of mass of path `p`.
    pub fn position(&self, p: usize) -> &[f64] {
        &self.paths[p].x
    }
}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

/// Tensor histogram with exact integer counts.
#[derive(Clone, Debug)]
pub struct Histogram {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub bins_per_axis: usize,
    pub counts: Vec<u64>,
    /// Ensemble size the counts were drawn from (out-of-box samples are
    /// counted here but in no bin).
    pub total: u64,
}

impl Histogram {
    pub fn new(dim: usize, lo: f64, hi: f64, bins_per_axis: usize) -> Self {
        assert!(hi > lo && bins_per_axis > 0);
        Histogram {
            dim,
            lo,
            hi,
            bins_per_axis,
            counts: vec![0; bins_per_axis.pow(dim as u32)],
            total: 0,
        }
    }

    fn bin_index(&self, p: &[f64]) -> Option<usize> {
        let width = (self.hi - self.lo) / self.bins_per_axis as f64;
        let mut idx = 0usize;
        for &v in p.iter().take(self.dim) {
            if !(self.lo..self.hi).contains(&v) {
                return None;
            }
            let k = (((v - self.lo) / width) as usize).min(self.bins_per_axis - 1);
            idx = idx * self.bins_per_axis + k;
        }
        Some(idx)
    }

    /// Bin volume.
    pub fn cell_volume(&self) -> f64 {
        let width = (self.hi - self.lo) / self.bins_per_axis as f64;
        width.powi(self.dim as i32)
    }

    /// Empirical probability of each bin.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Low corner of a bin, decoded from its flat index.
    pub fn bin_corner(&self, bin: usize) -> Vec<f64> {
        let width = (self.hi - self.lo) / self.bins_per_axis as f64;
        let mut corner = vec![0.0; self.dim];
        let mut rem = bin;
        for c in (0..self.dim).rev() {
            corner[c] = self.lo + (rem % self.bins_per_axis) as f64 * width;
            rem /= self.bins_per_axis;
        }
        corner
    }

    /// Per-bin mass of a reference density, integrated with a tensor
    /// 3-point Gauss rule (exact through cubics per axis).
    pub fn bin_masses(&self, density: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let gauss = crate::quadrature::gauss_legendre(3, 0.0, 1.0);
        let width = (self.hi - self.lo) / self.bins_per_axis as f64;
        let nodes = gauss.nodes.len();
        (0..self.counts.len())
            .map(|bin| {
                let corner = self.bin_corner(bin);
                let mut p_ref = 0.0;
                for flat in 0..nodes.pow(self.dim as u32) {
                    let mut rem = flat;
                    let mut point = vec![0.0; self.dim];
                    let mut w = 1.0;
                    for c in 0..self.dim {
                        let g = rem % nodes;
                        rem /= nodes;
                        point[c] = corner[c] + gauss.nodes[g] * width;
                        w *= gauss.weights[g] * width;
                    }
                    p_ref += w * density(&point);
                }
                p_ref
            })
            .collect()
    }

    /// Total-variation distance between the empirical law and a reference
    /// density, integrated bin by bin with a tensor Gauss rule; mass the
    /// reference puts outside the box is charged to the distance.
    pub fn tv_against_density(&self, density: impl Fn(&[f64]) -> f64) -> f64 {
        let probs = self.probabilities();
        let masses = self.bin_masses(density);
        tv_between_binned(&probs, &masses)
    }

    /// Total-variation distance between two histograms with identical
    /// layout.
    pub fn tv_against(&self, other: &Histogram) -> f64 {
        assert_eq!(self.counts.len(), other.counts.len(), "layouts differ");
        let a = self.probabilities();
        let b = other.probabilities();
        0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>()
    }
}

/// Total-variation distance between two sub-probability vectors on the same
/// bins; the missing mass of each side is compared as a final virtual bin.
pub fn tv_between_binned(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "bin layouts differ");
    let tv: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    let p_out = 1.0 - p.iter().sum::<f64>();
    let q_out = (1.0 - q.iter().sum::<f64>()).max(0.0);
    0.5 * (tv + (p_out - q_out).abs())
}
