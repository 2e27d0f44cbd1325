//! Spectral bases for the coupled solver.
//!
//! Three families live here:
//!
//! * [`VelocityBasis`] — real, divergence-free Fourier modes on the periodic
//!   box `[0, 2π)^d`, L²-orthonormal and mean-free.  Each mode is a single
//!   trigonometric function times a constant polarization vector orthogonal
//!   to its wave vector, so incompressibility holds pointwise and exactly.
//! * [`ScalarBasis`] — real scalar Fourier modes (constant plus cos/sin
//!   pairs) used to expand the configuration density in the spatial
//!   variable.
//! * [`ConfigBasis`] — polynomials in the dumbbell elongation `q`,
//!   orthonormalized against the Maxwellian weight of a [`ConfigSpace`].
//!   The first mode is exactly the constant `1`, which pins the total mass
//!   of the density to a single coefficient.
//!
//! All quadrature on the torus uses tensorized trapezoid rules, which are
//! exact for the trigonometric polynomials that actually appear; quadrature
//! in `q` reuses the weighted rules carried by the [`ConfigSpace`].

use nalgebra::DVector;

use crate::model::{ConfigSpace, ModelError, SpringModel};

/// Phase of a real Fourier factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// The constant function (wave vector zero).
    Constant,
    /// `cos(k·x)`.
    Cosine,
    /// `sin(k·x)`.
    Sine,
}

// ---------------------------------------------------------------------------
// Torus quadrature
// ---------------------------------------------------------------------------

/// Tensorized trapezoid rule on `[0, 2π)^d` with `n_per_dim` points per
/// axis.  Exact for trigonometric polynomials whose per-axis degree is at
/// most `n_per_dim - 1`.
#[derive(Clone, Debug)]
pub struct TorusRule {
    pub dim: usize,
    pub n_per_dim: usize,
    /// Flat node list, node-major: `nodes[i * dim + c]`.
    pub nodes: Vec<f64>,
    /// Common weight `(2π / n_per_dim)^d` shared by every node.
    pub weight: f64,
}

impl TorusRule {
    pub fn new(dim: usize, n_per_dim: usize) -> Self {
        assert!((2..=3).contains(&dim), "torus rule supports dim 2 or 3");
        assert!(n_per_dim >= 2);
        let h = 2.0 * std::f64::consts::PI / n_per_dim as f64;
        let total = n_per_dim.pow(dim as u32);
        let mut nodes = Vec::with_capacity(total * dim);
        for flat in 0..total {
            let mut rem = flat;
            for _ in 0..dim {
                nodes.push((rem % n_per_dim) as f64 * h);
                rem /= n_per_dim;
            }
        }
        TorusRule { dim, n_per_dim, nodes, weight: h.powi(dim as i32) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }
}

fn wave_dot(wave: &[i32], x: &[f64]) -> f64 {
    wave.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum()
}

/// Enumerate one representative of every `±k` pair with `0 < |k|² ≤ cutoff²`.
///
/// The representative is the member whose first nonzero component is
/// positive; the list is sorted by `(|k|², components)` so basis ordering is
/// reproducible run to run.
fn wave_representatives(dim: usize, cutoff: u32) -> Vec<Vec<i32>> {
    let c = cutoff as i32;
    let mut reps = Vec::new();
    let mut k = vec![-c; dim];
    'outer: loop {
        let norm2: i32 = k.iter().map(|&v| v * v).sum();
        if norm2 > 0 && norm2 <= c * c {
            let first = *k.iter().find(|&&v| v != 0).expect("nonzero wave");
            if first > 0 {
                reps.push(k.clone());
            }
        }
        for c_idx in (0..dim).rev() {
            if k[c_idx] < c {
                k[c_idx] += 1;
                continue 'outer;
            }
            k[c_idx] = -c;
        }
        break;
    }
    reps.sort_by_key(|k| {
        let norm2: i32 = k.iter().map(|&v| v * v).sum();
        (norm2, k.clone())
    });
    reps
}

// ---------------------------------------------------------------------------
// Divergence-free velocity basis
// ---------------------------------------------------------------------------

/// One real, divergence-free Fourier mode `h(x) = norm · e · trig(k·x)`.
#[derive(Clone, Debug)]
pub struct VelocityMode {
    pub wave: Vec<i32>,
    /// Unit polarization vector, orthogonal to `wave`.
    pub polarization: Vec<f64>,
    pub phase: Phase,
    /// L² normalization constant `√(2 / (2π)^d)`.
    pub norm: f64,
}

impl VelocityMode {
    /// Mode value at `x`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let arg = wave_dot(&self.wave, x);
        let trig = match self.phase {
            Phase::Cosine => arg.cos(),
            Phase::Sine => arg.sin(),
            Phase::Constant => unreachable!("velocity modes are mean-free"),
        };
        self.polarization.iter().map(|&e| self.norm * e * trig).collect()
    }

    /// Gradient at `x`: `out[i][j] = ∂ h_i / ∂ x_j`.
    pub fn grad(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let arg = wave_dot(&self.wave, x);
        let dtrig = match self.phase {
            Phase::Cosine => -arg.sin(),
            Phase::Sine => arg.cos(),
            Phase::Constant => unreachable!("velocity modes are mean-free"),
        };
        self.polarization
            .iter()
            .map(|&e| {
                self.wave
                    .iter()
                    .map(|&k| self.norm * e * dtrig * k as f64)
                    .collect()
            })
            .collect()
    }

    /// Squared wave number `|k|²`, the Stokes eigenvalue of the mode.
    pub fn wave_norm2(&self) -> f64 {
        self.wave.iter().map(|&k| (k * k) as f64).sum()
    }
}

/// Divergence-free, mean-free, L²-orthonormal velocity basis on the torus.
#[derive(Clone, Debug)]
pub struct VelocityBasis {
    pub dim: usize,
    pub cutoff: u32,
    pub modes: Vec<VelocityMode>,
}

/// Polarization vectors orthogonal to `k`: one in two dimensions, an
/// orthonormal pair in three.  The choice is deterministic in `k`.
fn polarizations(wave: &[i32]) -> Vec<Vec<f64>> {
    let kf: Vec<f64> = wave.iter().map(|&v| v as f64).collect();
    let knorm = kf.iter().map(|v| v * v).sum::<f64>().sqrt();
    match wave.len() {
        2 => vec![vec![kf[1] / knorm, -kf[0] / knorm]],
        3 => {
            // Cross the wave vector with the coordinate axis it is least
            // aligned with, then complete the right-handed frame.
            let axis = (0..3)
                .min_by(|&a, &b| kf[a].abs().partial_cmp(&kf[b].abs()).expect("finite"))
                .expect("three axes");
            let mut a = [0.0; 3];
            a[axis] = 1.0;
            let mut e1 = [
                a[1] * kf[2] - a[2] * kf[1],
                a[2] * kf[0] - a[0] * kf[2],
                a[0] * kf[1] - a[1] * kf[0],
            ];
            let n1 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
            e1.iter_mut().for_each(|v| *v /= n1);
            let mut e2 = [
                kf[1] * e1[2] - kf[2] * e1[1],
                kf[2] * e1[0] - kf[0] * e1[2],
                kf[0] * e1[1] - kf[1] * e1[0],
            ];
            let n2 = e2.iter().map(|v| v * v).sum::<f64>().sqrt();
            e2.iter_mut().for_each(|v| *v /= n2);
            vec![e1.to_vec(), e2.to_vec()]
        }
        d => panic!("unsupported dimension {d}"),
    }
}

/// Build the divergence-free velocity basis with all wave vectors in the
/// ball `|k| ≤ cutoff`.  Modes are ordered by wave vector, then
/// polarization, then phase (cosine before sine).
pub fn build_velocity_basis(dim: usize, cutoff: u32) -> Result<VelocityBasis, ModelError> {
    if !(2..=3).contains(&dim) {
        return Err(ModelError::Invalid(format!(
            "velocity basis requires dimension 2 or 3, got {dim}"
        )));
    }
    if cutoff == 0 {
        return Err(ModelError::Invalid(
            "velocity basis needs a positive wave-number cutoff".into(),
        ));
    }
    let norm = (2.0 / (2.0 * std::f64::consts::PI).powi(dim as i32)).sqrt();
    let mut modes = Vec::new();
    for wave in wave_representatives(dim, cutoff) {
        for pol in polarizations(&wave) {
            for phase in [Phase::Cosine, Phase::Sine] {
                modes.push(VelocityMode {
                    wave: wave.clone(),
                    polarization: pol.clone(),
                    phase,
                    norm,
                });
            }
        }
    }
    Ok(VelocityBasis { dim, cutoff, modes })
}

impl VelocityBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Velocity field reconstructed from spectral coefficients.
    pub fn field(&self, coeffs: &DVector<f64>, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        for (mode, &c) in self.modes.iter().zip(coeffs.iter()) {
            for (ui, hi) in u.iter_mut().zip(mode.eval(x)) {
                *ui += c * hi;
            }
        }
        u
    }

    /// Velocity gradient reconstructed from spectral coefficients:
    /// `out[i][j] = ∂ u_i / ∂ x_j`.
    pub fn field_grad(&self, coeffs: &DVector<f64>, x: &[f64]) -> Vec<Vec<f64>> {
        let mut g = vec![vec![0.0; self.dim]; self.dim];
        for (mode, &c) in self.modes.iter().zip(coeffs.iter()) {
            let mg = mode.grad(x);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    g[i][j] += c * mg[i][j];
                }
            }
        }
        g
    }

    /// A torus rule exact for every integrand assembled from this basis
    /// (triple products of modes and their derivatives).
    pub fn quadrature(&self) -> TorusRule {
        TorusRule::new(self.dim, (3 * self.cutoff + 2) as usize)
    }
}

// ---------------------------------------------------------------------------
// Scalar spatial basis
// ---------------------------------------------------------------------------

/// One real scalar Fourier mode on the torus.
#[derive(Clone, Debug)]
pub struct ScalarMode {
    pub wave: Vec<i32>,
    pub phase: Phase,
    pub norm: f64,
}

impl ScalarMode {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.phase {
            Phase::Constant => self.norm,
            Phase::Cosine => self.norm * wave_dot(&self.wave, x).cos(),
            Phase::Sine => self.norm * wave_dot(&self.wave, x).sin(),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let dtrig = match self.phase {
            Phase::Constant => 0.0,
            Phase::Cosine => -wave_dot(&self.wave, x).sin(),
            Phase::Sine => wave_dot(&self.wave, x).cos(),
        };
        self.wave.iter().map(|&k| self.norm * dtrig * k as f64).collect()
    }

    pub fn wave_norm2(&self) -> f64 {
        self.wave.iter().map(|&k| (k * k) as f64).sum()
    }
}

/// L²-orthonormal scalar Fourier basis; the first mode is the constant
/// `(2π)^{-d/2}`.
#[derive(Clone, Debug)]
pub struct ScalarBasis {
    pub dim: usize,
    pub cutoff: u32,
    pub modes: Vec<ScalarMode>,
}

/// Build the scalar basis with wave vectors in `|k| ≤ cutoff` plus the
/// constant mode in front.
pub fn build_scalar_basis(dim: usize, cutoff: u32) -> Result<ScalarBasis, ModelError> {
    if !(2..=3).contains(&dim) {
        return Err(ModelError::Invalid(format!(
            "scalar basis requires dimension 2 or 3, got {dim}"
        )));
    }
    let vol = (2.0 * std::f64::consts::PI).powi(dim as i32);
    let mut modes = vec![ScalarMode {
        wave: vec![0; dim],
        phase: Phase::Constant,
        norm: 1.0 / vol.sqrt(),
    }];
    let norm = (2.0 / vol).sqrt();
    for wave in wave_representatives(dim, cutoff) {
        for phase in [Phase::Cosine, Phase::Sine] {
            modes.push(ScalarMode { wave: wave.clone(), phase, norm });
        }
    }
    Ok(ScalarBasis { dim, cutoff, modes })
}

impl ScalarBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Project a scalar function onto the basis with the given torus rule.
    pub fn project(&self, rule: &TorusRule, f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
        let mut coeffs = DVector::zeros(self.len());
        for i in 0..rule.len() {
            let x = rule.node(i);
            let fx = f(x) * rule.weight;
            for (a, mode) in self.modes.iter().enumerate() {
                coeffs[a] += fx * mode.eval(x);
            }
        }
        coeffs
    }
}

// ---------------------------------------------------------------------------
// Polynomials in the elongation variable
// ---------------------------------------------------------------------------

/// Sparse multivariate polynomial in two or three variables.
#[derive(Clone, Debug)]
pub struct Poly {
    dim: usize,
    /// `(exponents, coefficient)` pairs; exponents beyond `dim` stay zero.
    terms: Vec<([u8; 3], f64)>,
}

impl Poly {
    pub fn zero(dim: usize) -> Self {
        Poly { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Poly::zero(dim);
        p.push([0, 0, 0], c);
        p
    }

    pub fn monomial(dim: usize, expo: &[u8], c: f64) -> Self {
        let mut e = [0u8; 3];
        e[..expo.len()].copy_from_slice(expo);
        let mut p = Poly::zero(dim);
        p.push(e, c);
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn push(&mut self, expo: [u8; 3], c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.iter_mut().find(|(e, _)| *e == expo) {
            Some((_, coef)) => *coef += c,
            None => self.terms.push((expo, c)),
        }
    }

    pub fn add_scaled(&mut self, other: &Poly, s: f64) {
        assert_eq!(self.dim, other.dim);
        for &(e, c) in &other.terms {
            self.push(e, s * c);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, c) in &mut self.terms {
            *c *= s;
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        assert_eq!(self.dim, other.dim);
        let mut out = Poly::zero(self.dim);
        for &(ea, ca) in &self.terms {
            for &(eb, cb) in &other.terms {
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                out.push(e, ca * cb);
            }
        }
        out
    }

    pub fn eval(&self, q: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(e, c) in &self.terms {
            let mut term = c;
            for (axis, &p) in e.iter().take(self.dim).enumerate() {
                term *= q[axis].powi(p as i32);
            }
            acc += term;
        }
        acc
    }

    /// Partial derivative along `axis`.
    pub fn derivative(&self, axis: usize) -> Poly {
        let mut out = Poly::zero(self.dim);
        for &(e, c) in &self.terms {
            if e[axis] == 0 {
                continue;
            }
            let mut de = e;
            de[axis] -= 1;
            out.push(de, c * e[axis] as f64);
        }
        out
    }

    pub fn total_degree(&self) -> usize {
        self.terms
            .iter()
            .map(|(e, _)| (e[0] + e[1] + e[2]) as usize)
            .max()
            .unwrap_or(0)
    }

    /// Drop terms whose coefficients are negligible relative to the largest,
    /// keeping the representation tidy after orthonormalization arithmetic.
    fn prune(&mut self) {
        let max = self
            .terms
            .iter()
            .map(|(_, c)| c.abs())
            .fold(0.0f64, f64::max);
        if max > 0.0 {
            self.terms.retain(|(_, c)| c.abs() > 1e-13 * max);
        }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc *= (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Real and imaginary parts of `(q₁ + i q₂)^m`, the degree-`m` planar
/// harmonic pair.
fn planar_harmonic(m: u32, sine: bool) -> Poly {
    let mut p = Poly::zero(2);
    for k in 0..=m {
        let par = if sine { 1 } else { 0 };
        if k % 2 != par {
            continue;
        }
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        p.push([(m - k) as u8, k as u8, 0], sign * binomial(m, k));
    }
    p
}

// ---------------------------------------------------------------------------
// Maxwellian-orthonormal configuration basis
// ---------------------------------------------------------------------------

/// One configuration mode: an orthonormal polynomial with bookkeeping for
/// tests and diagnostics.
#[derive(Clone, Debug)]
pub struct ConfigMode {
    pub poly: Poly,
    /// Total polynomial degree.
    pub degree: usize,
    /// Planar angular index (two dimensions only; `None` in three).
    pub angular: Option<u32>,
}

/// Polynomial basis in `q`, orthonormal in the Maxwellian-weighted inner
/// product of the attached [`ConfigSpace`].  `modes[0]` is the constant `1`.
pub struct ConfigBasis {
    pub space: ConfigSpace,
    pub modes: Vec<ConfigMode>,
    /// Mode values on the Maxwellian rule nodes: `values[m][node]`.
    pub values: Vec<Vec<f64>>,
    /// Mode gradients on the Maxwellian rule nodes: `grads[m][node * dim + c]`.
    pub grads: Vec<Vec<f64>>,
}

/// Raw (pre-orthonormalization) mode list in two dimensions: for every
/// total degree `p`, planar harmonics `m = p mod 2, …, p` times radial
/// factors `|q|^{p-m}`, cosine before sine.
fn raw_modes_2d(count: usize) -> Vec<(Poly, Option<u32>)> {
    let mut raw = Vec::new();
    let mut p = 0usize;
    while raw.len() < count {
        let mut m = (p % 2) as u32;
        loop {
            let j = (p as u32 - m) / 2;
            let mut radial = Poly::constant(2, 1.0);
            let r2 = {
                let mut s = Poly::monomial(2, &[2, 0], 1.0);
                s.add_scaled(&Poly::monomial(2, &[0, 2], 1.0), 1.0);
                s
            };
            for _ in 0..j {
                radial = radial.mul(&r2);
            }
            if m == 0 {
                raw.push((radial.clone(), Some(0)));
            } else {
                raw.push((radial.mul(&planar_harmonic(m, false)), Some(m)));
                raw.push((radial.mul(&planar_harmonic(m, true)), Some(m)));
            }
            if m as usize + 2 > p {
                break;
            }
            m += 2;
        }
        p += 1;
    }
    raw.truncate(count);
    raw
}

/// Raw mode list in three dimensions: monomials ordered by total degree,
/// then lexicographically.
fn raw_modes_3d(count: usize) -> Vec<(Poly, Option<u32>)> {
    let mut raw = Vec::new();
    let mut p = 0u8;
    while raw.len() < count {
        for a in (0..=p).rev() {
            for b in (0..=p - a).rev() {
                let c = p - a - b;
                raw.push((Poly::monomial(3, &[a, b, c], 1.0), None));
            }
        }
        p += 1;
    }
    raw.truncate(count);
    raw
}

/// Build the Maxwellian-orthonormal configuration basis with `n_modes`
/// polynomials.
///
/// Modified Gram–Schmidt runs in the quadrature inner product of a
/// [`ConfigSpace`] sized so that every product of two basis polynomials
/// (plus the coefficient factors met during operator assembly) is integrated
/// exactly for finitely extensible springs, and far below round-off for the
/// truncated harmonic spring.
pub fn build_config_basis(
    dim: usize,
    spring: SpringModel,
    n_modes: usize,
) -> Result<ConfigBasis, ModelError> {
    if n_modes == 0 {
        return Err(ModelError::Invalid(
            "configuration basis needs at least one mode".into(),
        ));
    }
    let raw = match dim {
        2 => raw_modes_2d(n_modes),
        3 => raw_modes_3d(n_modes),
        d => {
            return Err(ModelError::Invalid(format!(
                "configuration basis requires dimension 2 or 3, got {d}"
            )))
        }
    };
    let max_degree = raw
        .iter()
        .map(|(p, _)| p.total_degree())
        .max()
        .expect("nonempty raw mode list");
    // Jacobi rules are exact for the finitely extensible spring at any node
    // count covering the polynomial degree; the truncated harmonic spring
    // folds a Gaussian kernel into a Gauss–Legendre rule instead, which
    // needs enough nodes to resolve the kernel itself to round-off.
    let radial_nodes = match spring {
        SpringModel::Fene { .. } => max_degree + 8,
        SpringModel::Hookean => (max_degree + 32).max(48),
    };
    let angular_degree = 2 * max_degree + 6;
    let space = ConfigSpace::build(dim, spring, radial_nodes, angular_degree)?;
    build_config_basis_on(space, raw)
}

/// Orthonormalize `raw` modes against the Maxwellian rule of `space`.
/// Exposed separately so tests can rebuild the same basis on refined
/// quadrature.
pub fn build_config_basis_on(
    space: ConfigSpace,
    raw: Vec<(Poly, Option<u32>)>,
) -> Result<ConfigBasis, ModelError> {
    let rule = &space.m_rule;
    let n_nodes = rule.nodes.len() / space.dim;
    let node = |i: usize| &rule.nodes[i * space.dim..(i + 1) * space.dim];

    let mut modes: Vec<ConfigMode> = Vec::with_capacity(raw.len());
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(raw.len());
    for (poly, angular) in raw {
        let mut p = poly;
        let mut v: Vec<f64> = (0..n_nodes).map(|i| p.eval(node(i))).collect();
        // Modified Gram–Schmidt, twice for orthogonality at round-off level.
        for _ in 0..2 {
            for (prev_mode, prev_vals) in modes.iter().zip(&values) {
                let dot: f64 = rule
                    .weights
                    .iter()
                    .zip(&v)
                    .zip(prev_vals)
                    .map(|((&w, &a), &b)| w * a * b)
                    .sum();
                p.add_scaled(&prev_mode.poly, -dot);
                for (vi, &pi) in v.iter_mut().zip(prev_vals) {
                    *vi -= dot * pi;
                }
            }
        }
        let norm2: f64 = rule
            .weights
            .iter()
            .zip(&v)
            .map(|(&w, &a)| w * a * a)
            .sum();
        if norm2 <= 1e-20 {
            return Err(ModelError::Invalid(
                "configuration modes are linearly dependent under quadrature; \
                 increase quadrature resolution or reduce the mode count"
                    .into(),
            ));
        }
        let inv = 1.0 / norm2.sqrt();
        p.scale(inv);
        p.prune();
        v.iter_mut().for_each(|x| *x *= inv);
        let degree = p.total_degree();
        modes.push(ConfigMode { poly: p, degree, angular });
        values.push(v);
    }

    let grads = modes
        .iter()
        .map(|m| {
            let parts: Vec<Poly> = (0..space.dim).map(|c| m.poly.derivative(c)).collect();
            let mut g = vec![0.0; n_nodes * space.dim];
            for i in 0..n_nodes {
                for (c, part) in parts.iter().enumerate() {
                    g[i * space.dim + c] = part.eval(node(i));
                }
            }
            g
        })
        .collect();

    Ok(ConfigBasis { space, modes, values, grads })
}

impl ConfigBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    /// Gram matrix of the basis under the Maxwellian rule; orthonormality
    /// means this is the identity to round-off.
    pub fn gram(&self) -> nalgebra::DMatrix<f64> {
        let n = self.len();
        let mut g = nalgebra::DMatrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                g[(a, b)] = self
                    .space
                    .m_rule
                    .weights
                    .iter()
                    .zip(&self.values[a])
                    .zip(&self.values[b])
                    .map(|((&w, &x), &y)| w * x * y)
                    .sum();
            }
        }
        g
    }

    /// Project a function of `q` onto the basis in the Maxwellian inner
    /// product.
    pub fn project(&self, f: impl Fn(&[f64]) -> f64) -> DVector<f64> {
        let rule = &self.space.m_rule;
        let n_nodes = rule.nodes.len() / self.space.dim;
        let fv: Vec<f64> = (0..n_nodes)
            .map(|i| f(&rule.nodes[i * self.space.dim..(i + 1) * self.space.dim]))
            .collect();
        DVector::from_iterator(
            self.len(),
            self.values.iter().map(|vals| {
                rule.weights
                    .iter()
                    .zip(vals)
                    .zip(&fv)
                    .map(|((&w, &y), &f)| w * y * f)
                    .sum()
            }),
        )
    }

    /// Evaluate the polynomial with the given coefficients at `q`.
    pub fn eval(&self, coeffs: &DVector<f64>, q: &[f64]) -> f64 {
        self.modes
            .iter()
            .zip(coeffs.iter())
            .map(|(m, &c)| c * m.poly.eval(q))
            .sum()
    }
}
