//! Run configuration: a strict, flat TOML document with one level of
//! sections, every key defaulted, and unknown keys rejected so typos cannot
//! silently fall back to defaults.
//!
//! The default document (an empty file) is the standard two-dimensional
//! FENE benchmark: `b = 10`, `alpha = 0.75`, `dt = 5e-3`, 200 steps, one
//! Fourier shell of spatial modes, 16 elongation modes.  A complete config
//! with every key at its default:
//!
//! ```toml
//! seed = 1
//!
//! [model]
//! dim = 2          # 2 or 3
//! spring = "fene"  # "fene" | "hookean"
//! b = 10.0         # fene extensibility; must satisfy b > 2
//! lambda = 1.0     # relaxation time
//! epsilon = 0.1    # center-of-mass diffusivity
//! gamma_c = 0.5    # elastic-stress coupling constant
//! reynolds = 1.0
//!
//! [grid]
//! alpha = 0.75     # memory order, in (1/2, 1]
//! dt = 5e-3
//! n_steps = 200
//!
//! [basis]
//! x_cutoff = 1     # Fourier shell radius for velocity and scalar modes
//! q_modes = 16     # elongation modes
//!
//! [initial]
//! preset = "equilibrium"  # "equilibrium" | "shear-mode" |
//!                         # "gaussian-bump-x" | "anisotropic-q"
//! amplitude = 0.4         # strength knob for the non-equilibrium presets
//! # coefficients = "ic.csv"  # optional override file, rows: field,i,j,value
//!
//! [output]
//! dir = "out"
//! stride = 1              # diagnostics every `stride` steps
//! checkpoint_every = 0    # 0 = final checkpoint only
//!
//! [solver]
//! picard_iters = 2
//! picard_tol = 1e-10
//!
//! [mc]
//! paths = 10000
//! t_final = 1.0
//! fine_step = 1e-3
//! em_step = 1e-3
//! bins = 40
//! max_retries = 10000
//! ```
//!
//! An optional `[physical]` section supplies laboratory-scale parameters
//! (all eight keys required together); when present the dimensionless group
//! is derived from them and overrides the `[model]` numbers.
//!
//! A coefficient override file replaces individual entries of the initial
//! state after the preset is built.  It is a CSV with header
//! `field,i,j,value`; `field` is `u` (j ignored) or `psi` (row i = spatial
//! mode, column j = elongation mode).  The resulting density must carry
//! unit mass — unnormalized files are refused rather than rescaled.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

use crate::galerkin::{
    equilibrium_density, total_mass, ConfigBasis, Phase, ScalarBasis, SolverSettings,
    TorusRule, VelocityBasis,
};
use crate::fractional::FractionalOrder;
use crate::langevin::McSettings;
use crate::model::{nondimensionalize, ModelParams, PhysicalParams, SpringModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpringKind {
    Fene,
    Hookean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Equilibrium,
    ShearMode,
    GaussianBumpX,
    AnisotropicQ,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub dim: usize,
    pub spring: SpringKind,
    pub b: Option<f64>,
    pub lambda: f64,
    pub epsilon: f64,
    pub gamma_c: f64,
    pub reynolds: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            dim: 2,
            spring: SpringKind::Fene,
            b: None,
            lambda: 1.0,
            epsilon: 0.1,
            gamma_c: 0.5,
            reynolds: 1.0,
        }
    }
}

/// Laboratory-scale parameters; mirrors [`PhysicalParams`] field for field.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalSection {
    pub thermal_energy: f64,
    pub spring_stiffness: f64,
    pub drag: f64,
    pub density: f64,
    pub viscosity: f64,
    pub number_density: f64,
    pub speed: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub alpha: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            dt: 5e-3,
            n_steps: 200,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSection {
    pub x_cutoff: u32,
    pub q_modes: usize,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self {
            x_cutoff: 1,
            q_modes: 16,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub preset: Preset,
    pub amplitude: f64,
    /// Optional coefficient override file, resolved against the config
    /// file's directory by [`load`].
    pub coefficients: Option<PathBuf>,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            preset: Preset::Equilibrium,
            amplitude: 0.4,
            coefficients: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub stride: usize,
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            stride: 1,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub picard_iters: usize,
    pub picard_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            picard_iters: 2,
            picard_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub paths: usize,
    pub t_final: f64,
    pub fine_step: f64,
    pub em_step: f64,
    pub bins: usize,
    pub max_retries: usize,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            paths: 10_000,
            t_final: 1.0,
            fine_step: 1e-3,
            em_step: 1e-3,
            bins: 40,
            max_retries: 10_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub physical: Option<PhysicalSection>,
    pub grid: GridSection,
    pub basis: BasisSection,
    pub initial: InitialSection,
    pub output: OutputSection,
    pub solver: SolverSection,
    pub mc: McSection,
}

/// Parse and validate a config document.  Unknown keys, out-of-range
/// values, and unknown presets are errors naming the offending key.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read a config file; relative artifact paths inside it are resolved
/// against the file's directory and required to exist.
pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    if let Some(coeffs) = &cfg.initial.coefficients {
        let resolved = if coeffs.is_relative() {
            path.parent().unwrap_or(Path::new(".")).join(coeffs)
        } else {
            coeffs.clone()
        };
        if !resolved.is_file() {
            return Err(invalid(
                "initial.coefficients",
                format!("file {} does not exist", resolved.display()),
            ));
        }
        cfg.initial.coefficients = Some(resolved);
    }
    Ok(cfg)
}

impl RunConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.dim != 2 && m.dim != 3 {
            return Err(invalid("model.dim", format!("{} is not 2 or 3", m.dim)));
        }
        match m.spring {
            SpringKind::Fene => {
                let b = m.b.unwrap_or(10.0);
                if !(b > 2.0) || !b.is_finite() {
                    return Err(invalid(
                        "model.b",
                        format!(
                            "{b} rejected: the FENE Maxwellian needs b > 2 to be \
                             quadrature-integrable"
                        ),
                    ));
                }
            }
            SpringKind::Hookean => {
                if m.b.is_some() {
                    return Err(invalid(
                        "model.b",
                        "only meaningful for the fene spring".to_string(),
                    ));
                }
            }
        }
        for (key, value, must_be_positive) in [
            ("model.lambda", m.lambda, true),
            ("model.epsilon", m.epsilon, false),
            ("model.gamma_c", m.gamma_c, false),
            ("model.reynolds", m.reynolds, true),
            ("initial.amplitude", self.initial.amplitude, false),
        ] {
            if !value.is_finite() || (must_be_positive && value <= 0.0) || value < 0.0 {
                return Err(invalid(key, format!("{value} is out of range")));
            }
        }
        let g = &self.grid;
        if !(g.alpha > 0.5 && g.alpha <= 1.0) {
            return Err(invalid(
                "grid.alpha",
                format!("{} is outside (1/2, 1]", g.alpha),
            ));
        }
        if !(g.dt > 0.0) || !g.dt.is_finite() {
            return Err(invalid("grid.dt", format!("{} is not positive", g.dt)));
        }
        if self.basis.x_cutoff == 0 {
            return Err(invalid("basis.x_cutoff", "must be at least 1".to_string()));
        }
        if self.basis.q_modes == 0 {
            return Err(invalid("basis.q_modes", "must be at least 1".to_string()));
        }
        if self.output.stride == 0 {
            return Err(invalid("output.stride", "must be at least 1".to_string()));
        }
        let s = &self.solver;
        if !(s.picard_tol > 0.0) {
            return Err(invalid(
                "solver.picard_tol",
                format!("{} is not positive", s.picard_tol),
            ));
        }
        let mc = &self.mc;
        for (key, value) in [
            ("mc.t_final", mc.t_final),
            ("mc.fine_step", mc.fine_step),
            ("mc.em_step", mc.em_step),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(invalid(key, format!("{value} is not positive")));
            }
        }
        if mc.paths == 0 || mc.bins == 0 {
            return Err(invalid("mc.paths", "paths and bins must be at least 1".to_string()));
        }
        Ok(())
    }

    pub fn spring(&self) -> Result<SpringModel, ConfigError> {
        match self.model.spring {
            SpringKind::Fene => SpringModel::fene(self.model.b.unwrap_or(10.0))
                .map_err(|e| invalid("model.b", e.to_string())),
            SpringKind::Hookean => Ok(SpringModel::Hookean),
        }
    }

    /// Dimensionless model parameters; derived from `[physical]` when that
    /// section is present, taken verbatim from `[model]` otherwise.
    pub fn model_params(&self) -> Result<ModelParams, ConfigError> {
        let spring = self.spring()?;
        if let Some(p) = &self.physical {
            let phys = PhysicalParams {
                thermal_energy: p.thermal_energy,
                spring_stiffness: p.spring_stiffness,
                drag: p.drag,
                density: p.density,
                viscosity: p.viscosity,
                number_density: p.number_density,
                speed: p.speed,
                length: p.length,
            };
            let (params, _scales) = nondimensionalize(&phys, self.model.dim, spring)
                .map_err(|e| invalid("physical", e.to_string()))?;
            Ok(params)
        } else {
            Ok(ModelParams {
                dim: self.model.dim,
                spring,
                lambda: self.model.lambda,
                epsilon: self.model.epsilon,
                gamma_c: self.model.gamma_c,
                reynolds: self.model.reynolds,
            })
        }
    }

    pub fn solver_settings(&self) -> Result<SolverSettings, ConfigError> {
        let alpha = FractionalOrder::new(self.grid.alpha)
            .map_err(|e| invalid("grid.alpha", e.to_string()))?;
        Ok(SolverSettings {
            alpha,
            dt: self.grid.dt,
            n_steps: self.grid.n_steps,
            picard_iters: self.solver.picard_iters,
            picard_tol: self.solver.picard_tol,
        })
    }

    pub fn mc_settings(&self) -> Result<McSettings, ConfigError> {
        let params = self.model_params()?;
        Ok(McSettings {
            alpha: self.grid.alpha,
            lambda: params.lambda,
            epsilon: params.epsilon,
            fine_step: self.mc.fine_step,
            em_step: self.mc.em_step,
            max_retries: self.mc.max_retries,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    /// Build the initial velocity and density coefficients from the preset
    /// and the optional coefficient override file.
    pub fn initial_state(
        &self,
        velocity: &VelocityBasis,
        scalar: &ScalarBasis,
        config: &ConfigBasis,
    ) -> Result<(DVector<f64>, DMatrix<f64>), ConfigError> {
        let mut u = DVector::zeros(velocity.modes.len());
        let mut psi = equilibrium_density(scalar, config);
        let a = self.initial.amplitude;
        match self.initial.preset {
            Preset::Equilibrium => {}
            Preset::ShearMode => {
                let idx = velocity
                    .modes
                    .iter()
                    .position(|m| m.wave_norm2() == 1.0 && m.phase == Phase::Sine)
                    .ok_or_else(|| {
                        invalid("initial.preset", "no unit-shell sine mode in the basis")
                    })?;
                u[idx] = a;
            }
            Preset::GaussianBumpX => {
                // Periodic bell centered in the box; projected onto the
                // mean-free scalar modes so the mass is untouched.
                let rule = TorusRule::new(scalar.dim, 3 * self.basis.x_cutoff as usize + 2);
                let bump = |x: &[f64]| {
                    let s: f64 = x.iter().map(|&xi| 1.0 - (xi - std::f64::consts::PI).cos()).sum();
                    (-2.0 * s).exp()
                };
                let coeffs = scalar.project(&rule, bump);
                let background = psi[(0, 0)];
                for idx in 1..scalar.len() {
                    psi[(idx, 0)] = a * coeffs[idx] * background;
                }
            }
            Preset::AnisotropicQ => {
                let idx = config
                    .modes
                    .iter()
                    .position(|m| m.degree == 2 && m.angular != Some(0))
                    .ok_or_else(|| {
                        invalid(
                            "initial.preset",
                            "no degree-2 anisotropic elongation mode; raise basis.q_modes",
                        )
                    })?;
                psi[(0, idx)] = a * psi[(0, 0)];
            }
        }
        if let Some(path) = &self.initial.coefficients {
            apply_coefficient_file(path, &mut u, &mut psi)?;
        }
        let mass = total_mass(&psi, scalar.dim);
        if (mass - 1.0).abs() > 1e-8 {
            return Err(invalid(
                "initial.coefficients",
                format!("initial density has mass {mass:.3e}, not 1; normalize the file"),
            ));
        }
        Ok((u, psi))
    }
}

/// Apply `field,i,j,value` rows on top of the preset state.
fn apply_coefficient_file(
    path: &Path,
    u: &mut DVector<f64>,
    psi: &mut DMatrix<f64>,
) -> Result<(), ConfigError> {
    let key = "initial.coefficients";
    let text = std::fs::read_to_string(path)?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if lineno == 0 && line.eq_ignore_ascii_case("field,i,j,value") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(invalid(
                key,
                format!("line {}: expected field,i,j,value", lineno + 1),
            ));
        }
        let parse_idx = |s: &str| -> Result<usize, ConfigError> {
            s.parse()
                .map_err(|_| invalid(key, format!("line {}: bad index {s:?}", lineno + 1)))
        };
        let value: f64 = parts[3]
            .parse()
            .map_err(|_| invalid(key, format!("line {}: bad value {:?}", lineno + 1, parts[3])))?;
        match parts[0] {
            "u" => {
                let i = parse_idx(parts[1])?;
                if i >= u.len() {
                    return Err(invalid(
                        key,
                        format!("line {}: u index {i} out of range (< {})", lineno + 1, u.len()),
                    ));
                }
                u[i] = value;
            }
            "psi" => {
                let i = parse_idx(parts[1])?;
                let j = parse_idx(parts[2])?;
                if i >= psi.nrows() || j >= psi.ncols() {
                    return Err(invalid(
                        key,
                        format!(
                            "line {}: psi index ({i}, {j}) out of range (< {} x {})",
                            lineno + 1,
                            psi.nrows(),
                            psi.ncols()
                        ),
                    ));
                }
                psi[(i, j)] = value;
            }
            other => {
                return Err(invalid(
                    key,
                    format!("line {}: unknown field {other:?} (u or psi)", lineno + 1),
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::{build_config_basis, build_scalar_basis, build_velocity_basis};
    use std::io::Write;

    fn bases(cfg: &RunConfig) -> (VelocityBasis, ScalarBasis, ConfigBasis) {
        let spring = cfg.spring().unwrap();
        (
            build_velocity_basis(cfg.model.dim, cfg.basis.x_cutoff).unwrap(),
            build_scalar_basis(cfg.model.dim, cfg.basis.x_cutoff).unwrap(),
            build_config_basis(cfg.model.dim, spring, cfg.basis.q_modes).unwrap(),
        )
    }

    #[test]
    fn empty_document_gives_the_documented_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.model.dim, 2);
        assert_eq!(cfg.model.spring, SpringKind::Fene);
        assert_eq!(cfg.grid.alpha, 0.75);
        assert_eq!(cfg.grid.dt, 5e-3);
        assert_eq!(cfg.grid.n_steps, 200);
        assert_eq!(cfg.basis.q_modes, 16);
        assert_eq!(cfg.initial.preset, Preset::Equilibrium);
        assert_eq!(cfg.seed(), 1);
        let params = cfg.model_params().unwrap();
        assert_eq!(params.spring, SpringModel::fene(10.0).unwrap());
    }

    #[test]
    fn out_of_range_memory_order_is_rejected_by_key() {
        let err = parse_config("[grid]\nalpha = 0.4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid.alpha") && msg.contains("(1/2, 1]"), "{msg}");
    }

    #[test]
    fn small_extensibility_is_rejected_with_the_integrability_message() {
        let err = parse_config("[model]\nb = 1.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model.b") && msg.contains("b > 2"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config("[model]\nbee = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("bee"), "{err}");
        let err = parse_config("top_secret = 1\n").unwrap_err();
        assert!(err.to_string().contains("top_secret"), "{err}");
    }

    #[test]
    fn unknown_preset_lists_the_valid_ones() {
        let err = parse_config("[initial]\npreset = \"vortex\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vortex") && msg.contains("equilibrium"), "{msg}");
    }

    #[test]
    fn duplicate_keys_are_parse_errors() {
        assert!(parse_config("[grid]\ndt = 1e-2\ndt = 2e-2\n").is_err());
    }

    #[test]
    fn hookean_with_extensibility_is_contradictory() {
        let err = parse_config("[model]\nspring = \"hookean\"\nb = 5.0\n").unwrap_err();
        assert!(err.to_string().contains("model.b"), "{err}");
    }

    #[test]
    fn presets_build_unit_mass_states() {
        for preset in ["equilibrium", "shear-mode", "gaussian-bump-x", "anisotropic-q"] {
            let cfg =
                parse_config(&format!("[initial]\npreset = \"{preset}\"\n")).unwrap();
            let (velocity, scalar, config) = bases(&cfg);
            let (u, psi) = cfg.initial_state(&velocity, &scalar, &config).unwrap();
            assert!(
                (total_mass(&psi, 2) - 1.0).abs() < 1e-12,
                "{preset} broke the mass"
            );
            match cfg.initial.preset {
                Preset::Equilibrium => assert_eq!(u.norm(), 0.0),
                Preset::ShearMode => {
                    assert_eq!(u.iter().filter(|v| **v != 0.0).count(), 1);
                    assert_eq!(u.norm(), 0.4);
                }
                Preset::GaussianBumpX => {
                    assert!(u.norm() == 0.0);
                    let x_energy: f64 =
                        (1..psi.nrows()).map(|a| psi[(a, 0)] * psi[(a, 0)]).sum();
                    assert!(x_energy > 0.0, "bump left the density x-independent");
                }
                Preset::AnisotropicQ => {
                    let aniso: f64 = (1..psi.ncols()).map(|m| psi[(0, m)].abs()).sum();
                    assert!(aniso > 0.0, "no anisotropic coefficient set");
                }
            }
        }
    }

    #[test]
    fn coefficient_file_overrides_and_mass_guard() {
        let dir = tempfile::tempdir().unwrap();
        let coeff = dir.path().join("ic.csv");
        let mut f = std::fs::File::create(&coeff).unwrap();
        writeln!(f, "field,i,j,value").unwrap();
        writeln!(f, "u,0,0,0.25").unwrap();
        writeln!(f, "psi,1,2,0.125").unwrap();
        drop(f);
        let config_path = dir.path().join("run.toml");
        std::fs::write(
            &config_path,
            "[initial]\ncoefficients = \"ic.csv\"\n",
        )
        .unwrap();
        let cfg = load(&config_path).unwrap();
        let (velocity, scalar, config) = bases(&cfg);
        let (u, psi) = cfg.initial_state(&velocity, &scalar, &config).unwrap();
        assert_eq!(u[0], 0.25);
        assert_eq!(psi[(1, 2)], 0.125);

        // Touching the mass coefficient without renormalizing is refused.
        let mut f = std::fs::File::create(&coeff).unwrap();
        writeln!(f, "field,i,j,value").unwrap();
        writeln!(f, "psi,0,0,0.5").unwrap();
        drop(f);
        let err = cfg.initial_state(&velocity, &scalar, &config).unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");

        // Referencing a missing file fails at load time.
        std::fs::remove_file(&coeff).unwrap();
        let err = load(&config_path).unwrap_err();
        assert!(err.to_string().contains("does not exist"), "{err}");
    }

    #[test]
    fn physical_section_drives_the_dimensionless_group() {
        let text = "\
[physical]
thermal_energy = 4.1e-21
spring_stiffness = 1.0e-6
drag = 6.0e-8
density = 1000.0
viscosity = 1.0e-3
number_density = 1.0e18
speed = 0.01
length = 1.0e-3
";
        let cfg = parse_config(text).unwrap();
        let params = cfg.model_params().unwrap();
        assert!(params.lambda > 0.0 && params.lambda.is_finite());
        assert!(params.reynolds > 0.0);
        assert!(params.gamma_c >= 0.0);
        // Distinct from the dimensionless defaults.
        assert!(params.lambda != 1.0);
    }

    #[test]
    fn mc_settings_inherit_model_and_grid() {
        let cfg = parse_config("[grid]\nalpha = 0.8\n[model]\nlambda = 2.0\n").unwrap();
        let mc = cfg.mc_settings().unwrap();
        assert_eq!(mc.alpha, 0.8);
        assert_eq!(mc.lambda, 2.0);
    }
}
