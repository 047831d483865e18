//! Run configuration: one TOML file fully determines a run, scalar keys can
//! be overridden from the command line (flag > file > default).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tlayer_core::cell1d::{geometric_l_grid, E1Options};
use tlayer_core::cellnd::{CellGrid, CellInit, EperOptions, Kick, LatticeBasis, PerturbationClass};
use tlayer_core::mollifier::KernelShape;
use tlayer_core::{CompositeJump, DensityConfig, EnergyDensity, Error, PiecewiseField, Result};

/// Environment variable consulted for the worker count when neither the
/// flag nor the config file sets it.
pub const WORKERS_ENV: &str = "TLAYER_WORKERS";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub density: Option<DensityConfig>,
    #[serde(default)]
    pub jump: Option<JumpConfig>,
    #[serde(default)]
    pub e1: E1Config,
    #[serde(default)]
    pub eper: EperConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub recover: RecoverConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub check: CheckConfig,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub nu: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    #[serde(default)]
    pub f_plus: Vec<f64>,
    #[serde(default)]
    pub f_minus: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct E1Config {
    pub grid_n: usize,
    /// Explicit `L` values; when empty, `2^-l_exp_min ..= 2^-l_exp_max`.
    pub l_grid: Vec<f64>,
    pub l_exp_min: i32,
    pub l_exp_max: i32,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for E1Config {
    fn default() -> Self {
        Self {
            grid_n: 1024,
            l_grid: Vec::new(),
            l_exp_min: 1,
            l_exp_max: 5,
            grad_tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

impl E1Config {
    pub fn l_values(&self) -> Vec<f64> {
        if self.l_grid.is_empty() {
            geometric_l_grid(self.l_exp_min, self.l_exp_max)
        } else {
            self.l_grid.clone()
        }
    }

    pub fn options(&self) -> E1Options {
        E1Options {
            grad_tol: self.grad_tol,
            max_iter: self.max_iter,
        }
    }

    fn check(&self) -> Result<()> {
        if self.grid_n < 128 || !self.grid_n.is_multiple_of(2) {
            return config_err("e1.grid_n must be even and at least 128");
        }
        let l = self.l_values();
        if l.is_empty() || l.iter().any(|v| !(*v > 0.0)) {
            return config_err("e1 L grid must be nonempty and positive");
        }
        if !(self.grad_tol > 0.0) || self.max_iter == 0 {
            return config_err("e1 tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RampChoice {
    Quintic,
    Kernel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EperConfig {
    pub normal: usize,
    /// Per tangential axis; a single entry is repeated.
    pub tangential: Vec<usize>,
    pub class: PerturbationClass,
    pub ramp: RampChoice,
    pub init: CellInit,
    /// Amplitude of a seeded random kick; zero disables it.
    pub kick: f64,
    /// Optional lattice tangents; defaults to an orthonormal frame.
    pub tangents: Vec<Vec<f64>>,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for EperConfig {
    fn default() -> Self {
        Self {
            normal: 64,
            tangential: vec![64],
            class: PerturbationClass::Distribution,
            ramp: RampChoice::Quintic,
            init: CellInit::FromE1,
            kick: 0.0,
            tangents: Vec::new(),
            grad_tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

impl EperConfig {
    pub fn grid(&self, dim: usize) -> Result<CellGrid> {
        let m = dim.saturating_sub(1);
        let tangential = match self.tangential.len() {
            1 => vec![self.tangential[0]; m],
            k if k == m => self.tangential.clone(),
            _ => return config_err(format!("eper.tangential needs 1 or {m} entries")),
        };
        let g = CellGrid {
            normal: self.normal,
            tangential,
        };
        g.check(dim).map_err(|e| Error::Config(e.to_string()))?;
        Ok(g)
    }

    pub fn basis(&self, nu: &[f64]) -> Result<LatticeBasis> {
        if self.tangents.is_empty() {
            LatticeBasis::orthonormal(nu)
        } else {
            LatticeBasis::new(nu.to_vec(), self.tangents.clone())
        }
        .map_err(|e| Error::Config(format!("lattice: {e}")))
    }

    /// Options without the ramp, which needs a kernel profile for
    /// [`RampChoice::Kernel`].
    pub fn options(&self, seed: u64) -> EperOptions {
        EperOptions {
            grad_tol: self.grad_tol,
            max_iter: self.max_iter,
            class: self.class,
            init: self.init,
            kick: (self.kick > 0.0).then_some(Kick {
                seed,
                amplitude: self.kick,
            }),
            ..EperOptions::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    #[serde(flatten)]
    pub shape: KernelShape,
    pub resolution: usize,
    pub quadrature: usize,
    /// Rows of the Γ table written by `limit-density`.
    pub gamma_samples: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            shape: KernelShape::Bump,
            resolution: 4096,
            quadrature: 4096,
            gamma_samples: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverConfig {
    pub field: Option<PathBuf>,
    pub epsilons: Vec<f64>,
    pub spacing_divisor: f64,
    pub mean_correction: bool,
    /// Also run the modified sequence on this interface.
    pub modified_interface: Option<usize>,
    /// Cell size `L` of the modified sequence.
    pub cell_l: f64,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        Self {
            field: None,
            epsilons: vec![0.1, 0.05, 0.025, 0.0125],
            spacing_divisor: 16.0,
            mean_correction: false,
            modified_interface: None,
            cell_l: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ScanConfig {
    /// Include the periodic cell value at every `L`.
    pub eper: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Run the slow oracles on every bundled problem.
    pub thorough: bool,
    pub fd_points: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            thorough: false,
            fd_points: 8,
        }
    }
}

pub fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn density(&self) -> Result<EnergyDensity> {
        let d = self
            .density
            .as_ref()
            .ok_or_else(|| Error::Config("missing [density] section".into()))?;
        EnergyDensity::from_config(d).map_err(|e| Error::Config(format!("density: {e}")))
    }

    pub fn jump(&self, density: &EnergyDensity) -> Result<CompositeJump> {
        let j = self
            .jump
            .as_ref()
            .ok_or_else(|| Error::Config("missing [jump] section".into()))?;
        let x = vec![0.0; density.dim()];
        let jump = CompositeJump::new(
            density.layout.clone(),
            x,
            j.nu.clone(),
            j.v_plus.clone(),
            j.v_minus.clone(),
            j.f_plus.clone(),
            j.f_minus.clone(),
        )
        .map_err(|e| Error::Config(format!("jump: {e}")))?;
        if jump.f_plus.len() != density.n_f {
            return config_err("jump f values do not match the density");
        }
        jump.check_compatible(1e-9)
            .map_err(|e| Error::Config(format!("jump: {e}")))?;
        Ok(jump)
    }

    pub fn field(&self) -> Result<PiecewiseField> {
        let p = self
            .recover
            .field
            .as_ref()
            .ok_or_else(|| Error::Config("recover.field is not set".into()))?;
        let path = self.resolve(p);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read field {}: {e}", path.display())))?;
        PiecewiseField::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Field density: the `[density]` section, else the one embedded in the
    /// field file.
    pub fn field_density(&self, field: &PiecewiseField) -> Result<EnergyDensity> {
        match (&self.density, &field.density) {
            (Some(_), _) => self.density(),
            (None, Some(d)) => {
                EnergyDensity::from_config(d).map_err(|e| Error::Config(format!("density: {e}")))
            }
            (None, None) => config_err("no density in the config or the field file"),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Numeric range checks common to all commands.
    pub fn validate(&self) -> Result<()> {
        self.e1.check()?;
        if self.workers == Some(0) {
            return config_err("workers must be at least 1");
        }
        if self.kernel.resolution < 64 || !self.kernel.resolution.is_multiple_of(2) {
            return config_err("kernel.resolution must be even and at least 64");
        }
        if self.kernel.quadrature < 1 || self.kernel.gamma_samples < 1 {
            return config_err("kernel quadrature sizes must be positive");
        }
        if !(self.recover.cell_l > 0.0) {
            return config_err("recover.cell_l must be positive");
        }
        if !(self.eper.kick >= 0.0) {
            return config_err("eper.kick must be nonnegative");
        }
        Ok(())
    }
}
