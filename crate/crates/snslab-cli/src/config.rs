//! Experiment configuration: a sectioned `key = value` text format with
//! strict validation. Unknown keys are rejected, defaults are filled in at
//! parse time, and the fully resolved configuration serializes back to the
//! same format, so `parse -> serialize -> parse` is the identity.

use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Which experiment a run performs.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Hash,
)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Integrate an ensemble and persist snapshots.
    Simulate,
    /// Energy-balance residuals against the driving trace.
    EnergyCheck,
    /// Exact Gaussian reference draws and the simulated linear endpoint law.
    OuCheck,
    /// Exponential-weight martingale and reweighted-law equivalence.
    Girsanov,
    /// Sensitivity matrices and their nondegeneracy spectrum.
    Malliavin,
    /// Weak-form difference-quotient scaling of the projected endpoint law.
    BesovWeak,
    /// Gridded endpoint densities: self-distance, tail norms, atom check.
    BesovDensity,
    /// Endpoint splitting error against the window length.
    SplittingRate,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::EnergyCheck => "energy-check",
            ExperimentKind::OuCheck => "ou-check",
            ExperimentKind::Girsanov => "girsanov",
            ExperimentKind::Malliavin => "malliavin",
            ExperimentKind::BesovWeak => "besov-weak",
            ExperimentKind::BesovDensity => "besov-density",
            ExperimentKind::SplittingRate => "splitting-rate",
        }
    }
}

fn default_viscosity() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    3.0
}
fn default_family() -> String {
    "power_law".to_string()
}
fn default_horizon() -> f64 {
    1.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_n_traj() -> u64 {
    1000
}
fn default_variant() -> String {
    "galerkin".to_string()
}
fn default_f_modes() -> Vec<usize> {
    vec![0, 1]
}
fn default_out_dir() -> String {
    "snslab-out".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Largest retained Stokes eigenvalue (squared wavenumber).
    pub cutoff: u32,
    #[serde(default = "default_viscosity")]
    pub viscosity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// `power_law` or `explicit`.
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Per-mode variances for the explicit family.
    #[serde(default)]
    pub variances: Vec<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            family: default_family(),
            alpha: default_alpha(),
            variances: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    /// `galerkin`, `linear`, `truncated`, `split` or `f_decoupled`.
    #[serde(default = "default_variant")]
    pub variant: String,
    /// Truncation radius for the `truncated` variant.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Window length for the `split` variant.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub compensated: bool,
    /// Distinguished mode indices (projection subspace).
    #[serde(default = "default_f_modes")]
    pub f_modes: Vec<usize>,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            variant: default_variant(),
            radius: None,
            epsilon: None,
            compensated: false,
            f_modes: default_f_modes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_n_traj")]
    pub n_traj: u64,
    #[serde(default)]
    pub master_seed: u64,
    /// Defaults to the horizon alone when left empty.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Positive value enables a stationary (burned-in) start.
    #[serde(default)]
    pub burn_in: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            horizon: default_horizon(),
            dt: default_dt(),
            n_traj: default_n_traj(),
            master_seed: 0,
            snapshot_times: Vec::new(),
            burn_in: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// `zero` or `modes`.
    #[serde(default = "default_initial_kind")]
    pub kind: String,
    /// `(mode index, amplitude)` pairs for `kind = "modes"`.
    #[serde(default)]
    pub modes: Vec<(usize, f64)>,
}

fn default_initial_kind() -> String {
    "zero".to_string()
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            kind: default_initial_kind(),
            modes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GirsanovSection {
    #[serde(default = "default_ess_floor")]
    pub ess_floor: f64,
    #[serde(default = "default_z3")]
    pub moment_z_max: f64,
    #[serde(default = "default_ks_alpha")]
    pub ks_alpha: f64,
    #[serde(default = "default_ks_replicas")]
    pub ks_replicas: usize,
}

fn default_ess_floor() -> f64 {
    100.0
}
fn default_z3() -> f64 {
    3.0
}
fn default_ks_alpha() -> f64 {
    0.01
}
fn default_ks_replicas() -> usize {
    400
}

impl Default for GirsanovSection {
    fn default() -> Self {
        GirsanovSection {
            ess_floor: default_ess_floor(),
            moment_z_max: default_z3(),
            ks_alpha: default_ks_alpha(),
            ks_replicas: default_ks_replicas(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    #[serde(default = "default_z3")]
    pub z_max: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        EnergySection { z_max: default_z3() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuSection {
    #[serde(default = "default_n_exact")]
    pub n_exact: u64,
    #[serde(default = "default_z4")]
    pub z_max_exact: f64,
    #[serde(default = "default_z3")]
    pub z_max_simulated: f64,
}

fn default_n_exact() -> u64 {
    100_000
}
fn default_z4() -> f64 {
    4.0
}

impl Default for OuSection {
    fn default() -> Self {
        OuSection {
            n_exact: default_n_exact(),
            z_max_exact: default_z4(),
            z_max_simulated: default_z3(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinSection {
    /// Noise directions; empty means the whole first eigenvalue shell.
    #[serde(default)]
    pub directions: Vec<usize>,
    #[serde(default = "default_s_stride")]
    pub s_stride: usize,
    /// `coordinates` (on the distinguished modes) or `h_norm_sq`.
    #[serde(default = "default_functional")]
    pub functional: String,
    /// Truncation radius of the base dynamics.
    #[serde(default = "default_malliavin_radius")]
    pub radius: f64,
    /// Matrices count as degenerate below this multiple of their trace.
    #[serde(default = "default_min_eig_rel")]
    pub min_eig_rel_threshold: f64,
}

fn default_s_stride() -> usize {
    100
}
fn default_functional() -> String {
    "coordinates".to_string()
}
fn default_malliavin_radius() -> f64 {
    1e6
}
fn default_min_eig_rel() -> f64 {
    1e-12
}

impl Default for MalliavinSection {
    fn default() -> Self {
        MalliavinSection {
            directions: Vec::new(),
            s_stride: default_s_stride(),
            functional: default_functional(),
            radius: default_malliavin_radius(),
            min_eig_rel_threshold: default_min_eig_rel(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesovSection {
    #[serde(default = "default_besov_alpha")]
    pub alpha: f64,
    #[serde(default = "default_besov_order")]
    pub order: u32,
    /// Number of dyadic shift scales, largest `h_base`.
    #[serde(default = "default_h_scales")]
    pub h_scales: u32,
    #[serde(default = "default_h_base")]
    pub h_base: f64,
    /// Sinusoid frequencies of the test-function family.
    #[serde(default = "default_frequencies")]
    pub frequencies: Vec<f64>,
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
    /// Also run the same pipeline on exact Gaussian reference draws.
    #[serde(default = "default_true")]
    pub gaussian_control: bool,
    /// Control must reach this slope (smooth laws saturate the order).
    #[serde(default = "default_control_slope")]
    pub control_slope_min: f64,
}

fn default_besov_alpha() -> f64 {
    0.5
}
fn default_besov_order() -> u32 {
    2
}
fn default_h_scales() -> u32 {
    5
}
fn default_h_base() -> f64 {
    1.0
}
fn default_frequencies() -> Vec<f64> {
    vec![1.0, 2.0]
}
fn default_slope_tolerance() -> f64 {
    0.2
}
fn default_true() -> bool {
    true
}
fn default_control_slope() -> f64 {
    1.8
}

impl Default for BesovSection {
    fn default() -> Self {
        BesovSection {
            alpha: default_besov_alpha(),
            order: default_besov_order(),
            h_scales: default_h_scales(),
            h_base: default_h_base(),
            frequencies: default_frequencies(),
            slope_tolerance: default_slope_tolerance(),
            gaussian_control: default_true(),
            control_slope_min: default_control_slope(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Box half-width in units of the per-coordinate sample deviation.
    #[serde(default = "default_box_sigmas")]
    pub box_sigmas: f64,
    #[serde(default = "default_l1_self")]
    pub l1_self_max: f64,
    #[serde(default = "default_lp_stability")]
    pub lp_stability_max: f64,
    /// Atom check: largest refined-grid cell mass allowed.
    #[serde(default = "default_atom_mass")]
    pub atom_mass_max: f64,
}

fn default_resolution() -> usize {
    24
}
fn default_box_sigmas() -> f64 {
    4.0
}
fn default_l1_self() -> f64 {
    0.1
}
fn default_lp_stability() -> f64 {
    0.15
}
fn default_atom_mass() -> f64 {
    0.01
}

impl Default for DensitySection {
    fn default() -> Self {
        DensitySection {
            resolution: default_resolution(),
            box_sigmas: default_box_sigmas(),
            l1_self_max: default_l1_self(),
            lp_stability_max: default_lp_stability(),
            atom_mass_max: default_atom_mass(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplittingSection {
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    #[serde(default)]
    pub compensated: bool,
    #[serde(default = "default_slope_min")]
    pub slope_min: f64,
}

fn default_eps_list() -> Vec<f64> {
    vec![0.125, 0.0625, 0.03125, 0.015625, 0.0078125]
}
fn default_slope_min() -> f64 {
    0.9
}

impl Default for SplittingSection {
    fn default() -> Self {
        SplittingSection {
            eps_list: default_eps_list(),
            compensated: false,
            slope_min: default_slope_min(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub directory: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: default_out_dir(),
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional in the file; the CLI subcommand fixes it and they must agree.
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    pub model: ModelSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub girsanov: GirsanovSection,
    #[serde(default)]
    pub energy: EnergySection,
    #[serde(default)]
    pub ou: OuSection,
    #[serde(default)]
    pub malliavin: MalliavinSection,
    #[serde(default)]
    pub besov: BesovSection,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default)]
    pub splitting: SplittingSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Parses, fills defaults and validates. Syntax errors carry the line and
/// column from the underlying parser.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let mut config: ExperimentConfig =
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if config.run.snapshot_times.is_empty() {
        config.run.snapshot_times = vec![config.run.horizon];
    }
    validate(&config)?;
    Ok(config)
}

/// Serializes a resolved configuration back to the text format.
pub fn serialize_config(config: &ExperimentConfig) -> Result<String, CliError> {
    toml::to_string_pretty(config).map_err(|e| CliError::Config(e.to_string()))
}

fn validate(config: &ExperimentConfig) -> Result<(), CliError> {
    let c = |msg: String| Err(CliError::Config(msg));
    if config.model.cutoff == 0 {
        return c("model.cutoff must be at least 1".into());
    }
    if !(config.model.viscosity > 0.0) {
        return c(format!(
            "model.viscosity must be positive, got {}",
            config.model.viscosity
        ));
    }
    match config.noise.family.as_str() {
        "power_law" => {
            if !config.noise.alpha.is_finite() {
                return c("noise.alpha must be finite".into());
            }
        }
        "explicit" => {
            if config.noise.variances.is_empty() {
                return c("noise.family = \"explicit\" needs noise.variances".into());
            }
            if config.noise.variances.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return c("noise.variances must be finite and nonnegative".into());
            }
        }
        other => {
            return c(format!(
                "noise.family must be \"power_law\" or \"explicit\", got \"{other}\""
            ))
        }
    }
    match config.dynamics.variant.as_str() {
        "galerkin" | "linear" | "f_decoupled" => {}
        "truncated" => {
            let Some(r) = config.dynamics.radius else {
                return c("dynamics.variant = \"truncated\" needs dynamics.radius".into());
            };
            if !(r > 0.0) {
                return c(format!("dynamics.radius must be positive, got {r}"));
            }
        }
        "split" => {
            let Some(eps) = config.dynamics.epsilon else {
                return c("dynamics.variant = \"split\" needs dynamics.epsilon".into());
            };
            if !(eps > 0.0) || eps >= config.run.horizon {
                return c(format!(
                    "dynamics.epsilon = {eps} must lie strictly between 0 and run.horizon = {}",
                    config.run.horizon
                ));
            }
        }
        other => {
            return c(format!(
                "dynamics.variant \"{other}\" is not one of galerkin, linear, truncated, split, f_decoupled"
            ))
        }
    }
    if config.dynamics.f_modes.is_empty() {
        return c("dynamics.f_modes must not be empty".into());
    }
    if !(config.run.horizon > 0.0) || !(config.run.dt > 0.0) {
        return c(format!(
            "run.horizon and run.dt must be positive, got {} and {}",
            config.run.horizon, config.run.dt
        ));
    }
    if config.run.n_traj == 0 {
        return c("run.n_traj must be at least 1".into());
    }
    if config.run.burn_in < 0.0 {
        return c("run.burn_in must be nonnegative".into());
    }
    for t in &config.run.snapshot_times {
        if *t < 0.0 || *t > config.run.horizon {
            return c(format!(
                "run.snapshot_times entry {t} lies outside [0, run.horizon = {}]",
                config.run.horizon
            ));
        }
    }
    match config.initial.kind.as_str() {
        "zero" => {}
        "modes" => {
            if config.initial.modes.is_empty() {
                return c("initial.kind = \"modes\" needs initial.modes".into());
            }
        }
        other => {
            return c(format!(
                "initial.kind must be \"zero\" or \"modes\", got \"{other}\""
            ))
        }
    }
    for eps in &config.splitting.eps_list {
        if !(*eps > 0.0) || *eps >= config.run.horizon {
            return c(format!(
                "splitting.eps_list entry {eps} must lie strictly between 0 and run.horizon = {}",
                config.run.horizon
            ));
        }
    }
    if !(config.besov.alpha > 0.0 && config.besov.alpha < 1.0) {
        return c(format!(
            "besov.alpha must lie in (0, 1), got {}",
            config.besov.alpha
        ));
    }
    if config.besov.order == 0 || config.besov.h_scales == 0 {
        return c("besov.order and besov.h_scales must be positive".into());
    }
    if config.density.resolution < 2 {
        return c("density.resolution must be at least 2".into());
    }
    Ok(())
}
