//! Experiment configuration: a single TOML file with strict keys.

use std::path::{Path, PathBuf};

use mflab_core::positivity::{Kernel, POSITIVITY_TOL};
use mflab_core::{BuiltinModel, GaussianMeanField, RbfInteraction, Scheme};
use serde::{Deserialize, Serialize};

use crate::status::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Constants,
    Simulate,
    CheckGamma2,
    CheckPoincare,
    CheckDlsi,
    EstimateGap,
    FitDecay,
    CheckKernel,
    Concentration,
    FullSuite,
}

impl Experiment {
    pub const SUITE: [Experiment; 9] = [
        Experiment::Constants,
        Experiment::Simulate,
        Experiment::CheckGamma2,
        Experiment::CheckPoincare,
        Experiment::CheckDlsi,
        Experiment::EstimateGap,
        Experiment::FitDecay,
        Experiment::CheckKernel,
        Experiment::Concentration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Constants => "constants",
            Experiment::Simulate => "simulate",
            Experiment::CheckGamma2 => "check-gamma2",
            Experiment::CheckPoincare => "check-poincare",
            Experiment::CheckDlsi => "check-dlsi",
            Experiment::EstimateGap => "estimate-gap",
            Experiment::FitDecay => "fit-decay",
            Experiment::CheckKernel => "check-kernel",
            Experiment::Concentration => "concentration",
            Experiment::FullSuite => "full-suite",
        }
    }

    /// Base name of the CSV file the experiment writes.
    pub fn file_stem(self) -> &'static str {
        match self {
            Experiment::Constants => "constants",
            Experiment::Simulate => "simulate",
            Experiment::CheckGamma2 => "gamma2",
            Experiment::CheckPoincare => "poincare",
            Experiment::CheckDlsi => "dlsi",
            Experiment::EstimateGap => "gap",
            Experiment::FitDecay => "decay",
            Experiment::CheckKernel => "kernel",
            Experiment::Concentration => "concentration",
            Experiment::FullSuite => "summary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Gaussian { a: f64, lambda: f64 },
    Rbf { a: f64, kappa: f64, sigma: f64, rho_hat: f64 },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Gaussian { a: 1.0, lambda: 0.5 }
    }
}

impl ModelConfig {
    pub fn build(&self) -> mflab_core::Result<BuiltinModel> {
        Ok(match *self {
            ModelConfig::Gaussian { a, lambda } => BuiltinModel::Gaussian(GaussianMeanField::new(a, lambda)?),
            ModelConfig::Rbf { a, kappa, sigma, rho_hat } => {
                BuiltinModel::Rbf(RbfInteraction::new(a, kappa, sigma, rho_hat)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticlesConfig {
    pub n_particles: usize,
    pub dim: usize,
}

impl Default for ParticlesConfig {
    fn default() -> Self {
        ParticlesConfig { n_particles: 64, dim: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantsConfig {
    pub epsilon: f64,
    /// Overrides the model's interaction bound.
    pub m_mm: Option<f64>,
    /// Overrides the model's one-body log-Sobolev constant.
    pub rho: Option<f64>,
    /// Sweep grids; an empty grid uses the single configured value.
    pub n_grid: Vec<u64>,
    pub epsilon_grid: Vec<f64>,
    pub dim_grid: Vec<usize>,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        ConstantsConfig {
            epsilon: 0.5,
            m_mm: None,
            rho: None,
            n_grid: vec![10, 100, 1000, 10000],
            epsilon_grid: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            dim_grid: vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    EulerMaruyama,
    ExactGaussian,
}

impl From<SchemeConfig> for Scheme {
    fn from(s: SchemeConfig) -> Scheme {
        match s {
            SchemeConfig::EulerMaruyama => Scheme::EulerMaruyama,
            SchemeConfig::ExactGaussian => Scheme::ExactGaussian,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialConfig {
    /// All particles at `initial_value` in every coordinate.
    Point,
    /// A draw from the Gibbs measure.
    Gibbs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub n_replicas: usize,
    pub scheme: SchemeConfig,
    pub snapshot_every: usize,
    pub initial: InitialConfig,
    pub initial_value: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            dt: 0.01,
            n_steps: 100,
            n_replicas: 200,
            scheme: SchemeConfig::EulerMaruyama,
            snapshot_every: 10,
            initial: InitialConfig::Point,
            initial_value: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerConfig {
    /// Exact draws for the Gaussian model, Langevin Monte Carlo otherwise.
    Auto,
    Exact,
    Mala,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DictionaryConfig {
    /// The 20-function default dictionary.
    Default,
    /// Coordinates of the first `gap_particles` particles.
    Coordinates,
    /// Coordinates plus the default dictionary.
    Extended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorsConfig {
    pub n_samples: usize,
    pub sampler: SamplerConfig,
    pub mala_burn_in: usize,
    pub mala_thin: usize,
    pub mala_chains: usize,
    /// ε used for the defective constants in the defective log-Sobolev check.
    pub dlsi_epsilon: f64,
    pub gap_samples: usize,
    pub gap_dictionary: DictionaryConfig,
    pub gap_particles: usize,
}

impl Default for EstimatorsConfig {
    fn default() -> Self {
        EstimatorsConfig {
            n_samples: 200_000,
            sampler: SamplerConfig::Auto,
            mala_burn_in: 2000,
            mala_thin: 5,
            mala_chains: 16,
            dlsi_epsilon: 0.5,
            gap_samples: 100_000,
            gap_dictionary: DictionaryConfig::Coordinates,
            gap_particles: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    pub times: Vec<f64>,
    pub n_random: usize,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig { times: (0..=20).map(|k| 0.25 * k as f64).collect(), n_random: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelChoice {
    Rbf { sigma: f64 },
    NegRbf { sigma: f64 },
    Cosine { omega: Vec<f64> },
    Linear,
}

impl KernelChoice {
    pub fn build(&self) -> Kernel {
        match self {
            KernelChoice::Rbf { sigma } => Kernel::Rbf { sigma: *sigma },
            KernelChoice::NegRbf { sigma } => Kernel::Rbf { sigma: *sigma }.negated(),
            KernelChoice::Cosine { omega } => Kernel::Cosine { omega: omega.clone() },
            KernelChoice::Linear => Kernel::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub kernel: KernelChoice,
    pub dim: usize,
    pub n_trials: usize,
    pub atoms_per_trial: usize,
    pub tolerance: f64,
    pub steps: Vec<f64>,
    /// Whether the kernel is expected to be of positive type.
    pub expect_positive: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            kernel: KernelChoice::Rbf { sigma: 1.0 },
            dim: 2,
            n_trials: 1000,
            atoms_per_trial: 8,
            tolerance: POSITIVITY_TOL,
            steps: vec![0.1, 0.05, 0.025, 0.0125],
            expect_positive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeConfig {
    /// Single-measure envelope for N = 1, particle envelope otherwise.
    Auto,
    Single,
    Particle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcentrationConfig {
    pub times: Vec<f64>,
    pub radii: Vec<f64>,
    pub n_replicas: usize,
    pub dt: f64,
    pub initial: InitialConfig,
    pub initial_value: f64,
    pub envelope: EnvelopeConfig,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            times: vec![1.0, 2.0, 5.0],
            radii: vec![0.0, 0.25, 0.5, 1.0],
            n_replicas: 10_000,
            dt: 0.05,
            initial: InitialConfig::Point,
            initial_value: 0.0,
            envelope: EnvelopeConfig::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Format {
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "csv.gz")]
    CsvGz,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::CsvGz => "csv.gz",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("mflab-out"), format: Format::Csv }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub experiment: Experiment,
    pub seed: u64,
    /// Worker threads; 0 uses all cores. Never changes results.
    pub threads: usize,
    pub model: ModelConfig,
    pub particles: ParticlesConfig,
    pub constants: ConstantsConfig,
    pub simulation: SimulationConfig,
    pub estimators: EstimatorsConfig,
    pub decay: DecayConfig,
    pub kernel: KernelConfig,
    pub concentration: ConcentrationConfig,
    pub output: OutputConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            experiment: Experiment::FullSuite,
            seed: 0,
            threads: 0,
            model: ModelConfig::default(),
            particles: ParticlesConfig::default(),
            constants: ConstantsConfig::default(),
            simulation: SimulationConfig::default(),
            estimators: EstimatorsConfig::default(),
            decay: DecayConfig::default(),
            kernel: KernelConfig::default(),
            concentration: ConcentrationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let cfg: Config = toml::from_str(text).map_err(|e| Failure::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |msg: &str| Err(Failure::config(msg.to_string()));
        self.model.build().map_err(|e| Failure::config(e.to_string()))?;
        let p = &self.particles;
        if p.n_particles == 0 || p.dim == 0 {
            return bad("particles.n_particles and particles.dim must be positive");
        }
        let c = &self.constants;
        if !(c.epsilon > 0.0 && c.epsilon < 1.0) || c.epsilon_grid.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return bad("epsilon values must lie in (0, 1)");
        }
        if c.n_grid.contains(&0) || c.dim_grid.contains(&0) {
            return bad("constants grids must be positive");
        }
        let s = &self.simulation;
        if !(s.dt > 0.0) || s.n_replicas == 0 || s.snapshot_every == 0 {
            return bad("simulation needs dt > 0, n_replicas >= 1 and snapshot_every >= 1");
        }
        if s.scheme == SchemeConfig::ExactGaussian && !matches!(self.model, ModelConfig::Gaussian { .. }) {
            return bad("scheme exact_gaussian needs the gaussian model");
        }
        let e = &self.estimators;
        if e.n_samples == 0 || !(e.dlsi_epsilon > 0.0 && e.dlsi_epsilon < 1.0) || e.gap_particles == 0 {
            return bad("estimators need n_samples >= 1, dlsi_epsilon in (0, 1) and gap_particles >= 1");
        }
        if e.sampler == SamplerConfig::Exact && !matches!(self.model, ModelConfig::Gaussian { .. }) {
            return bad("sampler exact needs the gaussian model");
        }
        if self.decay.times.len() < 2 || self.decay.times.iter().any(|t| !(*t >= 0.0)) {
            return bad("decay.times needs at least two nonnegative times");
        }
        let k = &self.kernel;
        k.kernel.build().validate().map_err(|e| Failure::config(e.to_string()))?;
        if k.dim == 0 || k.n_trials == 0 || k.atoms_per_trial < 2 || k.steps.iter().any(|h| !(*h > 0.0)) {
            return bad("kernel needs dim >= 1, n_trials >= 1, atoms_per_trial >= 2 and positive steps");
        }
        if let KernelChoice::Cosine { omega } = &k.kernel {
            if omega.len() != k.dim {
                return bad("cosine omega length must equal kernel.dim");
            }
        }
        let q = &self.concentration;
        if q.times.iter().any(|t| !(*t >= 1.0)) || q.radii.iter().any(|r| r.is_nan()) || !(q.dt > 0.0) {
            return bad("concentration needs times >= 1, numeric radii and dt > 0");
        }
        if q.n_replicas < mflab_core::concentration::MIN_REPLICAS {
            return bad("concentration.n_replicas must be at least 1000");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse("sed = 3").is_err());
        assert!(Config::parse("[model]\nname = \"gaussian\"\na = 1.0\nlambda = 0.5\nbeta = 2.0").is_err());
        assert!(Config::parse("[simulation]\nsteps = 3").is_err());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = Config::parse("experiment = \"constants\"\n[model]\nname = \"rbf\"\na = 1.0\nkappa = 0.5\nsigma = 1.0\nrho_hat = 1.0\n").unwrap();
        assert_eq!(c.experiment, Experiment::Constants);
        assert_eq!(c.particles, ParticlesConfig::default());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(Config::parse("[model]\nname = \"gaussian\"\na = -1.0\nlambda = 0.0").is_err());
        assert!(Config::parse("[constants]\nepsilon = 1.5").is_err());
        assert!(Config::parse("[concentration]\ntimes = [0.5]").is_err());
    }
}
