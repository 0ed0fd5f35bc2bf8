//! Experiment files: TOML with a strict schema.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelSection,
    pub vacuum: VacuumSection,
    pub cutoff: CutoffSection,
    pub perturbation: Option<PerturbationSection>,
    #[serde(default)]
    pub entropy: EntropySection,
    pub sweep: Option<SweepSection>,
    pub entangle: Option<EntangleSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SPolicy {
    /// `𝔰 = 0`.
    #[default]
    Zero,
    /// `𝔰` chosen so that the vacuum satisfies the Euler-Lagrange equations
    /// on its support.
    SelfConsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub f: usize,
    pub n: usize,
    pub kappa: f64,
    #[serde(default)]
    pub s_policy: SPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VacuumSection {
    pub frequencies: Vec<f64>,
    pub n_sites: usize,
    pub n_t: usize,
    #[serde(default = "one")]
    pub period: f64,
    pub site_weights: Option<Vec<f64>>,
    /// Seed of the random spatial points.
    #[serde(default)]
    pub point_seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffSection {
    pub t0: f64,
    pub delta: f64,
    pub edge: Option<f64>,
    /// Logistic width; absent means hard masks.
    pub soft_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    pub strength: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    #[default]
    Static,
    DtLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaUnits {
    /// `β` in units of `1/median|γ|` of the slice ensemble.
    #[default]
    GammaScale,
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropySection {
    #[serde(default)]
    pub mode: EntropyMode,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default)]
    pub beta_units: BetaUnits,
    /// Thicknesses in units of the lattice step.
    #[serde(default = "default_schedule")]
    pub dt_schedule: Vec<f64>,
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    /// Bracketing window of the slice projection, in lattice steps.
    #[serde(default = "one")]
    pub dt_max: f64,
    #[serde(default)]
    pub inverse_derivative_weights: bool,
    #[serde(default = "default_outer")]
    pub outer_iters: usize,
    #[serde(default = "default_inner")]
    pub inner_sweeps: usize,
}

fn default_betas() -> Vec<f64> {
    vec![1.0]
}
fn default_schedule() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn default_ensemble() -> usize {
    400
}
fn default_outer() -> usize {
    8
}
fn default_inner() -> usize {
    3
}

impl Default for EntropySection {
    fn default() -> Self {
        EntropySection {
            mode: EntropyMode::Static,
            betas: default_betas(),
            beta_units: BetaUnits::GammaScale,
            dt_schedule: default_schedule(),
            ensemble_size: default_ensemble(),
            dt_max: 1.0,
            inverse_derivative_weights: false,
            outer_iters: default_outer(),
            inner_sweeps: default_inner(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Beta,
    Dt,
    Dims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub kind: SweepKind,
    #[serde(default)]
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntangleSection {
    /// Spatial sites forming the region.
    pub sites: Option<Vec<usize>>,
    /// Explicit mask over the atoms of the first configuration.
    pub v_mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    /// Vacuum file; relative paths are taken inside `dir`.
    #[serde(default = "default_vacuum_file")]
    pub vacuum_file: String,
}

fn default_dir() -> String {
    "out".into()
}
fn default_vacuum_file() -> String {
    "vacuum.json".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir(), vacuum_file: default_vacuum_file() }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Validation(m.into()));
        if self.model.f != self.vacuum.frequencies.len() {
            return bad("model.f must equal the number of vacuum frequencies");
        }
        if self.vacuum.n_sites == 0 || self.vacuum.n_t < 2 {
            return bad("vacuum needs at least one site and two times");
        }
        if let Some(w) = &self.vacuum.site_weights {
            if w.len() != self.vacuum.n_sites {
                return bad("vacuum.site_weights must have one entry per site");
            }
        }
        if self.entropy.ensemble_size == 0 {
            return bad("entropy.ensemble_size must be positive");
        }
        if self.entropy.betas.is_empty() {
            return bad("entropy.betas must not be empty");
        }
        if let Some(e) = &self.entangle {
            if e.sites.is_some() == e.v_mask.is_some() {
                return bad("entangle needs exactly one of sites or v_mask");
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}
