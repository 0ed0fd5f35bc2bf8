//! Local entropy of a spacetime region and the entanglement entropy.

use serde::{Deserialize, Serialize};

use crate::configuration::DiscreteConfiguration;
use crate::entropy::{entropy_static_with, EntropyContext, EntropyReport, EntropySetup, PastChoice};
use crate::error::{CfsError, Result};
use crate::slice::SliceEnsemble;

/// A region `Ṽ` given as a mask over the atoms of `ρ̃`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub v_mask: Vec<bool>,
}

impl RegionSpec {
    pub fn new(v_mask: Vec<bool>, rho_tilde: &DiscreteConfiguration) -> Result<RegionSpec> {
        if v_mask.len() != rho_tilde.len() {
            return Err(CfsError::DimensionMismatch { expected: rho_tilde.len(), found: v_mask.len() });
        }
        Ok(RegionSpec { v_mask })
    }

    /// All atoms whose site is in `sites`.
    pub fn from_sites(rho_tilde: &DiscreteConfiguration, sites: &[usize]) -> RegionSpec {
        RegionSpec { v_mask: rho_tilde.atoms().iter().map(|a| sites.contains(&a.site)).collect() }
    }

    pub fn complement(&self) -> RegionSpec {
        RegionSpec { v_mask: self.v_mask.iter().map(|v| !v).collect() }
    }
}

/// Entropy with the surface layer integral localized to `Ṽ` throughout,
/// including the admissibility constraints.
pub fn local_entropy(
    ctx: &EntropyContext,
    target: &PastChoice,
    region: &RegionSpec,
    beta: f64,
    setup: &EntropySetup,
    ensemble: &SliceEnsemble,
    seed: u64,
) -> Result<EntropyReport> {
    if region.v_mask.len() != ctx.rho_tilde.len() {
        return Err(CfsError::DimensionMismatch { expected: ctx.rho_tilde.len(), found: region.v_mask.len() });
    }
    entropy_static_with(ctx, target, Some(&region.v_mask), beta, setup, ensemble, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    pub e: f64,
    pub e_error: f64,
    pub global: EntropyReport,
    pub local: EntropyReport,
    pub complement: EntropyReport,
}

/// `ℰ = 𝒮(Ω̃) − 𝒮(Ω̃, Ṽ) − 𝒮(Ω̃, M̃∖Ṽ)`; errors are combined in quadrature.
pub fn entanglement_entropy(
    ctx: &EntropyContext,
    target: &PastChoice,
    region: &RegionSpec,
    beta: f64,
    setup: &EntropySetup,
    ensemble: &SliceEnsemble,
    seed: u64,
) -> Result<EntanglementReport> {
    let global = entropy_static_with(ctx, target, None, beta, setup, ensemble, seed)?;
    let local = local_entropy(ctx, target, region, beta, setup, ensemble, seed)?;
    let complement = local_entropy(ctx, target, &region.complement(), beta, setup, ensemble, seed)?;
    let e = global.value - local.value - complement.value;
    let e_error = (global.mc_error.powi(2) + local.mc_error.powi(2) + complement.mc_error.powi(2)).sqrt();
    Ok(EntanglementReport { e, e_error, global, local, complement })
}
