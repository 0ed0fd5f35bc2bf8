#![allow(dead_code)]

use cfse_core::configuration::{apply_cutoff, build_static_vacuum, random_seeds, CutoffSpec, DiscreteConfiguration, VacuumSpec};
use cfse_core::entropy::{EntropyContext, EntropySetup, OptimizerBudget, PastChoice};
use cfse_core::lagrangian::ModelParams;
use cfse_core::slice::{slice_ensemble, SliceEnsemble, SliceOptions, SliceProblem};

pub const T0: f64 = 0.5;
pub const STEP: f64 = 0.125;

pub fn params() -> ModelParams {
    ModelParams::new(1.0, 1, 0.0).unwrap()
}

/// Four sites, eight times, `f = 4`, cut off around `t0 = 0.5`.
pub fn vacuum() -> DiscreteConfiguration {
    let seeds = random_seeds(4, 1, 4, 3).unwrap();
    let v = build_static_vacuum(&VacuumSpec { f: 4, n: 1, frequencies: vec![0.0, 1.0, 2.0, 3.0], seeds, n_t: 8, period: 1.0, site_weights: vec![1.0; 4] }).unwrap();
    apply_cutoff(&v, &CutoffSpec::hard(T0, 0.15)).unwrap()
}

pub fn ensemble(eta: &DiscreteConfiguration, k: usize, seed: u64) -> SliceEnsemble {
    let problem = SliceProblem::new(eta, T0, params()).unwrap();
    slice_ensemble(k, &problem, &SliceOptions::new(STEP), seed).unwrap()
}

pub fn ctx<'a>(rho_tilde: &'a DiscreteConfiguration, eta: &'a DiscreteConfiguration) -> EntropyContext<'a> {
    EntropyContext { rho_tilde, eta_rho: eta, t0: T0, params: params() }
}

pub fn target(c: &DiscreteConfiguration) -> PastChoice {
    PastChoice::Mask(c.atoms().iter().map(|a| a.t <= T0).collect())
}

pub fn setup(k: usize, budget: OptimizerBudget) -> EntropySetup {
    EntropySetup { ensemble_size: k, slice: SliceOptions::new(STEP), budget, ttr_floor: None }
}

pub fn small_budget() -> OptimizerBudget {
    OptimizerBudget { outer_iters: 2, inner_sweeps: 1, ..Default::default() }
}
