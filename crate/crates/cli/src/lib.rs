//! Experiment driver behind the `cfse` binary.

pub mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use cfse_core::configuration::{apply_cutoff, build_static_vacuum, perturb, random_seeds, CutoffMode, CutoffSpec, DiscreteConfiguration, VacuumSpec, DEFAULT_CUTOFF_EDGE};
use cfse_core::entropy::{build_ensemble, entropy_dt_limit_with, entropy_static_with, exhaustion_sweep, EntropyContext, EntropySetup, OptimizerBudget, PastChoice};
use cfse_core::lagrangian::{el_residual, s_param_from_config, ModelParams};
use cfse_core::local::{entanglement_entropy, RegionSpec};
use cfse_core::slice::{write_jsonl, SliceEnsemble, SliceOptions, WeightScheme};
use cfse_core::CfsError;
use serde::Serialize;
use thiserror::Error;

pub use config::{sha256_hex, ExperimentConfig};
use config::{BetaUnits, EntropyMode, SPolicy, SweepKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Core(#[from] CfsError),
}

impl CliError {
    /// 0 success, 2 validation, 3 regularity gate, 4 optimizer
    /// infeasibility, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 5,
            CliError::Core(e) => match e {
                CfsError::RegularityGateFailed { .. } => 3,
                CfsError::NoAdmissibleStart(_) => 4,
                CfsError::NotHermitian { .. }
                | CfsError::TraceNotOne { .. }
                | CfsError::SignatureViolation { .. }
                | CfsError::DimensionMismatch { .. }
                | CfsError::NotUnitary { .. }
                | CfsError::NonPeriodicGenerator { .. }
                | CfsError::InvalidSeed(_)
                | CfsError::ValidationFailure(_)
                | CfsError::NoSliceAtoms { .. }
                | CfsError::InvalidArgument(_)
                | CfsError::Serialization(_)
                | CfsError::ChecksumMismatch { .. } => 2,
                _ => 5,
            },
        }
    }
}

fn io<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Io(e.to_string())
}

/// Everything a command needs besides the parsed file.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Run {
    pub fn from_text(text: &str, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<Run, CliError> {
        let config = ExperimentConfig::parse(text)?;
        let seed = seed.unwrap_or(config.seed);
        let out_dir = out_dir.unwrap_or_else(|| PathBuf::from(&config.output.dir));
        Ok(Run { config_sha256: sha256_hex(text.as_bytes()), seed, out_dir, config })
    }

    fn vacuum_path(&self) -> PathBuf {
        let p = Path::new(&self.config.output.vacuum_file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out_dir).map_err(io)?;
        let path = self.out_dir.join(name);
        fs::write(&path, contents).map_err(io)?;
        Ok(path)
    }

    fn envelope<T: Serialize>(&self, command: &str, result: &T) -> String {
        let doc = Envelope { command, config_sha256: &self.config_sha256, seed: self.seed, result };
        serde_json::to_string_pretty(&doc).expect("reports serialize") + "\n"
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    result: &'a T,
}

fn params(run: &Run, vacuum: &DiscreteConfiguration) -> Result<ModelParams, CliError> {
    let m = &run.config.model;
    let p = ModelParams::new(m.kappa, m.n, 0.0)?;
    Ok(match m.s_policy {
        SPolicy::Zero => p,
        SPolicy::SelfConsistent => p.with_s_param(s_param_from_config(vacuum, &p)),
    })
}

fn build_vacuum(run: &Run) -> Result<DiscreteConfiguration, CliError> {
    let c = &run.config;
    let seeds = random_seeds(c.model.f, c.model.n, c.vacuum.n_sites, c.vacuum.point_seed)?;
    Ok(build_static_vacuum(&VacuumSpec {
        f: c.model.f,
        n: c.model.n,
        frequencies: c.vacuum.frequencies.clone(),
        seeds,
        n_t: c.vacuum.n_t,
        period: c.vacuum.period,
        site_weights: c.vacuum.site_weights.clone().unwrap_or_else(|| vec![1.0; c.vacuum.n_sites]),
    })?)
}

#[derive(Serialize)]
struct VacuumSummary {
    atoms: usize,
    s_param: f64,
    el_max_abs_on_support: f64,
    el_min_off_support_probe: f64,
}

/// Build and write the static vacuum.
pub fn cmd_vacuum(run: &Run) -> Result<String, CliError> {
    let vacuum = build_vacuum(run)?;
    let p = params(run, &vacuum)?;
    let el = el_residual(&vacuum, &p, run.seed);
    let doc = VacuumFile { config_sha256: run.config_sha256.clone(), seed: run.seed, configuration: serde_json::from_str(&vacuum.to_json()).map_err(io)? };
    let text = serde_json::to_string_pretty(&doc).map_err(io)? + "\n";
    let path = run.vacuum_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(&path, text).map_err(io)?;
    let summary = VacuumSummary { atoms: vacuum.len(), s_param: p.s_param, el_max_abs_on_support: el.max_abs_on_m, el_min_off_support_probe: el.min_off_m_probe };
    Ok(format!("vacuum written to {}\n{}", path.display(), serde_json::to_string(&summary).map_err(io)?))
}

#[derive(Serialize, serde::Deserialize)]
struct VacuumFile {
    config_sha256: String,
    seed: u64,
    configuration: serde_json::Value,
}

fn load_vacuum(run: &Run) -> Result<DiscreteConfiguration, CliError> {
    let path = run.vacuum_path();
    let text = fs::read_to_string(&path).map_err(|e| CliError::Validation(format!("vacuum file {}: {e}", path.display())))?;
    let doc: VacuumFile = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("vacuum file {}: {e}", path.display())))?;
    Ok(DiscreteConfiguration::from_json(&doc.configuration.to_string())?)
}

/// The prepared inputs of an entropy computation.
struct Prepared {
    eta: DiscreteConfiguration,
    rho_tilde: DiscreteConfiguration,
    params: ModelParams,
    setup: EntropySetup,
    vacuum_sha256: String,
}

impl Prepared {
    fn ctx(&self, run: &Run) -> EntropyContext<'_> {
        EntropyContext { rho_tilde: &self.rho_tilde, eta_rho: &self.eta, t0: run.config.cutoff.t0, params: self.params }
    }

    fn target(&self, run: &Run) -> PastChoice {
        PastChoice::Mask(self.rho_tilde.atoms().iter().map(|a| a.t <= run.config.cutoff.t0).collect())
    }
}

fn prepare(run: &Run) -> Result<Prepared, CliError> {
    let vacuum = load_vacuum(run)?;
    let c = &run.config;
    let cut = CutoffSpec {
        t0: c.cutoff.t0,
        delta: c.cutoff.delta,
        edge: c.cutoff.edge.unwrap_or(DEFAULT_CUTOFF_EDGE),
        mode: c.cutoff.soft_width.map_or(CutoffMode::Hard, |width| CutoffMode::Soft { width }),
    };
    let eta = apply_cutoff(&vacuum, &cut)?;
    let rho_tilde = match &c.perturbation {
        Some(p) => perturb(&eta, p.strength, p.seed)?,
        None => eta.clone(),
    };
    let params = params(run, &vacuum)?;
    let step = eta.step()?;
    let e = &c.entropy;
    let mut slice = SliceOptions::new(e.dt_max * step);
    if e.inverse_derivative_weights {
        slice.weights = WeightScheme::InverseFlowDerivative;
    }
    let budget = OptimizerBudget { outer_iters: e.outer_iters, inner_sweeps: e.inner_sweeps, ..Default::default() };
    let setup = EntropySetup { ensemble_size: e.ensemble_size, slice, budget, ttr_floor: None };
    Ok(Prepared { vacuum_sha256: sha256_hex(vacuum.to_json().as_bytes()), eta, rho_tilde, params, setup })
}

fn write_ensemble(run: &Run, prep: &Prepared, ens: &SliceEnsemble) -> Result<(), CliError> {
    fs::create_dir_all(&run.out_dir).map_err(io)?;
    let file = fs::File::create(run.out_dir.join("ensemble.jsonl")).map_err(io)?;
    let mut w = BufWriter::new(file);
    write_jsonl(ens, &prep.vacuum_sha256, &mut w).map_err(io)
}

fn absolute_beta(run: &Run, beta: f64, ens: &SliceEnsemble) -> f64 {
    match run.config.entropy.beta_units {
        BetaUnits::Absolute => beta,
        BetaUnits::GammaScale if ens.gamma_scale > 0.0 => beta / ens.gamma_scale,
        BetaUnits::GammaScale => beta,
    }
}

/// One CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub config_sha256: String,
    pub seed: u64,
    pub beta: f64,
    pub beta_abs: f64,
    /// `dt`, `dims` or `static`.
    pub axis: String,
    pub x: f64,
    pub value: Option<f64>,
    pub mc_error: Option<f64>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

impl Row {
    fn new(run: &Run, beta: f64, beta_abs: f64, axis: &str, x: f64) -> Row {
        Row { config_sha256: run.config_sha256.clone(), seed: run.seed, beta, beta_abs, axis: axis.into(), x, value: None, mc_error: None, converged: None, error: None }
    }
}

fn write_csv(run: &Run, rows: &[Row]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(io)?;
    run.write("sweep.csv", &String::from_utf8(bytes).map_err(io)?)?;
    Ok(())
}

/// Entropy for each configured `β`, static or as a `Δt` limit.
pub fn cmd_entropy(run: &Run) -> Result<String, CliError> {
    let prep = prepare(run)?;
    let ctx = prep.ctx(run);
    let ens = build_ensemble(&ctx, &prep.setup, run.seed)?;
    write_ensemble(run, &prep, &ens)?;
    let step = prep.eta.step()?;
    let schedule: Vec<f64> = run.config.entropy.dt_schedule.iter().map(|d| d * step).collect();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &beta in &run.config.entropy.betas {
        let b = absolute_beta(run, beta, &ens);
        let report = match run.config.entropy.mode {
            EntropyMode::Static => entropy_static_with(&ctx, &prep.target(run), None, b, &prep.setup, &ens, run.seed)?,
            EntropyMode::DtLimit => entropy_dt_limit_with(&ctx, &prep.target(run), b, &prep.setup, &schedule, &ens, run.seed)?,
        };
        if report.per_dt.is_empty() {
            let mut r = Row::new(run, beta, b, "static", 0.0);
            r.value = Some(report.value);
            r.mc_error = Some(report.mc_error);
            r.converged = Some(report.converged);
            rows.push(r);
        } else {
            for p in &report.per_dt {
                let mut r = Row::new(run, beta, b, "dt", p.dt);
                r.value = Some(p.value);
                r.mc_error = Some(p.mc_error);
                rows.push(r);
            }
        }
        reports.push(report);
    }
    run.write("report.json", &run.envelope("entropy", &reports))?;
    write_csv(run, &rows)?;
    Ok(rows.iter().map(|r| format!("beta {} ({}): {} ± {}", r.beta, r.axis, r.value.unwrap_or(f64::NAN), r.mc_error.unwrap_or(f64::NAN))).collect::<Vec<_>>().join("\n"))
}

/// Grid of `β` and `Δt` or subgroup dimensions; failures are recorded per row.
pub fn cmd_sweep(run: &Run) -> Result<String, CliError> {
    let kind = run.config.sweep.as_ref().map_or(SweepKind::Beta, |s| s.kind);
    let prep = prepare(run)?;
    let ctx = prep.ctx(run);
    let ens = build_ensemble(&ctx, &prep.setup, run.seed)?;
    write_ensemble(run, &prep, &ens)?;
    let step = prep.eta.step()?;
    let schedule: Vec<f64> = run.config.entropy.dt_schedule.iter().map(|d| d * step).collect();
    let mut rows = Vec::new();
    let mut first_error: Option<CliError> = None;
    let record = |row: &mut Row, outcome: Result<(f64, f64, bool), CfsError>, first_error: &mut Option<CliError>| match outcome {
        Ok((v, e, c)) => {
            row.value = Some(v);
            row.mc_error = Some(e);
            row.converged = Some(c);
        }
        Err(e) => {
            row.error = Some(e.to_string());
            first_error.get_or_insert(CliError::Core(e));
        }
    };
    for &beta in &run.config.entropy.betas {
        let b = absolute_beta(run, beta, &ens);
        match kind {
            SweepKind::Beta => {
                let mut row = Row::new(run, beta, b, "static", 0.0);
                let out = entropy_static_with(&ctx, &prep.target(run), None, b, &prep.setup, &ens, run.seed).map(|r| (r.value, r.mc_error, r.converged));
                record(&mut row, out, &mut first_error);
                rows.push(row);
            }
            SweepKind::Dt => match entropy_dt_limit_with(&ctx, &prep.target(run), b, &prep.setup, &schedule, &ens, run.seed) {
                Ok(r) => {
                    for p in &r.per_dt {
                        let mut row = Row::new(run, beta, b, "dt", p.dt);
                        record(&mut row, Ok((p.value, p.mc_error, r.converged)), &mut first_error);
                        rows.push(row);
                    }
                }
                Err(e) => {
                    let mut row = Row::new(run, beta, b, "dt", f64::NAN);
                    record(&mut row, Err(e), &mut first_error);
                    rows.push(row);
                }
            },
            SweepKind::Dims => {
                let dims = run.config.sweep.as_ref().map(|s| s.dims.clone()).unwrap_or_default();
                let sweep = exhaustion_sweep(&ctx, &prep.target(run), b, &prep.setup, &dims, run.seed)?;
                for r in sweep.rows {
                    let mut row = Row::new(run, beta, b, "dims", r.dims as f64);
                    let out = match (r.report, r.error) {
                        (Some(rep), _) => Ok((rep.value, rep.mc_error, rep.converged)),
                        (None, e) => Err(CfsError::ValidationFailure(e.unwrap_or_default())),
                    };
                    record(&mut row, out, &mut first_error);
                    rows.push(row);
                }
            }
        }
    }
    write_csv(run, &rows)?;
    run.write("report.json", &run.envelope("sweep", &rows))?;
    if rows.iter().all(|r| r.value.is_none()) {
        return Err(first_error.unwrap_or_else(|| CliError::Validation("empty sweep".into())));
    }
    Ok(format!("{} rows, {} failed", rows.len(), rows.iter().filter(|r| r.value.is_none()).count()))
}

/// Entanglement entropy of the configured region at the first `β`.
pub fn cmd_entangle(run: &Run) -> Result<String, CliError> {
    let prep = prepare(run)?;
    let spec = run.config.entangle.as_ref().ok_or_else(|| CliError::Validation("missing [entangle] section".into()))?;
    let region = match (&spec.sites, &spec.v_mask) {
        (Some(sites), _) => RegionSpec::from_sites(&prep.rho_tilde, sites),
        (None, Some(mask)) => RegionSpec::new(mask.clone(), &prep.rho_tilde)?,
        (None, None) => return Err(CliError::Validation("entangle needs sites or v_mask".into())),
    };
    let ctx = prep.ctx(run);
    let ens = build_ensemble(&ctx, &prep.setup, run.seed)?;
    write_ensemble(run, &prep, &ens)?;
    let beta = run.config.entropy.betas[0];
    let report = entanglement_entropy(&ctx, &prep.target(run), &region, absolute_beta(run, beta, &ens), &prep.setup, &ens, run.seed)?;
    run.write("report.json", &run.envelope("entangle", &report))?;
    Ok(format!("E = {} ± {} (global {}, region {}, complement {})", report.e, report.e_error, report.global.value, report.local.value, report.complement.value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Vacuum,
    Entropy,
    Sweep,
    Entangle,
}

pub fn execute(command: Command, run: &Run) -> Result<String, CliError> {
    match command {
        Command::Vacuum => cmd_vacuum(run),
        Command::Entropy => cmd_entropy(run),
        Command::Sweep => cmd_sweep(run),
        Command::Entangle => cmd_entangle(run),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Validation("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(CfsError::NonPeriodicGenerator { frequency: 0.5 }).exit_code(), 2);
        assert_eq!(CliError::Core(CfsError::RegularityGateFailed { min_over_u: 0.0, floor: 1.0 }).exit_code(), 3);
        assert_eq!(CliError::Core(CfsError::NoAdmissibleStart("x".into())).exit_code(), 4);
        assert_eq!(CliError::Core(CfsError::OverflowGuard).exit_code(), 5);
    }
}
