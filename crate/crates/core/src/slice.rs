//! Sampling the constraint slice `𝒢^{t0} = {𝒰 : γ^{t0,t0}(ηρ, 𝒰(ηρ)) = 0}`.
//!
//! Haar draws are moved along the time-translation flow `𝒰 ↦ 𝒰U_τ` onto the
//! slice by bracketing and bisection; in flow coordinates the Haar volume
//! factorizes as `dτ ∧ dμ⌊H`, so a fixed `τ`-window approximates the slice
//! measure. Each accepted sample is paired with its inverse.

use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::{decode_matrix, encode_matrix, DiscreteConfiguration};
use crate::error::{CfsError, Result};
use crate::group::{self, BlockSampler, Generator, GroupElement};
use crate::lagrangian::{causal_action, ModelParams};
use crate::rng;
use crate::stats::{self, Estimate};
use crate::surface_layer::gamma_tt;

pub const MAX_BISECTIONS: usize = 200;
/// Bisection stops once the bracket is narrower than this times the period.
const BRACKET_WIDTH: f64 = 1e-12;
/// Default residual tolerance relative to the causal action of `ηρ`.
pub const DEFAULT_RELATIVE_TOL: f64 = 1e-9;
/// Fixed batch size, so that draws are consumed identically for any number
/// of worker threads.
const BATCH: usize = 32;
/// Haar draws allowed per requested sample before giving up.
const DRAWS_PER_SAMPLE: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub u: GroupElement,
    pub tau: f64,
    /// Signed `γ^{t0,t0}(ηρ, 𝒰(ηρ))` at the stored element.
    pub residual: f64,
    pub weight: f64,
    /// `∂_τ` of the residual along the flow at the stored element.
    pub derivative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Accepted(SliceSample),
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Uniform,
    /// `|∂_τ residual|⁻¹`.
    InverseFlowDerivative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceEnsemble {
    pub samples: Vec<SliceSample>,
    pub acceptance_rate: f64,
    pub seed: u64,
    /// Half-width of the `τ` window used by the projection.
    pub dt_max: f64,
    /// Thickness `Δt` of the ensemble (zero for the slice itself).
    pub thickness: f64,
    pub tol: f64,
    /// Median `|γ^{t0,t0}(ηρ, V(ηρ))|` over the raw Haar draws.
    pub gamma_scale: f64,
    pub action_scale: f64,
    pub draws: usize,
    /// Pairs dropped because the flow derivative was below the floor.
    pub flagged: usize,
}

impl SliceEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.weight).collect()
    }
}

/// Fixed data of the slice problem.
#[derive(Debug, Clone)]
pub struct SliceProblem<'a> {
    pub eta_rho: &'a DiscreteConfiguration,
    pub t0: f64,
    pub params: ModelParams,
    /// Flow generator; the restricted generator for block subgroups.
    pub flow: Generator,
    pub period: f64,
}

impl<'a> SliceProblem<'a> {
    pub fn new(eta_rho: &'a DiscreteConfiguration, t0: f64, params: ModelParams) -> Result<SliceProblem<'a>> {
        let flow = eta_rho.generator().cloned().ok_or_else(|| CfsError::InvalidArgument("slice sampling needs a static configuration".into()))?;
        let period = eta_rho.period().ok_or_else(|| CfsError::InvalidArgument("slice sampling needs a periodic configuration".into()))?;
        if eta_rho.slice_indices(t0).is_empty() {
            return Err(CfsError::NoSliceAtoms { t0 });
        }
        Ok(SliceProblem { eta_rho, t0, params, flow, period })
    }

    pub fn with_flow(mut self, flow: Generator) -> Self {
        self.flow = flow;
        self
    }

    pub fn residual(&self, u: &GroupElement) -> f64 {
        gamma_tt(self.t0, self.t0, self.eta_rho, u, &self.params).expect("slice problem dimensions are consistent").value
    }

    fn along(&self, u: &GroupElement, tau: f64) -> GroupElement {
        u.compose(&group::time_translation(tau, &self.flow))
    }

    /// Central difference of the residual along the flow.
    pub fn flow_derivative(&self, u: &GroupElement) -> f64 {
        let h = 1e-6 * self.period;
        (self.residual(&self.along(u, h)) - self.residual(&self.along(u, -h))) / (2.0 * h)
    }
}

/// `γ^{t0,t0}(ηρ, U(ηρ))`.
pub fn slice_residual(u: &GroupElement, eta_rho: &DiscreteConfiguration, t0: f64, params: &ModelParams) -> Result<f64> {
    Ok(gamma_tt(t0, t0, eta_rho, u, params)?.value)
}

fn bisect(problem: &SliceProblem, u: &GroupElement, mut lo: f64, mut flo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let width = BRACKET_WIDTH * problem.period;
    let mut best = if flo.abs() <= tol { Some((lo, flo)) } else { None };
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = problem.residual(&problem.along(u, mid));
        if fm == 0.0 {
            return Ok((mid, fm));
        }
        if best.is_none_or(|(_, fb): (f64, f64)| fm.abs() < fb.abs()) {
            best = Some((mid, fm));
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    match best {
        Some((tau, r)) if r.abs() <= tol => Ok((tau, r)),
        Some((_, r)) => Err(CfsError::RootFindStall { residual: r.abs(), tol, iterations: MAX_BISECTIONS }),
        None => Err(CfsError::RootFindStall { residual: flo.abs(), tol, iterations: MAX_BISECTIONS }),
    }
}

/// Move `u` along the flow onto the slice within `|τ| ≤ dt_max`. When both
/// half-brackets change sign the root closer to `τ = 0` is kept.
pub fn project_along(problem: &SliceProblem, u: &GroupElement, dt_max: f64, tol: f64) -> Result<Projection> {
    let r0 = problem.residual(u);
    project_from(problem, u, r0, dt_max, tol)
}

fn project_from(problem: &SliceProblem, u: &GroupElement, r0: f64, dt_max: f64, tol: f64) -> Result<Projection> {
    let finish = |tau: f64| -> Projection {
        let moved = if tau == 0.0 { u.clone() } else { problem.along(u, tau) };
        let residual = problem.residual(&moved);
        let derivative = problem.flow_derivative(&moved);
        Projection::Accepted(SliceSample { u: moved, tau, residual, weight: 1.0, derivative })
    };
    if r0.abs() <= tol {
        return Ok(finish(0.0));
    }
    let rp = problem.residual(&problem.along(u, dt_max));
    let rm = problem.residual(&problem.along(u, -dt_max));
    let right = (rp > 0.0) != (r0 > 0.0) || rp == 0.0;
    let left = (rm > 0.0) != (r0 > 0.0) || rm == 0.0;
    let mut roots = Vec::new();
    if right {
        // Bracket [0, dt_max] oriented so that `lo` carries the sign of r0.
        roots.push(bisect(problem, u, 0.0, r0, dt_max, tol)?);
    }
    if left {
        let (tau, r) = bisect_neg(problem, u, r0, dt_max, tol)?;
        roots.push((tau, r));
    }
    match roots.into_iter().min_by(|a, b| a.0.abs().total_cmp(&b.0.abs())) {
        Some((tau, _)) => Ok(finish(tau)),
        None => Ok(Projection::Rejected),
    }
}

fn bisect_neg(problem: &SliceProblem, u: &GroupElement, r0: f64, dt_max: f64, tol: f64) -> Result<(f64, f64)> {
    // Mirror τ → −τ so that the same bisection routine applies.
    let mirrored = SliceProblem { flow: negated(&problem.flow), ..problem.clone() };
    let (tau, r) = bisect(&mirrored, u, 0.0, r0, dt_max, tol)?;
    Ok((-tau, r))
}

fn negated(g: &Generator) -> Generator {
    Generator::new(-g.mat().clone()).expect("negated generator stays Hermitian")
}

/// Projection of `u` onto the slice of `eta_rho` along its own generator.
pub fn project_to_slice(u: &GroupElement, eta_rho: &DiscreteConfiguration, t0: f64, dt_max: f64, tol: f64, params: &ModelParams) -> Result<Projection> {
    let problem = SliceProblem::new(eta_rho, t0, *params)?;
    if !(dt_max > 0.0 && dt_max < 0.5 * problem.period) {
        return Err(CfsError::InvalidArgument(format!("dt_max must lie in (0, period/2), got {dt_max}")));
    }
    project_along(&problem, u, dt_max, tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceOptions {
    pub dt_max: f64,
    /// Absolute residual tolerance; defaults to `1e-9 · 𝒮(ηρ)`.
    pub tol: Option<f64>,
    pub weights: WeightScheme,
    /// Subgroup to draw from; `None` is the full unitary group.
    pub sampler: Option<BlockSampler>,
    /// Floor on `|∂_τ residual|`; defaults to `1e-9 · 𝒮(ηρ) / period`.
    pub derivative_floor: Option<f64>,
}

impl SliceOptions {
    pub fn new(dt_max: f64) -> SliceOptions {
        SliceOptions { dt_max, tol: None, weights: WeightScheme::Uniform, sampler: None, derivative_floor: None }
    }
}

enum Draw {
    Sample { raw: f64, pair: Option<(SliceSample, SliceSample)>, flagged: bool },
    Failed(CfsError),
}

/// Symmetrized ensemble of `⌈K/2⌉` accepted pairs `(𝒰, 𝒰⁻¹)`. Draw `i`
/// uses stream `(seed, "slice", i)`, so the ensemble does not depend on the
/// thread count.
pub fn slice_ensemble(k: usize, problem: &SliceProblem, options: &SliceOptions, seed: u64) -> Result<SliceEnsemble> {
    if k == 0 {
        return Err(CfsError::InvalidArgument("ensemble size must be positive".into()));
    }
    if !(options.dt_max > 0.0 && options.dt_max < 0.5 * problem.period) {
        return Err(CfsError::InvalidArgument(format!("dt_max must lie in (0, period/2), got {}", options.dt_max)));
    }
    let f = problem.eta_rho.f();
    let sampler = options.sampler.unwrap_or(BlockSampler { dims: f, f });
    let action_scale = causal_action(problem.eta_rho, &problem.params);
    let tol = options.tol.unwrap_or(DEFAULT_RELATIVE_TOL * action_scale);
    let floor = options.derivative_floor.unwrap_or(DEFAULT_RELATIVE_TOL * action_scale / problem.period);
    let pairs_wanted = k.div_ceil(2);
    let max_draws = DRAWS_PER_SAMPLE * k;

    let mut samples = Vec::with_capacity(2 * pairs_wanted);
    let mut raw = Vec::new();
    let mut flagged = 0;
    let mut draws = 0;
    let mut accepted_draws = 0;
    'outer: while draws < max_draws {
        let start = draws;
        let end = (start + BATCH).min(max_draws);
        let results: Vec<Draw> = (start..end)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(seed, "slice", i as u64);
                let v = sampler.sample(&mut r);
                let r0 = problem.residual(&v);
                match project_from(problem, &v, r0, options.dt_max, tol) {
                    Ok(Projection::Accepted(s)) => {
                        let inv_u = s.u.inverse();
                        let inv = SliceSample { residual: problem.residual(&inv_u), derivative: problem.flow_derivative(&inv_u), u: inv_u, tau: -s.tau, weight: 1.0 };
                        let flagged = s.derivative.abs() < floor || inv.derivative.abs() < floor;
                        Draw::Sample { raw: r0, pair: Some((s, inv)), flagged }
                    }
                    Ok(Projection::Rejected) => Draw::Sample { raw: r0, pair: None, flagged: false },
                    Err(e) => Draw::Failed(e),
                }
            })
            .collect();
        for res in results {
            draws += 1;
            match res {
                Draw::Sample { raw: r0, pair, flagged: fl } => {
                    raw.push(r0);
                    if let Some((s, inv)) = pair {
                        accepted_draws += 1;
                        if fl {
                            flagged += 1;
                        } else {
                            samples.push(s);
                            samples.push(inv);
                        }
                    }
                }
                Draw::Failed(e) => return Err(e),
            }
            if samples.len() >= 2 * pairs_wanted {
                break 'outer;
            }
        }
    }
    if samples.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    apply_weights(&mut samples, options.weights);
    Ok(SliceEnsemble {
        samples,
        acceptance_rate: accepted_draws as f64 / draws as f64,
        seed,
        dt_max: options.dt_max,
        thickness: 0.0,
        tol,
        gamma_scale: stats::median_abs(&raw),
        action_scale,
        draws,
        flagged,
    })
}

fn apply_weights(samples: &mut [SliceSample], scheme: WeightScheme) {
    for s in samples.iter_mut() {
        s.weight = match scheme {
            WeightScheme::Uniform => 1.0,
            WeightScheme::InverseFlowDerivative => 1.0 / s.derivative.abs(),
        };
    }
}

/// The thickened set `𝒢^{t0}(Δt)`: every slice sample moved by `U_τ` with
/// `τ` uniform in `[−Δt, Δt]`, drawn from stream `(seed, tag, i)`.
pub fn thicken(ensemble: &SliceEnsemble, problem: &SliceProblem, dt: f64, seed: u64, tag: &str) -> Result<SliceEnsemble> {
    if !(dt > 0.0) {
        return Err(CfsError::InvalidArgument(format!("thickness must be positive, got {dt}")));
    }
    let samples: Vec<SliceSample> = ensemble
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            use rand::Rng;
            let tau: f64 = rng::stream(seed, tag, i as u64).random_range(-dt..=dt);
            let u = problem.along(&s.u, tau);
            SliceSample { residual: problem.residual(&u), derivative: s.derivative, u, tau, weight: s.weight }
        })
        .collect();
    Ok(SliceEnsemble { samples, thickness: dt, ..ensemble.clone() })
}

/// Weighted ensemble mean of `fun` with jackknife error.
pub fn normalized_integral<F: Fn(&SliceSample) -> f64 + Sync>(fun: F, ensemble: &SliceEnsemble) -> Result<Estimate> {
    if ensemble.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let values: Vec<f64> = ensemble.samples.par_iter().map(&fun).collect();
    stats::jackknife_mean(&values, &ensemble.weights())
}

/// Largest `|residual(𝒰⁻¹)|` over the ensemble; point symmetry holds when
/// this stays within the ensemble tolerance.
pub fn point_symmetry_defect(ensemble: &SliceEnsemble, problem: &SliceProblem) -> f64 {
    ensemble.samples.par_iter().map(|s| problem.residual(&s.u.inverse()).abs()).reduce(|| 0.0, f64::max)
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config_sha256: String,
    seed: u64,
    count: usize,
    f: usize,
    dt_max: f64,
    thickness: f64,
    tol: f64,
    gamma_scale: f64,
    action_scale: f64,
    acceptance_rate: f64,
    draws: usize,
    flagged: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    mat_b64: String,
    tau: f64,
    residual: f64,
    weight: f64,
    derivative: f64,
}

fn mat_to_b64(u: &GroupElement) -> String {
    let (re, im) = encode_matrix(u.mat());
    B64.encode(format!("{re}:{im}"))
}

fn b64_to_mat(s: &str, f: usize) -> Result<GroupElement> {
    let text = String::from_utf8(B64.decode(s).map_err(|e| CfsError::Serialization(e.to_string()))?).map_err(|e| CfsError::Serialization(e.to_string()))?;
    let (re, im) = text.split_once(':').ok_or_else(|| CfsError::Serialization("malformed matrix payload".into()))?;
    GroupElement::new(decode_matrix(re, im, f)?)
}

/// JSON lines: a header with the generating configuration checksum, then one
/// sample per line.
pub fn write_jsonl<W: Write>(ensemble: &SliceEnsemble, config_sha256: &str, out: &mut W) -> std::io::Result<()> {
    let f = ensemble.samples.first().map_or(0, |s| s.u.dim());
    let header = Header {
        kind: "header".into(),
        config_sha256: config_sha256.into(),
        seed: ensemble.seed,
        count: ensemble.len(),
        f,
        dt_max: ensemble.dt_max,
        thickness: ensemble.thickness,
        tol: ensemble.tol,
        gamma_scale: ensemble.gamma_scale,
        action_scale: ensemble.action_scale,
        acceptance_rate: ensemble.acceptance_rate,
        draws: ensemble.draws,
        flagged: ensemble.flagged,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for s in &ensemble.samples {
        let line = SampleLine { mat_b64: mat_to_b64(&s.u), tau: s.tau, residual: s.residual, weight: s.weight, derivative: s.derivative };
        writeln!(out, "{}", serde_json::to_string(&line).expect("sample serializes"))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R, expected_sha256: &str) -> Result<SliceEnsemble> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| CfsError::Serialization("empty ensemble file".into()))?.map_err(|e| CfsError::Serialization(e.to_string()))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| CfsError::Serialization(e.to_string()))?;
    if header.config_sha256 != expected_sha256 {
        return Err(CfsError::ChecksumMismatch { expected: expected_sha256.into(), found: header.config_sha256 });
    }
    let mut samples = Vec::with_capacity(header.count);
    for line in lines {
        let line = line.map_err(|e| CfsError::Serialization(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: SampleLine = serde_json::from_str(&line).map_err(|e| CfsError::Serialization(e.to_string()))?;
        samples.push(SliceSample { u: b64_to_mat(&s.mat_b64, header.f)?, tau: s.tau, residual: s.residual, weight: s.weight, derivative: s.derivative });
    }
    if samples.len() != header.count {
        return Err(CfsError::Serialization(format!("header announces {} samples, found {}", header.count, samples.len())));
    }
    Ok(SliceEnsemble {
        samples,
        acceptance_rate: header.acceptance_rate,
        seed: header.seed,
        dt_max: header.dt_max,
        thickness: header.thickness,
        tol: header.tol,
        gamma_scale: header.gamma_scale,
        action_scale: header.action_scale,
        draws: header.draws,
        flagged: header.flagged,
    })
}
