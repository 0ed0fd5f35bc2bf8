//! Admissibility, the entropy functional, its optimization over `(h, T)`,
//! optimality conditions and regularity diagnostics.
//!
//! For a fixed `h` and slice sample `𝒰` the weighted Lagrangian block
//! `K_ab = (w̃_a w_b) L(x̃_a, h𝒰 y_b 𝒰⁻¹h⁻¹)` enters every quantity only
//! through the row sums `R_a = Σ_b K_ab` and `S_a = Σ_b m_b K_ab`, where `m`
//! is the mask of `Ω^{t0}` on `ηρ`:
//!
//! `γ^{Ω̃′,t0}_Ṽ = Σ_a v_a (m̃_a R_a − S_a)`.
//!
//! These are cached per sample in a [`ResponseTable`], so that moves of the
//! time function `T` cost `O(K·N)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::configuration::{encode_matrix, past_membership, DiscreteConfiguration, PastSet};
use crate::error::{CfsError, Result};
use crate::group::{self, GroupElement};
use crate::lagrangian::{ell, lagrangian_factors, ModelParams};
use crate::operator::{spin_intersection_dim, spin_space_dim};
use crate::rng;
use crate::slice::{self, SliceEnsemble, SliceOptions, SliceProblem, SliceSample};
use crate::stats::{self, Estimate, LogMeanExp};
use crate::group::subgroup_restriction;

/// `admiss_tol = ADMISS_RELATIVE_TOL · gamma_scale`.
pub const ADMISS_RELATIVE_TOL: f64 = 1e-6;
/// Default positivity floor of the regularity checks, relative to the
/// causal action of `ηρ`.
pub const TTR_RELATIVE_FLOOR: f64 = 1e-9;
const ROOT_ITERATIONS: usize = 80;

/// The fixed data of an entropy computation.
#[derive(Debug, Clone, Copy)]
pub struct EntropyContext<'a> {
    pub rho_tilde: &'a DiscreteConfiguration,
    pub eta_rho: &'a DiscreteConfiguration,
    pub t0: f64,
    pub params: ModelParams,
}

impl<'a> EntropyContext<'a> {
    pub fn slice_problem(&self) -> Result<SliceProblem<'a>> {
        SliceProblem::new(self.eta_rho, self.t0, self.params)
    }

    fn period(&self) -> Result<f64> {
        self.eta_rho.period().ok_or_else(|| CfsError::InvalidArgument("vacuum must be periodic".into()))
    }

    fn vacuum_mask(&self) -> Vec<f64> {
        self.eta_rho.atoms().iter().map(|a| if a.t <= self.t0 { 1.0 } else { 0.0 }).collect()
    }

    fn check(&self) -> Result<()> {
        if self.rho_tilde.f() != self.eta_rho.f() {
            return Err(CfsError::DimensionMismatch { expected: self.eta_rho.f(), found: self.rho_tilde.f() });
        }
        if self.rho_tilde.n() != self.eta_rho.n() {
            return Err(CfsError::DimensionMismatch { expected: self.eta_rho.n(), found: self.rho_tilde.n() });
        }
        Ok(())
    }
}

/// Per-sample row sums `R_a`, `S_a` (sample-major).
#[derive(Debug, Clone)]
pub struct ResponseTable {
    pub n_atoms: usize,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ResponseTable {
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
    pub fn row_r(&self, i: usize) -> &[f64] {
        &self.r[i * self.n_atoms..(i + 1) * self.n_atoms]
    }
    pub fn row_s(&self, i: usize) -> &[f64] {
        &self.s[i * self.n_atoms..(i + 1) * self.n_atoms]
    }

    /// `γ_i = Σ_a v_a (m̃_a R_ia − S_ia)` for every sample.
    pub fn gammas(&self, membership: &[f64], region: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let (r, s) = (self.row_r(i), self.row_s(i));
                let mut g = 0.0;
                for a in 0..self.n_atoms {
                    g += region[a] * (membership[a] * r[a] - s[a]);
                }
                g
            })
            .collect()
    }
}

/// Row sums for the elements `h𝒰_i` of an ensemble.
pub fn response_table(ctx: &EntropyContext, h: &GroupElement, samples: &[SliceSample]) -> Result<ResponseTable> {
    ctx.check()?;
    let m = ctx.vacuum_mask();
    let n = ctx.params.n;
    let kappa = ctx.params.kappa;
    let xs = ctx.rho_tilde.atoms();
    let ys = ctx.eta_rho.atoms();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = samples
        .par_iter()
        .map(|s| {
            let w = h.compose(&s.u);
            let moved: Vec<_> = ys.iter().map(|y| y.point.factor().conjugated(w.mat())).collect();
            let mut r = Vec::with_capacity(xs.len());
            let mut sv = Vec::with_capacity(xs.len());
            for xa in xs {
                let mut ra = 0.0;
                let mut sa = 0.0;
                for (b, yb) in ys.iter().enumerate() {
                    let k = (xa.weight * yb.weight) * lagrangian_factors(xa.point.factor(), &moved[b], n, kappa);
                    ra += k;
                    sa += m[b] * k;
                }
                r.push(ra);
                sv.push(sa);
            }
            (r, sv)
        })
        .collect();
    let mut table = ResponseTable { n_atoms: xs.len(), r: Vec::with_capacity(samples.len() * xs.len()), s: Vec::with_capacity(samples.len() * xs.len()), weights: samples.iter().map(|s| s.weight).collect() };
    for (r, s) in rows {
        table.r.extend(r);
        table.s.extend(s);
    }
    Ok(table)
}

/// First-factor past set: an explicit mask or a time function.
#[derive(Debug, Clone, PartialEq)]
pub enum PastChoice {
    Mask(Vec<bool>),
    Time(PastSet),
}

impl PastChoice {
    pub fn membership(&self, rho_tilde: &DiscreteConfiguration) -> Result<Vec<f64>> {
        match self {
            PastChoice::Mask(m) => {
                if m.len() != rho_tilde.len() {
                    return Err(CfsError::DimensionMismatch { expected: rho_tilde.len(), found: m.len() });
                }
                Ok(crate::configuration::mask_to_weights(m))
            }
            PastChoice::Time(ts) => past_membership(rho_tilde, ts),
        }
    }
}

fn full_region(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

/// Ensemble mean of `γ^{Ω̃,t0}(ρ̃, h𝒰(ηρ))`.
pub fn admissibility_residual(ctx: &EntropyContext, past: &PastChoice, h: &GroupElement, ensemble: &SliceEnsemble) -> Result<Estimate> {
    if ensemble.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let table = response_table(ctx, h, &ensemble.samples)?;
    let g = table.gammas(&past.membership(ctx.rho_tilde)?, &full_region(table.n_atoms));
    stats::jackknife_mean(&g, &table.weights)
}

fn residual_on(table: &ResponseTable, membership: &[f64], region: &[f64]) -> f64 {
    let g = table.gammas(membership, region);
    let mut sw = 0.0;
    let mut swg = 0.0;
    for (x, w) in g.iter().zip(&table.weights) {
        sw += w;
        swg += w * x;
    }
    swg / sw
}

pub fn admiss_tol(ensemble: &SliceEnsemble) -> f64 {
    if ensemble.gamma_scale > 0.0 {
        ADMISS_RELATIVE_TOL * ensemble.gamma_scale
    } else {
        ADMISS_RELATIVE_TOL * slice::DEFAULT_RELATIVE_TOL * ensemble.action_scale
    }
}

/// Range of sensible time-function values: below `t_min − Δ` every
/// membership is 0, above `t_max` every membership is 1.
fn time_range(rho_tilde: &DiscreteConfiguration) -> Result<(f64, f64, f64)> {
    let ts = rho_tilde.t_lattice();
    let step = rho_tilde.step()?;
    match (ts.first(), ts.last()) {
        (Some(&lo), Some(&hi)) => Ok((lo - step, hi, step)),
        _ => Err(CfsError::EmptySlice),
    }
}

fn clamp_past(ts: &PastSet, lo: f64, hi: f64) -> PastSet {
    PastSet { values: ts.values.iter().map(|t| t.clamp(lo, hi)).collect() }
}

/// Global shift `T ↦ T − s` restoring `|mean γ^{T,t0}| ≤ tol`. The residual
/// is nonincreasing and piecewise linear in `s`; the kinks sit where some
/// `T(𝐱) − s` crosses a cell boundary, so the root is located between
/// consecutive kinks and then interpolated linearly.
pub fn project_on_table(ts: &PastSet, table: &ResponseTable, rho_tilde: &DiscreteConfiguration, region: &[f64], tol: f64) -> Result<(PastSet, f64)> {
    let (lo, hi, _) = time_range(rho_tilde)?;
    let eval = |s: f64| -> Result<f64> {
        let shifted = clamp_past(&ts.shifted(s), lo, hi);
        Ok(residual_on(table, &past_membership(rho_tilde, &shifted)?, region))
    };
    let r0 = eval(0.0)?;
    if r0.abs() <= tol {
        return Ok((clamp_past(ts, lo, hi), 0.0));
    }
    let t_min = ts.values.iter().copied().fold(f64::INFINITY, f64::min);
    let t_max = ts.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s_lo = t_min - hi;
    let s_hi = t_max - lo;
    let (r_lo, r_hi) = (eval(s_lo)?, eval(s_hi)?);
    if (r_lo > 0.0) == (r_hi > 0.0) && r_lo.abs() > tol && r_hi.abs() > tol {
        return Err(CfsError::NoBracket);
    }
    let lattice = rho_tilde.t_lattice();
    let step = rho_tilde.step()?;
    let mut kinks = vec![s_lo, 0.0, s_hi];
    for t in &ts.values {
        for tl in &lattice {
            for edge in [*tl, *tl - step] {
                let s = t - edge;
                if s > s_lo && s < s_hi {
                    kinks.push(s);
                }
            }
        }
    }
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    // Binary search for consecutive kinks with a sign change.
    let (mut a, mut b) = (0usize, kinks.len() - 1);
    let (mut fa, mut fb) = (r_lo, r_hi);
    while b - a > 1 {
        let mid = (a + b) / 2;
        let fm = eval(kinks[mid])?;
        if fm.abs() <= tol {
            return Ok((clamp_past(&ts.shifted(kinks[mid]), lo, hi), kinks[mid]));
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
            fb = fm;
        }
    }
    let (mut sa, mut sb) = (kinks[a], kinks[b]);
    for _ in 0..ROOT_ITERATIONS {
        let s = if fb != fa { sa - fa * (sb - sa) / (fb - fa) } else { 0.5 * (sa + sb) };
        let s = if s > sa.min(sb) && s < sa.max(sb) { s } else { 0.5 * (sa + sb) };
        let fs = eval(s)?;
        if fs.abs() <= tol {
            return Ok((clamp_past(&ts.shifted(s), lo, hi), s));
        }
        if (fs > 0.0) == (fa > 0.0) {
            sa = s;
            fa = fs;
        } else {
            sb = s;
            fb = fs;
        }
    }
    Err(CfsError::RootFindStall { residual: fa.abs().min(fb.abs()), tol, iterations: ROOT_ITERATIONS })
}

/// [`project_on_table`] for a given `h`, building the table.
pub fn project_admissible(ctx: &EntropyContext, ts: &PastSet, h: &GroupElement, ensemble: &SliceEnsemble) -> Result<(PastSet, f64)> {
    if ensemble.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let table = response_table(ctx, h, &ensemble.samples)?;
    project_on_table(ts, &table, ctx.rho_tilde, &full_region(table.n_atoms), admiss_tol(ensemble))
}

/// `log` of the ensemble mean of `exp(β γ)`.
pub fn entropy_on_table(table: &ResponseTable, membership: &[f64], region: &[f64], beta: f64) -> Result<LogMeanExp> {
    let ex: Vec<f64> = table.gammas(membership, region).iter().map(|g| beta * g).collect();
    stats::log_mean_exp(&ex, &table.weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyValue {
    pub value: f64,
    pub mc_error: f64,
}

pub fn entropy_functional(ctx: &EntropyContext, past: &PastChoice, h: &GroupElement, beta: f64, ensemble: &SliceEnsemble) -> Result<EntropyValue> {
    if ensemble.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let table = response_table(ctx, h, &ensemble.samples)?;
    let l = entropy_on_table(&table, &past.membership(ctx.rho_tilde)?, &full_region(table.n_atoms), beta)?;
    Ok(EntropyValue { value: l.value, mc_error: l.std_error })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionFunction {
    pub z: f64,
    /// The logarithm as computed by the entropy functional on the same samples.
    pub log_z: f64,
    pub mc_error: f64,
}

/// `Z` = ensemble mean of `exp(βγ)`; shares its computation with
/// [`entropy_functional`], so `log_z` equals that value exactly.
pub fn partition_function(ctx: &EntropyContext, past: &PastChoice, h: &GroupElement, beta: f64, ensemble: &SliceEnsemble) -> Result<PartitionFunction> {
    let e = entropy_functional(ctx, past, h, beta, ensemble)?;
    Ok(PartitionFunction { z: e.value.exp(), log_z: e.value, mc_error: e.value.exp() * e.mc_error })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerBudget {
    /// Geodesic proposals for `h`.
    pub outer_iters: usize,
    /// Sweeps of per-site moves of `T` after each accepted `h`.
    pub inner_sweeps: usize,
    pub initial_step: f64,
    pub min_step: f64,
    /// Random restarts when `h = 1` cannot be made admissible.
    pub restarts: usize,
}

impl Default for OptimizerBudget {
    fn default() -> Self {
        OptimizerBudget { outer_iters: 8, inner_sweeps: 3, initial_step: 0.2, min_step: 1e-3, restarts: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub step: f64,
    pub value: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupElementDoc {
    pub mat_re: String,
    pub mat_im: String,
}

impl From<&GroupElement> for GroupElementDoc {
    fn from(u: &GroupElement) -> Self {
        let (mat_re, mat_im) = encode_matrix(u.mat());
        GroupElementDoc { mat_re, mat_im }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtPoint {
    pub dt: f64,
    pub value: f64,
    pub mc_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub master_seed: u64,
    pub ensemble_seed: u64,
    pub optimizer_tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub value: f64,
    pub mc_error: f64,
    pub beta: f64,
    #[serde(skip)]
    pub h_star: Option<GroupElement>,
    pub h_star_doc: Option<GroupElementDoc>,
    pub t_star: PastSet,
    /// Ensemble means of the two constraints (target past set, optimized `T`).
    pub admiss_residuals: (f64, f64),
    pub admiss_errors: (f64, f64),
    pub admiss_tol: f64,
    pub converged: bool,
    pub trace: Vec<TracePoint>,
    pub dt_schedule: Vec<f64>,
    pub per_dt: Vec<DtPoint>,
    pub ensemble_size: usize,
    pub acceptance_rate: f64,
    pub gamma_scale: f64,
    pub ensemble_checksum: String,
    pub seeds: SeedManifest,
}

/// SHA-256 over the sample matrices and weights.
pub fn ensemble_checksum(ensemble: &SliceEnsemble) -> String {
    let mut hasher = Sha256::new();
    for s in &ensemble.samples {
        for z in s.u.mat().iter() {
            hasher.update(z.re.to_le_bytes());
            hasher.update(z.im.to_le_bytes());
        }
        hasher.update(s.weight.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Stream tag of an optimizer run; depends only on the region, so a run with
/// `Ṽ = M̃` reproduces the global run.
pub fn region_tag(region: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in region {
        hasher.update(v.to_le_bytes());
    }
    format!("opt-{}", &hex::encode(hasher.finalize())[..16])
}

struct Problem<'a> {
    ctx: EntropyContext<'a>,
    ensemble: &'a SliceEnsemble,
    target: Vec<f64>,
    region: Vec<f64>,
    beta: f64,
    tol: f64,
    period: f64,
}

struct Candidate {
    h: GroupElement,
    table: ResponseTable,
    ts: PastSet,
    value: LogMeanExp,
}

impl<'a> Problem<'a> {
    fn table(&self, h: &GroupElement) -> Result<ResponseTable> {
        response_table(&self.ctx, h, &self.ensemble.samples)
    }

    /// Left-translate `h0` by `U_s` until the target constraint holds, with
    /// Illinois false position after an expanding scan for a sign change.
    fn admissibilize(&self, h0: &GroupElement) -> Result<(GroupElement, ResponseTable)> {
        let gen = self.ctx.eta_rho.generator().ok_or_else(|| CfsError::InvalidArgument("vacuum must carry its generator".into()))?;
        let at = |s: f64| -> Result<(GroupElement, ResponseTable, f64)> {
            let h = if s == 0.0 { h0.clone() } else { group::time_translation(s, gen).compose(h0) };
            let table = self.table(&h)?;
            let r = residual_on(&table, &self.target, &self.region);
            Ok((h, table, r))
        };
        let (h, table, r0) = at(0.0)?;
        if r0.abs() <= self.tol {
            return Ok((h, table));
        }
        let step0 = self.ctx.eta_rho.step()? * 0.25;
        let mut bracket = None;
        let mut d = step0;
        while d <= 0.5 * self.period && bracket.is_none() {
            for s in [d, -d] {
                let (hs, ts, rs) = at(s)?;
                if rs.abs() <= self.tol {
                    return Ok((hs, ts));
                }
                if (rs > 0.0) != (r0 > 0.0) {
                    let prev = if s > 0.0 { s - d / 2.0_f64.max(1.0) } else { s + d / 2.0_f64.max(1.0) };
                    let prev = if d == step0 { 0.0 } else { prev };
                    bracket = Some((prev, s, rs));
                    break;
                }
            }
            d *= 2.0;
        }
        let (a0, b0, _) = bracket.ok_or_else(|| CfsError::NoAdmissibleStart("no sign change of the target constraint along the translation flow".into()))?;
        let (mut a, mut b) = (a0, b0);
        let mut fa = at(a)?.2;
        let (_, _, mut fb) = at(b)?;
        if (fa > 0.0) == (fb > 0.0) {
            // The inner point of the scan lost the sign; fall back to 0.
            a = 0.0;
            fa = r0;
        }
        let mut side = 0i8;
        for _ in 0..ROOT_ITERATIONS {
            let mut s = (a * fb - b * fa) / (fb - fa);
            if !(s > a.min(b) && s < a.max(b)) {
                s = 0.5 * (a + b);
            }
            let (hs, ts, fs) = at(s)?;
            if fs.abs() <= self.tol {
                return Ok((hs, ts));
            }
            if (fs > 0.0) == (fb > 0.0) {
                b = s;
                fb = fs;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            } else {
                a = s;
                fa = fs;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            }
        }
        Err(CfsError::NoAdmissibleStart("target constraint root-finding did not converge".into()))
    }

    fn evaluate(&self, table: &ResponseTable, ts: &PastSet) -> Result<(PastSet, LogMeanExp)> {
        let (projected, _) = project_on_table(ts, table, self.ctx.rho_tilde, &self.region, self.tol)?;
        let member = past_membership(self.ctx.rho_tilde, &projected)?;
        let value = entropy_on_table(table, &member, &self.region, self.beta)?;
        Ok((projected, value))
    }

    /// Per-site moves of one lattice step, each re-projected.
    fn descend_t(&self, table: &ResponseTable, start: &PastSet, sweeps: usize) -> Result<(PastSet, LogMeanExp)> {
        let (mut ts, mut best) = self.evaluate(table, start)?;
        let step = self.ctx.rho_tilde.step()?;
        for _ in 0..sweeps {
            let mut improved = false;
            for site in 0..ts.values.len() {
                for dir in [step, -step] {
                    let mut trial = ts.clone();
                    trial.values[site] += dir;
                    if let Ok((projected, value)) = self.evaluate(table, &trial) {
                        if value.value < best.value {
                            ts = projected;
                            best = value;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
        Ok((ts, best))
    }
}

/// Optimization over admissible pairs with a prebuilt ensemble.
#[allow(clippy::too_many_arguments)]
pub fn optimize_configuration(
    ctx: &EntropyContext,
    target: &PastChoice,
    region: Option<&[bool]>,
    beta: f64,
    ensemble: &SliceEnsemble,
    budget: &OptimizerBudget,
    seed: u64,
) -> Result<EntropyReport> {
    ctx.check()?;
    if ensemble.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let n_atoms = ctx.rho_tilde.len();
    let region: Vec<f64> = match region {
        Some(v) if v.len() != n_atoms => return Err(CfsError::DimensionMismatch { expected: n_atoms, found: v.len() }),
        Some(v) => crate::configuration::mask_to_weights(v),
        None => full_region(n_atoms),
    };
    let tag = region_tag(&region);
    let problem = Problem { ctx: *ctx, ensemble, target: target.membership(ctx.rho_tilde)?, region, beta, tol: admiss_tol(ensemble), period: ctx.period()? };
    let f = ctx.rho_tilde.f();
    let n_sites = ctx.rho_tilde.n_sites();
    let t_init = PastSet::constant(ctx.t0, n_sites);

    // Admissible start: identity first, then random restarts.
    let mut start = None;
    let mut last_err = None;
    for r in 0..=budget.restarts {
        let h0 = if r == 0 {
            GroupElement::identity(f)
        } else {
            let a = rng::unit_hermitian(&mut rng::stream(seed, &format!("{tag}-restart"), r as u64), f);
            GroupElement::identity(f).geodesic_step(&a, budget.initial_step * r as f64)
        };
        match problem.admissibilize(&h0).and_then(|(h, table)| {
            let (ts, value) = problem.descend_t(&table, &t_init, budget.inner_sweeps)?;
            Ok(Candidate { h, table, ts, value })
        }) {
            Ok(c) => {
                start = Some(c);
                break;
            }
            Err(e) => last_err = Some(e),
        }
    }
    let mut best = start.ok_or_else(|| match last_err {
        Some(CfsError::NoAdmissibleStart(m)) => CfsError::NoAdmissibleStart(m),
        Some(e) => CfsError::NoAdmissibleStart(e.to_string()),
        None => CfsError::NoAdmissibleStart("no start attempted".into()),
    })?;

    let mut trace = vec![TracePoint { iteration: 0, step: budget.initial_step, value: best.value.value, accepted: true }];
    let mut eps = budget.initial_step;
    let mut converged = false;
    for it in 0..budget.outer_iters {
        if eps < budget.min_step {
            converged = true;
            break;
        }
        let a = rng::unit_hermitian(&mut rng::stream(seed, &tag, it as u64), f);
        let proposal = best.h.geodesic_step(&a, eps);
        let outcome = problem.admissibilize(&proposal).and_then(|(h, table)| {
            let (ts, value) = problem.descend_t(&table, &best.ts, budget.inner_sweeps)?;
            Ok(Candidate { h, table, ts, value })
        });
        let accepted = match outcome {
            Ok(c) if c.value.value < best.value.value => {
                best = c;
                true
            }
            _ => false,
        };
        if !accepted {
            eps *= 0.5;
        }
        trace.push(TracePoint { iteration: it + 1, step: eps, value: best.value.value, accepted });
    }
    if eps < budget.min_step {
        converged = true;
    }

    let member = past_membership(ctx.rho_tilde, &best.ts)?;
    let g_target = best.table.gammas(&problem.target, &problem.region);
    let g_t = best.table.gammas(&member, &problem.region);
    let e_target = stats::jackknife_mean(&g_target, &best.table.weights)?;
    let e_t = stats::jackknife_mean(&g_t, &best.table.weights)?;
    Ok(EntropyReport {
        value: best.value.value,
        mc_error: best.value.std_error,
        beta,
        h_star_doc: Some(GroupElementDoc::from(&best.h)),
        h_star: Some(best.h),
        t_star: best.ts,
        admiss_residuals: (e_target.mean, e_t.mean),
        admiss_errors: (e_target.std_error, e_t.std_error),
        admiss_tol: problem.tol,
        converged,
        trace,
        dt_schedule: vec![],
        per_dt: vec![],
        ensemble_size: ensemble.len(),
        acceptance_rate: ensemble.acceptance_rate,
        gamma_scale: ensemble.gamma_scale,
        ensemble_checksum: ensemble_checksum(ensemble),
        seeds: SeedManifest { master_seed: seed, ensemble_seed: ensemble.seed, optimizer_tag: tag },
    })
}

/// Parameters shared by the entropy pipelines.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySetup {
    pub ensemble_size: usize,
    pub slice: SliceOptions,
    pub budget: OptimizerBudget,
    /// Positivity floor of the regularity gate; default `1e-9 · 𝒮(ηρ)`.
    pub ttr_floor: Option<f64>,
}

/// Seed of the slice ensemble derived from the master seed.
pub fn ensemble_seed(seed: u64) -> u64 {
    rng::derive_seed(seed, "slice-ensemble")
}

/// Slice ensemble for `setup` (full group or the configured subgroup).
pub fn build_ensemble(ctx: &EntropyContext, setup: &EntropySetup, seed: u64) -> Result<SliceEnsemble> {
    let mut problem = ctx.slice_problem()?;
    if let Some(sampler) = setup.slice.sampler {
        if sampler.dims == 0 {
            return Ok(identity_ensemble(ctx, setup, seed));
        }
        let flow = problem.flow.restricted(sampler.dims);
        problem = problem.with_flow(flow);
    }
    slice::slice_ensemble(setup.ensemble_size, &problem, &setup.slice, ensemble_seed(seed))
}

/// The trivial group: a single identity sample.
fn identity_ensemble(ctx: &EntropyContext, setup: &EntropySetup, seed: u64) -> SliceEnsemble {
    let f = ctx.eta_rho.f();
    let problem = ctx.slice_problem().expect("checked by caller");
    let u = GroupElement::identity(f);
    let residual = problem.residual(&u);
    let action_scale = crate::lagrangian::causal_action(ctx.eta_rho, &ctx.params);
    SliceEnsemble {
        samples: vec![SliceSample { u, tau: 0.0, residual, weight: 1.0, derivative: 0.0 }],
        acceptance_rate: 1.0,
        seed: ensemble_seed(seed),
        dt_max: setup.slice.dt_max,
        thickness: 0.0,
        tol: setup.slice.tol.unwrap_or(slice::DEFAULT_RELATIVE_TOL * action_scale),
        gamma_scale: 0.0,
        action_scale,
        draws: 1,
        flagged: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TtrReport {
    pub min_over_u: f64,
    pub pass: bool,
    pub floor: f64,
}

fn ttr_floor(ctx: &EntropyContext, floor: Option<f64>) -> f64 {
    floor.unwrap_or_else(|| TTR_RELATIVE_FLOOR * crate::lagrangian::causal_action(ctx.eta_rho, &ctx.params))
}

/// `min_𝒰 Σ_{x at t0} μ(x) Σ_b w_b L(𝒰x𝒰⁻¹, y_b)` over the ensemble.
pub fn ttr_check(eta_rho: &DiscreteConfiguration, t0: f64, ensemble: &SliceEnsemble, params: &ModelParams, floor: Option<f64>) -> Result<TtrReport> {
    let slice_atoms = eta_rho.slice_indices(t0);
    if slice_atoms.is_empty() {
        return Err(CfsError::NoSliceAtoms { t0 });
    }
    if ensemble.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let step = eta_rho.step()?;
    let ctx = EntropyContext { rho_tilde: eta_rho, eta_rho, t0, params: *params };
    let floor = ttr_floor(&ctx, floor);
    let values: Vec<f64> = ensemble
        .samples
        .par_iter()
        .map(|s| {
            let mut total = 0.0;
            for &a in &slice_atoms {
                let xa = &eta_rho.atoms()[a];
                let moved = xa.point.factor().conjugated(s.u.mat());
                let mut inner = 0.0;
                for yb in eta_rho.atoms() {
                    inner += yb.weight * lagrangian_factors(&moved, yb.point.factor(), params.n, params.kappa);
                }
                total += (xa.weight / step) * inner;
            }
            total
        })
        .collect();
    let min_over_u = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(TtrReport { min_over_u, pass: min_over_u > floor, floor })
}

/// Index of the atom of `site` whose cell `(t_a − Δ, t_a]` contains `T`.
fn kernel_atom(rho_tilde: &DiscreteConfiguration, site: usize, t: f64, step: f64) -> Option<usize> {
    rho_tilde.atoms().iter().position(|a| a.site == site && a.t - step < t && t <= a.t)
}

/// Slice atoms of `ρ̃` selected by `T`, one per site where it exists.
fn kernel_atoms(rho_tilde: &DiscreteConfiguration, ts: &PastSet) -> Result<Vec<(usize, usize)>> {
    let step = rho_tilde.step()?;
    Ok((0..ts.values.len()).filter_map(|site| kernel_atom(rho_tilde, site, ts.values[site], step).map(|a| (site, a))).collect())
}

/// Regularity for the pair: the kernel `Σ L(𝒰⁻¹h⁻¹xh𝒰, y)` integrated over
/// the `ρ̃`-slice selected by `T`.
pub fn ttr_check_tilde(ctx: &EntropyContext, ts: &PastSet, h: &GroupElement, ensemble: &SliceEnsemble, floor: Option<f64>) -> Result<TtrReport> {
    let atoms = kernel_atoms(ctx.rho_tilde, ts)?;
    if atoms.is_empty() {
        return Err(CfsError::EmptySlice);
    }
    if ensemble.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let table = response_table(ctx, h, &ensemble.samples)?;
    let step = ctx.rho_tilde.step()?;
    let floor = ttr_floor(ctx, floor);
    let mut min_over_u = f64::INFINITY;
    for i in 0..table.len() {
        let r = table.row_r(i);
        let mut total = 0.0;
        for &(_, a) in &atoms {
            total += r[a] / step;
        }
        min_over_u = min_over_u.min(total);
    }
    Ok(TtrReport { min_over_u, pass: min_over_u > floor, floor })
}

/// Per-sample, per-site kernel `h_𝒰(𝐱) = Σ_b w_b L(𝒰⁻¹h⁻¹xh𝒰, y_b)` and
/// slice weights `μ(𝐱) = w̃_a/Δ`.
fn site_kernels(table: &ResponseTable, rho_tilde: &DiscreteConfiguration, atoms: &[(usize, usize)]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let step = rho_tilde.step()?;
    let mu: Vec<f64> = atoms.iter().map(|&(_, a)| rho_tilde.atoms()[a].weight / step).collect();
    let kernel = (0..table.len()).map(|i| atoms.iter().map(|&(_, a)| table.row_r(i)[a] / rho_tilde.atoms()[a].weight).collect()).collect();
    Ok((kernel, mu))
}

/// `c = ∮ (Σ_𝐱 μ h_𝒰) e^{βγ} / ∮ Σ_𝐱 μ h_𝒰` for a generic kernel.
pub fn lagrange_c_from(kernel: &[Vec<f64>], mu: &[f64], gammas: &[f64], weights: &[f64], beta: f64) -> Result<f64> {
    if kernel.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let shift = gammas.iter().map(|g| beta * g).fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..kernel.len() {
        let mut k = 0.0;
        for (x, m) in mu.iter().enumerate() {
            k += m * kernel[i][x];
        }
        num += weights[i] * k * (beta * gammas[i] - shift).exp();
        den += weights[i] * k;
    }
    if !(den.abs() > f64::MIN_POSITIVE) {
        return Err(CfsError::DegenerateKernel { denominator: den });
    }
    Ok(shift.exp() * (num / den))
}

pub fn lagrange_c(ctx: &EntropyContext, ts: &PastSet, h: &GroupElement, beta: f64, ensemble: &SliceEnsemble) -> Result<f64> {
    let table = response_table(ctx, h, &ensemble.samples)?;
    let atoms = kernel_atoms(ctx.rho_tilde, ts)?;
    let (kernel, mu) = site_kernels(&table, ctx.rho_tilde, &atoms)?;
    let gammas = table.gammas(&past_membership(ctx.rho_tilde, ts)?, &full_region(table.n_atoms));
    lagrange_c_from(&kernel, &mu, &gammas, &table.weights, beta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityResidual {
    pub max_abs: f64,
    pub site: usize,
    /// Jackknife error of the site attaining the maximum.
    pub mc_error: f64,
    pub per_site: Vec<Estimate>,
}

pub fn optimality_residual_from(kernel: &[Vec<f64>], sites: &[usize], gammas: &[f64], weights: &[f64], beta: f64, c: f64) -> Result<OptimalityResidual> {
    if kernel.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let mut per_site = Vec::with_capacity(sites.len());
    for x in 0..sites.len() {
        let vals: Vec<f64> = (0..kernel.len()).map(|i| kernel[i][x] * ((beta * gammas[i]).exp() - c)).collect();
        per_site.push(stats::jackknife_mean(&vals, weights)?);
    }
    let (idx, worst) = per_site.iter().enumerate().max_by(|a, b| a.1.mean.abs().total_cmp(&b.1.mean.abs())).ok_or(CfsError::EmptySlice)?;
    Ok(OptimalityResidual { max_abs: worst.mean.abs(), site: sites[idx], mc_error: worst.std_error, per_site })
}

/// `max_𝐱 |∮ h_𝒰(𝐱) (e^{βγ} − c)|`.
pub fn optimality_residual(ctx: &EntropyContext, ts: &PastSet, h: &GroupElement, beta: f64, c: f64, ensemble: &SliceEnsemble) -> Result<OptimalityResidual> {
    if ensemble.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let table = response_table(ctx, h, &ensemble.samples)?;
    let atoms = kernel_atoms(ctx.rho_tilde, ts)?;
    let (kernel, _) = site_kernels(&table, ctx.rho_tilde, &atoms)?;
    let gammas = table.gammas(&past_membership(ctx.rho_tilde, ts)?, &full_region(table.n_atoms));
    let sites: Vec<usize> = atoms.iter().map(|&(s, _)| s).collect();
    optimality_residual_from(&kernel, &sites, &gammas, &table.weights, beta, c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondVariation {
    pub leading_beta2_coeff: f64,
    pub coeff_error: f64,
    /// Forward second difference of the entropy exponential along the
    /// projected family `T_τ = t0 + τg − Δt(τ)`.
    pub total: f64,
    pub c: f64,
}

/// `∮ (Σ_𝐱 (g − c) h_𝒰 μ)² e^{βγ}` with `c = Σ g h μ / Σ h μ`.
pub fn second_variation_from(g: &[f64], mu: &[f64], kernel: &[Vec<f64>], gammas: &[f64], weights: &[f64], beta: f64) -> Result<(f64, f64, f64)> {
    if g.iter().all(|&x| x == g[0]) {
        return Err(CfsError::ConstantDirection);
    }
    if kernel.is_empty() {
        return Err(CfsError::EnsembleEmpty);
    }
    let sw: f64 = weights.iter().sum();
    let h_mean: Vec<f64> = (0..mu.len()).map(|x| (0..kernel.len()).map(|i| weights[i] * kernel[i][x]).sum::<f64>() / sw).collect();
    let num: f64 = (0..mu.len()).map(|x| g[x] * h_mean[x] * mu[x]).sum();
    let den: f64 = (0..mu.len()).map(|x| h_mean[x] * mu[x]).sum();
    if !(den.abs() > f64::MIN_POSITIVE) {
        return Err(CfsError::DegenerateKernel { denominator: den });
    }
    let c = num / den;
    let vals: Vec<f64> = (0..kernel.len())
        .map(|i| {
            let d: f64 = (0..mu.len()).map(|x| (g[x] - c) * kernel[i][x] * mu[x]).sum();
            d * d * (beta * gammas[i]).exp()
        })
        .collect();
    let e = stats::jackknife_mean(&vals, weights)?;
    Ok((e.mean, e.std_error, c))
}

/// Second-variation probe on the vacuum pair `(Ω^{t0}, 1)` with `ρ̃ = ηρ`.
pub fn second_variation_probe(ctx: &EntropyContext, g: &[f64], beta: f64, ensemble: &SliceEnsemble) -> Result<SecondVariation> {
    let n_sites = ctx.rho_tilde.n_sites();
    if g.len() != n_sites {
        return Err(CfsError::DimensionMismatch { expected: n_sites, found: g.len() });
    }
    if g.iter().all(|&x| x == g[0]) {
        return Err(CfsError::ConstantDirection);
    }
    let h = GroupElement::identity(ctx.rho_tilde.f());
    let table = response_table(ctx, &h, &ensemble.samples)?;
    let t0s = PastSet::constant(ctx.t0, n_sites);
    let atoms = kernel_atoms(ctx.rho_tilde, &t0s)?;
    if atoms.len() != n_sites {
        return Err(CfsError::EmptySlice);
    }
    let (kernel, mu) = site_kernels(&table, ctx.rho_tilde, &atoms)?;
    let region = full_region(table.n_atoms);
    let gammas = table.gammas(&past_membership(ctx.rho_tilde, &t0s)?, &region);
    let (coeff, err, c) = second_variation_from(g, &mu, &kernel, &gammas, &table.weights, beta)?;

    // Forward differences stay inside one linear piece of the fractional masks.
    let step = ctx.rho_tilde.step()?;
    let gmax = g.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let tau = 0.125 * step / gmax;
    let tol = admiss_tol(ensemble);
    let exp_mean = |t: f64| -> Result<f64> {
        let ts = PastSet { values: (0..n_sites).map(|x| ctx.t0 + t * g[x]).collect() };
        let (projected, _) = project_on_table(&ts, &table, ctx.rho_tilde, &region, tol)?;
        let gs = table.gammas(&past_membership(ctx.rho_tilde, &projected)?, &region);
        let mut sw = 0.0;
        let mut se = 0.0;
        for (x, w) in gs.iter().zip(&table.weights) {
            sw += w;
            se += w * (beta * x).exp();
        }
        Ok(se / sw)
    };
    let (e0, e1, e2) = (exp_mean(0.0)?, exp_mean(tau)?, exp_mean(2.0 * tau)?);
    Ok(SecondVariation { leading_beta2_coeff: coeff, coeff_error: err, total: (e2 - 2.0 * e1 + e0) / (tau * tau), c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub slice_atoms: Vec<usize>,
    pub regular: Vec<bool>,
    pub triples: Vec<[usize; 3]>,
    pub hypothesis_i: bool,
    pub hypothesis_ii: String,
    /// `ℓ_η` at each slice atom.
    pub ell_eta: Vec<f64>,
}

/// Triples of regular slice atoms with pairwise trivial spin-space
/// intersections, and the level-set values `ℓ_η(x)`.
pub fn hypothesis_diagnostics(config: &DiscreteConfiguration, t0: f64, rank_tol: f64, params: &ModelParams) -> Result<HypothesisReport> {
    let slice_atoms = config.slice_indices(t0);
    if slice_atoms.is_empty() {
        return Err(CfsError::NoSliceAtoms { t0 });
    }
    let pts: Vec<_> = slice_atoms.iter().map(|&a| &config.atoms()[a].point).collect();
    let regular: Vec<bool> = pts.iter().map(|p| spin_space_dim(p, rank_tol) == 2 * config.n()).collect();
    let k = pts.len();
    let mut trivial = vec![vec![false; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = spin_intersection_dim(pts[i], pts[j], rank_tol)?;
            trivial[i][j] = d == 0;
            trivial[j][i] = d == 0;
        }
    }
    let mut triples = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            for l in (j + 1)..k {
                if regular[i] && regular[j] && regular[l] && trivial[i][j] && trivial[i][l] && trivial[j][l] {
                    triples.push([slice_atoms[i], slice_atoms[j], slice_atoms[l]]);
                }
            }
        }
    }
    let ell_eta = pts.iter().map(|p| ell(p, config, params)).collect::<Result<Vec<_>>>()?;
    Ok(HypothesisReport { hypothesis_i: !triples.is_empty(), slice_atoms, regular, triples, hypothesis_ii: "not machine-checkable".into(), ell_eta })
}

/// Fixed-time entropy: slice ensemble, regularity gate, optimization.
pub fn entropy_static(ctx: &EntropyContext, target: &PastChoice, beta: f64, setup: &EntropySetup, seed: u64) -> Result<EntropyReport> {
    let ensemble = build_ensemble(ctx, setup, seed)?;
    entropy_static_with(ctx, target, None, beta, setup, &ensemble, seed)
}

/// [`entropy_static`] on a given ensemble, optionally localized.
#[allow(clippy::too_many_arguments)]
pub fn entropy_static_with(
    ctx: &EntropyContext,
    target: &PastChoice,
    region: Option<&[bool]>,
    beta: f64,
    setup: &EntropySetup,
    ensemble: &SliceEnsemble,
    seed: u64,
) -> Result<EntropyReport> {
    let gate = ttr_check(ctx.eta_rho, ctx.t0, ensemble, &ctx.params, setup.ttr_floor)?;
    if !gate.pass {
        return Err(CfsError::RegularityGateFailed { min_over_u: gate.min_over_u, floor: gate.floor });
    }
    optimize_configuration(ctx, target, region, beta, ensemble, &setup.budget, seed)
}

/// Entropy at each thickness of a strictly decreasing schedule; the reported
/// value is the minimum over the final half (the liminf estimate).
pub fn entropy_dt_limit(ctx: &EntropyContext, target: &PastChoice, beta: f64, setup: &EntropySetup, schedule: &[f64], seed: u64) -> Result<EntropyReport> {
    let base = build_ensemble(ctx, setup, seed)?;
    entropy_dt_limit_with(ctx, target, beta, setup, schedule, &base, seed)
}

pub fn entropy_dt_limit_with(
    ctx: &EntropyContext,
    target: &PastChoice,
    beta: f64,
    setup: &EntropySetup,
    schedule: &[f64],
    base: &SliceEnsemble,
    seed: u64,
) -> Result<EntropyReport> {
    if schedule.len() < 3 || schedule.windows(2).any(|w| w[1] >= w[0]) || schedule.iter().any(|&d| !(d > 0.0)) {
        return Err(CfsError::InvalidArgument("Δt schedule must be positive, strictly decreasing, with at least 3 points".into()));
    }
    let mut problem = ctx.slice_problem()?;
    if let Some(sampler) = setup.slice.sampler {
        let flow = problem.flow.restricted(sampler.dims);
        problem = problem.with_flow(flow);
    }
    let mut reports = Vec::with_capacity(schedule.len());
    for (k, &dt) in schedule.iter().enumerate() {
        let thick = slice::thicken(base, &problem, dt, rng::derive_seed(seed, "thicken"), &format!("dt-{k}"))?;
        reports.push(optimize_configuration(ctx, target, None, beta, &thick, &setup.budget, seed)?);
    }
    let per_dt: Vec<DtPoint> = schedule.iter().zip(&reports).map(|(&dt, r)| DtPoint { dt, value: r.value, mc_error: r.mc_error }).collect();
    let tail = schedule.len() / 2;
    let (best_idx, _) = per_dt.iter().enumerate().skip(tail).min_by(|a, b| a.1.value.total_cmp(&b.1.value)).expect("nonempty tail");
    let mut report = reports.swap_remove(best_idx);
    report.dt_schedule = schedule.to_vec();
    report.per_dt = per_dt;
    Ok(report)
}

/// Running minimum over the final half of a sequence of reports.
pub fn tail_minimum(values: &[f64]) -> Option<(usize, f64)> {
    let tail = values.len() / 2;
    values.iter().copied().enumerate().skip(tail).min_by(|a, b| a.1.total_cmp(&b.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionRow {
    pub dims: usize,
    pub report: Option<EntropyReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustionSweep {
    pub rows: Vec<ExhaustionRow>,
    /// Minimum over the final half of the successful rows.
    pub liminf: Option<f64>,
}

/// `entropy_static` with `𝒰` restricted to the block subgroups `U(d) ⊕ 1`.
pub fn exhaustion_sweep(ctx: &EntropyContext, target: &PastChoice, beta: f64, setup: &EntropySetup, dims_schedule: &[usize], seed: u64) -> Result<ExhaustionSweep> {
    if dims_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CfsError::InvalidArgument("dims schedule must be increasing".into()));
    }
    let f = ctx.eta_rho.f();
    let mut rows = Vec::with_capacity(dims_schedule.len());
    for &d in dims_schedule {
        let sampler = subgroup_restriction(d, f)?;
        let mut s = setup.clone();
        s.slice.sampler = if d == f { None } else { Some(sampler) };
        let outcome = build_ensemble(ctx, &s, seed).and_then(|ens| entropy_static_with(ctx, target, None, beta, &s, &ens, seed));
        rows.push(match outcome {
            Ok(r) => ExhaustionRow { dims: d, report: Some(r), error: None },
            Err(e) => ExhaustionRow { dims: d, report: None, error: Some(e.to_string()) },
        });
    }
    let values: Vec<f64> = rows.iter().filter_map(|r| r.report.as_ref().map(|x| x.value)).collect();
    let liminf = tail_minimum(&values).map(|(_, v)| v);
    Ok(ExhaustionSweep { rows, liminf })
}
