//! Discrete causal fermion systems with a product time structure.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{CfsError, Result};
use crate::group::{self, Generator, GroupElement};
use crate::linalg::{self, CMat, C64};
use crate::operator::{self, make_point, OperatorPoint};
use crate::rng;

/// Default fraction of the period on each end where the cutoff vanishes.
pub const DEFAULT_CUTOFF_EDGE: f64 = 0.1;
/// Retries (with halved strength) before a perturbation gives up.
const PERTURB_RETRIES: usize = 8;

#[derive(Debug, Clone)]
pub struct SpacetimeAtom {
    pub point: OperatorPoint,
    pub t: f64,
    pub site: usize,
    pub weight: f64,
}

/// Time range of a truncated system, for improper-convergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone)]
pub struct DiscreteConfiguration {
    f: usize,
    n: usize,
    atoms: Vec<SpacetimeAtom>,
    period: Option<f64>,
    time_step: Option<f64>,
    generator: Option<Generator>,
    window: Option<TimeWindow>,
}

impl DiscreteConfiguration {
    /// Atoms are stored sorted by `(t, site)`; all later index-based masks
    /// refer to this order.
    pub fn from_atoms(f: usize, n: usize, mut atoms: Vec<SpacetimeAtom>) -> Result<DiscreteConfiguration> {
        for a in &atoms {
            if a.point.f() != f {
                return Err(CfsError::DimensionMismatch { expected: f, found: a.point.f() });
            }
            if a.point.n() != n {
                return Err(CfsError::DimensionMismatch { expected: n, found: a.point.n() });
            }
            if !(a.weight > 0.0) || !a.t.is_finite() {
                return Err(CfsError::InvalidArgument(format!("atom weight must be positive, got {}", a.weight)));
            }
        }
        atoms.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.site.cmp(&b.site)));
        Ok(DiscreteConfiguration { f, n, atoms, period: None, time_step: None, generator: None, window: None })
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.period = Some(period);
        self
    }
    pub fn with_time_step(mut self, step: f64) -> Self {
        self.time_step = Some(step);
        self
    }
    pub fn with_generator(mut self, generator: Generator) -> Self {
        self.generator = Some(generator);
        self
    }
    pub fn with_window(mut self, window: TimeWindow) -> Self {
        self.window = Some(window);
        self
    }
    pub fn without_generator(mut self) -> Self {
        self.generator = None;
        self
    }

    pub fn f(&self) -> usize {
        self.f
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn atoms(&self) -> &[SpacetimeAtom] {
        &self.atoms
    }
    pub fn len(&self) -> usize {
        self.atoms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
    pub fn period(&self) -> Option<f64> {
        self.period
    }
    pub fn time_step(&self) -> Option<f64> {
        self.time_step
    }
    pub fn generator(&self) -> Option<&Generator> {
        self.generator.as_ref()
    }
    pub fn window(&self) -> Option<TimeWindow> {
        self.window
    }
    pub fn is_static(&self) -> bool {
        self.generator.is_some() && self.period.is_some()
    }

    /// Number of spatial sites (largest label plus one).
    pub fn n_sites(&self) -> usize {
        self.atoms.iter().map(|a| a.site + 1).max().unwrap_or(0)
    }

    /// Sorted distinct atom times.
    pub fn t_lattice(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.atoms.iter().map(|a| a.t).collect();
        ts.dedup();
        ts
    }

    pub fn total_volume(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Indices of the atoms sitting at time `t` (exact comparison).
    pub fn slice_indices(&self, t: f64) -> Vec<usize> {
        (0..self.atoms.len()).filter(|&i| self.atoms[i].t == t).collect()
    }

    /// Lattice step, falling back to the smallest gap between atom times.
    pub fn step(&self) -> Result<f64> {
        if let Some(s) = self.time_step {
            return Ok(s);
        }
        let ts = self.t_lattice();
        ts.windows(2)
            .map(|w| w[1] - w[0])
            .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
            .ok_or_else(|| CfsError::InvalidArgument("configuration has no time step".into()))
    }

    /// Maximal deviation from exact staticity: each atom conjugated by
    /// `U_Δ` is compared with the atom of the same site at `t + Δ`.
    pub fn static_defect(&self) -> Result<f64> {
        let (gen, period) = match (&self.generator, self.period) {
            (Some(g), Some(p)) => (g, p),
            _ => return Err(CfsError::InvalidArgument("configuration is not flagged static".into())),
        };
        let step = self.step()?;
        let u = group::time_translation(step, gen);
        let mut worst = 0.0_f64;
        for a in &self.atoms {
            let target_t = (a.t + step).rem_euclid(period);
            let close = |b: &&SpacetimeAtom| b.site == a.site && ((b.t - target_t).abs() < 1e-9 * period || (b.t - target_t).abs() > period * (1.0 - 1e-9));
            if let Some(b) = self.atoms.iter().find(close) {
                let moved = u.mat() * a.point.mat() * u.mat().adjoint();
                worst = worst.max(linalg::max_abs(&(moved - b.point.mat())));
            }
        }
        Ok(worst)
    }
}

/// Input of [`build_static_vacuum`].
#[derive(Debug, Clone)]
pub struct VacuumSpec {
    pub f: usize,
    pub n: usize,
    /// Integer frequencies `k_j` of `H = diag(2π k_j / period)`.
    pub frequencies: Vec<f64>,
    /// One seed point per spatial site.
    pub seeds: Vec<OperatorPoint>,
    pub n_t: usize,
    pub period: f64,
    pub site_weights: Vec<f64>,
}

/// Orbits `U_{t_m} x_𝐱 U_{t_m}⁻¹` on the lattice `t_m = m·period/n_t`, with
/// weights `site_weight·period/n_t`.
pub fn build_static_vacuum(spec: &VacuumSpec) -> Result<DiscreteConfiguration> {
    let gen = Generator::periodic(&spec.frequencies, spec.period)?;
    if spec.frequencies.len() != spec.f {
        return Err(CfsError::DimensionMismatch { expected: spec.f, found: spec.frequencies.len() });
    }
    if spec.n_t < 2 {
        return Err(CfsError::InvalidArgument(format!("n_t must be at least 2, got {}", spec.n_t)));
    }
    if spec.seeds.is_empty() {
        return Err(CfsError::InvalidSeed("no seed points".into()));
    }
    if spec.site_weights.len() != spec.seeds.len() {
        return Err(CfsError::InvalidSeed(format!("{} seeds but {} site weights", spec.seeds.len(), spec.site_weights.len())));
    }
    for (i, s) in spec.seeds.iter().enumerate() {
        if s.f() != spec.f || s.n() != spec.n {
            return Err(CfsError::InvalidSeed(format!("seed {i} has dimensions (f={}, n={})", s.f(), s.n())));
        }
        if !(spec.site_weights[i] > 0.0) {
            return Err(CfsError::InvalidSeed(format!("site weight {i} must be positive")));
        }
    }
    let step = spec.period / spec.n_t as f64;
    let mut atoms = Vec::with_capacity(spec.n_t * spec.seeds.len());
    for m in 0..spec.n_t {
        let t = m as f64 * step;
        let u = group::time_translation(t, &gen);
        for (site, seed) in spec.seeds.iter().enumerate() {
            atoms.push(SpacetimeAtom { point: operator::conjugate(&u, seed)?, t, site, weight: spec.site_weights[site] * step });
        }
    }
    Ok(DiscreteConfiguration::from_atoms(spec.f, spec.n, atoms)?.with_period(spec.period).with_time_step(step).with_generator(gen))
}

/// Random regular seed points, one per site, derived from `seed`.
pub fn random_seeds(f: usize, n: usize, n_sites: usize, seed: u64) -> Result<Vec<OperatorPoint>> {
    (0..n_sites).map(|i| operator::random_point(&mut rng::stream(seed, "vacuum-seed", i as u64), f, n)).collect()
}

/// `U ρ`: every atom conjugated by `U`.
pub fn pushforward(u: &GroupElement, config: &DiscreteConfiguration) -> Result<DiscreteConfiguration> {
    if linalg::unitarity_defect(u.mat()) > group::UNITARY_TOL {
        return Err(CfsError::NotUnitary { defect: linalg::unitarity_defect(u.mat()) });
    }
    let mut out = config.clone();
    for a in out.atoms.iter_mut() {
        a.point = operator::conjugate(u, &a.point)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CutoffMode {
    Hard,
    /// Logistic masks of the given width replace the step masks.
    Soft { width: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub t0: f64,
    pub delta: f64,
    /// Fraction of the period at each end where η vanishes.
    pub edge: f64,
    pub mode: CutoffMode,
}

impl CutoffSpec {
    pub fn hard(t0: f64, delta: f64) -> CutoffSpec {
        CutoffSpec { t0, delta, edge: DEFAULT_CUTOFF_EDGE, mode: CutoffMode::Hard }
    }

    /// Trapezoid: zero on the edges, one on `[t0 − δ, t0 + δ]`, linear between.
    pub fn eta(&self, t: f64, period: f64) -> f64 {
        let lo = self.edge * period;
        let hi = (1.0 - self.edge) * period;
        let (a, b) = (self.t0 - self.delta, self.t0 + self.delta);
        if t <= lo || t >= hi {
            0.0
        } else if t < a {
            (t - lo) / (a - lo)
        } else if t <= b {
            1.0
        } else {
            (hi - t) / (hi - b)
        }
    }

    pub fn validate(&self, period: f64) -> Result<()> {
        let lo = self.edge * period;
        let hi = (1.0 - self.edge) * period;
        if !(self.delta > 0.0) || !(lo < self.t0 - self.delta) || !(self.t0 + self.delta < hi) {
            return Err(CfsError::InvalidArgument(format!(
                "cutoff plateau ({}, {}) must lie strictly inside ({lo}, {hi})",
                self.t0 - self.delta,
                self.t0 + self.delta
            )));
        }
        if let CutoffMode::Soft { width } = self.mode {
            if !(width > 0.0) {
                return Err(CfsError::InvalidArgument("soft cutoff width must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Softened past membership of an atom at `t_a` for threshold `t`. The
/// logistic is centered half a step above `t_a`, so the steep limit is the
/// hard mask `t_a ≤ t` on the lattice.
pub fn soft_membership(t: f64, t_a: f64, step: f64, width: f64) -> f64 {
    1.0 / (1.0 + (-(t - t_a + 0.5 * step) / width).exp())
}

/// Weights multiplied by `η(t)`; atoms with zero weight are dropped.
pub fn apply_cutoff(config: &DiscreteConfiguration, cut: &CutoffSpec) -> Result<DiscreteConfiguration> {
    let period = config.period.ok_or_else(|| CfsError::InvalidArgument("cutoff needs a periodic configuration".into()))?;
    cut.validate(period)?;
    let mut out = config.clone();
    out.atoms = config
        .atoms
        .iter()
        .filter_map(|a| {
            let eta = cut.eta(a.t, period);
            (eta > 0.0).then(|| SpacetimeAtom { weight: a.weight * eta, ..a.clone() })
        })
        .collect();
    Ok(out)
}

/// Time function `T : sites → [0, T_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastSet {
    pub values: Vec<f64>,
}

impl PastSet {
    pub fn constant(t: f64, n_sites: usize) -> PastSet {
        PastSet { values: vec![t; n_sites] }
    }

    pub fn shifted(&self, s: f64) -> PastSet {
        PastSet { values: self.values.iter().map(|t| t - s).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PastSpec {
    Threshold(f64),
    TimeFunction(PastSet),
}

/// Atom `a` is in the past set iff `t_a ≤ T(site_a)`.
pub fn past_mask(config: &DiscreteConfiguration, spec: &PastSpec) -> Vec<bool> {
    config
        .atoms
        .iter()
        .map(|a| match spec {
            PastSpec::Threshold(t) => a.t <= *t,
            PastSpec::TimeFunction(ts) => ts.values.get(a.site).is_some_and(|&t| a.t <= t),
        })
        .collect()
}

pub fn mask_to_weights(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
}

/// Fractional past membership: atom `a` stands for the time cell
/// `(t_a − Δ, t_a]` and is counted with the fraction of that cell below
/// `T(site_a)`. At lattice values of `T` this is exactly [`past_mask`].
pub fn past_membership(config: &DiscreteConfiguration, ts: &PastSet) -> Result<Vec<f64>> {
    let step = config.step()?;
    Ok(config
        .atoms
        .iter()
        .map(|a| {
            let t = ts.values.get(a.site).copied().unwrap_or(f64::NEG_INFINITY);
            ((t - (a.t - step)) / step).clamp(0.0, 1.0)
        })
        .collect())
}

/// Conjugates every atom by `exp(iεA)`, with `A` the normalized sum of a
/// per-site and a per-time random Hermitian matrix. Trace and spectrum are
/// preserved; each point is re-validated from its matrix.
pub fn perturb(config: &DiscreteConfiguration, strength: f64, seed: u64) -> Result<DiscreteConfiguration> {
    if !(strength >= 0.0) {
        return Err(CfsError::InvalidArgument(format!("strength must be nonnegative, got {strength}")));
    }
    if strength == 0.0 {
        return Ok(config.clone());
    }
    let ts = config.t_lattice();
    let site_dirs: Vec<CMat> = (0..config.n_sites()).map(|s| rng::unit_hermitian(&mut rng::stream(seed, "perturb-site", s as u64), config.f)).collect();
    let time_dirs: Vec<CMat> = (0..ts.len()).map(|m| rng::unit_hermitian(&mut rng::stream(seed, "perturb-time", m as u64), config.f)).collect();
    let mut eps = strength;
    for _ in 0..PERTURB_RETRIES {
        match perturb_with(config, eps, &ts, &site_dirs, &time_dirs) {
            Ok(out) => return Ok(out),
            Err(CfsError::SignatureViolation { .. }) | Err(CfsError::NotHermitian { .. }) | Err(CfsError::TraceNotOne { .. }) => eps *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(CfsError::ValidationFailure(format!("perturbation of strength {strength} broke validity after {PERTURB_RETRIES} retries")))
}

fn perturb_with(config: &DiscreteConfiguration, eps: f64, ts: &[f64], site_dirs: &[CMat], time_dirs: &[CMat]) -> Result<DiscreteConfiguration> {
    let mut atoms = Vec::with_capacity(config.atoms.len());
    for a in &config.atoms {
        let m = ts.iter().position(|&t| t == a.t).expect("atom time is on the lattice");
        let dir = (&site_dirs[a.site] + &time_dirs[m]) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let u = linalg::expm_i_hermitian(&dir, eps);
        let mut mat = &u * a.point.mat() * u.adjoint();
        operator::symmetrize(&mut mat);
        let point = make_point(mat, config.n, a.point.rank_tol())?;
        atoms.push(SpacetimeAtom { point, ..a.clone() });
    }
    let mut out = DiscreteConfiguration::from_atoms(config.f, config.n, atoms)?;
    out.period = config.period;
    out.time_step = config.time_step;
    out.window = config.window;
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct AtomDoc {
    t: f64,
    site: usize,
    weight: f64,
    mat_re: String,
    mat_im: String,
}

#[derive(Serialize, Deserialize)]
struct ConfigDoc {
    f: usize,
    n: usize,
    period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator_re: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator_im: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<TimeWindow>,
    atoms: Vec<AtomDoc>,
}

/// Little-endian IEEE-754 bytes of the row-major real or imaginary parts.
fn encode_parts(m: &CMat) -> (String, String) {
    let f = m.nrows();
    let mut re = Vec::with_capacity(8 * f * f);
    let mut im = Vec::with_capacity(8 * f * f);
    for i in 0..f {
        for j in 0..m.ncols() {
            re.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            im.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    (B64.encode(re), B64.encode(im))
}

fn decode_parts(re: &str, im: &str, f: usize) -> Result<CMat> {
    let dec = |s: &str| -> Result<Vec<f64>> {
        let bytes = B64.decode(s).map_err(|e| CfsError::Serialization(e.to_string()))?;
        if bytes.len() != 8 * f * f {
            return Err(CfsError::Serialization(format!("expected {} bytes, found {}", 8 * f * f, bytes.len())));
        }
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
    };
    let (r, i) = (dec(re)?, dec(im)?);
    Ok(CMat::from_fn(f, f, |a, b| C64::new(r[a * f + b], i[a * f + b])))
}

pub fn encode_matrix(m: &CMat) -> (String, String) {
    encode_parts(m)
}

pub fn decode_matrix(re: &str, im: &str, f: usize) -> Result<CMat> {
    decode_parts(re, im, f)
}

impl DiscreteConfiguration {
    /// JSON with base64 IEEE-754 payloads, so matrices round-trip bitwise.
    pub fn to_json(&self) -> String {
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let (mat_re, mat_im) = encode_parts(a.point.mat());
                AtomDoc { t: a.t, site: a.site, weight: a.weight, mat_re, mat_im }
            })
            .collect();
        let (generator_re, generator_im) = match &self.generator {
            Some(g) => {
                let (r, i) = encode_parts(g.mat());
                (Some(r), Some(i))
            }
            None => (None, None),
        };
        let doc = ConfigDoc { f: self.f, n: self.n, period: self.period, time_step: self.time_step, generator_re, generator_im, window: self.window, atoms };
        serde_json::to_string_pretty(&doc).expect("configuration document serializes")
    }

    pub fn from_json(text: &str) -> Result<DiscreteConfiguration> {
        let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| CfsError::Serialization(e.to_string()))?;
        let mut atoms = Vec::with_capacity(doc.atoms.len());
        for a in &doc.atoms {
            let mat = decode_parts(&a.mat_re, &a.mat_im, doc.f)?;
            atoms.push(SpacetimeAtom { point: OperatorPoint::new(mat, doc.n)?, t: a.t, site: a.site, weight: a.weight });
        }
        let mut cfg = DiscreteConfiguration::from_atoms(doc.f, doc.n, atoms)?;
        cfg.period = doc.period;
        cfg.time_step = doc.time_step;
        cfg.window = doc.window;
        if let (Some(r), Some(i)) = (&doc.generator_re, &doc.generator_im) {
            cfg.generator = Some(Generator::new(decode_parts(r, i, doc.f)?)?);
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r2() -> f64 {
        std::f64::consts::FRAC_1_SQRT_2
    }

    fn two_level_vacuum(seed: OperatorPoint) -> DiscreteConfiguration {
        build_static_vacuum(&VacuumSpec { f: 2, n: 1, frequencies: vec![0.0, 1.0], seeds: vec![seed], n_t: 8, period: 1.0, site_weights: vec![1.0] }).unwrap()
    }

    #[test]
    fn vacuum_two_level_orbit() {
        let seed = OperatorPoint::projector(&[C64::new(r2(), 0.0), C64::new(r2(), 0.0)], 1).unwrap();
        let v = two_level_vacuum(seed);
        assert_eq!(v.len(), 8);
        for a in v.atoms() {
            assert!((linalg::trace(a.point.mat()).re - 1.0).abs() < 1e-12);
        }
        assert!(v.static_defect().unwrap() < 1e-12);
        assert!((v.total_volume() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn commuting_seed_is_stationary() {
        let v = two_level_vacuum(OperatorPoint::diagonal(&[1.0, 0.0], 1).unwrap());
        let first = v.atoms()[0].point.mat().clone();
        for a in v.atoms() {
            assert_eq!(a.point.mat(), &first);
        }
    }

    #[test]
    fn non_integer_frequency_rejected() {
        let seed = OperatorPoint::diagonal(&[1.0, 0.0], 1).unwrap();
        let err = build_static_vacuum(&VacuumSpec { f: 2, n: 1, frequencies: vec![0.0, 0.5], seeds: vec![seed], n_t: 8, period: 1.0, site_weights: vec![1.0] }).unwrap_err();
        assert!(matches!(err, CfsError::NonPeriodicGenerator { .. }));
    }

    #[test]
    fn past_mask_examples() {
        let seeds = random_seeds(4, 1, 2, 9).unwrap();
        let v = build_static_vacuum(&VacuumSpec { f: 4, n: 1, frequencies: vec![0.0, 1.0, 2.0, 3.0], seeds, n_t: 4, period: 1.0, site_weights: vec![1.0, 1.0] }).unwrap();
        assert!(past_mask(&v, &PastSpec::Threshold(-1.0)).iter().all(|m| !m));
        assert!(past_mask(&v, &PastSpec::Threshold(0.75)).iter().all(|&m| m));
        let ts = PastSet { values: vec![0.3, 0.6] };
        let mask = past_mask(&v, &PastSpec::TimeFunction(ts.clone()));
        for (a, m) in v.atoms().iter().zip(&mask) {
            assert_eq!(*m, a.t <= ts.values[a.site]);
        }
        let frac = past_membership(&v, &PastSet { values: vec![0.5, 0.25] }).unwrap();
        let hard = past_mask(&v, &PastSpec::TimeFunction(PastSet { values: vec![0.5, 0.25] }));
        assert_eq!(frac, mask_to_weights(&hard));
    }

    #[test]
    fn cutoff_scales_weights() {
        let seeds = random_seeds(4, 1, 1, 1).unwrap();
        let v = build_static_vacuum(&VacuumSpec { f: 4, n: 1, frequencies: vec![0.0, 1.0, 2.0, 3.0], seeds, n_t: 8, period: 1.0, site_weights: vec![1.0] }).unwrap();
        let cut = CutoffSpec::hard(0.5, 0.15);
        let eta_rho = apply_cutoff(&v, &cut).unwrap();
        assert_eq!(eta_rho.len(), 7);
        for a in eta_rho.atoms() {
            let orig = v.atoms().iter().find(|b| b.t == a.t).unwrap();
            assert_eq!(a.weight, orig.weight * cut.eta(a.t, 1.0));
        }
        assert!(apply_cutoff(&v, &CutoffSpec::hard(0.5, 0.45)).is_err());
    }

    #[test]
    fn perturb_determinism_and_validity() {
        let seeds = random_seeds(2, 1, 2, 4).unwrap();
        let v = build_static_vacuum(&VacuumSpec { f: 2, n: 1, frequencies: vec![0.0, 1.0], seeds, n_t: 4, period: 1.0, site_weights: vec![1.0, 1.0] }).unwrap();
        let same = perturb(&v, 0.0, 1).unwrap();
        for (a, b) in v.atoms().iter().zip(same.atoms()) {
            assert_eq!(a.point.mat(), b.point.mat());
        }
        let p1 = perturb(&v, 0.1, 7).unwrap();
        let p2 = perturb(&v, 0.1, 7).unwrap();
        for (a, b) in p1.atoms().iter().zip(p2.atoms()) {
            assert_eq!(a.point.mat(), b.point.mat());
            assert!((linalg::trace(a.point.mat()).re - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn json_round_trip_is_bitwise() {
        let seeds = random_seeds(3, 1, 2, 5).unwrap();
        let v = build_static_vacuum(&VacuumSpec { f: 3, n: 1, frequencies: vec![0.0, 1.0, 2.0], seeds, n_t: 4, period: 1.0, site_weights: vec![0.7, 1.3] }).unwrap();
        let back = DiscreteConfiguration::from_json(&v.to_json()).unwrap();
        assert_eq!(back.len(), v.len());
        for (a, b) in v.atoms().iter().zip(back.atoms()) {
            assert_eq!(a.point.mat(), b.point.mat());
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert_eq!(a.weight.to_bits(), b.weight.to_bits());
        }
        assert_eq!(back.generator(), v.generator());
        assert_eq!(back.to_json(), v.to_json());
    }
}
