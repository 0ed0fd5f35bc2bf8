//! Nonlinear surface layer integrals.
//!
//! Masks are real memberships in `[0, 1]` (boolean masks map to 0/1). All
//! double sums run over `a` (first measure) then `b` (second measure) in
//! atom order, accumulating `(coefficient) · ((w̃_a w_b) · L)` sequentially.

use serde::{Deserialize, Serialize};

use crate::configuration::{soft_membership, CutoffMode, CutoffSpec, DiscreteConfiguration};
use crate::error::{CfsError, Result};
use crate::group::GroupElement;
use crate::lagrangian::{lagrangian_factors, ModelParams};
use crate::operator::SpectralFactor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceLayerValue {
    pub value: f64,
    pub term_plus: f64,
    pub term_minus: f64,
}

impl SurfaceLayerValue {
    fn from_terms(term_plus: f64, term_minus: f64) -> SurfaceLayerValue {
        SurfaceLayerValue { value: term_plus - term_minus, term_plus, term_minus }
    }
}

fn check_compatible(rho_tilde: &DiscreteConfiguration, rho: &DiscreteConfiguration, u: &GroupElement) -> Result<()> {
    if rho_tilde.f() != rho.f() {
        return Err(CfsError::DimensionMismatch { expected: rho_tilde.f(), found: rho.f() });
    }
    if rho_tilde.n() != rho.n() {
        return Err(CfsError::DimensionMismatch { expected: rho_tilde.n(), found: rho.n() });
    }
    if u.dim() != rho.f() {
        return Err(CfsError::DimensionMismatch { expected: rho.f(), found: u.dim() });
    }
    Ok(())
}

fn check_len(mask: &[f64], config: &DiscreteConfiguration) -> Result<()> {
    if mask.len() != config.len() {
        return Err(CfsError::DimensionMismatch { expected: config.len(), found: mask.len() });
    }
    Ok(())
}

/// Factors of `U x_b U⁻¹` for every atom of `rho`.
pub fn conjugated_factors(rho: &DiscreteConfiguration, u: &GroupElement) -> Vec<SpectralFactor> {
    rho.atoms().iter().map(|b| b.point.factor().conjugated(u.mat())).collect()
}

/// Core double sum with an optional localization `v` on the first measure.
/// Pairs whose two coefficients vanish are skipped; every skipped term would
/// add `+0.0`, so the result is unchanged bit for bit.
pub fn gamma_weighted(
    mask_tilde: &[f64],
    mask: &[f64],
    v_mask: Option<&[f64]>,
    rho_tilde: &DiscreteConfiguration,
    rho: &DiscreteConfiguration,
    u: &GroupElement,
    params: &ModelParams,
) -> Result<SurfaceLayerValue> {
    check_compatible(rho_tilde, rho, u)?;
    check_len(mask_tilde, rho_tilde)?;
    check_len(mask, rho)?;
    if let Some(v) = v_mask {
        check_len(v, rho_tilde)?;
    }
    let ys = conjugated_factors(rho, u);
    let n = rho.n();
    let mut plus = 0.0;
    let mut minus = 0.0;
    for (a, xa) in rho_tilde.atoms().iter().enumerate() {
        let va = v_mask.map_or(1.0, |v| v[a]);
        let cp = va * mask_tilde[a];
        let cm = va * (1.0 - mask_tilde[a]);
        for (b, yb) in rho.atoms().iter().enumerate() {
            let kp = cp * (1.0 - mask[b]);
            let km = cm * mask[b];
            if kp == 0.0 && km == 0.0 {
                continue;
            }
            let k = (xa.weight * yb.weight) * lagrangian_factors(xa.point.factor(), &ys[b], n, params.kappa);
            plus += kp * k;
            minus += km * k;
        }
    }
    Ok(SurfaceLayerValue::from_terms(plus, minus))
}

fn to_weights(mask: &[bool]) -> Vec<f64> {
    crate::configuration::mask_to_weights(mask)
}

/// `γ^{Ω̃,Ω}(ρ̃, Uρ)`.
pub fn gamma(
    mask_tilde: &[bool],
    mask: &[bool],
    rho_tilde: &DiscreteConfiguration,
    rho: &DiscreteConfiguration,
    u: &GroupElement,
    params: &ModelParams,
) -> Result<SurfaceLayerValue> {
    gamma_weighted(&to_weights(mask_tilde), &to_weights(mask), None, rho_tilde, rho, u, params)
}

/// `γ` with the first-factor sums restricted to `Ṽ`.
pub fn gamma_local(
    mask_tilde: &[bool],
    mask: &[bool],
    v_mask: &[bool],
    rho_tilde: &DiscreteConfiguration,
    rho: &DiscreteConfiguration,
    u: &GroupElement,
    params: &ModelParams,
) -> Result<SurfaceLayerValue> {
    gamma_weighted(&to_weights(mask_tilde), &to_weights(mask), Some(&to_weights(v_mask)), rho_tilde, rho, u, params)
}

/// Row contributions `Σ_b (…) K_ab` of `γ_Ṽ` per first-measure atom. For a
/// 0/1 localization the contribution of an atom does not depend on which
/// other atoms are in `Ṽ`.
pub fn gamma_rows(
    mask_tilde: &[bool],
    mask: &[bool],
    rho_tilde: &DiscreteConfiguration,
    rho: &DiscreteConfiguration,
    u: &GroupElement,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    let mut rows = Vec::with_capacity(rho_tilde.len());
    for a in 0..rho_tilde.len() {
        let v: Vec<bool> = (0..rho_tilde.len()).map(|i| i == a).collect();
        rows.push(gamma_local(mask_tilde, mask, &v, rho_tilde, rho, u, params)?.value);
    }
    Ok(rows)
}

pub fn threshold_mask(config: &DiscreteConfiguration, t: f64) -> Vec<f64> {
    config.atoms().iter().map(|a| if a.t <= t { 1.0 } else { 0.0 }).collect()
}

/// `γ^{t,t′}(ηρ, U(ηρ))`.
pub fn gamma_tt(t: f64, t_prime: f64, eta_rho: &DiscreteConfiguration, u: &GroupElement, params: &ModelParams) -> Result<SurfaceLayerValue> {
    let mt = threshold_mask(eta_rho, t);
    let m = threshold_mask(eta_rho, t_prime);
    gamma_weighted(&mt, &m, None, eta_rho, eta_rho, u, params)
}

/// Softened surface layer integral with logistic memberships.
pub fn gamma_soft(
    t: f64,
    t_prime: f64,
    config: &DiscreteConfiguration,
    cut: &CutoffSpec,
    u: &GroupElement,
    params: &ModelParams,
) -> Result<SurfaceLayerValue> {
    let width = match cut.mode {
        CutoffMode::Soft { width } => width,
        CutoffMode::Hard => return Err(CfsError::InvalidArgument("gamma_soft needs a softened cutoff".into())),
    };
    let step = config.step()?;
    let mt: Vec<f64> = config.atoms().iter().map(|a| soft_membership(t, a.t, step, width)).collect();
    let m: Vec<f64> = config.atoms().iter().map(|a| soft_membership(t_prime, a.t, step, width)).collect();
    gamma_weighted(&mt, &m, None, config, config, u, params)
}

/// `−Σ_{a: t_a = t0} (w_a/Δ) Σ_b w_b L(U x_a U⁻¹, x_b)`: the slope of
/// `t′ ↦ γ^{t0,t′}(ρ, Uρ)` across the lattice cell ending at `t0`.
pub fn gamma_dt_kernel(t0: f64, config: &DiscreteConfiguration, u: &GroupElement, params: &ModelParams) -> Result<f64> {
    let slice = config.slice_indices(t0);
    if slice.is_empty() {
        return Err(CfsError::NoSliceAtoms { t0 });
    }
    let step = config.step()?;
    let n = config.n();
    let mut total = 0.0;
    for &a in &slice {
        let xa = &config.atoms()[a];
        let moved = xa.point.factor().conjugated(u.mat());
        let mut inner = 0.0;
        for yb in config.atoms() {
            inner += yb.weight * lagrangian_factors(&moved, yb.point.factor(), n, params.kappa);
        }
        total += (xa.weight / step) * inner;
    }
    Ok(-total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteTail {
    pub site: usize,
    /// `Σ_{a∈Ω̃} Σ_{b∉Ω, site_b = 𝐲}` within the window.
    pub plus: f64,
    /// `Σ_{a∉Ω̃} Σ_{b∈Ω, site_b = 𝐲}` within the window.
    pub minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Half-widths around `t0`; `f64::INFINITY` means the whole system.
    pub windows: Vec<f64>,
    pub per_site_tails: Vec<Vec<SiteTail>>,
    /// `Σ_𝐲 |plus − minus|` per window.
    pub totals: Vec<f64>,
    pub total: f64,
    /// Growth of each total between consecutive windows.
    pub increments: Vec<f64>,
    /// True when the increments shrink monotonically.
    pub tails_decreasing: bool,
}

/// Tail diagnostics with an arbitrary unweighted kernel `kernel(a, b)`.
pub fn improper_convergence_with<K: Fn(usize, usize) -> f64>(
    mask_tilde: &[bool],
    rho_tilde: &DiscreteConfiguration,
    rho: &DiscreteConfiguration,
    t0: f64,
    windows: &[f64],
    kernel: K,
) -> Result<ConvergenceReport> {
    if mask_tilde.len() != rho_tilde.len() {
        return Err(CfsError::DimensionMismatch { expected: rho_tilde.len(), found: mask_tilde.len() });
    }
    let windows: Vec<f64> = if windows.is_empty() { vec![f64::INFINITY] } else { windows.to_vec() };
    let n_sites = rho.n_sites();
    let trunc = rho.window();
    let mut per_site_tails = Vec::with_capacity(windows.len());
    let mut totals: Vec<f64> = Vec::with_capacity(windows.len());
    for &w in &windows {
        let mut tails: Vec<SiteTail> = (0..n_sites).map(|site| SiteTail { site, plus: 0.0, minus: 0.0 }).collect();
        for (a, xa) in rho_tilde.atoms().iter().enumerate() {
            for (b, yb) in rho.atoms().iter().enumerate() {
                if (yb.t - t0).abs() > w || trunc.is_some_and(|tw| yb.t < tw.start || yb.t > tw.end) {
                    continue;
                }
                let in_omega = yb.t <= t0;
                let term = (xa.weight * yb.weight) * kernel(a, b);
                let tail = &mut tails[yb.site];
                if mask_tilde[a] && !in_omega {
                    tail.plus += term;
                } else if !mask_tilde[a] && in_omega {
                    tail.minus += term;
                }
            }
        }
        totals.push(tails.iter().map(|t| (t.plus - t.minus).abs()).sum());
        per_site_tails.push(tails);
    }
    let increments: Vec<f64> = totals.windows(2).map(|p| (p[1] - p[0]).abs()).collect();
    let tails_decreasing = increments.windows(2).all(|p| p[1] <= p[0]);
    let total = *totals.last().expect("at least one window");
    Ok(ConvergenceReport { windows, per_site_tails, totals, total, increments, tails_decreasing })
}

/// Improper-convergence tails of `γ^{Ω̃,t0}(ρ̃, Uρ)` over growing windows.
#[allow(clippy::too_many_arguments)]
pub fn improper_convergence_report(
    mask_tilde: &[bool],
    rho_tilde: &DiscreteConfiguration,
    rho_truncated: &DiscreteConfiguration,
    u: &GroupElement,
    t0: f64,
    params: &ModelParams,
    windows: &[f64],
) -> Result<ConvergenceReport> {
    check_compatible(rho_tilde, rho_truncated, u)?;
    let ys = conjugated_factors(rho_truncated, u);
    let n = rho_tilde.n();
    let xs = rho_tilde.atoms();
    improper_convergence_with(mask_tilde, rho_tilde, rho_truncated, t0, windows, |a, b| lagrangian_factors(xs[a].point.factor(), &ys[b], n, params.kappa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::{apply_cutoff, build_static_vacuum, random_seeds, VacuumSpec};
    use crate::group::haar_sample;

    fn vacuum() -> DiscreteConfiguration {
        let seeds = random_seeds(4, 1, 2, 3).unwrap();
        let v = build_static_vacuum(&VacuumSpec { f: 4, n: 1, frequencies: vec![0.0, 1.0, 2.0, 3.0], seeds, n_t: 8, period: 1.0, site_weights: vec![1.0, 1.0] }).unwrap();
        apply_cutoff(&v, &CutoffSpec::hard(0.5, 0.15)).unwrap()
    }

    fn params() -> ModelParams {
        ModelParams::new(1.0, 1, 0.0).unwrap()
    }

    #[test]
    fn trivial_zeros() {
        let v = vacuum();
        let id = GroupElement::identity(4);
        let g = gamma_tt(0.5, 0.5, &v, &id, &params()).unwrap();
        // Both terms agree by symmetry of L but are summed in different orders.
        assert!(g.value.abs() <= 1e-14 * g.term_plus.max(1.0), "{}", g.value);
        let none = vec![false; v.len()];
        assert_eq!(gamma(&none, &none, &v, &v, &haar_sample(4, 1), &params()).unwrap().value, 0.0);
        let all = vec![true; v.len()];
        let m: Vec<bool> = v.atoms().iter().map(|a| a.t <= 0.5).collect();
        assert_eq!(gamma_local(&m, &m, &none, &v, &v, &haar_sample(4, 2), &params()).unwrap().value, 0.0);
        let u = haar_sample(4, 2);
        let full = gamma_local(&m, &m, &all, &v, &v, &u, &params()).unwrap();
        assert_eq!(full, gamma(&m, &m, &v, &v, &u, &params()).unwrap());
    }

    #[test]
    fn dt_kernel_negative_on_vacuum() {
        let v = vacuum();
        let k = gamma_dt_kernel(0.5, &v, &GroupElement::identity(4), &params()).unwrap();
        assert!(k < 0.0);
        assert!(matches!(gamma_dt_kernel(0.3, &v, &GroupElement::identity(4), &params()), Err(CfsError::NoSliceAtoms { .. })));
    }

    #[test]
    fn soft_requires_soft_mode() {
        let v = vacuum();
        let err = gamma_soft(0.5, 0.5, &v, &CutoffSpec::hard(0.5, 0.15), &GroupElement::identity(4), &params());
        assert!(err.is_err());
    }
}
