//! The κ-Lagrangian, the causal action and the Euler–Lagrange function ℓ.

use serde::{Deserialize, Serialize};

use crate::configuration::DiscreteConfiguration;
use crate::error::{CfsError, Result};
use crate::operator::{self, ClosedChainSpectrum, OperatorPoint, SpectralFactor};
use crate::rng;

/// Number of random probe points added to the atoms in [`el_residual`].
pub const EL_RANDOM_PROBES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kappa: f64,
    pub n: usize,
    pub s_param: f64,
}

impl ModelParams {
    pub fn new(kappa: f64, n: usize, s_param: f64) -> Result<ModelParams> {
        if !(kappa > 0.0) {
            return Err(CfsError::InvalidArgument(format!("kappa must be positive, got {kappa}")));
        }
        if !(s_param >= 0.0) {
            return Err(CfsError::InvalidArgument(format!("s_param must be nonnegative, got {s_param}")));
        }
        if n == 0 {
            return Err(CfsError::InvalidArgument("spin dimension must be positive".into()));
        }
        Ok(ModelParams { kappa, n, s_param })
    }

    pub fn with_s_param(self, s_param: f64) -> ModelParams {
        ModelParams { s_param, ..self }
    }
}

/// `(1/4n) Σᵢⱼ (|λᵢ| − |λⱼ|)² + κ (Σⱼ |λⱼ|)²` on a padded spectrum.
pub fn lagrangian_from_spectrum(spec: &ClosedChainSpectrum, kappa: f64) -> f64 {
    let moduli: Vec<f64> = spec.moduli().collect();
    let k = moduli.len();
    let mut spread = 0.0;
    for &a in &moduli {
        for &b in &moduli {
            spread += (a - b) * (a - b);
        }
    }
    let total: f64 = moduli.iter().sum();
    spread / (2.0 * k as f64) + kappa * total * total
}

/// Lagrangian from spectral factors; the hot path of every double sum.
pub fn lagrangian_factors(px: &SpectralFactor, py: &SpectralFactor, n: usize, kappa: f64) -> f64 {
    let spec = operator::closed_chain_spectrum_factors(px, py, n);
    lagrangian_from_spectrum(&spec, kappa)
}

pub fn kappa_lagrangian(x: &OperatorPoint, y: &OperatorPoint, params: &ModelParams) -> Result<f64> {
    let spec = operator::closed_chain_spectrum(x, y)?;
    Ok(lagrangian_from_spectrum(&spec, params.kappa))
}

/// `𝒮 = Σ_{a,b} w_a w_b L(x_a, x_b)`, diagonal included.
pub fn causal_action(config: &DiscreteConfiguration, params: &ModelParams) -> f64 {
    let atoms = config.atoms();
    let mut total = 0.0;
    for a in atoms {
        for b in atoms {
            let l = lagrangian_factors(a.point.factor(), b.point.factor(), config.n(), params.kappa);
            total += (a.weight * b.weight) * l;
        }
    }
    total
}

/// `Σ_b w_b L(x, x_b)`.
pub fn ell_integral(x: &OperatorPoint, config: &DiscreteConfiguration, params: &ModelParams) -> Result<f64> {
    if !config.atoms().is_empty() && (x.f() != config.f() || x.n() != config.n()) {
        return Err(CfsError::DimensionMismatch { expected: config.f(), found: x.f() });
    }
    let mut total = 0.0;
    for b in config.atoms() {
        total += b.weight * lagrangian_factors(x.factor(), b.point.factor(), config.n(), params.kappa);
    }
    Ok(total)
}

/// `ℓ(x) = Σ_b w_b L(x, x_b) − 𝔰`.
pub fn ell(x: &OperatorPoint, config: &DiscreteConfiguration, params: &ModelParams) -> Result<f64> {
    Ok(ell_integral(x, config, params)? - params.s_param)
}

/// `𝔰 := min_a Σ_b w_b L(x_a, x_b)`, so that ℓ ≥ 0 on the atoms with equality
/// at the minimizing atom. Zero for an empty configuration.
pub fn s_param_from_config(config: &DiscreteConfiguration, params: &ModelParams) -> f64 {
    let mut best = f64::INFINITY;
    for a in config.atoms() {
        let v = ell_integral(&a.point, config, params).expect("atoms share the configuration dimensions");
        best = best.min(v);
    }
    if best.is_finite() {
        best
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElResidual {
    pub max_abs_on_m: f64,
    pub min_off_m_probe: f64,
}

/// Euler–Lagrange residuals: `max |ℓ|` over the atoms and `min ℓ` over the
/// atoms together with [`EL_RANDOM_PROBES`] seeded random points. An empty
/// configuration reports zeros.
pub fn el_residual(config: &DiscreteConfiguration, params: &ModelParams, seed: u64) -> ElResidual {
    if config.atoms().is_empty() {
        return ElResidual { max_abs_on_m: 0.0, min_off_m_probe: 0.0 };
    }
    let mut max_abs = 0.0_f64;
    let mut min_probe = f64::INFINITY;
    for a in config.atoms() {
        let l = ell(&a.point, config, params).expect("atoms share the configuration dimensions");
        max_abs = max_abs.max(l.abs());
        min_probe = min_probe.min(l);
    }
    if 2 * config.n() <= config.f() {
        for i in 0..EL_RANDOM_PROBES {
            let mut r = rng::stream(seed, "el-probe", i as u64);
            if let Ok(p) = operator::random_point(&mut r, config.f(), config.n()) {
                let l = ell(&p, config, params).expect("probe dimensions match");
                min_probe = min_probe.min(l);
            }
        }
    }
    ElResidual { max_abs_on_m: max_abs, min_off_m_probe: min_probe }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::{DiscreteConfiguration, SpacetimeAtom};
    use crate::linalg::{CMat, C64};

    fn params(kappa: f64) -> ModelParams {
        ModelParams::new(kappa, 1, 0.0).unwrap()
    }

    fn single(weight: f64, x: OperatorPoint) -> DiscreteConfiguration {
        DiscreteConfiguration::from_atoms(x.f(), 1, vec![SpacetimeAtom { point: x, t: 0.0, site: 0, weight }]).unwrap()
    }

    #[test]
    fn lagrangian_examples() {
        let p1 = OperatorPoint::diagonal(&[1.0, 0.0], 1).unwrap();
        let p2 = OperatorPoint::diagonal(&[0.0, 1.0], 1).unwrap();
        let q = OperatorPoint::diagonal(&[2.0, -1.0], 1).unwrap();
        assert!((kappa_lagrangian(&p1, &p1, &params(1.0)).unwrap() - 1.5).abs() < 1e-14);
        assert_eq!(kappa_lagrangian(&p1, &p2, &params(3.0)).unwrap(), 0.0);
        assert!((kappa_lagrangian(&q, &q, &params(1.0)).unwrap() - 29.5).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.0, 1, 0.0).is_err());
        assert!(ModelParams::new(1.0, 1, -1.0).is_err());
        assert!(ModelParams::new(1.0, 0, 0.0).is_err());
    }

    #[test]
    fn action_examples() {
        let p1 = OperatorPoint::diagonal(&[1.0, 0.0], 1).unwrap();
        assert!((causal_action(&single(2.0, p1.clone()), &params(1.0)) - 6.0).abs() < 1e-13);
        let p2 = OperatorPoint::diagonal(&[0.0, 1.0], 1).unwrap();
        let cfg = DiscreteConfiguration::from_atoms(
            2,
            1,
            vec![
                SpacetimeAtom { point: p1, t: 0.0, site: 0, weight: 1.0 },
                SpacetimeAtom { point: p2, t: 0.0, site: 1, weight: 1.0 },
            ],
        )
        .unwrap();
        assert!((causal_action(&cfg, &params(1.0)) - 3.0).abs() < 1e-13);
        let empty = DiscreteConfiguration::from_atoms(2, 1, vec![]).unwrap();
        assert_eq!(causal_action(&empty, &params(1.0)), 0.0);
    }

    #[test]
    fn ell_examples() {
        let p1 = OperatorPoint::diagonal(&[1.0, 0.0], 1).unwrap();
        let p2 = OperatorPoint::diagonal(&[0.0, 1.0], 1).unwrap();
        let cfg = single(1.0, p1.clone());
        let pr = params(1.0).with_s_param(1.5);
        assert!(ell(&p1, &cfg, &pr).unwrap().abs() < 1e-14);
        assert_eq!(ell(&p2, &cfg, &pr).unwrap(), -1.5);
        let empty = DiscreteConfiguration::from_atoms(2, 1, vec![]).unwrap();
        assert_eq!(ell(&p1, &empty, &params(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn el_residual_examples() {
        let p1 = OperatorPoint::diagonal(&[1.0, 0.0], 1).unwrap();
        let cfg = single(2.0, p1.clone());
        let s = s_param_from_config(&cfg, &params(1.0));
        assert_eq!(s, 2.0 * kappa_lagrangian(&p1, &p1, &params(1.0)).unwrap());
        let r = el_residual(&cfg, &params(1.0).with_s_param(s), 1);
        assert_eq!(r.max_abs_on_m, 0.0);
        let r0 = el_residual(&cfg, &params(1.0), 1);
        assert_eq!(r0.max_abs_on_m, s);
        let empty = DiscreteConfiguration::from_atoms(2, 1, vec![]).unwrap();
        assert_eq!(el_residual(&empty, &params(1.0), 1), ElResidual { max_abs_on_m: 0.0, min_off_m_probe: 0.0 });
    }

    #[test]
    fn diagonal_positivity() {
        for seed in 0..50 {
            let mut r = rng::stream(seed, "test", 0);
            let x = operator::random_point(&mut r, 5, 2).unwrap();
            let pr = params(0.7);
            let l = kappa_lagrangian(&x, &x, &pr).unwrap();
            let spec = operator::closed_chain_spectrum(&x, &x).unwrap();
            let sum: f64 = spec.moduli().sum();
            assert!(l >= pr.kappa * sum * sum * (1.0 - 1e-12));
            assert!(l > 0.0);
        }
    }

    #[test]
    fn continuity_probe() {
        let mut r = rng::stream(3, "test", 0);
        let x = operator::random_point(&mut r, 4, 1).unwrap();
        let y = operator::random_point(&mut r, 4, 1).unwrap();
        let pr = params(1.0);
        let base = kappa_lagrangian(&x, &y, &pr).unwrap();
        // Trace-free perturbation inside the range of x keeps rank and trace.
        let b = x.factor().vecs.clone();
        let e = &b * CMat::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(0.3, 0.1), C64::new(0.3, -0.1), C64::new(0.0, 0.0)]) * b.adjoint();
        let mut prev = f64::INFINITY;
        for k in 1..6 {
            let eps = 10f64.powi(-k);
            let xe = OperatorPoint::new(x.mat() + &e * C64::new(eps, 0.0), 1).unwrap();
            let d = (kappa_lagrangian(&xe, &y, &pr).unwrap() - base).abs();
            assert!(d < prev);
            prev = d;
        }
    }
}
