//! Brute-force reference implementations of the surface layer integrals and
//! of the Lagrangian, shared by the test targets.
#![allow(dead_code)]

use cfse_core::configuration::{soft_membership, CutoffMode, CutoffSpec, DiscreteConfiguration, SpacetimeAtom};
use cfse_core::group::{haar_sample_rng, GroupElement};
use cfse_core::lagrangian::{kappa_lagrangian, ModelParams};
use cfse_core::operator::{conjugate, random_point, OperatorPoint};
use cfse_core::rng::stream;
use cfse_core::surface_layer::*;
use rand::Rng;

pub struct System {
    pub rho_tilde: DiscreteConfiguration,
    pub rho: DiscreteConfiguration,
    pub u: GroupElement,
    pub params: ModelParams,
}

pub fn random_config<R: Rng>(rng: &mut R, f: usize, n: usize, atoms: usize) -> DiscreteConfiguration {
    let atoms = (0..atoms)
        .map(|_| SpacetimeAtom {
            point: random_point(rng, f, n).unwrap(),
            t: 0.1 * rng.random_range(1..=6) as f64,
            site: rng.random_range(0..3),
            weight: rng.random_range(0.1..1.5),
        })
        .collect();
    DiscreteConfiguration::from_atoms(f, n, atoms).unwrap()
}

pub fn system(i: u64) -> System {
    let mut rng = stream(2024, "oracle-system", i);
    let f = rng.random_range(2..=5);
    let n = if f >= 4 && rng.random_bool(0.5) { 2 } else { 1 };
    let k1 = rng.random_range(1..=6);
    let k2 = rng.random_range(1..=12 - k1);
    let rho_tilde = random_config(&mut rng, f, n, k1);
    let rho = random_config(&mut rng, f, n, k2);
    let u = haar_sample_rng(&mut rng, f);
    let params = ModelParams::new(rng.random_range(0.0..2.0), n, 0.0).unwrap();
    System { rho_tilde, rho, u, params }
}

/// Direct double loop; `L` is evaluated on the conjugated operator.
pub fn oracle(mt: &[f64], m: &[f64], v: Option<&[f64]>, s: &System) -> (f64, f64) {
    let mut plus = 0.0;
    let mut minus = 0.0;
    for (a, xa) in s.rho_tilde.atoms().iter().enumerate() {
        let va = v.map_or(1.0, |v| v[a]);
        let cp = va * mt[a];
        let cm = va * (1.0 - mt[a]);
        for (b, yb) in s.rho.atoms().iter().enumerate() {
            let kp = cp * (1.0 - m[b]);
            let km = cm * m[b];
            if kp == 0.0 && km == 0.0 {
                continue;
            }
            let moved = conjugate(&s.u, &yb.point).unwrap();
            let k = (xa.weight * yb.weight) * kappa_lagrangian(&xa.point, &moved, &s.params).unwrap();
            plus += kp * k;
            minus += km * k;
        }
    }
    (plus, minus)
}

pub fn bools<R: Rng>(rng: &mut R, k: usize) -> Vec<bool> {
    (0..k).map(|_| rng.random_bool(0.5)).collect()
}

pub fn w(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

pub fn same_bits(got: SurfaceLayerValue, want: (f64, f64)) -> bool {
    got.term_plus.to_bits() == want.0.to_bits() && got.term_minus.to_bits() == want.1.to_bits() && got.value.to_bits() == (want.0 - want.1).to_bits()
}

/// `L` from all `f` eigenvalues of the product `xy` via a complex Schur form.
pub fn lagrangian_full(x: &OperatorPoint, y: &OperatorPoint, n: usize, kappa: f64) -> f64 {
    let prod = x.mat() * y.mat();
    let (_, t) = prod.schur().unpack();
    let mut moduli: Vec<f64> = (0..t.nrows()).map(|i| t[(i, i)].norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli.truncate(2 * n);
    let mut spread = 0.0;
    for i in 0..moduli.len() {
        for j in 0..moduli.len() {
            spread += (moduli[i] - moduli[j]).powi(2);
        }
    }
    let sum: f64 = moduli.iter().sum();
    spread / (4.0 * n as f64) + kappa * sum * sum
}


/// Every surface layer variant of random system `i` against [`oracle`].
pub fn variants_match(i: u64) -> Result<(), String> {
    let s = system(i);
    let mut rng = stream(2024, "oracle-masks", i);
    let mt = bools(&mut rng, s.rho_tilde.len());
    let m = bools(&mut rng, s.rho.len());
    let v = bools(&mut rng, s.rho_tilde.len());
    let check = |name: &str, got: SurfaceLayerValue, want: (f64, f64)| if same_bits(got, want) { Ok(()) } else { Err(format!("{name}: {got:?} vs {want:?}")) };

    check("gamma", gamma(&mt, &m, &s.rho_tilde, &s.rho, &s.u, &s.params).unwrap(), oracle(&w(&mt), &w(&m), None, &s))?;
    check("gamma_local", gamma_local(&mt, &m, &v, &s.rho_tilde, &s.rho, &s.u, &s.params).unwrap(), oracle(&w(&mt), &w(&m), Some(&w(&v)), &s))?;
    let rows = gamma_rows(&mt, &m, &s.rho_tilde, &s.rho, &s.u, &s.params).unwrap();
    for (a, row) in rows.iter().enumerate() {
        let e: Vec<f64> = (0..s.rho_tilde.len()).map(|j| if j == a { 1.0 } else { 0.0 }).collect();
        let (p, q) = oracle(&w(&mt), &w(&m), Some(&e), &s);
        if row.to_bits() != (p - q).to_bits() {
            return Err(format!("gamma_rows[{a}]"));
        }
    }

    let t = 0.1 * rng.random_range(1..=6) as f64;
    let tp = 0.1 * rng.random_range(1..=6) as f64;
    let same = System { rho_tilde: s.rho.clone(), ..s };
    let thr = |x: f64| -> Vec<f64> { same.rho.atoms().iter().map(|a| if a.t <= x { 1.0 } else { 0.0 }).collect() };
    check("gamma_tt", gamma_tt(t, tp, &same.rho, &same.u, &same.params).unwrap(), oracle(&thr(t), &thr(tp), None, &same))?;
    if same.rho.t_lattice().len() >= 2 {
        let width = 0.05;
        let cut = CutoffSpec { mode: CutoffMode::Soft { width }, ..CutoffSpec::hard(0.5, 0.1) };
        let step = same.rho.step().unwrap();
        let soft = |x: f64| -> Vec<f64> { same.rho.atoms().iter().map(|a| soft_membership(x, a.t, step, width)).collect() };
        check("gamma_soft", gamma_soft(t, tp, &same.rho, &cut, &same.u, &same.params).unwrap(), oracle(&soft(t), &soft(tp), None, &same))?;
    }
    Ok(())
}

/// Largest deviation of the Lagrangian from [`lagrangian_full`] over
/// `count` random pairs with `f ≤ 8`.
pub fn lagrangian_max_deviation(count: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let mut rng = stream(77, "oracle-pair", i);
        let f = rng.random_range(2..=8);
        let n = rng.random_range(1..=f / 2);
        let kappa = rng.random_range(0.0..2.0);
        let x = random_point(&mut rng, f, n).unwrap();
        let y = random_point(&mut rng, f, n).unwrap();
        let params = ModelParams::new(kappa, n, 0.0).unwrap();
        let got = kappa_lagrangian(&x, &y, &params).unwrap();
        worst = worst.max((got - lagrangian_full(&x, &y, n, kappa)).abs());
    }
    worst
}
