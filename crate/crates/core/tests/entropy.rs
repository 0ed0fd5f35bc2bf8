mod common;

use cfse_core::configuration::{perturb, DiscreteConfiguration, PastSet, SpacetimeAtom};
use cfse_core::entropy::*;
use cfse_core::group::GroupElement;
use cfse_core::linalg::{CMat, C64};
use cfse_core::operator::OperatorPoint;
use cfse_core::slice::{SliceEnsemble, SliceSample};
use cfse_core::surface_layer::gamma_dt_kernel;
use cfse_core::CfsError;
use common::*;

fn id() -> GroupElement {
    GroupElement::identity(4)
}

fn with_samples(ens: &SliceEnsemble, samples: Vec<SliceSample>) -> SliceEnsemble {
    SliceEnsemble { samples, ..ens.clone() }
}

#[test]
fn admissibility_signs() {
    let eta = vacuum();
    let ens = ensemble(&eta, 40, 1);
    let c = ctx(&eta, &eta);
    let vac = admissibility_residual(&c, &target(&eta), &id(), &ens).unwrap();
    assert!(vac.mean.abs() <= 2.0 * vac.std_error + admiss_tol(&ens), "{vac:?}");
    let empty = admissibility_residual(&c, &PastChoice::Mask(vec![false; eta.len()]), &id(), &ens).unwrap();
    assert!(empty.mean <= 0.0);
    let full = admissibility_residual(&c, &PastChoice::Mask(vec![true; eta.len()]), &id(), &ens).unwrap();
    assert!(full.mean >= 0.0);
    let none = with_samples(&ens, vec![]);
    assert!(matches!(admissibility_residual(&c, &target(&eta), &id(), &none), Err(CfsError::EnsembleEmpty)));
}

#[test]
fn table_matches_direct_surface_layer() {
    let eta = vacuum();
    let pert = perturb(&eta, 0.1, 2).unwrap();
    let ens = ensemble(&eta, 6, 2);
    let c = ctx(&pert, &eta);
    let h = GroupElement::identity(4).geodesic_step(&cfse_core::rng::unit_hermitian(&mut cfse_core::rng::stream(1, "t", 0), 4), 0.3);
    let table = response_table(&c, &h, &ens.samples).unwrap();
    let mt: Vec<bool> = pert.atoms().iter().map(|a| a.t <= 0.4).collect();
    let m: Vec<bool> = eta.atoms().iter().map(|a| a.t <= T0).collect();
    let g = table.gammas(&cfse_core::configuration::mask_to_weights(&mt), &vec![1.0; pert.len()]);
    for (i, s) in ens.samples.iter().enumerate() {
        let direct = cfse_core::surface_layer::gamma(&mt, &m, &pert, &eta, &h.compose(&s.u), &params()).unwrap();
        assert!((g[i] - direct.value).abs() <= 1e-12 * direct.term_plus.max(direct.term_minus).max(1.0));
    }
}

#[test]
fn projection_examples() {
    let eta = vacuum();
    let ens = ensemble(&eta, 40, 1);
    let c = ctx(&eta, &eta);
    let (_, s) = project_admissible(&c, &PastSet::constant(T0, 4), &id(), &ens).unwrap();
    assert_eq!(s, 0.0);
    let (ts, s) = project_admissible(&c, &PastSet::constant(T0 + STEP, 4), &id(), &ens).unwrap();
    assert!((s - STEP).abs() < 1e-6 * STEP, "shift {s}");
    assert!(ts.values.iter().all(|t| (t - T0).abs() < 1e-6 * STEP));
}

#[test]
fn degenerate_residual_has_no_bracket() {
    let eta = vacuum();
    let n = eta.len();
    let table = ResponseTable { n_atoms: n, r: vec![0.0; 3 * n], s: vec![1.0; 3 * n], weights: vec![1.0; 3] };
    let err = project_on_table(&PastSet::constant(T0, 4), &table, &eta, &vec![1.0; n], 1e-9).unwrap_err();
    assert_eq!(err, CfsError::NoBracket);
}

#[test]
fn zero_beta_and_partition_function() {
    let eta = vacuum();
    let ens = ensemble(&eta, 40, 1);
    let c = ctx(&eta, &eta);
    let e = entropy_functional(&c, &target(&eta), &id(), 0.0, &ens).unwrap();
    assert_eq!(e.value, 0.0);
    let z = partition_function(&c, &target(&eta), &id(), 0.0, &ens).unwrap();
    assert_eq!(z.z, 1.0);
    let beta = 3.0 / ens.gamma_scale;
    let e = entropy_functional(&c, &target(&eta), &id(), beta, &ens).unwrap();
    let z = partition_function(&c, &target(&eta), &id(), beta, &ens).unwrap();
    assert_eq!(z.log_z.to_bits(), e.value.to_bits());
    assert!((z.z - 1.0).abs() <= 3.0 * z.mc_error + 1e-12);
}

#[test]
fn vacuum_entropy_nonnegative_and_beta_monotone() {
    let eta = vacuum();
    let ens = ensemble(&eta, 40, 1);
    let c = ctx(&eta, &eta);
    let ts = PastChoice::Time(PastSet::constant(T0 + 0.3 * STEP, 4));
    let mut last = 0.0;
    for k in [1.0, 10.0, 100.0] {
        let e = entropy_functional(&c, &ts, &id(), k / ens.gamma_scale, &ens).unwrap();
        assert!(e.value >= -3.0 * e.mc_error);
        assert!(e.value >= last);
        last = e.value;
    }
}

#[test]
fn lagrange_multiplier_examples() {
    let eta = vacuum();
    let ens = ensemble(&eta, 20, 1);
    let c = ctx(&eta, &eta);
    let t0s = PastSet::constant(T0, 4);
    assert_eq!(lagrange_c(&c, &t0s, &id(), 0.0, &ens).unwrap(), 1.0);
    let r = optimality_residual(&c, &t0s, &id(), 0.0, 1.0, &ens).unwrap();
    assert_eq!(r.max_abs, 0.0);

    // Kernel constant in the sample: c is the plain weighted mean of e^{βγ}.
    let kernel = vec![vec![1.0, 2.0, 0.5]; 4];
    let mu = [0.2, 0.3, 0.5];
    let gammas = [0.1, -0.2, 0.05, 0.3];
    let weights = [1.0, 2.0, 1.0, 0.5];
    let beta: f64 = 2.0;
    let direct = gammas.iter().zip(&weights).map(|(g, w)| w * (beta * g).exp()).sum::<f64>() / weights.iter().sum::<f64>();
    let got = lagrange_c_from(&kernel, &mu, &gammas, &weights, beta).unwrap();
    assert!((got - direct).abs() < 1e-14);
    let zero = vec![vec![0.0; 3]; 4];
    assert!(matches!(lagrange_c_from(&zero, &mu, &gammas, &weights, beta), Err(CfsError::DegenerateKernel { .. })));
}

#[test]
fn shifted_time_function_breaks_stationarity() {
    let eta = vacuum();
    let ens = ensemble(&eta, 40, 1);
    let c = ctx(&eta, &eta);
    let beta = 1.0 / ens.gamma_scale;
    let t0s = PastSet::constant(T0, 4);
    let c0 = lagrange_c(&c, &t0s, &id(), beta, &ens).unwrap();
    let at = optimality_residual(&c, &t0s, &id(), beta, c0, &ens).unwrap();
    assert!(at.max_abs <= 3.0 * at.mc_error + 1e-9, "{at:?}");
    let mut off = t0s.clone();
    off.values[0] += STEP;
    let r = optimality_residual(&c, &off, &id(), beta, c0, &ens).unwrap();
    assert!(r.max_abs > 3.0 * r.mc_error, "{r:?}");
}

#[test]
fn second_variation_cases() {
    let eta = vacuum();
    let ens = ensemble(&eta, 40, 1);
    let c = ctx(&eta, &eta);
    assert_eq!(second_variation_probe(&c, &[1.0; 4], 1.0, &ens).unwrap_err(), CfsError::ConstantDirection);
    let sv = second_variation_probe(&c, &[1.0, -1.0, 0.5, 0.0], 100.0 / ens.gamma_scale, &ens).unwrap();
    assert!(sv.leading_beta2_coeff > 3.0 * sv.coeff_error, "{sv:?}");

    // Factorized kernel a(𝒰) b(𝐱) with g ⟂ b under μ.
    let a = [0.5, 1.5, 2.0, 0.7, 1.1];
    let b = [1.0, 2.0, 3.0];
    let mu = [1.0, 1.0, 1.0];
    let g = [3.0, 0.0, -1.0];
    let kernel: Vec<Vec<f64>> = a.iter().map(|ai| b.iter().map(|bx| ai * bx).collect()).collect();
    let gammas = [0.01, -0.02, 0.0, 0.03, -0.01];
    let (coeff, err, cc) = second_variation_from(&g, &mu, &kernel, &gammas, &[1.0; 5], 50.0).unwrap();
    assert!(cc.abs() < 1e-14);
    assert!(coeff.abs() <= 3.0 * err + 1e-20, "{coeff} {err}");
}

fn synthetic(points: Vec<(OperatorPoint, f64, usize)>, f: usize) -> DiscreteConfiguration {
    let atoms = points.into_iter().map(|(point, t, site)| SpacetimeAtom { point, t, site, weight: 1.0 }).collect();
    DiscreteConfiguration::from_atoms(f, 1, atoms).unwrap()
}

fn pair_point(f: usize, i: usize, j: usize) -> OperatorPoint {
    let mut e = vec![0.0; f];
    e[i] = 1.5;
    e[j] = -0.5;
    OperatorPoint::diagonal(&e, 1).unwrap()
}

#[test]
fn hypothesis_triples() {
    let c = synthetic(vec![(pair_point(6, 0, 1), 0.5, 0), (pair_point(6, 2, 3), 0.5, 1), (pair_point(6, 4, 5), 0.5, 2), (pair_point(6, 0, 1), 0.25, 0)], 6);
    let r = hypothesis_diagnostics(&c, 0.5, 1e-9, &params()).unwrap();
    assert!(r.hypothesis_i);
    assert_eq!(r.triples.len(), 1);
    assert_eq!(r.hypothesis_ii, "not machine-checkable");
    assert_eq!(r.ell_eta.len(), 3);

    let shared = synthetic(vec![(pair_point(6, 0, 1), 0.5, 0), (pair_point(6, 0, 3), 0.5, 1), (pair_point(6, 0, 5), 0.5, 2)], 6);
    assert!(!hypothesis_diagnostics(&shared, 0.5, 1e-9, &params()).unwrap().hypothesis_i);
    assert!(matches!(hypothesis_diagnostics(&shared, 0.9, 1e-9, &params()), Err(CfsError::NoSliceAtoms { .. })));
}

#[test]
fn ttr_gate() {
    let eta = vacuum();
    let ens = ensemble(&eta, 20, 1);
    let r = ttr_check(&eta, T0, &ens, &params(), None).unwrap();
    assert!(r.pass);
    let one = with_samples(&ens, vec![SliceSample { u: id(), tau: 0.0, residual: 0.0, weight: 1.0, derivative: 0.0 }]);
    let at_id = ttr_check(&eta, T0, &one, &params(), None).unwrap();
    let k = gamma_dt_kernel(T0, &eta, &id(), &params()).unwrap();
    assert!((at_id.min_over_u + k).abs() <= 1e-12 * k.abs());

    let c = ctx(&eta, &eta);
    let tilde = ttr_check_tilde(&c, &PastSet::constant(T0, 4), &id(), &ens, None).unwrap();
    assert!((tilde.min_over_u - r.min_over_u).abs() <= 1e-12 * r.min_over_u);
    assert_eq!(ttr_check_tilde(&c, &PastSet::constant(-5.0, 4), &id(), &ens, None).unwrap_err(), CfsError::EmptySlice);
}

#[test]
fn ttr_fails_on_orthogonal_transport() {
    let c = synthetic(vec![(pair_point(4, 0, 1), 0.25, 0), (pair_point(4, 0, 1), 0.5, 0)], 4);
    let mut swap = CMat::zeros(4, 4);
    for (i, j) in [(0, 2), (1, 3), (2, 0), (3, 1)] {
        swap[(i, j)] = C64::new(1.0, 0.0);
    }
    let u = GroupElement::new(swap).unwrap();
    let ens = SliceEnsemble {
        samples: vec![SliceSample { u, tau: 0.0, residual: 0.0, weight: 1.0, derivative: 1.0 }],
        acceptance_rate: 1.0,
        seed: 0,
        dt_max: 0.1,
        thickness: 0.0,
        tol: 1e-9,
        gamma_scale: 1.0,
        action_scale: 1.0,
        draws: 1,
        flagged: 0,
    };
    let r = ttr_check(&c, 0.5, &ens, &params(), Some(1e-12)).unwrap();
    assert_eq!(r.min_over_u, 0.0);
    assert!(!r.pass);
}

#[test]
fn optimizer_feasible_and_monotone_in_budget() {
    let eta = vacuum();
    let ens = ensemble(&eta, 24, 1);
    let pert = perturb(&eta, 0.1, 4).unwrap();
    let c = ctx(&pert, &eta);
    let beta = 1.0 / ens.gamma_scale;
    let mut last = f64::INFINITY;
    for outer in [0, 1, 2] {
        let budget = OptimizerBudget { outer_iters: outer, inner_sweeps: 1, ..Default::default() };
        let r = optimize_configuration(&c, &target(&pert), None, beta, &ens, &budget, 5).unwrap();
        assert!(r.admiss_residuals.0.abs() <= r.admiss_tol);
        assert!(r.admiss_residuals.1.abs() <= r.admiss_tol);
        assert!(r.value >= -(beta.abs() * r.admiss_tol + 3.0 * r.mc_error));
        assert!(r.value <= last);
        last = r.value;
    }
}

#[test]
fn vacuum_optimum_not_above_identity_pair() {
    let eta = vacuum();
    let ens = ensemble(&eta, 24, 1);
    let c = ctx(&eta, &eta);
    let beta = 1.0 / ens.gamma_scale;
    let at_id = entropy_functional(&c, &target(&eta), &id(), beta, &ens).unwrap();
    let r = optimize_configuration(&c, &target(&eta), None, beta, &ens, &small_budget(), 5).unwrap();
    assert!(r.value <= at_id.value);
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("h_star_doc"));
}

#[test]
fn dt_schedule_validation() {
    let eta = vacuum();
    let c = ctx(&eta, &eta);
    let s = setup(8, small_budget());
    for bad in [vec![0.1, 0.05], vec![0.1, 0.1, 0.05], vec![0.1, 0.05, -0.01]] {
        assert!(matches!(entropy_dt_limit(&c, &target(&eta), 1.0, &s, &bad, 1), Err(CfsError::InvalidArgument(_))));
    }
}

#[test]
fn exhaustion_edge_cases() {
    let eta = vacuum();
    let c = ctx(&eta, &eta);
    let s = setup(16, small_budget());
    let sweep = exhaustion_sweep(&c, &target(&eta), 5.0, &s, &[0, 4], 3).unwrap();
    let zero = sweep.rows[0].report.as_ref().unwrap();
    // A single exponential of a constrained, round-off sized γ.
    assert!(zero.value.abs() <= 5.0 * zero.admiss_tol, "{}", zero.value);
    assert_eq!(zero.ensemble_size, 1);
    let full = sweep.rows[1].report.as_ref().unwrap();
    let direct = entropy_static(&c, &target(&eta), 5.0, &s, 3).unwrap();
    assert_eq!(full.value.to_bits(), direct.value.to_bits());
    assert!(sweep.liminf.is_some());
    assert!(exhaustion_sweep(&c, &target(&eta), 5.0, &s, &[2, 1], 3).is_err());
}

#[test]
fn tail_minimum_is_nonincreasing_in_length() {
    let v = [0.5, 0.3, 0.4, 0.2, 0.25, 0.1];
    assert_eq!(tail_minimum(&v), Some((5, 0.1)));
    assert_eq!(tail_minimum(&[]), None);
}
