//! Surface layer integrals and the Lagrangian against brute-force references.

mod oracle;

use cfse_core::lagrangian::{kappa_lagrangian, ModelParams};
use cfse_core::linalg::C64;
use cfse_core::operator::OperatorPoint;
use oracle::*;

#[test]
fn every_variant_matches_the_double_loop_bitwise() {
    for i in 0..100 {
        if let Err(e) = variants_match(i) {
            panic!("system {i}: {e}");
        }
    }
}

#[test]
fn lagrangian_matches_full_eigensolve() {
    let worst = lagrangian_max_deviation(1000);
    assert!(worst < 1e-9, "max deviation {worst}");
}

#[test]
fn lagrangian_of_low_rank_points() {
    // Rank below 2n pads the spectrum with zeros.
    let v = [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
    let x = OperatorPoint::projector(&v, 1).unwrap();
    let params = ModelParams::new(0.5, 1, 0.0).unwrap();
    let got = kappa_lagrangian(&x, &x, &params).unwrap();
    assert!((got - lagrangian_full(&x, &x, 1, 0.5)).abs() < 1e-12);
    assert!((got - (0.5 + 0.5)).abs() < 1e-12);
}
