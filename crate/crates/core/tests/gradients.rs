//! Analytic gradients against central finite differences.

mod common;

use common::ops;

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_op_matches_finite_differences() {
    for case in ops::cases() {
        for seed in 0..3 {
            let err = ops::check(&case, seed).unwrap();
            assert!(err < TOLERANCE, "{} seed {seed}: relative error {err:.3e}", case.name);
        }
    }
}

#[test]
fn full_total_loss_matches_finite_differences() {
    let report = common::full_loss_check().unwrap();
    assert!(report.params.len() > 50);
    assert!(report.passes(TOLERANCE), "worst {:?}", report.worst());
}
