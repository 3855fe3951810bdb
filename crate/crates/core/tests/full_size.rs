//! Full-size configuration: shapes line up through forward and backward.

mod common;

#[test]
fn full_size_forward_and_backward() {
    let report = common::full_size::full_size_step().unwrap();
    assert!(report.loss.is_finite());
    assert!(report.parameters > 100_000_000);
    assert!(report.gradients > 0);
}
