#[path = "support/ops.rs"]
mod ops;

#[test]
fn every_op_matches_finite_differences() {
    let errors = ops::op_gradient_errors();
    assert!(errors.len() >= 30);
    for (name, err) in errors {
        assert!(err < 1e-6, "{name}: relative error {err:e}");
    }
}
