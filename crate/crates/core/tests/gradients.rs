use advlab::gradsuite::{run_suite, SuiteOptions, OPS, TOLERANCE};

#[test]
fn every_op_passes_finite_differences_at_fifty_points() {
    let checks = run_suite(&SuiteOptions::default()).unwrap();
    assert_eq!(checks.len(), OPS.len());
    for c in &checks {
        assert!(c.checked > 0, "{} checked nothing", c.op);
        assert!(c.max_rel_error < TOLERANCE, "{}: max relative error {:e}", c.op, c.max_rel_error);
    }
    let e2e = checks.iter().find(|c| c.op == "end_to_end").unwrap();
    assert!(e2e.checked > 50 * 100, "end-to-end graph covered only {} coordinates", e2e.checked);
}

#[test]
fn broken_convolution_backward_is_caught_and_named() {
    let checks = run_suite(&SuiteOptions { seeds: 3, broken_conv: true, ..SuiteOptions::default() }).unwrap();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.op).collect();
    assert_eq!(failed, ["conv2d"]);
}

#[test]
fn suite_is_deterministic() {
    let opts = SuiteOptions { seeds: 2, ..SuiteOptions::default() };
    assert_eq!(run_suite(&opts).unwrap(), run_suite(&opts).unwrap());
}
