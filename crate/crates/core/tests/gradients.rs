mod common;

use common::ops::op_suite;

#[test]
fn every_op_matches_central_differences() {
    let suite = op_suite(1e-5, 1e-6);
    assert!(suite.len() >= 20);
    for (name, r) in &suite {
        assert!(r.checked > 0, "{name}: nothing checked");
        assert!(r.passes(1e-6), "{name}: {r:?}");
    }
}
