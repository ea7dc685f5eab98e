mod common;

use common::ops::{cases, worst_errors};

#[test]
fn every_op_matches_finite_differences() {
    let mut failures = Vec::new();
    for case in cases() {
        let (single, double) = worst_errors(&case, 0..20).unwrap();
        println!("{:<28} f32 {single:.2e}  f64 {double:.2e}", case.name);
        if !(single < 1e-3 && double < 1e-6) {
            failures.push(case.name);
        }
    }
    assert!(failures.is_empty(), "gradient mismatch: {failures:?}");
}
