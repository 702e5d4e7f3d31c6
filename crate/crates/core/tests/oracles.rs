//! Exact kernels against brute-force oracles.

mod support;

use support::oracles::*;

#[test]
fn fps_matches_greedy_recomputation() {
    assert_eq!(fps_mismatches(100), 0);
}

#[test]
fn pareto_front_matches_exhaustive_dominance() {
    assert_eq!(pareto_mismatches(50), 0);
}

#[test]
fn nhv_matches_rasterization() {
    let gap = nhv_worst_gap(50);
    assert!(gap <= 2e-3, "worst gap {gap}");
}

#[test]
fn nhv_worked_value() {
    assert!((nhv_worked_example() - 0.48).abs() < 1e-12);
}

#[test]
fn raster_oracle_is_sane() {
    assert!((nhv_raster(&[(0.0, 1.0)]) - 1.0).abs() < 1e-12);
    assert_eq!(nhv_raster(&[(1.0, 1.0)]), 0.0);
    assert!((nhv_raster(&[(0.5, 0.5)]) - 0.25).abs() < 1e-12);
}
