//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! directly to stderr, so the lines appear even when output is captured.

use std::io::Write;

use czkit::acceptance::run;

fn check(id: u8) {
    let outcome = run(id).unwrap_or_else(|e| panic!("criterion {id} could not run: {e}"));
    let mut err = std::io::stderr().lock();
    writeln!(err, "{}", outcome.line()).ok();
    assert!(outcome.passed, "{}", outcome.line());
}

#[test]
fn criterion_01_whitney_invariants() {
    check(1);
}

#[test]
fn criterion_02_cz_invariants() {
    check(2);
}

#[test]
fn criterion_03_weak_maximal_inequality() {
    check(3);
}

#[test]
fn criterion_04_dirac_closed_forms() {
    check(4);
}

#[test]
fn criterion_05_lipschitz_with_coefficient() {
    check(5);
}

#[test]
fn criterion_06_dipole_decay_slopes() {
    check(6);
}

#[test]
fn criterion_07_uniformization() {
    check(7);
}

#[test]
fn criterion_08_composite_weak_level() {
    check(8);
}

#[test]
fn criterion_09_laplacian_identity() {
    check(9);
}

#[test]
fn criterion_10_level_sets() {
    check(10);
}

#[test]
fn criterion_11_differentiability_quotient() {
    check(11);
}

#[test]
fn criterion_12_l2_gradient_estimate() {
    check(12);
}
