//! Every analytic backward pass against central finite differences.

#[path = "support/gradient_suite.rs"]
mod gradient_suite;

use gradient_suite::{random_stack, SuiteResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use t1reg_core::losses::pca::{correlation_spectrum, pca_loss, pca_loss_backward};

const TRIALS: u64 = 60;

fn assert_suite(s: &SuiteResult) {
    for (trial, c) in s.checks.iter().enumerate() {
        assert!(c.checked > 0, "{} instance {trial} checked nothing", s.name);
        assert!(c.max_relative_error < s.tolerance, "{} instance {trial}: {c:?}", s.name);
    }
    assert!(s.passed());
}

#[test]
fn warp_backward_matches_finite_differences() {
    assert_suite(&gradient_suite::warp(120).unwrap());
}

#[test]
fn pca_backward_matches_finite_differences() {
    assert_suite(&gradient_suite::pca(TRIALS).unwrap());
}

#[test]
fn pca_ignores_constant_offsets() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let stack = random_stack(&mut r, 8, 8, 4);
    let spec = correlation_spectrum(&stack).unwrap();
    let mut shifted = stack.clone();
    for v in &mut shifted.data[64..128] {
        *v += 3.5;
    }
    let spec2 = correlation_spectrum(&shifted).unwrap();
    assert!((pca_loss(&spec) - pca_loss(&spec2)).abs() < 1e-9);
    let g = pca_loss_backward(&stack, &spec);
    let mean: f64 = g[64..128].iter().sum::<f64>() / 64.0;
    let scale = g[64..128].iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(mean.abs() < 1e-10 * scale.max(1.0), "{mean}");
}

#[test]
fn relax_backward_matches_finite_differences() {
    let s = gradient_suite::relax(TRIALS).unwrap();
    assert_suite(&s);
    assert!(s.worst() < 1e-6, "{}", s.worst());
}

#[test]
fn regularizer_backwards_match_finite_differences() {
    for s in gradient_suite::regularizers(TRIALS).unwrap() {
        assert_suite(&s);
        assert!(s.worst() < 1e-6, "{}: {}", s.name, s.worst());
    }
}

#[test]
fn nmi_backward_matches_finite_differences() {
    let s = gradient_suite::nmi_pair(TRIALS).unwrap();
    assert_suite(&s);
    assert!(s.coordinates() > 60 * 50);
}

#[test]
fn total_gradient_matches_finite_differences() {
    assert_suite(&gradient_suite::total(TRIALS).unwrap());
}
