mod common;

use common::{gradient_errors, GradTarget, GRAD_RTOL};

const STATES: usize = 25;

fn check(target: GradTarget, seed: u64) {
    let errs = gradient_errors(target, seed, STATES);
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    assert!(worst < GRAD_RTOL, "{target:?}: worst relative error {worst:e} over {errs:?}");
}

#[test]
fn violation_gradient() {
    check(GradTarget::Violation, 11);
}

#[test]
fn kl_lagrangian_gradient() {
    check(GradTarget::Kl, 12);
}

#[test]
fn ms_lagrangian_gradient() {
    check(GradTarget::Ms, 13);
}

#[test]
fn bcms_lagrangian_gradient() {
    check(GradTarget::Bcms, 14);
}

#[test]
fn ccms_lagrangian_gradient() {
    check(GradTarget::Ccms, 15);
}
