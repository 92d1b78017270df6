//! Finite-difference oracle shared by the integration tests. It only
//! evaluates scalar functions, never the tape, so it stays independent of
//! the reverse-mode path it checks.
#![allow(dead_code)]

pub mod fixtures;
pub mod gradients;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest violation ratio: `|a - n| / (REL_TOL * max(|a|, |n|) + ABS_FLOOR)`;
/// values ≤ 1 pass.
pub fn worst_violation(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (REL_TOL * a.abs().max(n.abs()) + ABS_FLOOR))
        .fold(0.0, f64::max)
}

pub fn assert_grads_match(what: &str, analytic: &[f64], numeric: &[f64]) {
    let v = worst_violation(analytic, numeric);
    assert!(v <= 1.0, "{what}: gradient mismatch (violation ratio {v:.3})");
}
