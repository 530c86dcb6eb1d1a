//! Shared helpers for the integration test suites.
#![allow(dead_code)]

use dbif_aunet::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_array<S: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<S> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || S::from_f64(rng.random_range(-1.0..1.0)))
}

pub fn random_unit<S: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<S> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || S::from_f64(rng.random_range(0.0..1.0)))
}

pub fn random_binary<S: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<S> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        if rng.random_bool(0.5) {
            S::one()
        } else {
            S::zero()
        }
    })
}

/// Relative error with an absolute floor so near-zero gradients compare
/// sanely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central finite difference of `f` at `x[idx]` with step `h`.
pub fn central_diff(
    x: &ArrayD<f64>,
    idx: &[usize],
    h: f64,
    mut f: impl FnMut(&ArrayD<f64>) -> f64,
) -> f64 {
    let mut xp = x.clone();
    xp[IxDyn(idx)] += h;
    let fp = f(&xp);
    let mut xm = x.clone();
    xm[IxDyn(idx)] -= h;
    let fm = f(&xm);
    (fp - fm) / (2.0 * h)
}

/// Deterministic subsample of coordinate tuples of `shape`, at most `cap`.
pub fn sample_coords(shape: &[usize], cap: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let total: usize = shape.iter().product();
    let n = total.min(cap);
    (0..n)
        .map(|_| {
            shape
                .iter()
                .map(|&s| rng.random_range(0..s))
                .collect::<Vec<_>>()
        })
        .collect()
}
