#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smpflow::sample::{random_eventually_periodic, SampleConfig};
use smpflow::{SmpOperator, Tolerances};

pub fn tol() -> Tolerances {
    Tolerances::default()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_op(seed: u64) -> SmpOperator {
    random_eventually_periodic(&SampleConfig::default(), &tol(), &mut rng(seed)).unwrap()
}

/// Dense `A` on `[lo, hi]` built entry by entry.
pub fn dense(op: &SmpOperator, lo: i64, hi: i64) -> DMatrix<f64> {
    let n = (hi - lo + 1) as usize;
    DMatrix::from_fn(n, n, |i, j| op.entry(lo + i as i64, lo + j as i64))
}

/// Dense inverse of the truncation to `[lo, hi]`; entries far from the
/// truncation edges approximate the infinite inverse.
pub fn dense_inverse(op: &SmpOperator, lo: i64, hi: i64) -> DMatrix<f64> {
    dense(op, lo, hi).try_inverse().expect("truncation is invertible")
}
