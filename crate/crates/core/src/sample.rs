//! Random eventually-periodic operators for randomized testing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::smp::{align_even, inverse_band_entries, CoreWindow, SmpOperator};
use crate::spectral::{random_curve_point, CurveParams};
use crate::tol::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub a_range: (f64, f64),
    pub b_range: (f64, f64),
    /// Largest number of core sites.
    pub max_core: usize,
    /// Perturbation size: additive on `p`, `q` (scaled by `min(1, 1/sqrt a)`),
    /// relative on `r`.
    pub perturbation: f64,
    /// Samples whose truncated inverse is worse conditioned are redrawn.
    pub max_condition: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            a_range: (0.2, 5.0),
            b_range: (-3.0, 3.0),
            max_core: 20,
            perturbation: 0.3,
            max_condition: 1e6,
        }
    }
}

const MAX_ATTEMPTS: usize = 200;

pub fn random_params<R: Rng + ?Sized>(cfg: &SampleConfig, rng: &mut R) -> CurveParams {
    let a = rng.gen_range(cfg.a_range.0..=cfg.a_range.1);
    let b = rng.gen_range(cfg.b_range.0..=cfg.b_range.1);
    CurveParams::new(a, b).expect("sampled a is positive")
}

/// Random tails on the curve of `params` and a perturbed core near the origin.
pub fn random_operator_for<R: Rng + ?Sized>(
    params: &CurveParams,
    cfg: &SampleConfig,
    tol: &Tolerances,
    rng: &mut R,
) -> Result<SmpOperator> {
    for _ in 0..MAX_ATTEMPTS {
        let left = random_curve_point(params, rng);
        let right = random_curve_point(params, rng);
        let pairs = rng.gen_range(1..=(cfg.max_core / 2).max(1));
        let k_min = align_even(-(pairs as i64) + rng.gen_range(-2..=2));
        let mut op = SmpOperator::new(*params, left, right, CoreWindow::empty(k_min))?;
        op.expand_to(k_min, k_min + 2 * pairs as i64 - 1);
        let amp = cfg.perturbation * (1.0 / params.a().sqrt()).min(1.0);
        let mut ok = true;
        for k in op.k_min()..=op.k_max() {
            ok &= op.set_p(k, op.p(k) + rng.gen_range(-amp..=amp)).is_ok();
            if k.rem_euclid(2) == 1 {
                ok &= op.set_q_odd(k, op.q(k) + rng.gen_range(-amp..=amp)).is_ok();
                let f = 1.0 + rng.gen_range(-cfg.perturbation..=cfg.perturbation);
                ok &= op.set_r(k, op.r(k) * f).is_ok();
            }
        }
        if !ok {
            continue;
        }
        match inverse_band_entries(&op, op.k_min() - 4, op.k_max() + 4, tol) {
            Ok(inv) if inv.condition() <= cfg.max_condition => return Ok(op),
            _ => continue,
        }
    }
    Err(Error::NotConverged(format!(
        "no well-conditioned sample after {MAX_ATTEMPTS} attempts"
    )))
}

pub fn random_eventually_periodic<R: Rng + ?Sized>(
    cfg: &SampleConfig,
    tol: &Tolerances,
    rng: &mut R,
) -> Result<SmpOperator> {
    loop {
        let params = random_params(cfg, rng);
        if let Ok(op) = random_operator_for(&params, cfg, tol, rng) {
            return Ok(op);
        }
    }
}

/// Same as [`random_eventually_periodic`] with a ChaCha8 stream seeded by `seed`.
pub fn seeded_operator(cfg: &SampleConfig, tol: &Tolerances, seed: u64) -> Result<SmpOperator> {
    random_eventually_periodic(cfg, tol, &mut ChaCha8Rng::seed_from_u64(seed))
}
