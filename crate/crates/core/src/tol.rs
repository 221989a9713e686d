//! Numerical tolerances shared across modules.

use serde::{Deserialize, Serialize};

/// Relative tolerance for a point to count as lying on the isospectral curve.
pub const TOL_CURVE: f64 = 1e-10;
/// Minimal distance of `|Delta|` from the unit circle.
pub const TOL_BOUNDARY: f64 = 1e-9;
/// Agreement required between successive padded inverse extractions.
pub const TOL_INV: f64 = 1e-11;
/// Initial padding for inverse extraction.
pub const DEFAULT_PAD: usize = 300;
/// Largest condition estimate accepted for a truncated solve.
pub const COND_MAX: f64 = 1e12;
/// Core entries within this distance of the tail values are absorbed by the flow.
pub const TOL_ABSORB: f64 = 1e-13;
/// Gate applied to the magic residual when constructing periodic operators.
pub const TOL_MAGIC: f64 = 1e-10;
/// Smallest admissible outer coefficient `|r|`.
pub const R_MIN: f64 = 1e-12;
/// Largest admissible coefficient magnitude.
pub const COEFF_MAX: f64 = 1e6;

/// Overridable tolerance set; defaults match the module constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub curve: f64,
    pub boundary: f64,
    pub inv: f64,
    pub pad: usize,
    pub cond_max: f64,
    pub absorb: f64,
    pub magic: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            curve: TOL_CURVE,
            boundary: TOL_BOUNDARY,
            inv: TOL_INV,
            pad: DEFAULT_PAD,
            cond_max: COND_MAX,
            absorb: TOL_ABSORB,
            magic: TOL_MAGIC,
        }
    }
}
