//! Dilation multiplier `rho` and uniformizing coordinate `w(z)` for a
//! two-interval set.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{integrate_complex, integrate_real, QUAD_REL_TOL};
use crate::spectral::TwoIntervalSet;

const BRANCH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformizationData {
    pub set: TwoIntervalSet,
    pub rho: f64,
    /// Integral of `1/sqrt|Q|` over the right band `[b1, a0]`.
    pub i_num: f64,
    /// Integral of `1/sqrt|Q|` over the gap `[a1, b1]`; equals the same
    /// integral over the outer arc from `a0` through infinity to `b0`.
    pub i_den: f64,
    /// Largest relative change of the last panel halving.
    pub halving_change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformizationReport {
    pub rho: f64,
    #[serde(rename = "I_num")]
    pub i_num: f64,
    #[serde(rename = "I_den")]
    pub i_den: f64,
}

impl From<&UniformizationData> for UniformizationReport {
    fn from(d: &UniformizationData) -> Self {
        Self {
            rho: d.rho,
            i_num: d.i_num,
            i_den: d.i_den,
        }
    }
}

/// `int_u^v dx / sqrt|Q(x)|` where `u < v` are adjacent roots of `Q`.
///
/// With `x = m + h sin(theta)` the square-root singularities at both ends
/// cancel against `dx`.
pub fn edge_integral(set: &TwoIntervalSet, u: f64, v: f64) -> Result<(f64, f64)> {
    let roots = set.endpoints();
    let others: Vec<f64> = roots
        .iter()
        .copied()
        .filter(|c| *c != u && *c != v)
        .collect();
    if others.len() != 2 {
        return Err(Error::Domain(format!("[{u}, {v}] is not bounded by two branch points")));
    }
    let m = 0.5 * (u + v);
    let h = 0.5 * (v - u);
    let f = |theta: f64| {
        let x = m + h * theta.sin();
        1.0 / ((x - others[0]).abs() * (x - others[1]).abs()).sqrt()
    };
    let half_pi = std::f64::consts::FRAC_PI_2;
    let r = integrate_real(f, -half_pi, half_pi, QUAD_REL_TOL)?;
    Ok((r.value, r.last_change))
}

pub fn band_period(set: &TwoIntervalSet) -> Result<f64> {
    Ok(edge_integral(set, set.b1, set.a0)?.0)
}

pub fn left_band_period(set: &TwoIntervalSet) -> Result<f64> {
    Ok(edge_integral(set, set.b0, set.a1)?.0)
}

pub fn gap_period(set: &TwoIntervalSet) -> Result<f64> {
    Ok(edge_integral(set, set.a1, set.b1)?.0)
}

/// `rho = exp(2 pi I_num / I_den)`.
pub fn group_multiplier(set: &TwoIntervalSet) -> Result<UniformizationData> {
    let (i_num, c1) = edge_integral(set, set.b1, set.a0)?;
    let (i_den, c2) = edge_integral(set, set.a1, set.b1)?;
    Ok(UniformizationData {
        set: *set,
        rho: (2.0 * std::f64::consts::PI * i_num / i_den).exp(),
        i_num,
        i_den,
        halving_change: c1.max(c2),
    })
}

/// Same multiplier with the left band as numerator path.
pub fn group_multiplier_left(set: &TwoIntervalSet) -> Result<f64> {
    let i_num = left_band_period(set)?;
    let i_den = gap_period(set)?;
    Ok((2.0 * std::f64::consts::PI * i_num / i_den).exp())
}

#[inline]
fn clean(z: Complex64) -> Complex64 {
    // -0.0 imaginary parts would flip the principal square root across its cut
    Complex64::new(z.re, if z.im == 0.0 { 0.0 } else { z.im })
}

/// Branch of `sqrt(z - c)` continuous on the closed upper half-plane.
#[inline]
fn root(z: Complex64, c: f64) -> Complex64 {
    clean(z - c).sqrt()
}

fn others_product(set: &TwoIntervalSet, z: Complex64) -> Complex64 {
    root(z, set.b0) * root(z, set.a1) * root(z, set.b1)
}

fn check_path_point(z: Complex64) -> Result<()> {
    if z.im < 0.0 {
        return Err(Error::Domain(format!("{z} lies below the real axis")));
    }
    Ok(())
}

fn segment_distance(s: Complex64, e: Complex64, c: f64) -> f64 {
    let d = e - s;
    let pc = Complex64::new(c, 0.0) - s;
    let t = if d.norm_sqr() == 0.0 {
        0.0
    } else {
        ((pc.re * d.re + pc.im * d.im) / d.norm_sqr()).clamp(0.0, 1.0)
    };
    (s + d * t - c).norm()
}

/// `int_{a0}^{z} dzeta / sqrt(Q(zeta))` along the polyline `a0 -> waypoints -> z`.
pub fn abel_integral_via(set: &TwoIntervalSet, z: Complex64, waypoints: &[Complex64]) -> Result<Complex64> {
    let a0 = Complex64::new(set.a0, 0.0);
    let mut pts = vec![a0];
    pts.extend_from_slice(waypoints);
    pts.push(z);
    for p in &pts[1..] {
        check_path_point(*p)?;
    }
    let scale = set.diameter();
    for w in pts.windows(2) {
        for (k, c) in set.endpoints().iter().enumerate() {
            let skip_start = k == 3 && w[0] == a0;
            if !skip_start && segment_distance(w[0], w[1], *c) <= BRANCH_TOL * scale {
                return Err(Error::Domain(format!(
                    "integration path passes within {BRANCH_TOL:e} of branch point {c}"
                )));
            }
        }
    }
    let mut total = Complex64::new(0.0, 0.0);
    for (i, w) in pts.windows(2).enumerate() {
        let (s, e) = (w[0], w[1]);
        if s == e {
            continue;
        }
        let seg = if i == 0 {
            // zeta = a0 + u^2 (e - a0) removes the root at a0
            let d = clean(e - a0);
            let sd = d.sqrt();
            integrate_complex(
                |u| {
                    let zeta = a0 + d * (u * u);
                    sd * 2.0 / others_product(set, zeta)
                },
                0.0,
                1.0,
                QUAD_REL_TOL,
            )?
        } else {
            integrate_complex(
                |t| {
                    let zeta = s + (e - s) * t;
                    (e - s) / (root(zeta, set.a0) * others_product(set, zeta))
                },
                0.0,
                1.0,
                QUAD_REL_TOL,
            )?
        };
        total += seg.value;
    }
    Ok(total)
}

/// Default path: the straight segment from `a0`, or a detour through a point
/// above the set when that segment would run along a cut or through a
/// branch point.
pub fn default_waypoints(set: &TwoIntervalSet, z: Complex64) -> Vec<Complex64> {
    let a0 = Complex64::new(set.a0, 0.0);
    let scale = set.diameter();
    let near = set.endpoints()[..3]
        .iter()
        .any(|c| segment_distance(a0, z, *c) <= 1e-3 * scale);
    if near {
        let mid = 0.5 * (set.a0 + z.re.min(set.a0));
        vec![Complex64::new(mid, 0.5 * scale)]
    } else {
        Vec::new()
    }
}

pub fn abel_integral(set: &TwoIntervalSet, z: Complex64) -> Result<Complex64> {
    abel_integral_via(set, z, &default_waypoints(set, z))
}

/// `w(z) = exp(i pi I(z) / I_den)`.
pub fn uniformizing_coordinate(set: &TwoIntervalSet, z: Complex64) -> Result<Complex64> {
    let i_den = gap_period(set)?;
    w_from_integral(abel_integral(set, z)?, i_den)
}

pub fn uniformizing_coordinate_via(
    set: &TwoIntervalSet,
    z: Complex64,
    waypoints: &[Complex64],
) -> Result<Complex64> {
    let i_den = gap_period(set)?;
    w_from_integral(abel_integral_via(set, z, waypoints)?, i_den)
}

fn w_from_integral(i: Complex64, i_den: f64) -> Result<Complex64> {
    Ok((Complex64::i() * std::f64::consts::PI * i / i_den).exp())
}

/// `w` sampled on `n + 1` equally spaced points of the segment `[from, to]`.
pub fn w_along_segment(
    set: &TwoIntervalSet,
    from: Complex64,
    to: Complex64,
    n: usize,
) -> Result<Vec<(Complex64, Complex64)>> {
    let i_den = gap_period(set)?;
    (0..=n)
        .map(|k| {
            let t = if n == 0 { 0.0 } else { k as f64 / n as f64 };
            let z = from + (to - from) * t;
            let w = w_from_integral(abel_integral(set, z)?, i_den)?;
            Ok((z, w))
        })
        .collect()
}
