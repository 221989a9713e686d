//! Two-interval geometry: the rational function `V(z) = a z + b - 1/z`, its
//! preimage `E = V^{-1}([-2, 2])`, the Joukowski inverse `Delta`, the
//! isospectral curve and the period-two SMP matrices it parametrizes.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smp::{inverse_band_entries, SmpOperator};
use crate::tol::Tolerances;

/// The pair `(a, b)` defining `V(z) = a z + b - 1/z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct CurveParams {
    a: f64,
    b: f64,
}

#[derive(Deserialize)]
struct RawParams {
    a: f64,
    b: f64,
}

impl TryFrom<RawParams> for CurveParams {
    type Error = Error;
    fn try_from(raw: RawParams) -> Result<Self> {
        CurveParams::new(raw.a, raw.b)
    }
}

impl CurveParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParams("a and b must be finite".into()));
        }
        if a <= 0.0 {
            return Err(Error::InvalidParams("a must be positive".into()));
        }
        Ok(Self { a, b })
    }

    #[inline]
    pub fn a(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Scale used for the relative curve tolerance, `max(1, 1/a)`.
    pub fn curve_scale(&self) -> f64 {
        1f64.max(1.0 / self.a)
    }
}

/// `E = [b0, a0] \ (a1, b1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSet")]
pub struct TwoIntervalSet {
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
    pub a0: f64,
}

#[derive(Deserialize)]
struct RawSet {
    b0: f64,
    a1: f64,
    b1: f64,
    a0: f64,
}

impl TryFrom<RawSet> for TwoIntervalSet {
    type Error = Error;
    fn try_from(r: RawSet) -> Result<Self> {
        TwoIntervalSet::new(r.b0, r.a1, r.b1, r.a0)
    }
}

impl TwoIntervalSet {
    /// Arbitrary two-interval set; only the ordering `b0 < a1 < b1 < a0` is required.
    pub fn new(b0: f64, a1: f64, b1: f64, a0: f64) -> Result<Self> {
        let ok = [b0, a1, b1, a0].iter().all(|x| x.is_finite()) && b0 < a1 && a1 < b1 && b1 < a0;
        if !ok {
            return Err(Error::InvalidParams(format!(
                "endpoints must satisfy b0 < a1 < b1 < a0, got ({b0}, {a1}, {b1}, {a0})"
            )));
        }
        Ok(Self { b0, a1, b1, a0 })
    }

    pub fn endpoints(&self) -> [f64; 4] {
        [self.b0, self.a1, self.b1, self.a0]
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.b0..=self.a1).contains(&x) || (self.b1..=self.a0).contains(&x)
    }

    /// Euclidean distance from a real number to the set.
    pub fn distance(&self, x: f64) -> f64 {
        if self.contains(x) {
            return 0.0;
        }
        self.endpoints()
            .iter()
            .map(|e| (x - e).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// The image of the set under `x -> lambda x + shift`, `lambda > 0`.
    pub fn affine(&self, lambda: f64, shift: f64) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::InvalidParams("affine scale must be positive".into()));
        }
        let f = |x: f64| lambda * x + shift;
        Self::new(f(self.b0), f(self.a1), f(self.b1), f(self.a0))
    }

    pub fn diameter(&self) -> f64 {
        self.a0 - self.b0
    }
}

/// A point `(p0, p1)`; on-curve status is checked against a [`CurveParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct CurvePoint {
    pub p0: f64,
    pub p1: f64,
}

impl From<[f64; 2]> for CurvePoint {
    fn from(v: [f64; 2]) -> Self {
        Self { p0: v[0], p1: v[1] }
    }
}

impl From<CurvePoint> for [f64; 2] {
    fn from(p: CurvePoint) -> Self {
        [p.p0, p.p1]
    }
}

impl CurvePoint {
    pub const fn new(p0: f64, p1: f64) -> Self {
        Self { p0, p1 }
    }

    /// Validated constructor.
    pub fn on_curve(params: &CurveParams, p0: f64, p1: f64, tol: f64) -> Result<Self> {
        let p = Self::new(p0, p1);
        check_on_curve(params, &p, tol)?;
        Ok(p)
    }

    pub fn negated(&self) -> Self {
        Self::new(-self.p0, -self.p1)
    }

    /// `(p0, p1) -> (-p1, -p0)`, the symmetric point of the curve.
    pub fn reflected(&self) -> Self {
        Self::new(-self.p1, -self.p0)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self.p0 - other.p0).hypot(self.p1 - other.p1)
    }
}

/// Roots of `alpha z^2 + beta z + gamma` without cancellation, assuming real roots.
fn real_quadratic_roots(alpha: f64, beta: f64, gamma: f64) -> Option<(f64, f64)> {
    let disc = beta * beta - 4.0 * alpha * gamma;
    if disc < 0.0 {
        return None;
    }
    let q = -0.5 * (beta + beta.signum() * disc.sqrt());
    if q == 0.0 {
        // beta = 0 and disc = 0
        return Some((0.0, 0.0));
    }
    Some((q / alpha, gamma / q))
}

/// The four endpoints of `E`, from the roots of `a z^2 + (b -+ 2) z - 1 = 0`.
pub fn band_endpoints(params: &CurveParams) -> TwoIntervalSet {
    let (a, b) = (params.a, params.b);
    // V = -2: b0 < 0 < b1.  V = +2: a1 < 0 < a0.
    let (m1, m2) = real_quadratic_roots(a, b + 2.0, -1.0).expect("discriminant is positive");
    let (b0, b1) = (m1.min(m2), m1.max(m2));
    let (p1, p2) = real_quadratic_roots(a, b - 2.0, -1.0).expect("discriminant is positive");
    let (a1, a0) = (p1.min(p2), p1.max(p2));
    TwoIntervalSet { b0, a1, b1, a0 }
}

pub fn v_eval(params: &CurveParams, z: Complex64) -> Result<Complex64> {
    if z == Complex64::new(0.0, 0.0) {
        return Err(Error::Domain("V(z) has a pole at z = 0".into()));
    }
    Ok(params.a * z + params.b - z.inv())
}

/// The branch of `w + 1/w = V(z)` inside the unit disk.
pub fn delta_eval(params: &CurveParams, z: Complex64, tol_boundary: f64) -> Result<Complex64> {
    let v = v_eval(params, z)?;
    let s = (v * v - 4.0).sqrt();
    let (plus, minus) = (v + s, v - s);
    let big = if plus.norm() >= minus.norm() { plus } else { minus } * 0.5;
    let small = big.inv();
    let modulus = small.norm();
    if !(modulus < 1.0 - tol_boundary) {
        return Err(Error::NearBoundary {
            modulus,
            tol: tol_boundary,
        });
    }
    Ok(small)
}

/// Signed residual of `p0^2 + p1^2 + a^2 p0^2 p1^2 + b p0 p1 - 1/a`.
pub fn curve_residual(params: &CurveParams, p: &CurvePoint) -> f64 {
    let (a, b) = (params.a, params.b);
    let (x, y) = (p.p0, p.p1);
    x * x + y * y + a * a * x * x * y * y + b * x * y - 1.0 / a
}

pub fn check_on_curve(params: &CurveParams, p: &CurvePoint, tol: f64) -> Result<()> {
    let residual = curve_residual(params, p);
    if !(residual.abs() <= tol * params.curve_scale()) {
        return Err(Error::OffCurve {
            p0: p.p0,
            p1: p.p1,
            residual,
        });
    }
    Ok(())
}

/// Discriminant of the curve equation viewed as a quadratic in `p1`.
fn p1_discriminant(params: &CurveParams, p0: f64) -> f64 {
    let (a, b) = (params.a, params.b);
    let bp = b * p0;
    bp * bp - 4.0 * (1.0 + a * a * p0 * p0) * (p0 * p0 - 1.0 / a)
}

/// Real roots `p1` of the curve equation for fixed `p0` (zero, one or two values).
pub fn curve_solve_p1(params: &CurveParams, p0: f64) -> Vec<f64> {
    let (a, b) = (params.a, params.b);
    let alpha = 1.0 + a * a * p0 * p0;
    let beta = b * p0;
    let gamma = p0 * p0 - 1.0 / a;
    let disc = p1_discriminant(params, p0);
    if disc < 0.0 {
        return Vec::new();
    }
    if disc == 0.0 {
        return vec![-beta / (2.0 * alpha)];
    }
    let (r1, r2) = real_quadratic_roots(alpha, beta, gamma).expect("disc > 0");
    let (lo, hi) = (r1.min(r2), r1.max(r2));
    vec![hi, lo]
}

/// Largest `|p0|` for which the curve has a real point, by bisection on the
/// discriminant (which is positive at `p0 = 0`).
pub fn feasible_p0_bound(params: &CurveParams) -> f64 {
    let mut lo = 0.0;
    let mut hi = 2.0 / params.a.sqrt();
    while p1_discriminant(params, hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if p1_discriminant(params, mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Draws `p0` uniformly from the feasible interval and picks one of the roots.
pub fn random_curve_point<R: Rng + ?Sized>(params: &CurveParams, rng: &mut R) -> CurvePoint {
    let bound = feasible_p0_bound(params);
    loop {
        let p0 = rng.gen_range(-bound..=bound);
        let roots = curve_solve_p1(params, p0);
        if roots.is_empty() {
            continue;
        }
        let p1 = roots[rng.gen_range(0..roots.len())];
        return CurvePoint::new(p0, p1);
    }
}

/// Closed-form period-two coefficients `(r1, q0, q1)` for a curve point.
pub fn periodic_coefficients(params: &CurveParams, p: &CurvePoint) -> (f64, f64, f64) {
    let (a, b) = (params.a, params.b);
    let r1 = 1.0 / a;
    let q0 = a * p.p0 * p.p1;
    let q1 = -b / a - a * p.p0 * p.p1;
    (r1, q0, q1)
}

/// Window used to gate [`build_periodic_smp`].
const PERIODIC_CHECK_WINDOW: usize = 40;

/// Builds the period-two element of `A(E)` at a curve point and verifies the
/// magic formula on it.
pub fn build_periodic_smp(
    params: &CurveParams,
    p: &CurvePoint,
    tol: &Tolerances,
) -> Result<SmpOperator> {
    check_on_curve(params, p, tol.curve)?;
    let op = SmpOperator::periodic(*params, *p);
    let residual = magic_residual(&op, PERIODIC_CHECK_WINDOW, tol)?;
    if !(residual <= tol.magic) {
        return Err(Error::MagicResidual {
            residual,
            tol: tol.magic,
        });
    }
    Ok(op)
}

/// Max entry of `a A + b I - A^{-1} - S^2 - S^{-2}` on an `n`-window centred
/// on the core, including the entries of `A^{-1}` outside its band.
pub fn magic_residual(op: &SmpOperator, n: usize, tol: &Tolerances) -> Result<f64> {
    let params = op.curve();
    let centre = (op.k_min() + op.k_max()) / 2;
    let half = (n / 2) as i64;
    let (lo, hi) = (centre - half, centre + half);
    let inv = inverse_band_entries(op, lo, hi, tol)?;
    let (a, b) = (params.a(), params.b());
    let mut worst = inv.beyond_band().max(inv.asymmetry());
    for k in lo..=hi {
        let v1 = a * op.outer(k) - inv.outer(k);
        let v01 = a * op.p(k) - inv.pi(k);
        let v00 = a * op.q(k) + b - inv.sigma(k);
        worst = worst.max((v1 - 1.0).abs()).max(v01.abs()).max(v00.abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(a: f64, b: f64) -> CurveParams {
        CurveParams::new(a, b).unwrap()
    }

    #[test]
    fn endpoints_symmetric_case() {
        let e = band_endpoints(&params(1.0, 0.0));
        let s = 2f64.sqrt();
        let expect = [-1.0 - s, 1.0 - s, -1.0 + s, 1.0 + s];
        for (x, y) in e.endpoints().iter().zip(expect) {
            assert!((x - y).abs() < 1e-14, "{x} vs {y}");
        }
        // b = 0 makes V odd, so E is symmetric.
        assert!((e.b0 + e.a0).abs() < 1e-14 && (e.a1 + e.b1).abs() < 1e-14);
    }

    #[test]
    fn endpoints_map_to_plus_minus_two() {
        let p = params(2.0, 1.0);
        let e = band_endpoints(&p);
        // roots of 2z^2 - z - 1 (V = 2) are -1/2 and 1
        assert!((e.a1 + 0.5).abs() < 1e-14 && (e.a0 - 1.0).abs() < 1e-14);
        for (x, target) in e.endpoints().iter().zip([-2.0, 2.0, -2.0, 2.0]) {
            let v = v_eval(&p, Complex64::new(*x, 0.0)).unwrap();
            assert!((v.re - target).abs() < 1e-12 && v.im == 0.0);
        }
        assert!(e.b0 < e.a1 && e.a1 < 0.0 && 0.0 < e.b1 && e.b1 < e.a0);
    }

    #[test]
    fn rejects_nonpositive_a() {
        let err = CurveParams::new(0.0, 0.0).unwrap_err();
        assert_eq!(err.to_string(), "invalid parameters: a must be positive");
        assert!(CurveParams::new(-1.0, 0.0).is_err());
        assert!(serde_json::from_str::<CurveParams>(r#"{"a":0,"b":1}"#).is_err());
    }

    #[test]
    fn v_examples() {
        let p = params(1.0, 0.0);
        assert_eq!(v_eval(&p, Complex64::new(1.0, 0.0)).unwrap(), Complex64::new(0.0, 0.0));
        let v = v_eval(&p, Complex64::new(1.0 + 2f64.sqrt(), 0.0)).unwrap();
        assert!((v.re - 2.0).abs() < 1e-14);
        let v = v_eval(&params(3.0, -1.0), Complex64::new(0.0, 1.0)).unwrap();
        assert!((v - Complex64::new(-1.0, 4.0)).norm() < 1e-15);
        assert!(matches!(
            v_eval(&p, Complex64::new(0.0, 0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn delta_limits_and_boundary() {
        let p = params(1.0, 0.0);
        let d = delta_eval(&p, Complex64::new(1e8, 0.0), 1e-9).unwrap();
        assert!(d.norm() < 1e-7);
        let d = delta_eval(&p, Complex64::new(1e-8, 0.0), 1e-9).unwrap();
        assert!(d.norm() < 1e-7);
        // interior of the right band, approached from above
        let d = delta_eval(&p, Complex64::new(1.5, 1e-9), 1e-12).unwrap();
        assert!((d.norm() - 1.0).abs() < 1e-6);
        // exactly on E is rejected with the default tolerance
        assert!(matches!(
            delta_eval(&p, Complex64::new(1.5, 0.0), 1e-9),
            Err(Error::NearBoundary { .. })
        ));
    }

    #[test]
    fn delta_solves_joukowski_off_e() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = params(rng.gen_range(0.2..5.0), rng.gen_range(-3.0..3.0));
            let e = band_endpoints(&p);
            let z = loop {
                let z = Complex64::new(rng.gen_range(-6.0..6.0), rng.gen_range(-3.0..3.0));
                if z.im.abs() > 1e-3 || e.distance(z.re) > 1e-3 {
                    break z;
                }
            };
            let d = delta_eval(&p, z, 1e-9).unwrap();
            assert!(d.norm() < 1.0);
            let v = v_eval(&p, z).unwrap();
            assert!((d + d.inv() - v).norm() <= 1e-12 * (1.0 + v.norm()));
        }
    }

    #[test]
    fn residual_examples() {
        let p = params(1.0, 0.0);
        assert_eq!(curve_residual(&p, &CurvePoint::new(1.0, 0.0)), 0.0);
        let q = params(2.5, -1.3);
        assert_eq!(curve_residual(&q, &CurvePoint::new(0.0, 0.0)), -1.0 / 2.5);
        let x = CurvePoint::new(0.37, -0.81);
        let pr = params(1.0, 0.7);
        assert_eq!(curve_residual(&pr, &x), curve_residual(&pr, &x.negated()));
    }

    #[test]
    fn solve_p1_examples() {
        let p = params(1.0, 0.0);
        assert_eq!(curve_solve_p1(&p, 0.0), vec![1.0, -1.0]);
        assert_eq!(curve_solve_p1(&p, 1.0), vec![0.0]);
        assert!(curve_solve_p1(&p, 2.0).is_empty());
    }

    #[test]
    fn feasible_bound_is_tight() {
        let p = params(1.0, 0.0);
        // discriminant -4(1+u)(u-1): feasible iff p0^2 <= 1
        assert!((feasible_p0_bound(&p) - 1.0).abs() < 1e-15);
        let q = params(0.7, 2.4);
        let m = feasible_p0_bound(&q);
        assert!(!curve_solve_p1(&q, m).is_empty());
        assert!(curve_solve_p1(&q, m * (1.0 + 1e-9)).is_empty());
    }

    #[test]
    fn periodic_examples() {
        let tol = Tolerances::default();
        let a = build_periodic_smp(&params(1.0, 0.0), &CurvePoint::new(1.0, 0.0), &tol).unwrap();
        assert_eq!((a.r(1), a.p(0), a.p(1), a.q(0), a.q(1)), (1.0, 1.0, 0.0, 0.0, 0.0));

        let h = 0.5f64.sqrt();
        let err = build_periodic_smp(&params(1.0, 0.0), &CurvePoint::new(h, h), &tol).unwrap_err();
        match err {
            Error::OffCurve { residual, .. } => assert!((residual - 0.25).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }

        let c = build_periodic_smp(&params(2.0, 0.0), &CurvePoint::new(h, 0.0), &tol).unwrap();
        assert_eq!(c.r(1), 0.5);
        assert_eq!((c.q(0), c.q(1)), (0.0, 0.0));
        assert_eq!(c.p(0), h);
    }

    #[test]
    fn magic_residual_detects_perturbation() {
        let tol = Tolerances::default();
        let p = params(1.0, 0.0);
        let a = build_periodic_smp(&p, &CurvePoint::new(1.0, 0.0), &tol).unwrap();
        let r0 = magic_residual(&a, 60, &tol).unwrap();
        assert!(r0 <= 1e-10);
        assert_eq!(r0, magic_residual(&a, 60, &tol).unwrap());
        let mut b = a.clone();
        b.set_q_odd(1, b.q(1) + 0.1).unwrap();
        assert!(magic_residual(&b, 60, &tol).unwrap() >= 0.05);
    }

    #[test]
    fn random_periodic_operators_satisfy_magic_formula() {
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = params(rng.gen_range(0.2..5.0), rng.gen_range(-3.0..3.0));
            let x = random_curve_point(&p, &mut rng);
            let op = build_periodic_smp(&p, &x, &tol).unwrap();
            let neg = build_periodic_smp(&p, &x.negated(), &tol).unwrap();
            for k in -3..4 {
                assert_eq!(op.p(k), -neg.p(k));
                assert_eq!(op.q(k), neg.q(k));
            }
            assert_eq!(op.r(1), neg.r(1));
        }
    }
}
