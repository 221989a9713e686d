//! Two-sided SMP operators with period-two tails.
//!
//! An operator is stored as a finite core `[k_min, k_max]` (`k_min` even,
//! `k_max` odd) holding `p_k`, `q_k` (odd `k`) and `r_k` (odd `k`); outside
//! the core the coefficients are those of `scale * A(tail)` where `A(tail)`
//! is the periodic operator of a curve point. Even diagonal entries are never
//! stored: `q_{2k} = p_{2k} p_{2k+1} / r_{2k+1}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::banded::{BandLu, BandMatrix};
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Execution};
use crate::spectral::{check_on_curve, periodic_coefficients, CurveParams, CurvePoint};
use crate::tol::{Tolerances, COEFF_MAX, R_MIN};

#[inline]
pub(crate) fn is_even(k: i64) -> bool {
    k.rem_euclid(2) == 0
}

/// Largest even integer `<= k`.
#[inline]
pub fn align_even(k: i64) -> i64 {
    k - k.rem_euclid(2)
}

/// Smallest odd integer `>= k`.
#[inline]
pub fn align_odd(k: i64) -> i64 {
    if is_even(k) {
        k + 1
    } else {
        k
    }
}

/// Coefficients of the finite core window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreWindow {
    pub k_min: i64,
    pub p: Vec<f64>,
    pub q_odd: Vec<f64>,
    pub r_odd: Vec<f64>,
}

impl CoreWindow {
    pub fn empty(k_min: i64) -> Self {
        Self {
            k_min: align_even(k_min),
            p: Vec::new(),
            q_odd: Vec::new(),
            r_odd: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OperatorFile {
    curve: CurveParams,
    left_tail: CurvePoint,
    right_tail: CurvePoint,
    #[serde(default = "unit_scale", skip_serializing_if = "is_unit")]
    scale: f64,
    core: CoreWindow,
}

fn unit_scale() -> f64 {
    1.0
}

fn is_unit(s: &f64) -> bool {
    *s == 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorFile", into = "OperatorFile")]
pub struct SmpOperator {
    curve: CurveParams,
    left_tail: CurvePoint,
    right_tail: CurvePoint,
    scale: f64,
    k_min: i64,
    p: Vec<f64>,
    q_odd: Vec<f64>,
    r_odd: Vec<f64>,
}

impl TryFrom<OperatorFile> for SmpOperator {
    type Error = Error;
    fn try_from(f: OperatorFile) -> Result<Self> {
        SmpOperator::with_scale(
            f.curve,
            f.left_tail,
            f.right_tail,
            f.scale,
            f.core,
            crate::tol::TOL_CURVE,
        )
    }
}

impl From<SmpOperator> for OperatorFile {
    fn from(op: SmpOperator) -> Self {
        OperatorFile {
            curve: op.curve,
            left_tail: op.left_tail,
            right_tail: op.right_tail,
            scale: op.scale,
            core: CoreWindow {
                k_min: op.k_min,
                p: op.p,
                q_odd: op.q_odd,
                r_odd: op.r_odd,
            },
        }
    }
}

fn check_coeff(name: &str, k: i64, v: f64) -> Result<()> {
    if !v.is_finite() || v.abs() > COEFF_MAX {
        return Err(Error::Structural(format!("{name}[{k}] = {v} is not a bounded coefficient")));
    }
    Ok(())
}

impl SmpOperator {
    /// The period-two operator `A(p)` with an empty core at the origin.
    pub fn periodic(curve: CurveParams, point: CurvePoint) -> Self {
        Self {
            curve,
            left_tail: point,
            right_tail: point,
            scale: 1.0,
            k_min: 0,
            p: Vec::new(),
            q_odd: Vec::new(),
            r_odd: Vec::new(),
        }
    }

    pub fn new(
        curve: CurveParams,
        left_tail: CurvePoint,
        right_tail: CurvePoint,
        core: CoreWindow,
    ) -> Result<Self> {
        Self::with_scale(curve, left_tail, right_tail, 1.0, core, crate::tol::TOL_CURVE)
    }

    /// General constructor; the tails are `scale * A(tail)`.
    pub fn with_scale(
        curve: CurveParams,
        left_tail: CurvePoint,
        right_tail: CurvePoint,
        scale: f64,
        core: CoreWindow,
        tol_curve: f64,
    ) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Structural(format!("tail scale must be positive, got {scale}")));
        }
        check_on_curve(&curve, &left_tail, tol_curve)?;
        check_on_curve(&curve, &right_tail, tol_curve)?;
        if !is_even(core.k_min) {
            return Err(Error::Structural(format!("k_min = {} must be even", core.k_min)));
        }
        if core.p.len() % 2 != 0 {
            return Err(Error::Structural(format!(
                "core must cover whole (even, odd) pairs, got {} p-entries",
                core.p.len()
            )));
        }
        let pairs = core.p.len() / 2;
        if core.q_odd.len() != pairs || core.r_odd.len() != pairs {
            return Err(Error::Structural(format!(
                "expected {pairs} odd entries, got q_odd: {}, r_odd: {}",
                core.q_odd.len(),
                core.r_odd.len()
            )));
        }
        for (i, v) in core.p.iter().enumerate() {
            check_coeff("p", core.k_min + i as i64, *v)?;
        }
        for (i, (q, r)) in core.q_odd.iter().zip(&core.r_odd).enumerate() {
            let k = core.k_min + 2 * i as i64 + 1;
            check_coeff("q", k, *q)?;
            check_coeff("r", k, *r)?;
            if r.abs() < R_MIN {
                return Err(Error::Structural(format!("r[{k}] = {r} vanishes")));
            }
        }
        Ok(Self {
            curve,
            left_tail,
            right_tail,
            scale,
            k_min: core.k_min,
            p: core.p,
            q_odd: core.q_odd,
            r_odd: core.r_odd,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    /// Parses an operator file, validating the tails against `tol_curve`.
    pub fn from_json_with(s: &str, tol_curve: f64) -> Result<Self> {
        let f: OperatorFile = serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))?;
        Self::with_scale(f.curve, f.left_tail, f.right_tail, f.scale, f.core, tol_curve)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("operator serialization cannot fail")
    }

    pub fn curve(&self) -> &CurveParams {
        &self.curve
    }

    pub fn left_tail(&self) -> CurvePoint {
        self.left_tail
    }

    pub fn right_tail(&self) -> CurvePoint {
        self.right_tail
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn k_min(&self) -> i64 {
        self.k_min
    }

    /// Last core index; `k_min - 1` for an empty core.
    pub fn k_max(&self) -> i64 {
        self.k_min + self.p.len() as i64 - 1
    }

    pub fn core_is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn core(&self) -> CoreWindow {
        CoreWindow {
            k_min: self.k_min,
            p: self.p.clone(),
            q_odd: self.q_odd.clone(),
            r_odd: self.r_odd.clone(),
        }
    }

    #[inline]
    fn in_core(&self, k: i64) -> bool {
        k >= self.k_min && k <= self.k_max()
    }

    #[inline]
    fn tail_for(&self, k: i64) -> &CurvePoint {
        if k < self.k_min {
            &self.left_tail
        } else {
            &self.right_tail
        }
    }

    fn tail_p(&self, tail: &CurvePoint, k: i64) -> f64 {
        self.scale * if is_even(k) { tail.p0 } else { tail.p1 }
    }

    fn tail_q_odd(&self, tail: &CurvePoint) -> f64 {
        self.scale * periodic_coefficients(&self.curve, tail).2
    }

    fn tail_r(&self) -> f64 {
        self.scale / self.curve.a()
    }

    /// `p_k = A_{k-1,k}`.
    #[inline]
    pub fn p(&self, k: i64) -> f64 {
        if self.in_core(k) {
            self.p[(k - self.k_min) as usize]
        } else {
            self.tail_p(self.tail_for(k), k)
        }
    }

    /// `r_k = A_{k-2,k}` for odd `k`; zero for even `k`.
    #[inline]
    pub fn r(&self, k: i64) -> f64 {
        if is_even(k) {
            0.0
        } else if self.in_core(k) {
            self.r_odd[((k - self.k_min) / 2) as usize]
        } else {
            self.tail_r()
        }
    }

    /// `A_{k-2,k}`; same as [`Self::r`].
    #[inline]
    pub fn outer(&self, k: i64) -> f64 {
        self.r(k)
    }

    /// `q_k = A_{k,k}`.
    #[inline]
    pub fn q(&self, k: i64) -> f64 {
        if is_even(k) {
            self.p(k) * self.p(k + 1) / self.r(k + 1)
        } else if self.in_core(k) {
            self.q_odd[((k - self.k_min) / 2) as usize]
        } else {
            self.tail_q_odd(self.tail_for(k))
        }
    }

    /// Matrix entry `A_{ij}`.
    pub fn entry(&self, i: i64, j: i64) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        match hi - lo {
            0 => self.q(hi),
            1 => self.p(hi),
            2 => self.outer(hi),
            _ => 0.0,
        }
    }

    /// Grows the core so that it covers `[lo, hi]`, materializing tail values.
    pub fn expand_to(&mut self, lo: i64, hi: i64) {
        let (old_lo, old_hi) = (self.k_min, self.k_max());
        let (new_lo, new_hi) = if self.core_is_empty() {
            (align_even(lo.min(hi)), align_odd(hi.max(lo)))
        } else {
            (align_even(lo.min(old_lo)), align_odd(hi.max(old_hi)))
        };
        if !self.core_is_empty() && new_lo == old_lo && new_hi == old_hi {
            return;
        }
        let mut p = Vec::with_capacity((new_hi - new_lo + 1) as usize);
        let mut q = Vec::new();
        let mut r = Vec::new();
        for k in new_lo..=new_hi {
            p.push(self.p(k));
            if !is_even(k) {
                q.push(self.q(k));
                r.push(self.r(k));
            }
        }
        self.k_min = new_lo;
        self.p = p;
        self.q_odd = q;
        self.r_odd = r;
    }

    pub fn set_p(&mut self, k: i64, v: f64) -> Result<()> {
        check_coeff("p", k, v)?;
        self.expand_to(k, k);
        let i = (k - self.k_min) as usize;
        self.p[i] = v;
        Ok(())
    }

    pub fn set_q_odd(&mut self, k: i64, v: f64) -> Result<()> {
        if is_even(k) {
            return Err(Error::Structural(format!("q[{k}] is derived at even index")));
        }
        check_coeff("q", k, v)?;
        self.expand_to(k, k);
        let i = ((k - self.k_min) / 2) as usize;
        self.q_odd[i] = v;
        Ok(())
    }

    pub fn set_r(&mut self, k: i64, v: f64) -> Result<()> {
        if is_even(k) {
            return Err(Error::Structural(format!("r[{k}] must vanish at even index")));
        }
        check_coeff("r", k, v)?;
        if v.abs() < R_MIN {
            return Err(Error::Structural(format!("r[{k}] = {v} vanishes")));
        }
        self.expand_to(k, k);
        let i = ((k - self.k_min) / 2) as usize;
        self.r_odd[i] = v;
        Ok(())
    }

    fn block_matches(&self, tail: &CurvePoint, k_even: i64, tol: f64) -> bool {
        let k_odd = k_even + 1;
        (self.p(k_even) - self.tail_p(tail, k_even)).abs() <= tol
            && (self.p(k_odd) - self.tail_p(tail, k_odd)).abs() <= tol
            && (self.q(k_odd) - self.tail_q_odd(tail)).abs() <= tol
            && (self.r(k_odd) - self.tail_r()).abs() <= tol
    }

    /// Removes edge blocks of the core that agree with the tails within `tol`.
    pub fn absorb(&mut self, tol: f64) {
        let mut lo = 0usize;
        let mut hi = self.p.len();
        while hi - lo >= 2 && self.block_matches(&self.left_tail, self.k_min + lo as i64, tol) {
            lo += 2;
        }
        while hi - lo >= 2 && self.block_matches(&self.right_tail, self.k_min + hi as i64 - 2, tol) {
            hi -= 2;
        }
        if lo == 0 && hi == self.p.len() {
            return;
        }
        self.p = self.p[lo..hi].to_vec();
        self.q_odd = self.q_odd[lo / 2..hi / 2].to_vec();
        self.r_odd = self.r_odd[lo / 2..hi / 2].to_vec();
        self.k_min += lo as i64;
    }

    /// `S^s A S^{-s}` for even `s`: `Y_{ij} = A_{i-s, j-s}`.
    pub fn shift(&self, s: i64) -> Result<Self> {
        if !is_even(s) {
            return Err(Error::Structural(format!("shift {s} breaks the parity structure")));
        }
        let mut out = self.clone();
        out.k_min += s;
        Ok(out)
    }

    /// Same operator with every `p` negated.
    pub fn sign_flipped(&self) -> Self {
        let mut out = self.clone();
        out.left_tail = out.left_tail.negated();
        out.right_tail = out.right_tail.negated();
        out.p.iter_mut().for_each(|v| *v = -*v);
        out
    }

    /// Largest coefficient difference over `[lo, hi]`.
    pub fn coefficient_distance(&self, other: &Self, lo: i64, hi: i64) -> f64 {
        (lo..=hi)
            .map(|k| {
                (self.p(k) - other.p(k))
                    .abs()
                    .max((self.q(k) - other.q(k)).abs())
                    .max((self.r(k) - other.r(k)).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Window containing both cores, widened by `margin`.
    pub fn joint_window(&self, other: &Self, margin: i64) -> (i64, i64) {
        let lo = self.k_min.min(other.k_min) - margin;
        let hi = self.k_max().max(other.k_max()) + margin;
        (lo, hi.max(lo))
    }

    /// Nonzero entries of column `j`, as `(row, value)` pairs.
    pub fn column(&self, j: i64) -> Vec<(i64, f64)> {
        if is_even(j) {
            vec![(j - 1, self.p(j)), (j, self.q(j)), (j + 1, self.p(j + 1))]
        } else {
            vec![
                (j - 2, self.r(j)),
                (j - 1, self.p(j)),
                (j, self.q(j)),
                (j + 1, self.p(j + 1)),
                (j + 2, self.r(j + 2)),
            ]
        }
    }

    /// `y = A x` on the rows whose whole stencil lies inside the window of `x`.
    pub fn apply(&self, x: &IndexedVec) -> IndexedVec {
        let start = x.start + 2;
        let end = x.end() - 2;
        if end < start {
            return IndexedVec::zeros(start, 0);
        }
        let values = (start..=end)
            .map(|i| (-2..=2).map(|d| self.entry(i, i + d) * x.get(i + d)).sum())
            .collect();
        IndexedVec { start, values }
    }

    /// `y = A x` for a finitely supported `x` (zero outside its window).
    pub fn apply_finite(&self, x: &IndexedVec) -> IndexedVec {
        let start = x.start - 2;
        let len = x.values.len() + 4;
        let values = (0..len as i64)
            .map(|o| {
                let i = start + o;
                (-2..=2).map(|d| self.entry(i, i + d) * x.get(i + d)).sum()
            })
            .collect();
        IndexedVec { start, values }
    }

    /// Principal submatrix on `[lo, hi]`.
    pub fn dense_truncation(&self, lo: i64, hi: i64) -> DenseWindow {
        assert!(lo <= hi, "empty truncation window");
        let n = (hi - lo + 1) as usize;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let ki = lo + i as i64;
            for d in 0..=2usize {
                if i + d < n {
                    let v = self.entry(ki, ki + d as i64);
                    m[(i, i + d)] = v;
                    m[(i + d, i)] = v;
                }
            }
        }
        DenseWindow { lo, matrix: m }
    }

    fn band_truncation(&self, lo: i64, hi: i64) -> BandMatrix {
        let n = (hi - lo + 1) as usize;
        let mut b = BandMatrix::zeros(n, 2, 2);
        for i in 0..n {
            let ki = lo + i as i64;
            for j in i.saturating_sub(2)..=(i + 2).min(n - 1) {
                b.set(i, j, self.entry(ki, lo + j as i64));
            }
        }
        b
    }

    fn coefficient_scale(&self) -> f64 {
        let tail = [self.left_tail, self.right_tail]
            .iter()
            .map(|t| {
                let (r, q0, q1) = periodic_coefficients(&self.curve, t);
                self.scale * t.p0.abs().max(t.p1.abs()).max(r.abs()).max(q0.abs()).max(q1.abs())
            })
            .fold(0.0, f64::max);
        (self.k_min..=self.k_max())
            .map(|k| self.p(k).abs().max(self.q(k).abs()).max(self.r(k).abs()))
            .fold(tail, f64::max)
    }
}

/// A vector supported on the index window `[start, start + len)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedVec {
    pub start: i64,
    pub values: Vec<f64>,
}

impl IndexedVec {
    pub fn zeros(start: i64, len: usize) -> Self {
        Self {
            start,
            values: vec![0.0; len],
        }
    }

    pub fn unit(k: i64) -> Self {
        Self {
            start: k,
            values: vec![1.0],
        }
    }

    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64 - 1
    }

    /// Entry at `k`; zero outside the window.
    pub fn get(&self, k: i64) -> f64 {
        if k < self.start || k > self.end() {
            0.0
        } else {
            self.values[(k - self.start) as usize]
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Dense principal submatrix together with the index of its first row.
#[derive(Debug, Clone)]
pub struct DenseWindow {
    pub lo: i64,
    pub matrix: DMatrix<f64>,
}

impl DenseWindow {
    pub fn hi(&self) -> i64 {
        self.lo + self.matrix.nrows() as i64 - 1
    }

    pub fn at(&self, i: i64, j: i64) -> f64 {
        self.matrix[((i - self.lo) as usize, (j - self.lo) as usize)]
    }
}

const INV_OFFSETS: i64 = 4;

/// Entries of `A^{-1}` within distance 4 of the diagonal, for columns in a
/// window `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseBands {
    lo: i64,
    hi: i64,
    cols: Vec<[f64; 9]>,
    pad: usize,
    cond: f64,
}

impl InverseBands {
    pub fn window(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    /// Padding at which the extraction converged.
    pub fn pad(&self) -> usize {
        self.pad
    }

    /// Condition estimate of the final padded truncation.
    pub fn condition(&self) -> f64 {
        self.cond
    }

    /// `X_{ij}` for column `j` in the window and `|i - j| <= 4`.
    pub fn entry(&self, i: i64, j: i64) -> f64 {
        assert!(
            j >= self.lo && j <= self.hi && (i - j).abs() <= INV_OFFSETS,
            "inverse entry ({i}, {j}) outside extracted window [{}, {}]",
            self.lo,
            self.hi
        );
        self.cols[(j - self.lo) as usize][(i - j + INV_OFFSETS) as usize]
    }

    /// `X_{k-2,k}`: `rho_k` at even `k`, a structural zero at odd `k`.
    pub fn outer(&self, k: i64) -> f64 {
        self.entry(k - 2, k)
    }

    pub fn rho(&self, k: i64) -> f64 {
        self.outer(k)
    }

    /// `X_{k-1,k}`.
    pub fn pi(&self, k: i64) -> f64 {
        self.entry(k - 1, k)
    }

    /// `X_{k,k}`.
    pub fn sigma(&self, k: i64) -> f64 {
        self.entry(k, k)
    }

    /// Largest `|X_{ij} - X_{ji}|` with both indices in the window.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in self.lo..=self.hi {
            for d in 1..=INV_OFFSETS {
                let i = j + d;
                if i <= self.hi {
                    worst = worst.max((self.entry(i, j) - self.entry(j, i)).abs());
                }
            }
        }
        worst
    }

    /// Largest entry at distance 3 or 4 from the diagonal.
    pub fn beyond_band(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in self.lo..=self.hi {
            for d in [-4, -3, 3, 4] {
                worst = worst.max(self.entry(j + d, j).abs());
            }
        }
        worst
    }

    /// Largest `|X_{k-2,k}|` over odd `k`.
    pub fn structural_zero(&self) -> f64 {
        (self.lo..=self.hi)
            .filter(|k| !is_even(*k))
            .map(|k| self.outer(k).abs())
            .fold(0.0, f64::max)
    }

    fn max_diff(&self, other: &Self) -> f64 {
        self.cols
            .iter()
            .zip(&other.cols)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

const MAX_PAD_DOUBLINGS: u32 = 6;

/// Truncation edges at which a structurally degenerate tail (for instance
/// `p_1 = 0`) leaves an exactly singular principal block are avoided by
/// trying the other parities of the window ends.
const WINDOW_ALIGNMENTS: [(i64, i64); 3] = [(0, 0), (1, 1), (1, 0)];
const COND_COMFORT: f64 = 1e8;

fn padded_solve(
    op: &SmpOperator,
    lo: i64,
    hi: i64,
    pad: usize,
    tol: &Tolerances,
    exec: Execution,
) -> Result<InverseBands> {
    let mut best: Option<(f64, i64, BandLu)> = None;
    for (shift_lo, shift_hi) in WINDOW_ALIGNMENTS {
        let wlo = align_even(lo - pad as i64 - INV_OFFSETS) - shift_lo;
        let whi = align_odd(hi + pad as i64 + INV_OFFSETS) + shift_hi;
        let band = op.band_truncation(wlo, whi);
        let norm = band.norm1();
        let Ok(lu) = band.factor() else { continue };
        let cond = norm * lu.inverse_norm1_estimate_symmetric();
        if !cond.is_finite() {
            continue;
        }
        let better = best.as_ref().is_none_or(|b| cond < b.0);
        if better {
            best = Some((cond, wlo, lu));
        }
        if cond <= COND_COMFORT {
            break;
        }
    }
    let (cond, wlo, lu) = best.ok_or(Error::Singular {
        cond: f64::INFINITY,
    })?;
    if cond > tol.cond_max {
        return Err(Error::Singular { cond });
    }
    let cols = map_indexed(exec, (hi - lo + 1) as usize, |c| {
        let j = lo + c as i64;
        let x = lu.solve_unit((j - wlo) as usize);
        let mut col = [0.0; 9];
        for (o, slot) in col.iter_mut().enumerate() {
            let i = j + o as i64 - INV_OFFSETS;
            *slot = x[(i - wlo) as usize];
        }
        col
    });
    Ok(InverseBands {
        lo,
        hi,
        cols,
        pad,
        cond,
    })
}

/// Bands of `A^{-1}` for columns in `[lo, hi]` by padded banded solves, with
/// the padding doubled until two successive extractions agree.
pub fn inverse_band_entries(
    op: &SmpOperator,
    lo: i64,
    hi: i64,
    tol: &Tolerances,
) -> Result<InverseBands> {
    inverse_band_entries_with(op, lo, hi, tol, Execution::default())
}

pub fn inverse_band_entries_with(
    op: &SmpOperator,
    lo: i64,
    hi: i64,
    tol: &Tolerances,
    exec: Execution,
) -> Result<InverseBands> {
    if lo > hi {
        return Err(Error::Domain(format!("empty inverse window [{lo}, {hi}]")));
    }
    let mut pad = tol.pad.max(8);
    let mut prev = padded_solve(op, lo, hi, pad, tol, exec)?;
    for _ in 0..MAX_PAD_DOUBLINGS {
        pad *= 2;
        let next = padded_solve(op, lo, hi, pad, tol, exec)?;
        let diff = prev.max_diff(&next);
        if diff <= tol.inv {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NotConverged(format!(
        "inverse bands did not settle to {:e} with padding up to {pad}",
        tol.inv
    )))
}

/// `tau A = -S^{-1} A^{-1} S`, read back as an SMP operator.
///
/// The tails map as `tau(s A(p)) = (a / s) A(-p1, -p0)`. Core entries that
/// agree with the new tails within `tol.inv` are absorbed.
pub fn tau_involution(op: &SmpOperator, tol: &Tolerances) -> Result<SmpOperator> {
    tau_involution_with(op, tol, Execution::default())
}

pub fn tau_involution_with(
    op: &SmpOperator,
    tol: &Tolerances,
    exec: Execution,
) -> Result<SmpOperator> {
    let margin = 8;
    let lo = align_even(op.k_min() - margin);
    let hi = align_odd(op.k_max().max(op.k_min()) + margin);
    let inv = inverse_band_entries_with(op, lo, hi + 2, tol, exec)?;
    let mut p = Vec::with_capacity((hi - lo + 1) as usize);
    let mut q = Vec::new();
    let mut r = Vec::new();
    for k in lo..=hi {
        p.push(-inv.pi(k + 1));
        if !is_even(k) {
            q.push(-inv.sigma(k + 1));
            r.push(-inv.outer(k + 1));
        }
    }
    let a = op.curve().a();
    let mut out = SmpOperator::with_scale(
        *op.curve(),
        op.left_tail().reflected(),
        op.right_tail().reflected(),
        a / op.scale(),
        CoreWindow {
            k_min: lo,
            p,
            q_odd: q,
            r_odd: r,
        },
        tol.curve,
    )?;
    out.absorb(tol.inv.max(tol.absorb));
    Ok(out)
}

/// `e~_0 = (p_0 e_0 + r_1 e_1) / a_0` with `a_0 = sqrt(p_0^2 + r_1^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeE0 {
    pub c0: f64,
    pub c1: f64,
    pub a0: f64,
}

impl TildeE0 {
    pub fn as_vec(&self) -> IndexedVec {
        IndexedVec {
            start: 0,
            values: vec![self.c0, self.c1],
        }
    }
}

pub fn tilde_e0(op: &SmpOperator) -> TildeE0 {
    let (p0, r1) = (op.p(0), op.r(1));
    let a0 = p0.hypot(r1);
    TildeE0 {
        c0: p0 / a0,
        c1: r1 / a0,
        a0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CyclicityReport {
    pub dimension: usize,
    pub krylov_rank: usize,
    pub interior_dimension: usize,
    pub interior_rank: usize,
    pub interior_deficit: usize,
}

pub const CYCLIC_RANK_TOL: f64 = 1e-8;
pub const CYCLIC_BOUNDARY: usize = 4;

/// Numerical rank of the extended Krylov space generated from `e_{-1}` and
/// `e~_0` by `A` and `A^{-1}` on the truncation to `[-n, n]`.
pub fn cyclicity_check(op: &SmpOperator, n: usize) -> Result<CyclicityReport> {
    let lo = -(n as i64);
    let hi = n as i64;
    let dim = 2 * n + 1;
    let dense = op.dense_truncation(lo, hi).matrix;
    // A^{-1} is itself banded, so its restriction to the window is exact
    let tol = Tolerances::default();
    let inv = inverse_band_entries(op, lo, hi, &tol)?;
    let mut inv_dense = DMatrix::zeros(dim, dim);
    for j in lo..=hi {
        for i in (j - 2).max(lo)..=(j + 2).min(hi) {
            inv_dense[((i - lo) as usize, (j - lo) as usize)] = inv.entry(i, j);
        }
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(dim);
    let orthonormalize = |basis: &Vec<DVector<f64>>, mut w: DVector<f64>| -> Option<DVector<f64>> {
        let before = w.norm();
        if before == 0.0 {
            return None;
        }
        for _ in 0..2 {
            for q in basis {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        let after = w.norm();
        (after > CYCLIC_RANK_TOL * before).then(|| w / after)
    };
    let mut e_m1 = DVector::zeros(dim);
    e_m1[(-1 - lo) as usize] = 1.0;
    let t = tilde_e0(op);
    let mut e0 = DVector::zeros(dim);
    e0[(-lo) as usize] = t.c0;
    e0[(1 - lo) as usize] = t.c1;
    let mut seeds = Vec::new();
    for s in [e_m1, e0] {
        if let Some(v) = orthonormalize(&basis, s) {
            basis.push(v.clone());
            seeds.push(v);
        }
    }
    // four chains: {A, A^{-1}} x {seed}
    let mut chains: Vec<(bool, DVector<f64>)> = Vec::new();
    for s in &seeds {
        chains.push((true, s.clone()));
        chains.push((false, s.clone()));
    }
    let steps = n / 2;
    for _ in 0..steps {
        for chain in chains.iter_mut() {
            if basis.len() == dim {
                break;
            }
            let w = if chain.0 {
                &dense * &chain.1
            } else {
                &inv_dense * &chain.1
            };
            if let Some(v) = orthonormalize(&basis, w) {
                basis.push(v.clone());
                chain.1 = v;
            }
        }
    }
    let krylov_rank = basis.len();
    let interior_lo = CYCLIC_BOUNDARY;
    let interior_dim = dim.saturating_sub(2 * CYCLIC_BOUNDARY);
    let interior_rank = if krylov_rank == 0 || interior_dim == 0 {
        0
    } else {
        let mut q = DMatrix::zeros(interior_dim, krylov_rank);
        for (c, v) in basis.iter().enumerate() {
            for r in 0..interior_dim {
                q[(r, c)] = v[interior_lo + r];
            }
        }
        let sv = q.singular_values();
        let top = sv.max();
        sv.iter().filter(|s| **s > CYCLIC_RANK_TOL * top).count()
    };
    Ok(CyclicityReport {
        dimension: dim,
        krylov_rank,
        interior_dimension: interior_dim,
        interior_rank,
        interior_deficit: interior_dim.saturating_sub(interior_rank),
    })
}

impl SmpOperator {
    /// Scale-aware tolerance helper: `tol` relative to the largest coefficient.
    pub fn relative_tol(&self, tol: f64) -> f64 {
        tol * self.coefficient_scale().max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_periodic_smp, random_curve_point};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_op() -> SmpOperator {
        let c = CurveParams::new(1.0, 0.0).unwrap();
        build_periodic_smp(&c, &CurvePoint::new(1.0, 0.0), &Tolerances::default()).unwrap()
    }

    fn perturbed(seed: u64) -> SmpOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = CurveParams::new(rng.gen_range(0.5..2.0), rng.gen_range(-1.0..1.0)).unwrap();
        let l = random_curve_point(&c, &mut rng);
        let r = random_curve_point(&c, &mut rng);
        let mut op = SmpOperator::new(c, l, r, CoreWindow::empty(0)).unwrap();
        for k in -4..=5 {
            op.set_p(k, op.p(k) + rng.gen_range(-0.2..0.2)).unwrap();
            if k % 2 != 0 {
                op.set_q_odd(k, op.q(k) + rng.gen_range(-0.2..0.2)).unwrap();
                op.set_r(k, op.r(k) * (1.0 + rng.gen_range(-0.2..0.2))).unwrap();
            }
        }
        op
    }

    #[test]
    fn periodic_columns() {
        let op = unit_op();
        assert_eq!(op.column(0), vec![(-1, 1.0), (0, 0.0), (1, 0.0)]);
        assert_eq!(
            op.column(1),
            vec![(-1, 1.0), (0, 0.0), (1, 0.0), (2, 1.0), (3, 1.0)]
        );
    }

    #[test]
    fn columns_are_symmetric() {
        let op = perturbed(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let i = rng.gen_range(-12i64..12);
            let j = i + rng.gen_range(-2i64..=2);
            let cj: f64 = op.column(j).iter().find(|(r, _)| *r == i).map(|e| e.1).unwrap_or(0.0);
            let ci: f64 = op.column(i).iter().find(|(r, _)| *r == j).map(|e| e.1).unwrap_or(0.0);
            assert_eq!(ci, cj);
        }
    }

    #[test]
    fn apply_unit_reproduces_column() {
        let op = perturbed(1);
        let y = op.apply_finite(&IndexedVec::unit(3));
        for (row, v) in op.column(3) {
            assert_eq!(y.get(row), v);
        }
        let mut x = IndexedVec::zeros(-10, 21);
        x.values[10] = 1.0;
        let y = op.apply(&x);
        assert_eq!((y.start, y.end()), (-8, 8));
        for (row, v) in op.column(0) {
            assert_eq!(y.get(row), v);
        }
    }

    #[test]
    fn dense_pattern() {
        let op = perturbed(4);
        let d = op.dense_truncation(-11, 12);
        for i in -11..=12 {
            for j in -11..=12 {
                assert_eq!(d.at(i, j), d.at(j, i));
                if (i - j).abs() > 2 {
                    assert_eq!(d.at(i, j), 0.0);
                }
            }
        }
        for n in -5..5 {
            assert_eq!(d.at(2 * n, 2 * n + 2), 0.0);
            assert!(d.at(2 * n - 1, 2 * n + 1).abs() > 0.0);
        }
    }

    #[test]
    fn expand_and_absorb_are_inverse() {
        let op = perturbed(5);
        let mut wide = op.clone();
        wide.expand_to(-20, 21);
        assert_eq!(wide.k_min(), -20);
        assert_eq!(wide.coefficient_distance(&op, -30, 30), 0.0);
        wide.absorb(0.0);
        assert_eq!(wide, op);
    }

    #[test]
    fn empty_core_keeps_split_point() {
        let c = CurveParams::new(1.0, 0.5).unwrap();
        let l = CurvePoint::on_curve(&c, 0.0, 1.0, 1e-10).unwrap();
        let p1 = crate::spectral::curve_solve_p1(&c, 0.5)[0];
        let r = CurvePoint::new(0.5, p1);
        let op = SmpOperator::new(c, l, r, CoreWindow::empty(4)).unwrap();
        assert_eq!(op.p(3), 1.0);
        assert_eq!(op.p(4), 0.5);
        let mut w = op.clone();
        w.expand_to(0, 9);
        assert_eq!(w.coefficient_distance(&op, -5, 15), 0.0);
    }

    #[test]
    fn rejects_bad_structure() {
        let c = CurveParams::new(1.0, 0.0).unwrap();
        let t = CurvePoint::new(1.0, 0.0);
        let bad_r = CoreWindow {
            k_min: 0,
            p: vec![1.0, 0.0],
            q_odd: vec![0.0],
            r_odd: vec![0.0],
        };
        assert!(SmpOperator::new(c, t, t, bad_r).is_err());
        let odd_start = CoreWindow {
            k_min: 1,
            p: vec![1.0, 0.0],
            q_odd: vec![0.0],
            r_odd: vec![1.0],
        };
        assert!(SmpOperator::new(c, t, t, odd_start).is_err());
        let off = CurvePoint::new(0.5_f64.sqrt(), 0.5_f64.sqrt());
        assert!(matches!(
            SmpOperator::new(c, off, t, CoreWindow::empty(0)),
            Err(Error::OffCurve { .. })
        ));
        let mut op = unit_op();
        assert!(op.set_q_odd(2, 1.0).is_err());
        assert!(op.set_r(3, 1e-14).is_err());
        assert!(op.set_p(3, 1e7).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let op = perturbed(6);
        let back = SmpOperator::from_json(&op.to_json()).unwrap();
        assert_eq!(back, op);
        for k in -10..10 {
            assert_eq!(back.p(k).to_bits(), op.p(k).to_bits());
        }
        let v: serde_json::Value = serde_json::from_str(&op.to_json()).unwrap();
        assert!(v["core"]["q_odd"].is_array());
        assert!(v.get("scale").is_none());
    }

    #[test]
    fn periodic_inverse_bands_follow_magic_formula() {
        let op = unit_op();
        let inv = inverse_band_entries(&op, -20, 21, &Tolerances::default()).unwrap();
        for k in -20..=21 {
            if k % 2 == 0 {
                assert!((inv.rho(k) + 1.0).abs() < 1e-10);
            }
            assert!((inv.pi(k) - op.p(k)).abs() < 1e-10);
            assert!(inv.sigma(k).abs() < 1e-10);
        }
        assert!(inv.structural_zero() < 1e-10);
        assert!(inv.beyond_band() < 1e-10);
    }

    #[test]
    fn inverse_bands_invert_on_interior() {
        let op = perturbed(7);
        let inv = inverse_band_entries(&op, -16, 17, &Tolerances::default()).unwrap();
        for j in -12..=13 {
            for i in j - 2..=j + 2 {
                let s: f64 = (i - 2..=i + 2)
                    .filter(|m: &i64| (m - j).abs() <= 4)
                    .map(|m| op.entry(i, m) * inv.entry(m, j))
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((s - target).abs() < 1e-10, "({i},{j}) {s}");
            }
        }
        assert!(inv.structural_zero() < 1e-10);
        assert!(inv.beyond_band() < 1e-10);
    }

    #[test]
    fn parallel_and_sequential_inverse_agree() {
        let op = perturbed(8);
        let t = Tolerances::default();
        let a = inverse_band_entries_with(&op, -10, 11, &t, Execution::Sequential).unwrap();
        let b = inverse_band_entries_with(&op, -10, 11, &t, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tau_of_periodic_has_unit_outer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = CurveParams::new(1.7, 0.4).unwrap();
        let p = random_curve_point(&c, &mut rng);
        let op = build_periodic_smp(&c, &p, &Tolerances::default()).unwrap();
        let t = tau_involution(&op, &Tolerances::default()).unwrap();
        assert!(t.core_is_empty());
        assert!((t.r(1) - 1.0).abs() < 1e-10);
        assert!((t.scale() - 1.7).abs() < 1e-15);
        let tt = tau_involution(&t, &Tolerances::default()).unwrap();
        assert!(tt.coefficient_distance(&op, -10, 10) < 1e-9);
    }

    #[test]
    fn tau_twice_is_shift_by_minus_two() {
        let op = perturbed(10);
        let t = Tolerances::default();
        let tt = tau_involution(&tau_involution(&op, &t).unwrap(), &t).unwrap();
        let expected = op.shift(-2).unwrap();
        let (lo, hi) = tt.joint_window(&expected, 6);
        assert!(tt.coefficient_distance(&expected, lo, hi) < 1e-9);
    }

    #[test]
    fn tilde_e0_cases() {
        let c = CurveParams::new(1.0, 0.0).unwrap();
        let t = CurvePoint::new(1.0, 0.0);
        let mut op = SmpOperator::periodic(c, t);
        op.set_p(0, 0.0).unwrap();
        op.set_r(1, -2.0).unwrap();
        let e = tilde_e0(&op);
        assert_eq!((e.c0, e.c1, e.a0), (0.0, -1.0, 2.0));
        op.set_p(0, 1.0).unwrap();
        op.set_r(1, 1.0).unwrap();
        let e = tilde_e0(&op);
        assert!((e.a0 - 2f64.sqrt()).abs() < 1e-15);
        assert!((e.c0 - e.c1).abs() < 1e-16 && (e.as_vec().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cyclic_for_periodic_and_perturbed() {
        let rep = cyclicity_check(&unit_op(), 60).unwrap();
        assert_eq!(rep.interior_deficit, 0, "{rep:?}");
        let rep = cyclicity_check(&perturbed(11), 60).unwrap();
        assert_eq!(rep.interior_deficit, 0, "{rep:?}");
    }
}
