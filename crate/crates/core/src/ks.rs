//! Killip–Simon functionals built from the bands of `V(A) = aA + b - A^{-1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::flow_step;
use crate::smp::{inverse_band_entries, SmpOperator};
use crate::tol::Tolerances;

/// Sums run over the core widened by this many sites on each side.
pub const KS_MARGIN: i64 = 8;
const ROUTE_TOL: f64 = 1e-12;

/// Bands of `V(A)` on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VBandDecomposition {
    pub lo: i64,
    pub hi: i64,
    /// `<V e_j, e_{j-2}>`
    pub v1: Vec<f64>,
    /// `<V e_j, e_{j-1}>`
    pub v01: Vec<f64>,
    /// `<V e_j, e_j>`
    pub v00: Vec<f64>,
    /// Largest `|<V e_j, e_{j-1}> - <V e_{j-1}, e_j>|`.
    pub asymmetry: f64,
}

impl VBandDecomposition {
    fn idx(&self, j: i64) -> usize {
        assert!(j >= self.lo && j <= self.hi, "band index {j} outside [{}, {}]", self.lo, self.hi);
        (j - self.lo) as usize
    }

    pub fn v1_at(&self, j: i64) -> f64 {
        self.v1[self.idx(j)]
    }

    pub fn v01_at(&self, j: i64) -> f64 {
        self.v01[self.idx(j)]
    }

    pub fn v00_at(&self, j: i64) -> f64 {
        self.v00[self.idx(j)]
    }

    /// `[[v1_{2j}, 0], [v01_{2j}, v1_{2j+1}]]`
    pub fn frak_v(&self, j: i64) -> [[f64; 2]; 2] {
        [
            [self.v1_at(2 * j), 0.0],
            [self.v01_at(2 * j), self.v1_at(2 * j + 1)],
        ]
    }

    /// `[[v00_{2j}, v01_{2j+1}], [v01_{2j+1}, v00_{2j+1}]]`
    pub fn frak_w(&self, j: i64) -> [[f64; 2]; 2] {
        let off = self.v01_at(2 * j + 1);
        [[self.v00_at(2 * j), off], [off, self.v00_at(2 * j + 1)]]
    }
}

pub fn v_decomposition(
    op: &SmpOperator,
    lo: i64,
    hi: i64,
    tol: &Tolerances,
) -> Result<VBandDecomposition> {
    let inv = inverse_band_entries(op, lo - 1, hi, tol)?;
    let (a, b) = (op.curve().a(), op.curve().b());
    let mut out = VBandDecomposition {
        lo,
        hi,
        v1: Vec::new(),
        v01: Vec::new(),
        v00: Vec::new(),
        asymmetry: 0.0,
    };
    for j in lo..=hi {
        out.v1.push(a * op.outer(j) - inv.outer(j));
        out.v01.push(a * op.p(j) - inv.pi(j));
        out.v00.push(a * op.q(j) + b - inv.sigma(j));
        out.asymmetry = out
            .asymmetry
            .max((inv.entry(j - 1, j) - inv.entry(j, j - 1)).abs());
    }
    Ok(out)
}

/// `x^2 - 1 - log x^2`.
pub fn log_term(x: f64, index: i64) -> Result<f64> {
    if x == 0.0 {
        return Err(Error::DivergentLog { index });
    }
    Ok(x * x - 1.0 - 2.0 * x.abs().ln())
}

fn full_window(op: &SmpOperator) -> (i64, i64) {
    let hi = op.k_max().max(op.k_min());
    (op.k_min() - KS_MARGIN, hi + KS_MARGIN)
}

fn ks_full_on(v: &VBandDecomposition) -> Result<f64> {
    let mut s = 0.0;
    for j in v.lo..=v.hi {
        let (x00, x01) = (v.v00_at(j), v.v01_at(j));
        s += 0.5 * x00 * x00 + x01 * x01 + log_term(v.v1_at(j), j)?;
    }
    Ok(s)
}

/// `H(A) = 1/2 tr (v^(0))^2 + sum_j (v1_j^2 - 1 - log v1_j^2)`.
pub fn ks_full(op: &SmpOperator, tol: &Tolerances) -> Result<f64> {
    ks_full_with_margin(op, KS_MARGIN, tol)
}

pub fn ks_full_with_margin(op: &SmpOperator, margin: i64, tol: &Tolerances) -> Result<f64> {
    let (lo, hi) = full_window(op);
    let extra = margin - KS_MARGIN;
    let v = v_decomposition(op, lo - extra, hi + extra, tol)?;
    ks_full_on(&v)
}

fn half_hi(op: &SmpOperator, margin: i64) -> i64 {
    let top = op.k_max().max(op.k_min()).max(0) + margin;
    top + (top + 1).rem_euclid(2)
}

/// Both evaluations of the half-axis functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfRoutes {
    pub termwise: f64,
    pub blocks: f64,
}

fn eq2_on(v: &VBandDecomposition, hi: i64) -> Result<f64> {
    let (v10, v11) = (v.v1_at(0), v.v1_at(1));
    let mut s = 0.5 * (log_term(v10, 0)? + log_term(v11, 1)?) + 0.5 * v.v01_at(0).powi(2);
    for j in 2..=hi {
        s += log_term(v.v1_at(j), j)?;
    }
    for j in 1..=hi {
        s += v.v01_at(j).powi(2);
    }
    for j in 0..=hi {
        s += 0.5 * v.v00_at(j).powi(2);
    }
    Ok(s)
}

/// `1/2 sum_j { tr w_j^2 + tr v_j^T v_j + tr v_{j+1} v_{j+1}^T - 4 - log prod v1^2 }`
/// over block indices `j_lo ..= j_hi`.
pub fn blocks_trace_form(v: &VBandDecomposition, j_lo: i64, j_hi: i64) -> Result<f64> {
    let frob = |m: [[f64; 2]; 2]| m.iter().flatten().map(|x| x * x).sum::<f64>();
    let mut s = 0.0;
    for j in j_lo..=j_hi {
        let w = v.frak_w(j);
        let mut logs = 0.0;
        for l in 0..4 {
            let x = v.v1_at(2 * j + l);
            if x == 0.0 {
                return Err(Error::DivergentLog { index: 2 * j + l });
            }
            logs += 2.0 * x.abs().ln();
        }
        s += 0.5 * (frob(w) + frob(v.frak_v(j)) + frob(v.frak_v(j + 1)) - 4.0 - logs);
    }
    Ok(s)
}

pub fn ks_half_routes(op: &SmpOperator, tol: &Tolerances) -> Result<HalfRoutes> {
    ks_half_routes_with_margin(op, KS_MARGIN, tol)
}

pub fn ks_half_routes_with_margin(
    op: &SmpOperator,
    margin: i64,
    tol: &Tolerances,
) -> Result<HalfRoutes> {
    let hi = half_hi(op, margin);
    let v = v_decomposition(op, 0, hi + 2, tol)?;
    let termwise = eq2_on(&v, hi)?;
    let blocks = blocks_trace_form(&v, 0, (hi - 1) / 2)?;
    Ok(HalfRoutes { termwise, blocks })
}

/// The half-axis functional `H_+(A)`; the termwise and block evaluations
/// must agree.
pub fn ks_half(op: &SmpOperator, tol: &Tolerances) -> Result<f64> {
    let r = ks_half_routes(op, tol)?;
    let gap = (r.termwise - r.blocks).abs();
    if gap > ROUTE_TOL * r.termwise.abs().max(1.0) {
        return Err(Error::Structural(format!(
            "half-axis functional routes disagree by {gap:e}"
        )));
    }
    Ok(r.termwise)
}

/// One-step decrement `delta_J H_+(A)`, read from the bands of `J A` at
/// indices -1, 0, 1.
pub fn delta_half(op: &SmpOperator, tol: &Tolerances) -> Result<f64> {
    let a1 = flow_step(op, tol)?;
    delta_half_of_flowed(&a1, tol)
}

fn delta_half_of_flowed(a1: &SmpOperator, tol: &Tolerances) -> Result<f64> {
    let (a, b) = (a1.curve().a(), a1.curve().b());
    let inv = inverse_band_entries(a1, -2, 1, tol)?;
    let (x, y) = (a * a1.r(-1), a * a1.r(1));
    if x == 0.0 || y == 0.0 {
        return Err(Error::DivergentLog {
            index: if x == 0.0 { -1 } else { 1 },
        });
    }
    let outer = 0.5 * (log_term(x, -1)? + log_term(y, 1)?);
    let first = 0.5 * ((a * a1.p(-1) - inv.pi(-1)).powi(2) + (a * a1.p(0) - inv.pi(0)).powi(2));
    let diag = 0.5 * (a * a1.q(-1) + b - inv.sigma(-1)).powi(2);
    Ok(outer + first + diag)
}

/// `|H_+(A) - H_+(J A) - delta_J H_+(A)|`.
pub fn main_lemma_residual(op: &SmpOperator, tol: &Tolerances) -> Result<f64> {
    Ok(report(op, tol)?.main_lemma_residual)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "H_plus")]
    pub h_plus: f64,
    pub delta: f64,
    pub main_lemma_residual: f64,
    pub window: [i64; 2],
}

/// All functionals of `A` in one pass.
pub fn report(op: &SmpOperator, tol: &Tolerances) -> Result<KsReport> {
    let h = ks_full(op, tol)?;
    let h_plus = ks_half(op, tol)?;
    let a1 = flow_step(op, tol)?;
    let h_plus_1 = ks_half(&a1, tol)?;
    let delta = delta_half_of_flowed(&a1, tol)?;
    let (lo, hi) = full_window(op);
    Ok(KsReport {
        h,
        h_plus,
        delta,
        main_lemma_residual: (h_plus - h_plus_1 - delta).abs(),
        window: [lo, hi],
    })
}
