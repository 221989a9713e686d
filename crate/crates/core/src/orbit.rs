//! Orbits of the curve map and their closure diagnosis.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::curve_map;
use crate::parallel::{map_slice, Execution};
use crate::spectral::{check_on_curve, curve_residual, CurveParams, CurvePoint};

pub const CLOSURE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Closure {
    Periodic { period: usize },
    NotClosed { min_return_distance: f64 },
}

impl std::fmt::Display for Closure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Closure::Periodic { period } => write!(f, "periodic T={period}"),
            Closure::NotClosed {
                min_return_distance,
            } => write!(f, "not closed, min return d={min_return_distance:e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    pub params: CurveParams,
    pub points: Vec<CurvePoint>,
    pub residuals: Vec<f64>,
    pub closure: Closure,
}

impl Orbit {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

/// `n` iterates of the curve map from `p`; no reprojection onto the curve.
pub fn orbit(
    params: &CurveParams,
    p: &CurvePoint,
    n: usize,
    closure_tol: f64,
    tol_curve: f64,
) -> Result<Orbit> {
    check_on_curve(params, p, tol_curve)?;
    let mut points = Vec::with_capacity(n + 1);
    points.push(*p);
    for i in 0..n {
        points.push(curve_map(params, &points[i]));
    }
    let residuals = points.iter().map(|x| curve_residual(params, x)).collect();
    let closure = diagnose(&points, closure_tol);
    Ok(Orbit {
        params: *params,
        points,
        residuals,
        closure,
    })
}

/// Smallest `T` with `|x_T - x_0| <= tol` that repeats over `3T` further steps.
pub fn diagnose(points: &[CurvePoint], tol: f64) -> Closure {
    let n = points.len().saturating_sub(1);
    let start = points[0];
    let mut min_d = f64::INFINITY;
    for t in 1..=n {
        let d = points[t].distance(&start);
        min_d = min_d.min(d);
        if d <= tol && 4 * t <= n && (0..3 * t).all(|i| points[i + t].distance(&points[i]) <= tol) {
            return Closure::Periodic { period: t };
        }
    }
    Closure::NotClosed {
        min_return_distance: min_d,
    }
}

/// Mean turning per step about the origin, in turns.
pub fn rotation_number(params: &CurveParams, p: &CurvePoint, n: usize) -> f64 {
    let mut x = *p;
    let mut total = 0.0;
    for _ in 0..n {
        let y = curve_map(params, &x);
        let cross = x.p0 * y.p1 - x.p1 * y.p0;
        let dot = x.p0 * y.p0 + x.p1 * y.p1;
        total += cross.atan2(dot);
        x = y;
    }
    (total / (n as f64 * 2.0 * std::f64::consts::PI)).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitRow {
    pub n: usize,
    pub p0: f64,
    pub p1: f64,
    pub residual: f64,
}

pub fn write_csv<W: Write>(orbit: &Orbit, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (i, (p, r)) in orbit.points.iter().zip(&orbit.residuals).enumerate() {
        w.serialize(OrbitRow {
            n: i,
            p0: p.p0,
            p1: p.p1,
            residual: *r,
        })
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<OrbitRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitJob {
    pub params: CurveParams,
    pub start: CurvePoint,
    pub steps: usize,
}

/// Independent orbits, evaluated concurrently when requested.
pub fn orbit_batch(exec: Execution, jobs: &[OrbitJob], closure_tol: f64, tol_curve: f64) -> Vec<Result<Orbit>> {
    map_slice(exec, jobs, |j| orbit(&j.params, &j.start, j.steps, closure_tol, tol_curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::curve_solve_p1;

    #[test]
    fn b_zero_has_period_four() {
        let c = CurveParams::new(2.0, 0.0).unwrap();
        let p1 = curve_solve_p1(&c, 0.3)[0];
        let o = orbit(&c, &CurvePoint::new(0.3, p1), 40, CLOSURE_TOL, 1e-10).unwrap();
        assert_eq!(o.closure, Closure::Periodic { period: 4 });
        assert_eq!(o.closure.to_string(), "periodic T=4");
    }

    #[test]
    fn too_short_orbits_are_not_confirmed() {
        let c = CurveParams::new(1.0, 0.0).unwrap();
        let o = orbit(&c, &CurvePoint::new(1.0, 0.0), 10, CLOSURE_TOL, 1e-10).unwrap();
        assert!(matches!(o.closure, Closure::NotClosed { .. }));
    }

    #[test]
    fn csv_round_trip() {
        let c = CurveParams::new(1.2, 0.7).unwrap();
        let p1 = curve_solve_p1(&c, 0.1)[1];
        let o = orbit(&c, &CurvePoint::new(0.1, p1), 25, CLOSURE_TOL, 1e-10).unwrap();
        let mut buf = Vec::new();
        write_csv(&o, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("n,p0,p1,residual\n"));
        let rows = read_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 26);
        for (row, p) in rows.iter().zip(&o.points) {
            assert_eq!((row.p0, row.p1), (p.p0, p.p1));
        }
    }

    #[test]
    fn rotation_number_at_b_zero() {
        let c = CurveParams::new(1.0, 0.0).unwrap();
        assert!((rotation_number(&c, &CurvePoint::new(1.0, 0.0), 100) - 0.25).abs() < 1e-15);
    }
}
