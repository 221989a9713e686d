//! Composite Gauss–Legendre quadrature refined by panel doubling.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on `P_n` from the Chebyshev-like initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                if n == 1 {
                    p1 = x;
                    p0 = 1.0;
                } else {
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            if n == 1 {
                x = 0.0;
                dp = 1.0;
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = if n == 1 { 2.0 } else { 2.0 / ((1.0 - x * x) * dp * dp) };
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    fn panel<F: Fn(f64) -> Complex64>(&self, f: &F, a: f64, b: f64) -> Complex64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| f(mid + half * x) * *w)
            .sum::<Complex64>()
            * half
    }

    pub fn composite<F: Fn(f64) -> Complex64>(&self, f: &F, a: f64, b: f64, panels: usize) -> Complex64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|i| self.panel(f, a + i as f64 * h, a + (i + 1) as f64 * h))
            .sum()
    }
}

pub const QUAD_ORDER: usize = 20;
pub const QUAD_REL_TOL: f64 = 1e-12;
pub const QUAD_MAX_REFINE: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<T> {
    pub value: T,
    /// Relative change produced by the last halving of the panel width.
    pub last_change: f64,
    pub panels: usize,
}

/// Doubles the number of panels until the relative change drops below `tol`.
pub fn integrate_complex<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<QuadResult<Complex64>> {
    let gl = GaussLegendre::new(QUAD_ORDER);
    let mut panels = 1usize;
    let mut prev = gl.composite(&f, a, b, panels);
    for _ in 0..QUAD_MAX_REFINE {
        panels *= 2;
        let next = gl.composite(&f, a, b, panels);
        let change = (next - prev).norm() / next.norm().max(f64::MIN_POSITIVE);
        if !next.re.is_finite() || !next.im.is_finite() {
            return Err(Error::NotConverged("non-finite quadrature value".into()));
        }
        if change <= tol {
            return Ok(QuadResult {
                value: next,
                last_change: change,
                panels,
            });
        }
        prev = next;
    }
    Err(Error::NotConverged(format!(
        "quadrature did not reach relative change {tol:e} after {QUAD_MAX_REFINE} refinements"
    )))
}

pub fn integrate_real<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<QuadResult<f64>> {
    let r = integrate_complex(|x| Complex64::new(f(x), 0.0), a, b, tol)?;
    Ok(QuadResult {
        value: r.value.re,
        last_change: r.last_change,
        panels: r.panels,
    })
}
