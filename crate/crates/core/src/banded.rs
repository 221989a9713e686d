//! LU factorization with partial pivoting for square band matrices.
//!
//! Row `i` keeps columns `i - kl ..= i + kl + ku`; the extra `kl`
//! superdiagonals absorb the fill-in produced by row interchanges.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Sets an entry inside the original band (`-kl <= j - i <= ku`).
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry outside band");
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// Max absolute column sum, computed before factorization.
    pub fn norm1(&self) -> f64 {
        let mut sums = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for (j, s) in sums.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *s += self.get(i, j).abs();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            piv[k] = p;
            if best == 0.0 {
                return Err(Error::Singular {
                    cond: f64::INFINITY,
                });
            }
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let (sk, sp) = (self.slot(k, c), self.slot(p, c));
                    self.data.swap(sk, sp);
                }
            }
            let pivot = self.get(k, k);
            for r in k + 1..=last_row {
                let sr = self.slot(r, k);
                let l = self.data[sr] / pivot;
                self.data[sr] = l;
                if l == 0.0 {
                    continue;
                }
                for c in k + 1..=last_col {
                    let u = self.data[self.slot(k, c)];
                    let s = self.slot(r, c);
                    self.data[s] -= l * u;
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.m.n
    }

    /// Overwrites `b` with `A^{-1} b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let (kl, ku) = (self.m.kl, self.m.ku);
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + kl).min(n - 1) {
                    b[r] -= self.m.get(r, k) * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for c in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.m.get(k, c) * b[c];
            }
            b[k] = s / self.m.get(k, k);
        }
    }

    pub fn solve_unit(&self, j: usize) -> Vec<f64> {
        let mut b = vec![0.0; self.m.n];
        b[j] = 1.0;
        self.solve_in_place(&mut b);
        b
    }

    /// Hager's estimate of `||A^{-1}||_1` for a symmetric `A`, refined with
    /// Higham's alternating-sign test vector.
    pub fn inverse_norm1_estimate_symmetric(&self) -> f64 {
        let n = self.m.n;
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let mut y = x.clone();
            self.solve_in_place(&mut y);
            est = y.iter().map(|v| v.abs()).sum::<f64>();
            let mut z: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            self.solve_in_place(&mut z);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x.iter_mut().for_each(|v| *v = 0.0);
            x[jmax] = 1.0;
        }
        let mut alt: Vec<f64> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * (1.0 + i as f64 / (n.max(2) - 1) as f64)
            })
            .collect();
        self.solve_in_place(&mut alt);
        let alt_est = 2.0 * alt.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
        est.max(alt_est)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64) -> (BandMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = BandMatrix::zeros(n, kl, ku);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // small diagonal forces pivoting
                let v = if i == j { rng.gen_range(-0.1..0.1) } else { rng.gen_range(-1.0..1.0) };
                b.set(i, j, v);
                d[(i, j)] = v;
            }
        }
        (b, d)
    }

    #[test]
    fn solves_match_dense_lu() {
        for seed in 0..5 {
            let (b, d) = random_band(40, 2, 2, seed);
            let lu = b.factor().unwrap();
            let dense = d.clone().lu();
            for j in [0, 7, 39] {
                let x = lu.solve_unit(j);
                let mut e = nalgebra::DVector::zeros(40);
                e[j] = 1.0;
                let y = dense.solve(&e).unwrap();
                for i in 0..40 {
                    assert!((x[i] - y[i]).abs() < 1e-9 * (1.0 + y[i].abs()));
                }
            }
        }
    }

    #[test]
    fn singular_is_reported() {
        let mut b = BandMatrix::zeros(3, 1, 1);
        b.set(0, 0, 1.0);
        b.set(0, 1, 1.0);
        b.set(1, 0, 1.0);
        b.set(1, 1, 1.0);
        b.set(2, 2, 1.0);
        assert!(matches!(b.factor(), Err(Error::Singular { .. })));
    }

    #[test]
    fn norm_estimate_is_close_for_symmetric() {
        let n = 30;
        let mut b = BandMatrix::zeros(n, 2, 2);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for (off, v) in [(0usize, 2.5), (1, -1.0), (2, 0.3)] {
                if i + off < n {
                    b.set(i, i + off, v);
                    b.set(i + off, i, v);
                    d[(i, i + off)] = v;
                    d[(i + off, i)] = v;
                }
            }
        }
        let lu = b.factor().unwrap();
        let est = lu.inverse_norm1_estimate_symmetric();
        let inv = d.try_inverse().unwrap();
        let exact = (0..n)
            .map(|j| (0..n).map(|i| inv[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        assert!(est <= exact * (1.0 + 1e-12) && est >= 0.3 * exact, "{est} {exact}");
    }
}
