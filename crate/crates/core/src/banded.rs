//! Banded Hermitian positive-definite systems: storage, Cholesky factor and
//! an eigenvalue-ratio condition estimate.

use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Lower band of a Hermitian matrix with half-bandwidth `bw`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedHermitian {
    n: usize,
    bw: usize,
    /// Entry `(i, j)`, `j <= i <= j + bw`, at `j * (bw + 1) + (i - j)`.
    data: Vec<Complex64>,
}

impl BandedHermitian {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedHermitian {
            n,
            bw,
            data: vec![ZERO; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw && i < self.n);
        j * (self.bw + 1) + (i - j)
    }

    /// Entry `(i, j)` for any pair inside the band.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i.abs_diff(j) > self.bw {
            return ZERO;
        }
        if i >= j {
            self.data[self.slot(i, j)]
        } else {
            self.data[self.slot(j, i)].conj()
        }
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `conj(v)` to `(j, i)`).
    /// Diagonal additions must be real.
    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        assert!(i.abs_diff(j) <= self.bw, "entry ({i}, {j}) outside the band");
        if i >= j {
            let s = self.slot(i, j);
            self.data[s] += v;
        } else {
            let s = self.slot(j, i);
            self.data[s] += v.conj();
        }
    }

    /// Zeroes row and column `i` and places `diag` on the diagonal.
    pub fn pin(&mut self, i: usize, diag: f64) {
        let lo = i.saturating_sub(self.bw);
        let hi = (i + self.bw).min(self.n - 1);
        for j in lo..=hi {
            let s = if i >= j { self.slot(i, j) } else { self.slot(j, i) };
            self.data[s] = ZERO;
        }
        let s = self.slot(i, i);
        self.data[s] = Complex64::new(diag, 0.0);
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[self.slot(i, i)].re).collect()
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![ZERO; self.n];
        for j in 0..self.n {
            let base = j * (self.bw + 1);
            y[j] += self.data[base] * x[j];
            let hi = (j + self.bw).min(self.n - 1);
            for i in j + 1..=hi {
                let a = self.data[base + (i - j)];
                y[i] += a * x[j];
                y[j] += a.conj() * x[i];
            }
        }
        y
    }

    /// Cholesky factor `A = L L^H`; `None` if a pivot is not positive.
    pub fn cholesky(&self) -> Option<BandedCholesky> {
        let (n, bw) = (self.n, self.bw);
        let mut l = self.data.clone();
        let at = |i: usize, j: usize| j * (bw + 1) + (i - j);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = l[at(j, j)].re;
            for k in lo..j {
                d -= l[at(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[at(j, j)] = Complex64::new(d, 0.0);
            let hi = (j + bw).min(n - 1);
            for i in j + 1..=hi {
                let mut s = l[at(i, j)];
                for k in i.saturating_sub(bw).max(lo)..j {
                    s -= l[at(i, k)] * l[at(j, k)].conj();
                }
                l[at(i, j)] = s / d;
            }
        }
        Some(BandedCholesky { n, bw, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<Complex64>,
}

impl BandedCholesky {
    #[inline]
    fn at(&self, i: usize, j: usize) -> Complex64 {
        self.l[j * (self.bw + 1) + (i - j)]
    }

    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(b.len(), self.n);
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.at(i, k) * y[k];
            }
            y[i] = s / self.at(i, i).re;
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            let hi = (i + self.bw).min(self.n - 1);
            for k in i + 1..=hi {
                s -= self.at(k, i).conj() * y[k];
            }
            y[i] = s / self.at(i, i).re;
        }
        y
    }
}

fn normalize(v: &mut [Complex64]) -> f64 {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|z| *z /= norm);
    }
    norm
}

/// Ratio of extreme eigenvalues from power and inverse iteration.
pub fn condition_estimate(a: &BandedHermitian, chol: &BandedCholesky, iterations: usize) -> f64 {
    let n = a.dim();
    let start: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + (i % 7) as f64 / 7.0, (i % 3) as f64 / 3.0))
        .collect();
    let mut v = start.clone();
    normalize(&mut v);
    let mut lambda_max = 0.0;
    for _ in 0..iterations {
        let mut w = a.mul_vec(&v);
        lambda_max = normalize(&mut w);
        v = w;
    }
    let mut v = start;
    normalize(&mut v);
    let mut inv_lambda_min = 0.0;
    for _ in 0..iterations {
        let mut w = chol.solve(&v);
        inv_lambda_min = normalize(&mut w);
        v = w;
    }
    lambda_max * inv_lambda_min
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn random_spd(n: usize, bw: usize) -> BandedHermitian {
        let mut a = BandedHermitian::zeros(n, bw);
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for j in 0..n {
            a.add(j, j, Complex64::new(4.0 * bw as f64 + 1.0, 0.0));
            for i in j + 1..(j + bw + 1).min(n) {
                a.add(i, j, Complex64::new(next(), next()));
            }
        }
        a
    }

    fn dense(a: &BandedHermitian) -> DMatrix<Complex64> {
        DMatrix::from_fn(a.dim(), a.dim(), |i, j| a.get(i, j))
    }

    #[test]
    fn solve_matches_dense() {
        let a = random_spd(40, 5);
        let b: Vec<Complex64> = (0..40).map(|i| Complex64::new(i as f64, 1.0 - i as f64 * 0.3)).collect();
        let x = a.cholesky().unwrap().solve(&b);
        let d = dense(&a);
        let x_ref = d.clone().lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        for (u, v) in x.iter().zip(x_ref.iter()) {
            assert!((u - v).norm() < 1e-12);
        }
        let ax = a.mul_vec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).norm() < 1e-10);
        }
    }

    #[test]
    fn condition_of_diagonal() {
        let mut a = BandedHermitian::zeros(5, 2);
        for (i, d) in [1.0, 2.0, 3.0, 4.0, 100.0].iter().enumerate() {
            a.add(i, i, Complex64::new(*d, 0.0));
        }
        let c = condition_estimate(&a, &a.cholesky().unwrap(), 200);
        assert!((c - 100.0).abs() < 1e-6, "{c}");
    }

    #[test]
    fn indefinite_fails() {
        let mut a = BandedHermitian::zeros(2, 1);
        a.add(0, 0, Complex64::new(1.0, 0.0));
        a.add(1, 1, Complex64::new(1.0, 0.0));
        a.add(1, 0, Complex64::new(2.0, 0.0));
        assert!(a.cholesky().is_none());
    }

    #[test]
    fn pin_isolates_unknown() {
        let mut a = random_spd(10, 3);
        a.pin(4, 7.0);
        for j in 0..10 {
            if j != 4 {
                assert_eq!(a.get(4, j), ZERO);
                assert_eq!(a.get(j, 4), ZERO);
            }
        }
        assert_eq!(a.get(4, 4), Complex64::new(7.0, 0.0));
    }
}
