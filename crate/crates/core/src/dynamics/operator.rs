//! The `N^2`-scaled periodic second difference `A` and its pseudo-inverse on
//! mean-zero vectors.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Relative tolerance for the mean-zero precondition.
pub const MEAN_TOLERANCE: f64 = 1e-10;

/// `A_ij = N^2 (2 d_ij - d_{i,j-1} - d_{i,j+1})`, indices mod `N`.
#[derive(Clone)]
pub struct KawasakiOperator {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for KawasakiOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KawasakiOperator").field("n", &self.n).finish()
    }
}

impl KawasakiOperator {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!("operator needs N >= 2, got {n}")));
        }
        let mut planner = FftPlanner::new();
        Ok(KawasakiOperator {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `N^2 2 (1 - cos(2 pi k / N))`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let n = self.n as f64;
        n * n * 2.0 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n).cos())
    }

    /// Largest eigenvalue, `4 N^2` for even `N`.
    pub fn spectral_radius(&self) -> f64 {
        (0..=self.n / 2).map(|k| self.eigenvalue(k)).fold(0.0, f64::max)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `out = A x`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let s = (n * n) as f64;
        for i in 0..n {
            let l = x[(i + n - 1) % n];
            let r = x[(i + 1) % n];
            out[i] = s * (2.0 * x[i] - l - r);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = vec![0.0; self.n];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// Rejects vectors whose mean is not zero relative to their size.
    pub fn check_mean_zero(&self, x: &[f64]) -> Result<()> {
        self.check(x)?;
        let mean = x.iter().sum::<f64>() / self.n as f64;
        let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if mean.abs() > MEAN_TOLERANCE * scale {
            return Err(Error::NonZeroMean { mean });
        }
        Ok(())
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// `A^+ x` on the mean-zero subspace.
    pub fn pseudo_inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_mean_zero(x)?;
        let mut buf = self.spectrum(x);
        buf[0] = Complex64::new(0.0, 0.0);
        for (k, c) in buf.iter_mut().enumerate().skip(1) {
            *c /= self.eigenvalue(k);
        }
        self.inverse.process(&mut buf);
        let n = self.n as f64;
        Ok(buf.iter().map(|c| c.re / n).collect())
    }

    /// `<x, A^+ x>` evaluated on the Fourier side.
    pub fn inverse_quadratic_form(&self, x: &[f64]) -> Result<f64> {
        self.check_mean_zero(x)?;
        let buf = self.spectrum(x);
        let s: f64 = buf
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| c.norm_sqr() / self.eigenvalue(k))
            .sum();
        Ok(s / self.n as f64)
    }

    /// `out = N D^T xi` with `(D x)_i = x_{i+1} - x_i`, so that
    /// `(N D^T)(N D^T)^T = A`. Column sums vanish, hence `sum out = 0`.
    pub fn noise_into(&self, xi: &[f64], out: &mut [f64]) {
        let n = self.n;
        let s = n as f64;
        for i in 0..n {
            out[i] = s * (xi[(i + n - 1) % n] - xi[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(n: usize) -> DMatrix<f64> {
        let s = (n * n) as f64;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 * s
            } else if (i + 1) % n == j || (j + 1) % n == i {
                -s
            } else {
                0.0
            }
        })
    }

    #[test]
    fn operator_structure() {
        let op = KawasakiOperator::new(12).unwrap();
        let a = dense(12);
        let ones = vec![1.0; 12];
        assert!(op.apply(&ones).unwrap().iter().all(|v| v.abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ax = op.apply(&x).unwrap();
        let dx = &a * nalgebra::DVector::from_vec(x.clone());
        for i in 0..12 {
            assert!((ax[i] - dx[i]).abs() < 1e-10);
        }
        let mut eig: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().cloned().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut mine: Vec<f64> = (0..12).map(|k| op.eigenvalue(k)).collect();
        mine.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in eig.iter().zip(&mine) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b));
        }
        assert!((op.spectral_radius() - 4.0 * 144.0).abs() < 1e-9);
    }

    #[test]
    fn pseudo_inverse_round_trip_for_odd_and_even_sizes() {
        for n in [7usize, 16, 30] {
            let op = KawasakiOperator::new(n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = x.iter().sum::<f64>() / n as f64;
            x.iter_mut().for_each(|v| *v -= m);
            let y = op.pseudo_inverse(&x).unwrap();
            let back = op.apply(&y).unwrap();
            for i in 0..n {
                assert!((back[i] - x[i]).abs() < 1e-12);
            }
            let q: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!((op.inverse_quadratic_form(&x).unwrap() - q).abs() < 1e-14);
            assert!(op.pseudo_inverse(&vec![1.0; n]).is_err());
        }
    }

    #[test]
    fn noise_factor_reproduces_operator() {
        let n = 9;
        let op = KawasakiOperator::new(n).unwrap();
        let mut cols = DMatrix::zeros(n, n);
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            op.noise_into(&e, &mut out);
            for i in 0..n {
                cols[(i, j)] = out[i];
            }
        }
        let prod = &cols * cols.transpose();
        assert!((prod - dense(n)).amax() < 1e-9);
    }
}
