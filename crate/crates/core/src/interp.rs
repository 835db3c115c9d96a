//! Piecewise cubic Hermite interpolation on sorted tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic Hermite interpolant through `(x_k, y_k)` with slopes `d_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hermite {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl Hermite {
    /// Interpolant with caller-supplied slopes.
    pub fn with_slopes(xs: Vec<f64>, ys: Vec<f64>, ds: Vec<f64>) -> Result<Self> {
        check_table(&xs, &ys)?;
        if ds.len() != xs.len() {
            return Err(Error::Dimension {
                expected: xs.len(),
                got: ds.len(),
            });
        }
        Ok(Hermite { xs, ys, ds })
    }

    /// Fritsch–Carlson monotone interpolant: preserves monotonicity of the
    /// data, so the derivative of an interpolated increasing table stays
    /// non-negative.
    pub fn monotone(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        check_table(&xs, &ys)?;
        let n = xs.len();
        let secant: Vec<f64> = (0..n - 1)
            .map(|k| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]))
            .collect();
        let mut ds = vec![0.0; n];
        ds[0] = secant[0];
        ds[n - 1] = secant[n - 2];
        for k in 1..n - 1 {
            if secant[k - 1] * secant[k] <= 0.0 {
                ds[k] = 0.0;
            } else {
                // weighted harmonic mean
                let h0 = xs[k] - xs[k - 1];
                let h1 = xs[k + 1] - xs[k];
                let w0 = 2.0 * h1 + h0;
                let w1 = h1 + 2.0 * h0;
                ds[k] = (w0 + w1) / (w0 / secant[k - 1] + w1 / secant[k]);
            }
        }
        Ok(Hermite { xs, ys, ds })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn contains(&self, x: f64) -> bool {
        let (a, b) = self.domain();
        x >= a && x <= b
    }

    fn locate(&self, x: f64) -> usize {
        let n = self.xs.len();
        match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    /// Value, first and second derivative. Outside the table the end
    /// cubic is extrapolated.
    pub fn eval_all(&self, x: f64) -> (f64, f64, f64) {
        let k = self.locate(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let (d0, d1) = (self.ds[k] * h, self.ds[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * d1;
        let dv = (6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * d0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * d1;
        let ddv = (12.0 * t - 6.0) * y0
            + (6.0 * t - 4.0) * d0
            + (-12.0 * t + 6.0) * y1
            + (6.0 * t - 2.0) * d1;
        (v, dv / h, ddv / (h * h))
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_all(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval_all(x).1
    }
}

fn check_table(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidConfig("interpolation table needs 2 points".into()));
    }
    if xs.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("interpolation abscissae must increase".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_reproduces_cubics() {
        let f = |x: f64| x * x * x - 2.0 * x + 1.0;
        let df = |x: f64| 3.0 * x * x - 2.0;
        let xs: Vec<f64> = (0..6).map(|k| -1.0 + 0.4 * k as f64).collect();
        let h = Hermite::with_slopes(
            xs.clone(),
            xs.iter().map(|&x| f(x)).collect(),
            xs.iter().map(|&x| df(x)).collect(),
        )
        .unwrap();
        for x in [-0.93, -0.2, 0.0, 0.55, 0.99] {
            let (v, d, dd) = h.eval_all(x);
            assert!((v - f(x)).abs() < 1e-13);
            assert!((d - df(x)).abs() < 1e-12);
            assert!((dd - 6.0 * x).abs() < 1e-10);
        }
    }

    #[test]
    fn monotone_interpolant_has_nonnegative_slope() {
        let xs: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if x < 1.0 { x } else { 1.0 + 1e-3 * x }).collect();
        let h = Hermite::monotone(xs, ys).unwrap();
        for k in 0..400 {
            let x = k as f64 * 1.9 / 400.0;
            assert!(h.derivative(x) >= -1e-14);
        }
    }
}
