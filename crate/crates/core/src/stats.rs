//! Elementary estimators for correlated Monte Carlo series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point estimate with its standard error and effective sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub estimate: f64,
    pub standard_error: f64,
    pub effective_sample_size: f64,
}

impl MomentReport {
    /// Number of standard errors separating the estimate from zero.
    pub fn resolution(&self) -> f64 {
        self.estimate.abs() / self.standard_error
    }

    /// Pools independent reports by inverse-variance weighting.
    pub fn pool(reports: &[MomentReport]) -> Result<MomentReport> {
        if reports.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut wsum = 0.0;
        let mut acc = 0.0;
        let mut ess = 0.0;
        for r in reports {
            let w = 1.0 / (r.standard_error * r.standard_error).max(1e-300);
            wsum += w;
            acc += w * r.estimate;
            ess += r.effective_sample_size;
        }
        Ok(MomentReport {
            estimate: acc / wsum,
            standard_error: (1.0 / wsum).sqrt(),
            effective_sample_size: ess,
        })
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Integrated autocorrelation time with Sokal's self-consistent window
/// (`c = 5`). Returns at least 1.
pub fn integrated_autocorr_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 1.0;
    }
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c: f64 = (0..n - lag)
            .map(|i| (xs[i] - m) * (xs[i + lag] - m))
            .sum::<f64>()
            / n as f64;
        tau += 2.0 * c / c0;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Batch-means estimate of the mean of a correlated series. Uses
/// `floor(sqrt(n))` batches, capped to `[2, 64]`.
pub fn batch_means(xs: &[f64]) -> Result<MomentReport> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let estimate = mean(xs);
    if n == 1 {
        return Ok(MomentReport {
            estimate,
            standard_error: f64::INFINITY,
            effective_sample_size: 1.0,
        });
    }
    let batches = ((n as f64).sqrt() as usize).clamp(2, 64).min(n);
    let size = n / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect();
    let var_of_mean = variance(&means) / batches as f64;
    let iid = variance(xs) / n as f64;
    // the batch estimate is noisy; never report below the iid floor
    let var = var_of_mean.max(iid).max(f64::MIN_POSITIVE);
    let se = var.sqrt();
    let ess = (variance(xs) / var).clamp(1.0, n as f64);
    Ok(MomentReport {
        estimate,
        standard_error: se,
        effective_sample_size: ess,
    })
}

/// Streaming batch estimator of the means and covariance matrix of a
/// vector-valued series of known length. Memory is `O(d^2 * batches)`.
#[derive(Debug, Clone)]
pub struct StreamingMoments {
    dims: usize,
    batch_size: usize,
    batches: usize,
    seen: usize,
    sum: Vec<f64>,
    prod: Vec<f64>,
    batch_means: Vec<Vec<f64>>,
    batch_covs: Vec<Vec<f64>>,
    total_sum: Vec<f64>,
    total_prod: Vec<f64>,
}

impl StreamingMoments {
    /// Batch count follows [`batch_means`].
    pub fn new(dims: usize, length: usize) -> Self {
        let batches = ((length as f64).sqrt() as usize).clamp(2, 64).min(length.max(1));
        StreamingMoments {
            dims,
            batch_size: (length / batches).max(1),
            batches,
            seen: 0,
            sum: vec![0.0; dims],
            prod: vec![0.0; dims * dims],
            batch_means: Vec::with_capacity(batches),
            batch_covs: Vec::with_capacity(batches),
            total_sum: vec![0.0; dims],
            total_prod: vec![0.0; dims * dims],
        }
    }

    pub fn push(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.dims);
        let d = self.dims;
        for a in 0..d {
            self.sum[a] += v[a];
            self.total_sum[a] += v[a];
            for b in a..d {
                let p = v[a] * v[b];
                self.prod[a * d + b] += p;
                self.total_prod[a * d + b] += p;
            }
        }
        self.seen += 1;
        // the final batch absorbs any remainder
        if self.seen % self.batch_size == 0 && self.batch_means.len() + 1 < self.batches {
            self.close_batch(self.batch_size);
        }
    }

    fn close_batch(&mut self, count: usize) {
        let d = self.dims;
        let c = count as f64;
        let means: Vec<f64> = self.sum.iter().map(|s| s / c).collect();
        let mut cov = vec![0.0; d * d];
        for a in 0..d {
            for b in a..d {
                let v = (self.prod[a * d + b] - c * means[a] * means[b]) / (c - 1.0).max(1.0);
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        self.batch_means.push(means);
        self.batch_covs.push(cov);
        self.sum.iter_mut().for_each(|x| *x = 0.0);
        self.prod.iter_mut().for_each(|x| *x = 0.0);
    }

    fn finish(&mut self) -> Result<()> {
        if self.seen < 2 {
            return Err(Error::EmptySamples);
        }
        let closed = self.batch_means.len() * self.batch_size;
        if self.seen > closed {
            self.close_batch(self.seen - closed);
        }
        Ok(())
    }

    fn report(&self, values: Vec<f64>, overall: f64, iid_var: f64) -> MomentReport {
        let k = values.len() as f64;
        let var = (variance(&values) / k).max(iid_var / self.seen as f64).max(f64::MIN_POSITIVE);
        MomentReport {
            estimate: overall,
            standard_error: var.sqrt(),
            effective_sample_size: (iid_var / var).clamp(1.0, self.seen as f64),
        }
    }

    /// Per-coordinate means and the row-major covariance matrix.
    pub fn into_reports(mut self) -> Result<(Vec<MomentReport>, Vec<MomentReport>)> {
        self.finish()?;
        let d = self.dims;
        let n = self.seen as f64;
        let mean: Vec<f64> = self.total_sum.iter().map(|s| s / n).collect();
        let mut cov = vec![0.0; d * d];
        for a in 0..d {
            for b in a..d {
                let v = (self.total_prod[a * d + b] - n * mean[a] * mean[b]) / (n - 1.0);
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        let means = (0..d)
            .map(|a| {
                let bm: Vec<f64> = self.batch_means.iter().map(|m| m[a]).collect();
                self.report(bm, mean[a], cov[a * d + a])
            })
            .collect();
        let mut covs = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                let bc: Vec<f64> = self.batch_covs.iter().map(|c| c[a * d + b]).collect();
                // variance of a product of centred Gaussians-ish terms: crude iid floor
                let iid = cov[a * d + a] * cov[b * d + b] + cov[a * d + b].powi(2);
                covs.push(self.report(bc, cov[a * d + b], iid));
            }
        }
        Ok((means, covs))
    }
}

/// Ordinary least squares `y = a + b x`; returns `(a, b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("abscissae are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    Ok((my - b * mx, b))
}

/// Log-log slope of `|ys|` against `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if ys.iter().any(|y| *y == 0.0) || xs.iter().any(|x| *x <= 0.0) {
        return Err(Error::DegenerateFit("log of zero".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    Ok(linear_fit(&lx, &ly)?.1)
}
