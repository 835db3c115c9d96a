//! Moment, covariance and correlation-decay estimators over sample sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chain::{run_chain, ChainConfig, ConstraintSpec};
use crate::error::{Error, Result};
use crate::free_energy::{legendre, transfer, FreeEnergySource};
use crate::model::ModelSpec;
use crate::quadrature::QuadratureGrid;
use crate::stats::{self, MomentReport};

/// `E[X_i^k]` for `k` in `{1, 2}`.
pub fn estimate_moment(samples: &[Vec<f64>], site: usize, power: u32) -> Result<MomentReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(1..=2).contains(&power) {
        return Err(Error::InvalidConfig(format!("moment power {power} not in {{1, 2}}")));
    }
    if site >= samples[0].len() {
        return Err(Error::Dimension {
            expected: samples[0].len(),
            got: site,
        });
    }
    let series: Vec<f64> = samples.iter().map(|x| x[site].powi(power as i32)).collect();
    stats::batch_means(&series)
}

/// Outcome of checking a moment against `c1 |sigma|^k + c2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBoundCheck {
    pub report: MomentReport,
    pub bound: f64,
    pub within: bool,
}

/// Flags whether `|E[X_i^k]| <= c1 |sigma|^k + c2`.
pub fn check_moment_bound(report: MomentReport, power: u32, sigma: f64, c1: f64, c2: f64) -> MomentBoundCheck {
    let bound = c1 * sigma.abs().powi(power as i32) + c2;
    MomentBoundCheck {
        report,
        bound,
        within: report.estimate.abs() <= bound,
    }
}

/// `cov(sum_{i in A} x_i, sum_{j in B} x_j)`.
pub fn estimate_covariance(samples: &[Vec<f64>], f_support: &[usize], g_support: &[usize]) -> Result<MomentReport> {
    estimate_covariance_with(
        samples,
        |x| f_support.iter().map(|&i| x[i]).sum(),
        |x| g_support.iter().map(|&j| x[j]).sum(),
    )
}

/// Covariance of two arbitrary observables.
pub fn estimate_covariance_with(
    samples: &[Vec<f64>],
    f: impl Fn(&[f64]) -> f64,
    g: impl Fn(&[f64]) -> f64,
) -> Result<MomentReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let fs: Vec<f64> = samples.iter().map(|x| f(x)).collect();
    let gs: Vec<f64> = samples.iter().map(|x| g(x)).collect();
    covariance_of_series(&fs, &gs)
}

pub fn covariance_of_series(fs: &[f64], gs: &[f64]) -> Result<MomentReport> {
    if fs.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mf = stats::mean(fs);
    let mg = stats::mean(gs);
    let prod: Vec<f64> = fs.iter().zip(gs).map(|(a, b)| (a - mf) * (b - mg)).collect();
    let mut r = stats::batch_means(&prod)?;
    let n = fs.len() as f64;
    if n > 1.0 {
        r.estimate *= n / (n - 1.0);
    }
    Ok(r)
}

/// `|cov(d)| ~ C exp(-c d) + floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    /// Additive volume term; `floor * N` is the fitted `a` in `a / N`.
    pub floor: f64,
    pub pure_floor: bool,
}

/// Least-squares fit of `log(|cov| - floor)` against distance. With
/// `volume = Some(N)` the floor is fitted (canonical case); otherwise it is
/// zero. `errors` are optional standard errors used to detect a table that
/// is pure noise.
pub fn fit_correlation_decay(
    distances: &[f64],
    covariances: &[f64],
    errors: Option<&[f64]>,
    volume: Option<usize>,
) -> Result<DecayFit> {
    if distances.len() != covariances.len() {
        return Err(Error::Dimension {
            expected: distances.len(),
            got: covariances.len(),
        });
    }
    if distances.len() < 4 {
        return Err(Error::DegenerateFit("need at least 4 distances".into()));
    }
    let mags: Vec<f64> = covariances.iter().map(|c| c.abs()).collect();
    if mags.iter().all(|&c| c == 0.0) {
        return Err(Error::DegenerateFit("all covariances vanish".into()));
    }
    if let Some(se) = errors {
        if mags.iter().zip(se).all(|(c, s)| *c <= 2.0 * s) {
            return Ok(DecayFit {
                rate: 0.0,
                prefactor: 0.0,
                floor: 0.0,
                pure_floor: true,
            });
        }
    }
    let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().cloned().fold(0.0, f64::max);
    if volume.is_some() && hi - lo <= 1e-6 * hi {
        // flat table: nothing but the volume term
        return Ok(DecayFit {
            rate: 0.0,
            prefactor: 0.0,
            floor: stats::mean(&mags),
            pure_floor: true,
        });
    }
    let fit_with = |floor: f64| -> Option<(f64, f64, f64)> {
        let ys: Vec<f64> = mags.iter().map(|c| (c - floor).max(1e-300).ln()).collect();
        let (a, b) = stats::linear_fit(distances, &ys).ok()?;
        let sse: f64 = distances
            .iter()
            .zip(&ys)
            .map(|(d, y)| (y - a - b * d).powi(2))
            .sum();
        Some((a, b, sse))
    };
    let (floor, (a, b, _)) = match volume {
        None => (0.0, fit_with(0.0).ok_or_else(|| Error::DegenerateFit("fit failed".into()))?),
        Some(_) => {
            let mut best: Option<(f64, (f64, f64, f64))> = None;
            for k in 0..1000 {
                let floor = lo * k as f64 / 1000.0;
                if let Some(fit) = fit_with(floor) {
                    if best.map_or(true, |(_, b)| fit.2 < b.2) {
                        best = Some((floor, fit));
                    }
                }
            }
            best.ok_or_else(|| Error::DegenerateFit("fit failed".into()))?
        }
    };
    Ok(DecayFit {
        rate: -b,
        prefactor: a.exp(),
        floor,
        pure_floor: false,
    })
}

/// Canonical versus grand-canonical single-site expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub m: f64,
    pub sigma: f64,
    pub site: usize,
    pub canonical: MomentReport,
    pub grand_canonical: f64,
    pub gap: f64,
    pub bound: f64,
    pub passed: bool,
}

/// Compares `E_ce[x_i]` (MALA) with the exact `E_gce^sigma[x_i]` at the
/// `sigma` solving `A_N'(sigma) = m`. Passes when the gap sits below
/// `C / N` within two standard errors.
pub fn equivalence_of_observables_check(
    model: &ModelSpec,
    m: f64,
    site: usize,
    constant: f64,
    cfg: &ChainConfig,
    samples_per_chain: usize,
    chains: usize,
) -> Result<EquivalenceReport> {
    let n = model.n;
    if site >= n {
        return Err(Error::Dimension { expected: n, got: site });
    }
    let sigma = legendre(&FreeEnergySource::finite(model, n), None, m)?.sigma_star;
    let grid = QuadratureGrid::for_params(sigma, m);
    let gce = transfer::gce_site_moments(model, sigma, &grid)?[site].0;
    let ce = ConstraintSpec::GlobalMean(m);
    let reports: Vec<MomentReport> = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut series = Vec::with_capacity(samples_per_chain);
            run_chain(model, &ce, cfg, samples_per_chain, c, None, |x| series.push(x[site]))?;
            stats::batch_means(&series)
        })
        .collect::<Result<_>>()?;
    let canonical = MomentReport::pool(&reports)?;
    let gap = (canonical.estimate - gce).abs();
    let bound = constant / n as f64;
    Ok(EquivalenceReport {
        m,
        sigma,
        site,
        canonical,
        grand_canonical: gce,
        gap,
        bound,
        passed: gap <= bound + 2.0 * canonical.standard_error,
    })
}

/// `(1/N) Var(sum x)` under the grand-canonical ensemble, by MALA.
pub fn mean_spin_variance(model: &ModelSpec, cfg: &ChainConfig, count: usize, chains: usize) -> Result<MomentReport> {
    let reports: Vec<(f64, f64)> = (0..chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut sums = Vec::with_capacity(count);
            run_chain(model, &ConstraintSpec::None, cfg, count, c, None, |x| sums.push(x.iter().sum::<f64>()))?;
            Ok((stats::variance(&sums), stats::integrated_autocorr_time(&sums)))
        })
        .collect::<Result<_>>()?;
    let vars: Vec<f64> = reports.iter().map(|r| r.0 / model.n as f64).collect();
    let tau = stats::mean(&reports.iter().map(|r| r.1).collect::<Vec<_>>());
    let est = stats::mean(&vars);
    let se = if vars.len() > 1 {
        (stats::variance(&vars) / vars.len() as f64).sqrt()
    } else {
        est * (2.0 * tau / count as f64).sqrt()
    };
    Ok(MomentReport {
        estimate: est,
        standard_error: se.max(f64::MIN_POSITIVE),
        effective_sample_size: (chains * count) as f64 / tau,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_fit_on_exact_exponential() {
        let d: Vec<f64> = (1..8).map(|k| k as f64).collect();
        let c: Vec<f64> = d.iter().map(|d| 0.7 * (-0.9 * d).exp() * if *d as usize % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let fit = fit_correlation_decay(&d, &c, None, None).unwrap();
        assert!((fit.rate - 0.9).abs() < 1e-12);
        assert!((fit.prefactor - 0.7).abs() < 1e-12);
    }

    #[test]
    fn decay_fit_edge_cases() {
        let d = [1.0, 2.0, 3.0, 4.0, 5.0];
        let flat = [-0.125; 5];
        let fit = fit_correlation_decay(&d, &flat, None, Some(8)).unwrap();
        assert!(fit.pure_floor && (fit.floor - 0.125).abs() < 1e-15 && fit.rate == 0.0);
        let noise = [1e-4, -2e-4, 5e-5, 1e-4, -1e-4];
        let se = [1e-3; 5];
        assert!(fit_correlation_decay(&d, &noise, Some(&se), None).unwrap().pure_floor);
        assert!(fit_correlation_decay(&d, &[0.0; 5], None, None).is_err());
        assert!(fit_correlation_decay(&d[..3], &flat[..3], None, None).is_err());
    }

    #[test]
    fn covariance_of_independent_series() {
        let samples: Vec<Vec<f64>> = (0..1000).map(|k| vec![(k % 7) as f64, (k % 11) as f64]).collect();
        let r = estimate_covariance(&samples, &[0], &[0]).unwrap();
        assert!((r.estimate - stats::variance(&samples.iter().map(|x| x[0]).collect::<Vec<_>>())).abs() < 1e-12);
        assert!(estimate_moment(&[], 0, 1).is_err());
        assert!(estimate_moment(&samples, 0, 3).is_err());
    }
}
