//! Certificate calculators for logarithmic Sobolev constants.
//!
//! Each criterion maps supplied or estimated inputs to a constant `rho`; the
//! returned [`LsiConstant`] records the inputs and the formula used.

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LsiProvenance {
    BakryEmery,
    HolleyStroock,
    Tensorize,
    OttoReznikoff,
    TwoScale,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsiConstant {
    pub rho: f64,
    pub provenance: LsiProvenance,
    pub formula: &'static str,
    pub inputs: Value,
}

impl LsiConstant {
    fn new(rho: f64, provenance: LsiProvenance, formula: &'static str, inputs: Value) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Numerical(format!("{formula} gives non-positive rho = {rho}")));
        }
        Ok(LsiConstant {
            rho,
            provenance,
            formula,
            inputs,
        })
    }

    /// `{inputs, formula, rho, provenance}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialises")
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// Product measure: `min(rho1, rho2)`.
pub fn tensorize(rho1: f64, rho2: f64) -> Result<LsiConstant> {
    positive("rho1", rho1)?;
    positive("rho2", rho2)?;
    LsiConstant::new(
        rho1.min(rho2),
        LsiProvenance::Tensorize,
        "min(rho1, rho2)",
        json!({ "rho1": rho1, "rho2": rho2 }),
    )
}

/// Bounded perturbation: `rho exp(-osc)`.
pub fn holley_stroock(rho: f64, osc: f64) -> Result<LsiConstant> {
    positive("rho", rho)?;
    if !(osc >= 0.0) || !osc.is_finite() {
        return Err(Error::InvalidConfig(format!("oscillation must be >= 0, got {osc}")));
    }
    LsiConstant::new(
        rho * (-osc).exp(),
        LsiProvenance::HolleyStroock,
        "rho * exp(-osc)",
        json!({ "rho": rho, "osc": osc }),
    )
}

/// Uniform convexity `Hess H >= rho`.
pub fn bakry_emery(hessian_lower_bound: f64) -> Result<LsiConstant> {
    if !(hessian_lower_bound > 0.0) {
        return Err(Error::Numerical(format!(
            "Hessian lower bound {hessian_lower_bound} is not positive"
        )));
    }
    LsiConstant::new(
        hessian_lower_bound,
        LsiProvenance::BakryEmery,
        "Hess H >= rho",
        json!({ "hessian_lower_bound": hessian_lower_bound }),
    )
}

/// `lambda_min(Id + M) + inf psi_b''`, a lower bound for `Hess H` of the
/// model on `R^N`.
pub fn model_hessian_lower_bound(model: &ModelSpec) -> Result<f64> {
    let n = model.n;
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j { 1.0 } else { model.kernel.off_diagonal(i, j) };
        }
    }
    let lmin = min_eigenvalue(&a, n)?;
    let inf = model.potential.perturbation_bounds().inf_d2;
    Ok(lmin + inf)
}

/// Smallest eigenvalue of the dense symmetric `n x n` matrix `a`
/// (row-major), by bisection on the success of a Cholesky factorisation of
/// `a - lambda I`.
pub fn min_eigenvalue(a: &[f64], n: usize) -> Result<f64> {
    if a.len() != n * n || n == 0 {
        return Err(Error::Dimension { expected: n * n, got: a.len() });
    }
    for i in 0..n {
        for j in 0..i {
            let (x, y) = (a[i * n + j], a[j * n + i]);
            if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                return Err(Error::InvalidConfig(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    // Gershgorin bracket
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r: f64 = (0..n).filter(|&j| j != i).map(|j| a[i * n + j].abs()).sum();
        lo = lo.min(a[i * n + i] - r);
        hi = hi.max(a[i * n + i] + r);
    }
    let scale = lo.abs().max(hi.abs()).max(1e-300);
    let mut work = vec![0.0; n * n];
    for _ in 0..200 {
        if hi - lo <= 1e-15 * scale {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if is_positive_definite(a, n, mid, &mut work) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn is_positive_definite(a: &[f64], n: usize, shift: f64, l: &mut [f64]) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j] - shift;
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    true
}

/// Block criterion: `A_ii = rho_i`, `A_ij = -kappa_ij`; `rho = lambda_min(A)`
/// when positive. `kappa` is row-major `n x n`; its diagonal is ignored.
pub fn otto_reznikoff(rho: &[f64], kappa: &[f64]) -> Result<LsiConstant> {
    let n = rho.len();
    if kappa.len() != n * n {
        return Err(Error::Dimension { expected: n * n, got: kappa.len() });
    }
    for (i, &r) in rho.iter().enumerate() {
        positive(&format!("rho_{i}"), r)?;
    }
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                a[i * n + j] = rho[i];
            } else {
                let k = kappa[i * n + j];
                if k < 0.0 {
                    return Err(Error::InvalidConfig(format!("kappa_{i}{j} = {k} is negative")));
                }
                a[i * n + j] = -k;
            }
        }
    }
    let lmin = min_eigenvalue(&a, n)?;
    if !(lmin > 0.0) {
        return Err(Error::Numerical(format!(
            "interaction matrix is not positive definite (lambda_min = {lmin})"
        )));
    }
    let rows: Vec<&[f64]> = kappa.chunks(n).collect();
    LsiConstant::new(
        lmin,
        LsiProvenance::OttoReznikoff,
        "lambda_min([rho_i on diagonal, -kappa_ij off diagonal])",
        json!({ "rho": rho, "kappa": rows }),
    )
}

/// Combines a fluctuation constant `rho1`, a macroscopic constant `rho2`
/// and the coupling `kappa`:
/// `rho = (s - sqrt(s^2 - 4 rho1 rho2)) / 2`, `s = rho1 + rho2 + kappa^2 / rho1`.
pub fn two_scale_combine(rho1: f64, rho2: f64, kappa: f64) -> Result<LsiConstant> {
    positive("rho1", rho1)?;
    positive("rho2", rho2)?;
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidConfig(format!("kappa must be >= 0, got {kappa}")));
    }
    let rho = if kappa == 0.0 {
        rho1.min(rho2)
    } else {
        let s = rho1 + rho2 + kappa * kappa / rho1;
        let disc = (s * s - 4.0 * rho1 * rho2).max(0.0);
        // the smaller root in cancellation-free form
        2.0 * rho1 * rho2 / (s + disc.sqrt())
    };
    LsiConstant::new(
        rho,
        LsiProvenance::TwoScale,
        "(s - sqrt(s^2 - 4 rho1 rho2)) / 2, s = rho1 + rho2 + kappa^2 / rho1",
        json!({ "rho1": rho1, "rho2": rho2, "kappa": kappa }),
    )
}

/// Least-squares fit `log y = c - rate t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRate {
    pub rate: f64,
    pub intercept: f64,
    /// Standard error of the slope from the fit residuals.
    pub rate_se: f64,
    pub points: usize,
}

/// Exponential decay rate of a positive series, a proxy for entropy decay.
pub fn decay_rate_proxy(times: &[f64], series: &[f64]) -> Result<DecayRate> {
    if times.len() != series.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            got: series.len(),
        });
    }
    if times.len() < 2 {
        return Err(Error::DegenerateFit("need at least 2 points".into()));
    }
    if let Some(v) = series.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::DegenerateFit(format!("series entry {v} is not positive")));
    }
    let n = times.len() as f64;
    let logs: Vec<f64> = series.iter().map(|v| v.ln()).collect();
    let tm = times.iter().sum::<f64>() / n;
    let lm = logs.iter().sum::<f64>() / n;
    let sxx: f64 = times.iter().map(|t| (t - tm) * (t - tm)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all times coincide".into()));
    }
    // referenced to logs[0] so that a constant series gives slope exactly 0
    let sxy: f64 = times.iter().zip(&logs).map(|(t, l)| (t - tm) * (l - logs[0])).sum();
    let slope = sxy / sxx;
    let intercept = lm - slope * tm;
    let rate_se = if times.len() > 2 {
        let rss: f64 = times
            .iter()
            .zip(&logs)
            .map(|(t, l)| {
                let r = l - intercept - slope * t;
                r * r
            })
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(DecayRate {
        rate: -slope,
        intercept,
        rate_se,
        points: times.len(),
    })
}

/// Spread of the macroscopic-time rates across system sizes: the largest
/// relative deviation from their mean. Small values mean the microscopic
/// rate scales like `N^{-2}`.
pub fn rate_spread(rates: &[f64]) -> Result<f64> {
    if rates.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    if mean == 0.0 {
        return Err(Error::DegenerateFit("mean rate is zero".into()));
    }
    Ok(rates.iter().map(|r| ((r - mean) / mean).abs()).fold(0.0, f64::max))
}
