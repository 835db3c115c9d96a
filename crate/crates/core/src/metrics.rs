//! `H^{-1}` distances on the torus, the discrete `A^{-1}` form and the
//! two-scale functional.

use serde::{Deserialize, Serialize};

use crate::coarse_grain::BlockScheme;
use crate::dynamics::KawasakiOperator;
use crate::error::{Error, Result};
use crate::stats::{self, MomentReport};

/// Smallest admissible torus grid.
pub const MIN_CELLS: usize = 8;

/// Piecewise-constant function on `n` equal cells of the unit torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusFunction {
    values: Vec<f64>,
    mean: f64,
}

impl TorusFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < MIN_CELLS {
            return Err(Error::InvalidConfig(format!(
                "torus grid needs >= {MIN_CELLS} cells, got {}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite torus function".into()));
        }
        let mean = stats::mean(&values);
        Ok(TorusFunction { values, mean })
    }

    /// Step function of a spin configuration: cell `i` carries `x_i`.
    pub fn step_embedding(x: &[f64]) -> Result<Self> {
        Self::new(x.to_vec())
    }

    /// Block-constant step function of a mesoscopic state.
    pub fn from_blocks(scheme: &BlockScheme, y: &[f64]) -> Result<Self> {
        Self::new(scheme.embed(y)?)
    }

    /// Exact cell averages of `f` given its antiderivative `big_f`.
    pub fn cell_averages(cells: usize, big_f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = 1.0 / cells as f64;
        let values = (0..cells)
            .map(|j| (big_f((j + 1) as f64 * h) - big_f(j as f64 * h)) / h)
            .collect();
        Self::new(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Same function on `factor` times as many cells.
    pub fn refined(&self, factor: usize) -> Self {
        let values = self
            .values
            .iter()
            .flat_map(|&v| std::iter::repeat(v).take(factor.max(1)))
            .collect();
        TorusFunction {
            values,
            mean: self.mean,
        }
    }

    /// `self - other` on the common refinement of both grids.
    pub fn difference(&self, other: &TorusFunction) -> Self {
        let n = lcm(self.len(), other.len());
        let a = self.refined(n / self.len());
        let b = other.refined(n / other.len());
        let values: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
        let mean = stats::mean(&values);
        TorusFunction { values, mean }
    }

    /// Shifts by a constant.
    pub fn shifted(&self, c: f64) -> Self {
        TorusFunction {
            values: self.values.iter().map(|v| v + c).collect(),
            mean: self.mean + c,
        }
    }

    /// `int f^2`.
    pub fn l2_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// `||f||^2_{H^{-1}} = int omega^2` with `omega' = f` and `int omega = 0`.
///
/// `omega` is piecewise linear for a piecewise-constant `f`, so the
/// integral is evaluated exactly cell by cell.
pub fn h_minus1_norm(f: &TorusFunction) -> Result<f64> {
    let scale = 1.0 + f.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if f.mean.abs() > 1e-10 * scale {
        return Err(Error::NonZeroMean { mean: f.mean });
    }
    let n = f.len();
    let h = 1.0 / n as f64;
    // nodal values of the primitive, with the residual mean removed so the
    // primitive closes up exactly
    let mut nodes = Vec::with_capacity(n + 1);
    let mut w = 0.0;
    nodes.push(0.0);
    for &v in &f.values {
        w += h * (v - f.mean);
        nodes.push(w);
    }
    let avg: f64 = nodes.windows(2).map(|p| 0.5 * h * (p[0] + p[1])).sum();
    let total: f64 = nodes
        .windows(2)
        .map(|p| {
            let a = p[0] - avg;
            let b = p[1] - avg;
            h * (a * a + a * b + b * b) / 3.0
        })
        .sum();
    Ok(total)
}

/// `||f - g||^2_{H^{-1}}` on the common refinement.
pub fn h_minus1_distance(f: &TorusFunction, g: &TorusFunction) -> Result<f64> {
    h_minus1_norm(&f.difference(g))
}

/// `(1/N) <x, A^{-1} x>` for mean-zero `x`.
pub fn discrete_form(x: &[f64], op: &KawasakiOperator) -> Result<f64> {
    Ok(op.inverse_quadratic_form(x)? / op.n() as f64)
}

fn ensemble_report(values: &[f64]) -> Result<MomentReport> {
    if values.is_empty() {
        return Err(Error::EmptySamples);
    }
    let k = values.len() as f64;
    let se = if values.len() > 1 {
        (stats::variance(values) / k).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(MomentReport {
        estimate: stats::mean(values),
        standard_error: se,
        effective_sample_size: k,
    })
}

/// `Theta = (1/2N) E <x - N P* eta, A^{-1}(x - N P* eta)>` over an ensemble
/// of configurations sharing one time stamp.
pub fn theta_functional(
    states: &[Vec<f64>],
    eta: &[f64],
    scheme: &BlockScheme,
    op: &KawasakiOperator,
) -> Result<MomentReport> {
    let lift = scheme.embed(eta)?;
    let values: Vec<f64> = states
        .iter()
        .map(|x| {
            let d: Vec<f64> = x.iter().zip(&lift).map(|(a, b)| a - b).collect();
            Ok(0.5 * discrete_form(&d, op)?)
        })
        .collect::<Result<_>>()?;
    ensemble_report(&values)
}

/// `E ||xbar - zeta||^2_{H^{-1}}` over an ensemble.
pub fn micro_macro_error(states: &[Vec<f64>], zeta: &TorusFunction) -> Result<MomentReport> {
    let values: Vec<f64> = states
        .iter()
        .map(|x| h_minus1_distance(&TorusFunction::step_embedding(x)?, zeta))
        .collect::<Result<_>>()?;
    ensemble_report(&values)
}

/// `E ||xbar - eta_bar||^2_{H^{-1}}` over an ensemble.
pub fn micro_meso_error(states: &[Vec<f64>], eta: &[f64], scheme: &BlockScheme) -> Result<MomentReport> {
    let lifted = TorusFunction::from_blocks(scheme, eta)?;
    micro_macro_error(states, &lifted)
}

/// `||eta_bar - zeta||^2_{H^{-1}}`.
pub fn meso_macro_error(eta: &[f64], scheme: &BlockScheme, zeta: &TorusFunction) -> Result<f64> {
    h_minus1_distance(&TorusFunction::from_blocks(scheme, eta)?, zeta)
}

/// Constants of the two-scale criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleConstants {
    pub kappa: f64,
    pub lambda: f64,
    pub rho: f64,
    /// LSI constant of the coarse-grained measure.
    pub rho_hat: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl TwoScaleConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("rho", self.rho),
            ("rho_hat", self.rho_hat),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [("kappa", self.kappa), ("beta", self.beta), ("c1", self.c1), ("c2", self.c2)];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.c2 + self.beta < 0.0 {
            return Err(Error::InvalidConfig("c2 + beta must be non-negative".into()));
        }
        Ok(())
    }

    /// Right-hand side of the bound on `sup_t Theta(t)`:
    ///
    /// ```text
    /// Theta(0) + T M/N + (C1 gamma kappa^2 / (2 lambda rho^2)) / M^2
    ///   + sqrt(2 T gamma) (alpha + 2 C1 / rho_hat)^{1/2} (C1^{1/2} + (C2 + beta)^{1/2}) / M
    /// ```
    pub fn bound(&self, theta0: f64, horizon: f64, m: usize, n: usize) -> Result<f64> {
        self.validate()?;
        let m = m as f64;
        let quad = self.c1 * self.gamma * self.kappa * self.kappa / (2.0 * self.lambda * self.rho * self.rho);
        let lin = (2.0 * horizon * self.gamma).sqrt()
            * (self.alpha + 2.0 * self.c1 / self.rho_hat).sqrt()
            * (self.c1.sqrt() + (self.c2 + self.beta).sqrt());
        Ok(theta0 + horizon * m / n as f64 + quad / (m * m) + lin / m)
    }
}
