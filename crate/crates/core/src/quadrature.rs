//! One-dimensional quadrature grids used by the transfer-operator and
//! constrained-integral computations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of nodes accepted for a free-energy grid.
pub const MIN_POINTS: usize = 129;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    Trapezoid,
    GaussLegendre,
}

/// Nodes and weights on `[center - L, center + L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub half_width: f64,
    pub points: usize,
    pub rule: QuadratureRule,
    pub center: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(half_width: f64, points: usize, rule: QuadratureRule) -> Result<Self> {
        Self::centered(0.0, half_width, points, rule)
    }

    pub fn centered(center: f64, half_width: f64, points: usize, rule: QuadratureRule) -> Result<Self> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "grid half-width must be positive, got {half_width}"
            )));
        }
        if points < 2 {
            return Err(Error::InvalidConfig("grid needs at least 2 points".into()));
        }
        let (nodes, weights) = match rule {
            QuadratureRule::Trapezoid => {
                let dx = 2.0 * half_width / (points - 1) as f64;
                let nodes: Vec<f64> = (0..points)
                    .map(|k| center - half_width + dx * k as f64)
                    .collect();
                let mut weights = vec![dx; points];
                weights[0] *= 0.5;
                weights[points - 1] *= 0.5;
                (nodes, weights)
            }
            QuadratureRule::GaussLegendre => {
                let (t, w) = gauss_legendre(points);
                (
                    t.iter().map(|&t| center + half_width * t).collect(),
                    w.iter().map(|&w| half_width * w).collect(),
                )
            }
        };
        Ok(QuadratureGrid {
            half_width,
            points,
            rule,
            center,
            nodes,
            weights,
        })
    }

    /// Default trapezoid grid for parameters `(sigma, m)`: half-width
    /// `6 (1 + |sigma| + |m|) + 2` and spacing at most `0.08`.
    pub fn for_params(sigma: f64, m: f64) -> Self {
        let half_width = 6.0 * (1.0 + sigma.abs() + m.abs()) + 2.0;
        let mut points = ((2.0 * half_width / 0.08).ceil() as usize + 1).max(MIN_POINTS);
        if points % 2 == 0 {
            points += 1;
        }
        Self::new(half_width, points, QuadratureRule::Trapezoid).expect("valid default grid")
    }

    /// Same rule and half-width with `2G - 1` points (every old node kept
    /// for the trapezoid rule).
    pub fn refined(&self) -> Self {
        Self::centered(self.center, self.half_width, 2 * self.points - 1, self.rule)
            .expect("refinement of a valid grid")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Node spacing of a trapezoid grid.
    pub fn spacing(&self) -> Option<f64> {
        match self.rule {
            QuadratureRule::Trapezoid => Some(2.0 * self.half_width / (self.points - 1) as f64),
            QuadratureRule::GaussLegendre => None,
        }
    }

    /// Checks the reach invariant `L >= 6 (1 + |sigma| + |m|)` and the
    /// minimum node count.
    pub fn check_reach(&self, sigma: f64, m: f64) -> Result<()> {
        let need = 6.0 * (1.0 + sigma.abs() + m.abs());
        if self.half_width + 1e-12 < need {
            return Err(Error::GridReach(format!(
                "half-width {} < {need} required for sigma = {sigma}, m = {m}",
                self.half_width
            )));
        }
        if self.points < MIN_POINTS {
            return Err(Error::GridReach(format!(
                "{} points < {MIN_POINTS}",
                self.points
            )));
        }
        Ok(())
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    (
        t.iter().map(|t| c + h * t).collect(),
        w.iter().map(|w| h * w).collect(),
    )
}
