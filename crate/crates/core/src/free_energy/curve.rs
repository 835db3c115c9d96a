//! Tabulated free energies, their Legendre transforms and the
//! one-dimensional coarse-grained curves `Hbar_K`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::constrained::{hbar_n, ConstrainedGrid};
use super::transfer::{a_limit, a_n_density};
use crate::error::{Error, Result};
use crate::interp::Hermite;
use crate::model::ModelSpec;
use crate::quadrature::QuadratureGrid;

/// Which free energy a curve tabulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum Provenance {
    FiniteN(usize),
    Limit,
}

/// Pointwise evaluator of `A_N(sigma)` or `A(sigma)`.
#[derive(Debug, Clone)]
pub struct FreeEnergySource {
    pub model: ModelSpec,
    pub provenance: Provenance,
    /// Fixed grid; `None` picks [`QuadratureGrid::for_params`] per stencil.
    pub grid: Option<QuadratureGrid>,
    /// Base step of the Richardson difference stencil.
    pub step: f64,
}

/// `A`, `A'` and `A''` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

impl FreeEnergySource {
    pub fn finite(model: &ModelSpec, n: usize) -> Self {
        FreeEnergySource {
            model: model.clone(),
            provenance: Provenance::FiniteN(n),
            grid: None,
            step: 0.02,
        }
    }

    pub fn limit(model: &ModelSpec) -> Self {
        FreeEnergySource {
            model: model.clone(),
            provenance: Provenance::Limit,
            grid: None,
            step: 0.02,
        }
    }

    fn grid_for(&self, sigma: f64) -> QuadratureGrid {
        match &self.grid {
            Some(g) => g.clone(),
            None => QuadratureGrid::for_params(sigma.abs() + 2.0 * self.step, 0.0),
        }
    }

    fn eval_on(&self, sigma: f64, grid: &QuadratureGrid) -> Result<f64> {
        match self.provenance {
            Provenance::FiniteN(n) => a_n_density(&self.model, sigma, grid, n),
            Provenance::Limit => a_limit(&self.model, sigma, grid),
        }
    }

    pub fn value(&self, sigma: f64) -> Result<f64> {
        self.eval_on(sigma, &self.grid_for(sigma))
    }

    /// Centred differences at steps `h` and `h/2`, Richardson-combined,
    /// all on one grid.
    pub fn derivatives(&self, sigma: f64) -> Result<Derivatives> {
        let grid = self.grid_for(sigma);
        let h = self.step;
        let a0 = self.eval_on(sigma, &grid)?;
        let ap = self.eval_on(sigma + h, &grid)?;
        let am = self.eval_on(sigma - h, &grid)?;
        let bp = self.eval_on(sigma + 0.5 * h, &grid)?;
        let bm = self.eval_on(sigma - 0.5 * h, &grid)?;
        let d1_h = (ap - am) / (2.0 * h);
        let d1_half = (bp - bm) / h;
        let d2_h = (ap - 2.0 * a0 + am) / (h * h);
        let d2_half = (bp - 2.0 * a0 + bm) / (0.25 * h * h);
        Ok(Derivatives {
            value: a0,
            first: (4.0 * d1_half - d1_h) / 3.0,
            second: (4.0 * d2_half - d2_h) / 3.0,
        })
    }
}

/// Tabulated `A`, `A'`, `A''` over a sorted sigma grid.
#[derive(Debug, Clone, Serialize)]
pub struct FreeEnergyCurve {
    pub sigma: Vec<f64>,
    pub a: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub provenance: Provenance,
    #[serde(skip)]
    a1_interp: Option<Hermite>,
    #[serde(skip)]
    a_interp: Option<Hermite>,
}

/// Default sigma grid `[-6, 6]` with step `0.05`.
pub fn default_sigma_grid() -> Vec<f64> {
    sigma_grid(-6.0, 6.0, 0.05)
}

pub fn sigma_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + step * k as f64).collect()
}

impl FreeEnergyCurve {
    /// Evaluates the source on every grid point, in parallel.
    pub fn tabulate(source: &FreeEnergySource, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() < 2 || sigma.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig("sigma grid must be increasing with >= 2 points".into()));
        }
        let ds: Vec<Derivatives> = sigma
            .par_iter()
            .map(|&s| source.derivatives(s))
            .collect::<Result<_>>()?;
        Self::from_table(
            sigma,
            ds.iter().map(|d| d.value).collect(),
            ds.iter().map(|d| d.first).collect(),
            ds.iter().map(|d| d.second).collect(),
            source.provenance,
        )
    }

    pub fn from_table(sigma: Vec<f64>, a: Vec<f64>, a1: Vec<f64>, a2: Vec<f64>, provenance: Provenance) -> Result<Self> {
        let a1_interp = Hermite::with_slopes(sigma.clone(), a1.clone(), a2.clone())?;
        let a_interp = Hermite::with_slopes(sigma.clone(), a.clone(), a1.clone())?;
        Ok(FreeEnergyCurve {
            sigma,
            a,
            a1,
            a2,
            provenance,
            a1_interp: Some(a1_interp),
            a_interp: Some(a_interp),
        })
    }

    fn interp(&self) -> (&Hermite, &Hermite) {
        (
            self.a_interp.as_ref().expect("curve built through from_table"),
            self.a1_interp.as_ref().expect("curve built through from_table"),
        )
    }

    /// `A'` strictly increasing along the table.
    pub fn is_monotone(&self) -> bool {
        self.a1.windows(2).all(|w| w[0] < w[1])
    }

    /// Smallest `C` with `A'' in [1/C, C]` on the table.
    pub fn convexity_constant(&self) -> f64 {
        let lo = self.a2.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.a2.iter().cloned().fold(0.0, f64::max);
        if lo <= 0.0 {
            return f64::INFINITY;
        }
        hi.max(1.0 / lo)
    }

    /// Smallest `C` with `|A'(sigma)| <= C (1 + |sigma|)` on the table.
    pub fn linear_growth_constant(&self) -> f64 {
        self.sigma
            .iter()
            .zip(&self.a1)
            .map(|(s, d)| d.abs() / (1.0 + s.abs()))
            .fold(0.0, f64::max)
    }

    pub fn a_range(&self) -> (f64, f64) {
        (self.a1[0], self.a1[self.a1.len() - 1])
    }

    pub fn a_at(&self, sigma: f64) -> f64 {
        self.interp().0.eval(sigma)
    }

    /// Interpolated `A'(sigma)` and `A''(sigma)`.
    pub fn a_prime(&self, sigma: f64) -> (f64, f64) {
        let (v, d, _) = self.interp().1.eval_all(sigma);
        (v, d)
    }

    /// `phi'(m)`: the `sigma` with interpolated `A'(sigma) = m`.
    pub fn phi_prime(&self, m: f64) -> Result<f64> {
        let (lo, hi) = self.a_range();
        if m < lo || m > hi {
            return Err(Error::GridReach(format!(
                "m = {m} outside the tabulated range [{lo:.4}, {hi:.4}]; extend the sigma grid"
            )));
        }
        let interp = self.interp().1;
        let k = self.a1.partition_point(|&v| v < m).clamp(1, self.sigma.len() - 1);
        let (mut a, mut b) = (self.sigma[k - 1], self.sigma[k]);
        let mut s = 0.5 * (a + b);
        for _ in 0..100 {
            let (f, df, _) = interp.eval_all(s);
            let r = f - m;
            if r.abs() < 1e-14 * (1.0 + m.abs()) {
                return Ok(s);
            }
            if r > 0.0 {
                b = s;
            } else {
                a = s;
            }
            let newton = s - r / df;
            s = if df > 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if b - a < 1e-15 {
                return Ok(s);
            }
        }
        Ok(s)
    }

    /// `phi'` and its derivative `1 / A''(phi'(m))`.
    pub fn phi_prime_with_slope(&self, m: f64) -> Result<(f64, f64)> {
        let s = self.phi_prime(m)?;
        let (_, dd) = self.a_prime(s);
        Ok((s, 1.0 / dd))
    }

    /// `phi(m) = sigma* m - A(sigma*)` from the interpolants.
    pub fn phi(&self, m: f64) -> Result<f64> {
        let s = self.phi_prime(m)?;
        Ok(s * m - self.a_at(s))
    }

    /// CSV with header `sigma,A,Aprime,Adoubleprime`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,A,Aprime,Adoubleprime\n");
        for k in 0..self.sigma.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.sigma[k], self.a[k], self.a1[k], self.a2[k]
            ));
        }
        out
    }
}

/// Legendre transform at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegendreResult {
    pub m: f64,
    pub sigma_star: f64,
    pub value: f64,
    pub derivative: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Newton on `A'(sigma) = m` with a bisection safeguard; the curve only
/// seeds the bracket, every iterate is evaluated from the source.
pub fn legendre(source: &FreeEnergySource, curve: Option<&FreeEnergyCurve>, m: f64) -> Result<LegendreResult> {
    let (mut lo, mut hi) = match curve {
        Some(c) => {
            let (a, b) = c.a_range();
            if m >= a && m <= b {
                let k = c.a1.partition_point(|&v| v < m).clamp(1, c.sigma.len() - 1);
                (c.sigma[k - 1], c.sigma[k])
            } else {
                (c.sigma[0], c.sigma[c.sigma.len() - 1])
            }
        }
        None => (-1.0, 1.0),
    };
    // make sure the bracket really brackets
    let mut expansions = 0;
    loop {
        let dlo = source.derivatives(lo)?.first;
        let dhi = source.derivatives(hi)?.first;
        if dlo <= m && dhi >= m {
            break;
        }
        if dlo > m {
            lo -= (hi - lo).max(1.0);
        }
        if dhi < m {
            hi += (hi - lo).max(1.0);
        }
        expansions += 1;
        if expansions > 12 || lo < -60.0 || hi > 60.0 {
            return Err(Error::InvalidConfig(format!(
                "m = {m} outside the reachable range of A'"
            )));
        }
    }
    let mut s = 0.5 * (lo + hi);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let d = source.derivatives(s)?;
        let r = d.first - m;
        if r.abs() < 1e-10 {
            return Ok(LegendreResult {
                m,
                sigma_star: s,
                value: s * m - d.value,
                derivative: s,
                residual: r,
                iterations,
            });
        }
        if r > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let newton = s - r / d.second;
        s = if d.second > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if iterations > 200 || hi - lo < 1e-15 {
            return Err(Error::Numerical(format!(
                "Legendre solve stalled at m = {m} (residual {r:e})"
            )));
        }
    }
}

/// `Hbar_K` tabulated on an `m` grid.
#[derive(Debug, Clone, Serialize)]
pub struct CoarseGrainedCurve {
    pub k: usize,
    pub m: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    #[serde(skip)]
    value_interp: Option<Hermite>,
    #[serde(skip)]
    slope_interp: Option<Hermite>,
}

impl CoarseGrainedCurve {
    /// Tabulates `Hbar_K` on `m_grid` (uniform, increasing) in parallel.
    pub fn tabulate(model: &ModelSpec, k: usize, m_grid: Vec<f64>) -> Result<Self> {
        let grid = ConstrainedGrid::for_size(k);
        let values: Vec<f64> = m_grid
            .par_iter()
            .map(|&m| hbar_n(model, m, k, &grid))
            .collect::<Result<_>>()?;
        Self::from_values(k, m_grid, values)
    }

    /// Builds the interpolants from tabulated values. Slopes come from
    /// fourth-order differences (second order at the two outer points);
    /// the slope table is interpolated monotonically.
    pub fn from_values(k: usize, m: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = m.len();
        if n < 5 || values.len() != n {
            return Err(Error::InvalidConfig("coarse-grained table needs >= 5 points".into()));
        }
        let h = m[1] - m[0];
        if m.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0)) || h <= 0.0 {
            return Err(Error::InvalidConfig("m grid must be uniform and increasing".into()));
        }
        let mut slopes = vec![0.0; n];
        for i in 0..n {
            slopes[i] = if i >= 2 && i + 2 < n {
                (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2]) / (12.0 * h)
            } else if i == 0 {
                (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h)
            } else {
                (values[i + 1] - values[i - 1]) / (2.0 * h)
            };
        }
        let value_interp = Hermite::with_slopes(m.clone(), values.clone(), slopes.clone())?;
        let slope_interp = Hermite::monotone(m.clone(), slopes.clone())?;
        Ok(CoarseGrainedCurve {
            k,
            m,
            values,
            slopes,
            value_interp: Some(value_interp),
            slope_interp: Some(slope_interp),
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.m[0], self.m[self.m.len() - 1])
    }

    fn check(&self, y: f64) -> Result<()> {
        let (a, b) = self.domain();
        if y < a || y > b || !y.is_finite() {
            return Err(Error::GridReach(format!(
                "y = {y} outside the tabulated range [{a}, {b}] of Hbar_{}; extend the m grid",
                self.k
            )));
        }
        Ok(())
    }

    pub fn value(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.value_interp.as_ref().expect("built via from_values").eval(y))
    }

    /// `Hbar_K'(y)`.
    pub fn slope(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.slope_interp.as_ref().expect("built via from_values").eval(y))
    }

    /// `Hbar_K''(y)` from the monotone slope interpolant.
    pub fn curvature(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.slope_interp.as_ref().expect("built via from_values").derivative(y))
    }

    /// Second differences of the table divided by `h^2`.
    pub fn second_differences(&self) -> Vec<f64> {
        let h = self.m[1] - self.m[0];
        self.values
            .windows(3)
            .map(|w| (w[0] - 2.0 * w[1] + w[2]) / (h * h))
            .collect()
    }

    /// Smallest `C` with `Hbar''` in `[1/C, C]` on the interior.
    pub fn convexity_constant(&self) -> f64 {
        let d2 = self.second_differences();
        let lo = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d2.iter().cloned().fold(0.0, f64::max);
        if lo <= 0.0 {
            return f64::INFINITY;
        }
        hi.max(1.0 / lo)
    }

    /// CSV with header `m,value,slope`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,value,slope\n");
        for i in 0..self.m.len() {
            out.push_str(&format!("{},{},{}\n", self.m[i], self.values[i], self.slopes[i]));
        }
        out
    }
}

/// `Hbar_N(m) - H_N(m)` and `Hbar_N(m) - phi(m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CramerGap {
    pub m: f64,
    pub n: usize,
    pub hbar: f64,
    pub legendre_finite: f64,
    pub phi: f64,
    pub gap_finite: f64,
    pub gap_limit: f64,
}

pub fn cramer_gap(model: &ModelSpec, m: f64, n: usize) -> Result<CramerGap> {
    let hbar = hbar_n(model, m, n, &ConstrainedGrid::for_size(n))?;
    let finite = legendre(&FreeEnergySource::finite(model, n), None, m)?;
    let limit = legendre(&FreeEnergySource::limit(model), None, m)?;
    Ok(CramerGap {
        m,
        n,
        hbar,
        legendre_finite: finite.value,
        phi: limit.value,
        gap_finite: hbar - finite.value,
        gap_limit: hbar - limit.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gaussian_free_energies() {
        let model = ModelSpec::gaussian(8);
        let lim = FreeEnergySource::limit(&model);
        for s in [-2.0, 0.0, 1.0, 3.0] {
            let d = lim.derivatives(s).unwrap();
            assert!((d.value - (0.5 * s * s + 0.5 * (2.0 * PI).ln())).abs() < 1e-10);
            assert!((d.first - s).abs() < 1e-8);
            assert!((d.second - 1.0).abs() < 1e-6);
        }
        let r = legendre(&lim, None, 1.0).unwrap();
        assert!((r.sigma_star - 1.0).abs() < 1e-9);
        assert!((r.value + 0.4189385).abs() < 1e-7);
        let fin = FreeEnergySource::finite(&model, 5);
        assert!((legendre(&fin, None, -0.5).unwrap().value - (0.125 - 0.5 * (2.0 * PI).ln())).abs() < 1e-8);
    }

    #[test]
    fn cramer_gap_gaussian() {
        let model = ModelSpec::gaussian(4);
        let g = cramer_gap(&model, 0.3, 4).unwrap();
        assert!((g.gap_finite - 0.2297346).abs() < 1e-6);
        assert!((4.0 * g.gap_limit - 0.5 * (2.0 * PI).ln()).abs() < 1e-6);
    }

    #[test]
    fn curve_interpolants_and_phi() {
        let model = ModelSpec::double_well(16);
        let src = FreeEnergySource::limit(&model);
        let curve = FreeEnergyCurve::tabulate(&src, sigma_grid(-2.0, 2.0, 0.1)).unwrap();
        assert!(curve.is_monotone());
        assert!(curve.convexity_constant().is_finite());
        let direct = legendre(&src, Some(&curve), 0.5).unwrap();
        assert!(direct.residual.abs() < 1e-10);
        let (s, _) = curve.phi_prime_with_slope(0.5).unwrap();
        assert!((s - direct.sigma_star).abs() < 1e-5);
        assert!((curve.phi(0.5).unwrap() - direct.value).abs() < 1e-7);
        // phi at the symmetric point
        let zero = legendre(&src, Some(&curve), 0.0).unwrap();
        assert!(zero.sigma_star.abs() < 1e-9);
    }

    #[test]
    fn gaussian_coarse_curve_has_unit_curvature() {
        let model = ModelSpec::gaussian(8);
        let grid = sigma_grid(-2.0, 2.0, 0.1);
        let c = CoarseGrainedCurve::tabulate(&model, 8, grid).unwrap();
        for y in [-1.5, -0.3, 0.0, 0.77, 1.6] {
            assert!((c.curvature(y).unwrap() - 1.0).abs() < 1e-3);
            assert!((c.slope(y).unwrap() - y).abs() < 1e-6);
        }
        assert!(c.value(2.5).is_err());
    }
}
