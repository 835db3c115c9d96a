//! The macroscopic equation `zeta_t = (phi'(zeta))_{theta theta}` on the unit
//! torus, stepped in `w = phi'(zeta)` so that `zeta = A'(w)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_energy::FreeEnergyCurve;
use crate::metrics::TorusFunction;

/// The constitutive law `zeta = A'(w)`.
#[derive(Debug, Clone, Copy)]
pub enum MacroFlux<'a> {
    /// `phi'(z) = z`, the heat equation.
    Linear,
    /// Tabulated `A'`, `A''` of a free-energy curve.
    Curve(&'a FreeEnergyCurve),
}

impl MacroFlux<'_> {
    fn phi_prime(&self, z: f64) -> Result<f64> {
        match self {
            MacroFlux::Linear => Ok(z),
            MacroFlux::Curve(c) => c.phi_prime(z),
        }
    }

    /// `(A'(w), A''(w))`.
    fn a_prime(&self, w: f64) -> Result<(f64, f64)> {
        match self {
            MacroFlux::Linear => Ok((w, 1.0)),
            MacroFlux::Curve(c) => {
                let (lo, hi) = (c.sigma[0], c.sigma[c.sigma.len() - 1]);
                if !(w >= lo && w <= hi) {
                    return Err(Error::GridReach(format!(
                        "phi' = {w} left the sigma table [{lo}, {hi}]"
                    )));
                }
                Ok(c.a_prime(w))
            }
        }
    }

    /// `phi(z) = w z - A(w)` at `w = phi'(z)`, up to an additive constant in
    /// the linear case.
    fn phi(&self, z: f64, w: f64) -> f64 {
        match self {
            MacroFlux::Linear => 0.5 * z * z,
            MacroFlux::Curve(c) => w * z - c.a_at(w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroPdeConfig {
    /// Number of periodic cells.
    pub cells: usize,
    pub dt: f64,
    pub checkpoints: usize,
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Deepest allowed recursive step halving.
    pub max_halvings: usize,
}

impl Default for MacroPdeConfig {
    fn default() -> Self {
        MacroPdeConfig {
            cells: 256,
            dt: 1e-4,
            checkpoints: 10,
            newton_tol: 1e-10,
            max_newton: 30,
            max_halvings: 12,
        }
    }
}

impl MacroPdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells < crate::metrics::MIN_CELLS {
            return Err(Error::InvalidConfig(format!("PDE grid needs >= {} cells", crate::metrics::MIN_CELLS)));
        }
        if !(self.dt > 0.0) || self.checkpoints == 0 || !(self.newton_tol > 0.0) || self.max_newton == 0 {
            return Err(Error::InvalidConfig("PDE needs dt > 0, checkpoints >= 1 and a Newton budget".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacroTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<TorusFunction>,
    /// `int phi(zeta)` at the checkpoints.
    pub energy: Vec<f64>,
    pub steps: usize,
    pub halvings: usize,
    pub max_newton_residual: f64,
    /// Largest increase of `int phi(zeta)` over one step.
    pub max_energy_increase: f64,
    /// Largest `|int zeta(t) - int zeta_0|`.
    pub max_mass_drift: f64,
}

impl MacroTrajectory {
    /// CSV with header `t,theta_0,..`.
    pub fn snapshots_csv(&self) -> String {
        let cells = self.snapshots.first().map_or(0, |s| s.len());
        let mut out = String::from("t");
        for j in 0..cells {
            out.push_str(&format!(",theta_{j}"));
        }
        out.push('\n');
        for (t, s) in self.times.iter().zip(&self.snapshots) {
            out.push_str(&t.to_string());
            for v in s.values() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn at(&self, t: f64) -> Option<&TorusFunction> {
        self.times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .map(|k| &self.snapshots[k])
    }
}

/// Solves the periodic tridiagonal system
/// `lower_i x_{i-1} + diag_i x_i + upper_i x_{i+1} = rhs_i` (indices mod `n`)
/// by the Thomas algorithm with a Sherman–Morrison correction.
pub fn solve_cyclic_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::Dimension { expected: n, got: rhs.len() });
    }
    if n < 3 {
        return Err(Error::InvalidConfig("cyclic tridiagonal system needs n >= 3".into()));
    }
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= upper[n - 1] * lower[0] / gamma;
    let x = thomas(lower, &b, upper, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = upper[n - 1];
    let z = thomas(lower, &b, upper, &u)?;
    // v = (1, 0, .., lower_0 / gamma)
    let vx = x[0] + lower[0] / gamma * x[n - 1];
    let vz = z[0] + lower[0] / gamma * z[n - 1];
    let denom = 1.0 + vz;
    if denom.abs() < 1e-300 {
        return Err(Error::Numerical("singular cyclic tridiagonal system".into()));
    }
    let f = vx / denom;
    Ok(x.iter().zip(&z).map(|(a, b)| a - f * b).collect())
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv == 0.0 {
        return Err(Error::Numerical("zero pivot in tridiagonal solve".into()));
    }
    c[0] = upper[0] / piv;
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - lower[i] * c[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::Numerical("zero pivot in tridiagonal solve".into()));
        }
        c[i] = upper[i] / piv;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / piv;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

struct Stepper<'a> {
    flux: MacroFlux<'a>,
    cfg: &'a MacroPdeConfig,
    inv_h2: f64,
    max_residual: f64,
    halvings: usize,
}

impl Stepper<'_> {
    fn laplacian(&self, w: &[f64], out: &mut [f64]) {
        let n = w.len();
        for i in 0..n {
            out[i] = self.inv_h2 * (w[(i + n - 1) % n] - 2.0 * w[i] + w[(i + 1) % n]);
        }
    }

    /// One backward-Euler step; `None` when Newton fails to converge.
    fn try_step(&mut self, zeta: &[f64], w: &[f64], dt: f64) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        let n = zeta.len();
        let mut w = w.to_vec();
        let mut lap = vec![0.0; n];
        let mut resid = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let off = vec![-dt * self.inv_h2; n];
        let scale = 1.0 + zeta.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for _ in 0..self.cfg.max_newton {
            self.laplacian(&w, &mut lap);
            let mut norm = 0.0f64;
            for i in 0..n {
                let (ap, app) = match self.flux.a_prime(w[i]) {
                    Ok(v) => v,
                    Err(_) => return Ok(None),
                };
                resid[i] = ap - zeta[i] - dt * lap[i];
                diag[i] = app + 2.0 * dt * self.inv_h2;
                norm = norm.max(resid[i].abs());
            }
            if !norm.is_finite() {
                return Ok(None);
            }
            if norm < self.cfg.newton_tol * scale {
                self.max_residual = self.max_residual.max(norm);
                let next: Vec<f64> = (0..n).map(|i| zeta[i] + dt * lap[i]).collect();
                return Ok(Some((next, w)));
            }
            let delta = match solve_cyclic_tridiagonal(&off, &diag, &off, &resid) {
                Ok(d) => d,
                Err(_) => return Ok(None),
            };
            for i in 0..n {
                w[i] -= delta[i];
            }
        }
        Ok(None)
    }

    fn step(&mut self, zeta: &[f64], w: &[f64], dt: f64, depth: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if let Some(out) = self.try_step(zeta, w, dt)? {
            return Ok(out);
        }
        if depth >= self.cfg.max_halvings {
            return Err(Error::Numerical(format!(
                "Newton failed after {depth} step halvings (dt = {dt:e})"
            )));
        }
        self.halvings += 1;
        let (z1, w1) = self.step(zeta, w, 0.5 * dt, depth + 1)?;
        self.step(&z1, &w1, 0.5 * dt, depth + 1)
    }
}

/// Backward Euler in `w`: solve `A'(w) - zeta^n - dt D^2 w = 0` by Newton,
/// then set `zeta^{n+1} = zeta^n + dt D^2 w`, which conserves mass exactly.
pub fn solve_macro_pde(flux: MacroFlux<'_>, zeta0: &TorusFunction, horizon: f64, cfg: &MacroPdeConfig) -> Result<MacroTrajectory> {
    cfg.validate()?;
    if zeta0.len() != cfg.cells {
        return Err(Error::Dimension {
            expected: cfg.cells,
            got: zeta0.len(),
        });
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidConfig("PDE horizon must be positive".into()));
    }
    let h = 1.0 / cfg.cells as f64;
    let mut st = Stepper {
        flux,
        cfg,
        inv_h2: 1.0 / (h * h),
        max_residual: 0.0,
        halvings: 0,
    };
    let mut zeta = zeta0.values().to_vec();
    let mut w: Vec<f64> = zeta.iter().map(|&z| flux.phi_prime(z)).collect::<Result<_>>()?;
    let energy_of = |zeta: &[f64], w: &[f64]| -> f64 { h * zeta.iter().zip(w).map(|(&z, &w)| flux.phi(z, w)).sum::<f64>() };
    let mass0 = h * zeta.iter().sum::<f64>();
    let mut energy = energy_of(&zeta, &w);
    let mut out = MacroTrajectory {
        times: vec![0.0],
        snapshots: vec![zeta0.clone()],
        energy: vec![energy],
        steps: 0,
        halvings: 0,
        max_newton_residual: 0.0,
        max_energy_increase: 0.0,
        max_mass_drift: 0.0,
    };
    let interval = horizon / cfg.checkpoints as f64;
    let per = (interval / cfg.dt).ceil().max(1.0) as usize;
    let dt = interval / per as f64;
    for c in 1..=cfg.checkpoints {
        for _ in 0..per {
            let (z1, w1) = st.step(&zeta, &w, dt, 0)?;
            zeta = z1;
            w = w1;
            out.steps += 1;
            let e = energy_of(&zeta, &w);
            out.max_energy_increase = out.max_energy_increase.max(e - energy);
            energy = e;
            out.max_mass_drift = out.max_mass_drift.max((h * zeta.iter().sum::<f64>() - mass0).abs());
        }
        out.times.push(c as f64 * interval);
        out.snapshots.push(TorusFunction::new(zeta.clone())?);
        out.energy.push(energy);
    }
    out.halvings = st.halvings;
    out.max_newton_residual = st.max_residual;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_energy::{sigma_grid, FreeEnergySource};
    use crate::model::ModelSpec;
    use nalgebra::{DMatrix, DVector};
    use std::f64::consts::PI;

    fn cosine(m: f64, a: f64) -> impl Fn(f64) -> f64 {
        move |t: f64| m * t + a * (2.0 * PI * t).sin() / (2.0 * PI)
    }

    #[test]
    fn cyclic_solver_matches_dense() {
        let n = 7;
        let lower: Vec<f64> = (0..n).map(|i| -1.0 - 0.1 * i as f64).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.5 + 0.05 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 4.0 + 0.3 * i as f64).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = diag[i];
            a[(i, (i + n - 1) % n)] = lower[i];
            a[(i, (i + 1) % n)] = upper[i];
        }
        let exact = a.lu().solve(&DVector::from_vec(rhs.clone())).unwrap();
        let x = solve_cyclic_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        for i in 0..n {
            assert!((x[i] - exact[i]).abs() < 1e-12);
        }
    }

    fn heat_error(cells: usize, dt: f64) -> f64 {
        let (m, a, t) = (0.3, 0.5, 0.05);
        let z0 = TorusFunction::cell_averages(cells, cosine(m, a)).unwrap();
        let cfg = MacroPdeConfig {
            cells,
            dt,
            checkpoints: 5,
            ..MacroPdeConfig::default()
        };
        let tr = solve_macro_pde(MacroFlux::Linear, &z0, t, &cfg).unwrap();
        assert!(tr.max_mass_drift < 1e-13);
        assert!(tr.max_energy_increase <= 1e-14);
        let exact = TorusFunction::cell_averages(cells, cosine(m, a * (-4.0 * PI * PI * t).exp())).unwrap();
        let last = tr.snapshots.last().unwrap();
        last.values()
            .iter()
            .zip(exact.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn heat_equation_converges_at_second_order_in_space() {
        // dt proportional to h^2 keeps the time error on the spatial scale
        let e1 = heat_error(32, 0.4 / (32.0 * 32.0));
        let e2 = heat_error(64, 0.1 / (32.0 * 32.0));
        let e3 = heat_error(128, 0.025 / (32.0 * 32.0));
        assert!(e1 < 5e-3, "{e1}");
        let r1 = (e1 / e2).log2();
        let r2 = (e2 / e3).log2();
        assert!(r1 > 1.8 && r2 > 1.8, "{r1} {r2}");
    }

    #[test]
    fn constants_are_stationary() {
        let z0 = TorusFunction::new(vec![0.7; 16]).unwrap();
        let cfg = MacroPdeConfig {
            cells: 16,
            dt: 1e-3,
            checkpoints: 2,
            ..MacroPdeConfig::default()
        };
        let tr = solve_macro_pde(MacroFlux::Linear, &z0, 0.1, &cfg).unwrap();
        assert!(tr.snapshots.iter().all(|s| s.values().iter().all(|v| (v - 0.7).abs() < 1e-14)));
        assert!(tr.snapshots_csv().starts_with("t,theta_0,"));
    }

    fn double_well_curve() -> FreeEnergyCurve {
        let model = ModelSpec::double_well(16);
        FreeEnergyCurve::tabulate(&FreeEnergySource::limit(&model), sigma_grid(-4.0, 4.0, 0.1)).unwrap()
    }

    #[test]
    fn nonlinear_flow_is_ordered_conservative_and_self_convergent() {
        let curve = double_well_curve();
        let cells = 64;
        let cfg = |dt: f64| MacroPdeConfig {
            cells,
            dt,
            checkpoints: 1,
            ..MacroPdeConfig::default()
        };
        let lo = TorusFunction::cell_averages(cells, cosine(0.2, 0.8)).unwrap();
        let hi = TorusFunction::cell_averages(cells, |t| cosine(0.2, 0.8)(t) + 0.1 * t + 0.05 * (1.0 - (2.0 * PI * t).cos()) / (2.0 * PI)).unwrap();
        assert!(lo.values().iter().zip(hi.values()).all(|(a, b)| a <= b));
        let t = 0.02;
        let a = solve_macro_pde(MacroFlux::Curve(&curve), &lo, t, &cfg(1e-4)).unwrap();
        let b = solve_macro_pde(MacroFlux::Curve(&curve), &hi, t, &cfg(1e-4)).unwrap();
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert!(x.values().iter().zip(y.values()).all(|(p, q)| p <= q));
        }
        assert!(a.max_mass_drift < 1e-13);
        assert!(a.max_energy_increase <= 1e-12);
        assert!(a.max_newton_residual < 1e-9);
        let runs: Vec<Vec<f64>> = [4e-4, 2e-4, 1e-4]
            .iter()
            .map(|&dt| solve_macro_pde(MacroFlux::Curve(&curve), &lo, t, &cfg(dt)).unwrap().snapshots[1].values().to_vec())
            .collect();
        let d = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let rate = (d(&runs[0], &runs[1]) / d(&runs[1], &runs[2])).log2();
        assert!(rate >= 0.9, "{rate}");
    }
}
