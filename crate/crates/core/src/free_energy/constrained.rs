//! One-constraint coarse-grained Hamiltonian
//!
//! ```text
//! Hbar_N(m) = -(1/N) log int_{ (1/N) sum x = m } exp(-H(x)) dL^{N-1}(x)
//! ```
//!
//! The hyperplane measure is `sqrt(N)` times the disintegration of Lebesgue
//! measure along `sum x`, i.e. `dL^{N-1} = sqrt(N) delta(sum x - N m) dx`.
//!
//! Spins are written `x_i = m + u_i` with `u_i` on the lattice `dx Z`; the
//! partial sums `D_k = u_1 + ... + u_k` then live on the same lattice and the
//! constraint is `D_N = 0`. The recursion carries the joint weight
//! `w_k(u_k, D_k)` and costs one `G_u x G_u` by `G_u x G_D` product per site.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Lattice used by [`hbar_n`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedGrid {
    /// Lattice spacing of the spin offsets `u` and the partial sums.
    pub dx: f64,
    /// Half-width of the `u` range.
    pub half_width: f64,
    /// Half-width of the partial-sum range.
    pub sum_half_width: f64,
}

impl ConstrainedGrid {
    /// Default lattice for `n` sites.
    pub fn for_size(n: usize) -> Self {
        ConstrainedGrid {
            dx: 0.15,
            half_width: 7.5,
            sum_half_width: 6.0 + 7.5 * (n as f64).sqrt(),
        }
    }

    /// Halves the spacing while keeping both ranges.
    pub fn refined(&self) -> Self {
        ConstrainedGrid {
            dx: 0.5 * self.dx,
            ..*self
        }
    }

    /// Doubles the partial-sum range.
    pub fn widened(&self) -> Self {
        ConstrainedGrid {
            sum_half_width: 2.0 * self.sum_half_width,
            half_width: 1.5 * self.half_width,
            ..*self
        }
    }

    fn u_points(&self) -> usize {
        2 * (self.half_width / self.dx).round() as usize + 1
    }

    fn d_points(&self) -> usize {
        2 * (self.sum_half_width / self.dx).round() as usize + 1
    }
}

/// `Hbar_N(m)` for an `R = 1` model restricted to its first `n` sites.
pub fn hbar_n(model: &ModelSpec, m: f64, n: usize, grid: &ConstrainedGrid) -> Result<f64> {
    Ok(-log_hyperplane_integral(model, m, n, grid)? / n as f64)
}

/// `log int_{mean = m} exp(-H) dL^{N-1}`.
pub fn log_hyperplane_integral(model: &ModelSpec, m: f64, n: usize, grid: &ConstrainedGrid) -> Result<f64> {
    if model.range() != 1 {
        return Err(Error::UnsupportedRange(model.range()));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("empty lattice".into()));
    }
    if n > model.n && model.has_field() {
        return Err(Error::Dimension {
            expected: model.n,
            got: n,
        });
    }
    if !(grid.dx > 0.0) {
        return Err(Error::InvalidConfig("lattice spacing must be positive".into()));
    }
    let dx = grid.dx;
    let gu = grid.u_points();
    let gd = grid.d_points();
    let cu = (gu - 1) / 2;
    let cd = (gd - 1) / 2;
    if n == 1 {
        return Ok(-model.potential.psi(m) - model.field_at(0) * m);
    }
    let xs: Vec<f64> = (0..gu).map(|a| m + (a as f64 - cu as f64) * dx).collect();
    let h = model.kernel.coupling(1);
    let bond = DMatrix::from_fn(gu, gu, |a2, a| (-h * xs[a2] * xs[a]).exp());
    let tau = centering_tilt(model, m);
    // exp(tau u) multiplies to one on the constraint and keeps the walk centred
    let site = |k: usize| -> (Vec<f64>, f64) {
        let s = model.field_at(k);
        let lw: Vec<f64> = xs
            .iter()
            .map(|&x| -model.potential.psi(x) - s * x + tau * (x - m))
            .collect();
        let c = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lw.iter().map(|l| (l - c).exp()).collect(), c)
    };

    let reach_error = || {
        Error::GridReach(format!(
            "partial sums leave [-{0}, {0}]; widen sum_half_width",
            grid.sum_half_width
        ))
    };
    let mut w = DMatrix::<f64>::zeros(gu, gd);
    let (f0, c0) = site(0);
    let mut log_scale = c0;
    let peak0 = f0.iter().cloned().fold(0.0, f64::max);
    for a in 0..gu {
        let target = cd as isize + a as isize - cu as isize;
        if target < 0 || target >= gd as isize {
            if f0[a] > 1e-13 * peak0 {
                return Err(reach_error());
            }
            continue;
        }
        w[(a, target as usize)] = f0[a];
    }
    let mut leaked = 0.0f64;
    for k in 1..n {
        let tmp = &bond * &w;
        let (f, c) = site(k);
        log_scale += c;
        let mut next = DMatrix::<f64>::zeros(gu, gd);
        for d in 0..gd {
            for a2 in 0..gu {
                let v = tmp[(a2, d)];
                if v == 0.0 {
                    continue;
                }
                let target = d as isize + a2 as isize - cu as isize;
                if target < 0 || target >= gd as isize {
                    leaked += f[a2] * v;
                    continue;
                }
                next[(a2, target as usize)] = f[a2] * v;
            }
        }
        let norm = next.amax();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical("constrained recursion underflow".into()));
        }
        // mass pushed off the partial-sum lattice must be negligible
        if leaked > 1e-12 * next.sum() {
            return Err(reach_error());
        }
        leaked = 0.0;
        next /= norm;
        log_scale += norm.ln();
        w = next;
    }
    let total: f64 = (0..gu).map(|a| w[(a, cd)]).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("constrained integral vanished".into()));
    }
    // weight of the last spin at the edge of the offset range must be negligible
    if w[(0, cd)].max(w[(gu - 1, cd)]) > 1e-10 * total {
        return Err(Error::GridReach(format!(
            "spin offsets reach +-{}; widen half_width",
            grid.half_width
        )));
    }
    Ok(log_scale + total.ln() + (n as f64 - 1.0) * dx.ln() + 0.5 * (n as f64).ln())
}

/// Field `tau` making the tilted single-site law `exp(tau x - psi_eff(x))`
/// have mean `m`, where `psi_eff` adds the mean-field coupling to the
/// neighbours. Only used to centre the recursion, so an approximate answer
/// is enough.
fn centering_tilt(model: &ModelSpec, m: f64) -> f64 {
    let h = model.kernel.coupling(1);
    let field = model.field.as_ref().map_or(0.0, |s| s.iter().sum::<f64>() / s.len() as f64);
    let shift = field + 2.0 * h * m;
    let grid = crate::quadrature::QuadratureGrid::centered(m, 12.0, 961, crate::quadrature::QuadratureRule::Trapezoid)
        .expect("static grid");
    let mean_at = |tau: f64| -> f64 {
        let lw: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| (tau - shift) * x - model.potential.psi(x))
            .collect();
        let c = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut zx) = (0.0, 0.0);
        for (&x, l) in grid.nodes().iter().zip(&lw) {
            let e = (l - c).exp();
            z += e;
            zx += e * x;
        }
        zx / z
    };
    // the mean is increasing in tau; psi'' >= 1 - sup|psi_b''| bounds the slope away from zero
    let (mut lo, mut hi) = (m - 50.0, m + 50.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gaussian_closed_form() {
        for (n, m) in [(4usize, 0.0), (4, 1.3), (9, -0.7), (32, 0.5)] {
            let model = ModelSpec::gaussian(n);
            let got = hbar_n(&model, m, n, &ConstrainedGrid::for_size(n)).unwrap();
            let exact = 0.5 * m * m - (n as f64 - 1.0) / (2.0 * n as f64) * (2.0 * PI).ln();
            assert!((got - exact).abs() < 1e-10, "n={n} m={m}: {got} vs {exact}");
        }
        let v = hbar_n(&ModelSpec::gaussian(4), 0.0, 4, &ConstrainedGrid::for_size(4)).unwrap();
        assert!((v + 0.6892044).abs() < 1e-6);
    }

    #[test]
    fn interacting_gaussian_constrained_determinant() {
        // Gaussian N(0, M^{-1}) conditioned on sum = N m
        let n = 5;
        let h = 0.25;
        let model = ModelSpec::new(
            n,
            crate::model::PotentialSpec::Zero,
            crate::model::InteractionKernel::nearest_neighbour(h, 0.1),
        );
        let mut mat = DMatrix::<f64>::identity(n, n);
        for i in 0..n - 1 {
            mat[(i, i + 1)] = h;
            mat[(i + 1, i)] = h;
        }
        let cov = mat.clone().try_inverse().unwrap();
        let var_sum: f64 = cov.iter().sum();
        let m = 0.4;
        // int delta(sum x - s) e^{-x'Mx/2} = (2pi)^{n/2} det(M)^{-1/2} * N(s; 0, var_sum)
        let s = n as f64 * m;
        let log_z = 0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * mat.determinant().ln()
            - 0.5 * s * s / var_sum
            - 0.5 * (2.0 * PI * var_sum).ln()
            + 0.5 * (n as f64).ln();
        let got = log_hyperplane_integral(&model, m, n, &ConstrainedGrid::for_size(n)).unwrap();
        assert!((got - log_z).abs() < 1e-10, "{got} vs {log_z}");
    }

    #[test]
    fn reflection_symmetry_and_refinement() {
        let model = ModelSpec::double_well(8);
        let g = ConstrainedGrid::for_size(8);
        let a = hbar_n(&model, 0.6, 8, &g).unwrap();
        let b = hbar_n(&model, -0.6, 8, &g).unwrap();
        assert!((a - b).abs() < 1e-12);
        let c = hbar_n(&model, 0.6, 8, &g.refined()).unwrap();
        assert!((a - c).abs() < 1e-6);
    }

    #[test]
    fn narrow_sum_range_is_reported() {
        let model = ModelSpec::double_well(16);
        let g = ConstrainedGrid {
            dx: 0.15,
            half_width: 7.5,
            sum_half_width: 1.5,
        };
        assert!(matches!(hbar_n(&model, 0.0, 16, &g), Err(Error::GridReach(_))));
    }
}
