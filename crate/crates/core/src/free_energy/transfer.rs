//! Grand-canonical partition functions by transfer recursion.
//!
//! Every bond factor is stored in the balanced form
//! `exp(-h x y + l(x)/b + l(y)/b)` where `l = log(w) + sigma x - psi(x) - s x`
//! and `b` is the number of bonds a bulk site takes part in. The leftover
//! share of `l` at sites near the ends is applied when the site enters the
//! recursion. Strict diagonal dominance keeps every balanced exponent
//! bounded above, so nothing overflows on wide grids.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::quadrature::QuadratureGrid;

/// Largest exponent tolerated in a kernel entry.
const MAX_EXPONENT: f64 = 600.0;

fn site_log_weight(model: &ModelSpec, sigma: f64, grid: &QuadratureGrid, site: Option<usize>) -> Vec<f64> {
    let s = site.map_or(0.0, |i| model.field_at(i));
    grid.nodes()
        .iter()
        .zip(grid.weights())
        .map(|(&x, &w)| w.ln() + (sigma - s) * x - model.potential.psi(x))
        .collect()
}

fn check_grid(sigma: f64, grid: &QuadratureGrid) -> Result<()> {
    if grid.center != 0.0 {
        return Err(Error::InvalidConfig("free-energy grids must be centred at 0".into()));
    }
    grid.check_reach(sigma, 0.0)
}

fn exp_checked(e: f64) -> Result<f64> {
    if e > MAX_EXPONENT {
        return Err(Error::GridReach(format!(
            "kernel exponent {e:.1} overflows; shrink the grid half-width"
        )));
    }
    Ok(e.exp())
}

/// Largest node count of a dense bond matrix (128 MB).
pub const MAX_TRANSFER_POINTS: usize = 4001;

/// Balanced nearest-neighbour bond matrix between sites with log-weights
/// `la` (rows) and `lb` (columns).
fn bond_matrix(nodes: &[f64], h: f64, la: &[f64], lb: &[f64], share: f64) -> Result<DMatrix<f64>> {
    let g = nodes.len();
    if g > MAX_TRANSFER_POINTS {
        return Err(Error::GridReach(format!(
            "{g} nodes exceed the dense transfer limit {MAX_TRANSFER_POINTS}"
        )));
    }
    let mut m = DMatrix::zeros(g, g);
    for j in 0..g {
        for i in 0..g {
            m[(i, j)] = exp_checked(-h * nodes[i] * nodes[j] + share * (la[i] + lb[j]))?;
        }
    }
    Ok(m)
}

/// `a_N(sigma) = log int exp(sigma sum x - H(x)) dx` for a chain of `n`
/// sites. Handles `R = 1` and `R = 2`; wider ranges need
/// [`super::mc::a_n_thermodynamic`].
pub fn a_n(model: &ModelSpec, sigma: f64, grid: &QuadratureGrid, n: usize) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    check_grid(sigma, grid)?;
    if let Some(f) = &model.field {
        if f.len() < n {
            return Err(Error::Dimension {
                expected: n,
                got: f.len(),
            });
        }
    }
    match model.range() {
        1 => chain_r1(model, sigma, grid, n),
        2 => chain_r2(model, sigma, grid, n),
        r => Err(Error::UnsupportedRange(r)),
    }
}

/// `A_N(sigma) = a_N(sigma) / N`.
pub fn a_n_density(model: &ModelSpec, sigma: f64, grid: &QuadratureGrid, n: usize) -> Result<f64> {
    Ok(a_n(model, sigma, grid, n)? / n as f64)
}

fn chain_r1(model: &ModelSpec, sigma: f64, grid: &QuadratureGrid, n: usize) -> Result<f64> {
    let nodes = grid.nodes();
    let h = model.kernel.coupling(1);
    let homogeneous = !model.has_field();
    let l0 = site_log_weight(model, sigma, grid, if homogeneous { None } else { Some(0) });
    if n == 1 {
        return Ok(log_sum_exp(&l0));
    }
    // site 0 and site n-1 sit in one bond; they keep half of l outside it
    let mut r: DVector<f64> = DVector::from_iterator(nodes.len(), l0.iter().map(|l| (0.5 * l).exp()));
    let mut log_scale = 0.0;
    let shared = if homogeneous {
        Some(bond_matrix(nodes, h, &l0, &l0, 0.5)?)
    } else {
        None
    };
    let mut l_prev = l0;
    for k in 1..n {
        let l_next = if homogeneous {
            l_prev.clone()
        } else {
            site_log_weight(model, sigma, grid, Some(k))
        };
        r = match &shared {
            Some(b) => b.tr_mul(&r),
            None => bond_matrix(nodes, h, &l_prev, &l_next, 0.5)?.tr_mul(&r),
        };
        let norm = r.amax();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical("transfer recursion underflow".into()));
        }
        r /= norm;
        log_scale += norm.ln();
        l_prev = l_next;
    }
    let tail: f64 = r
        .iter()
        .zip(&l_prev)
        .map(|(v, l)| v * (0.5 * l).exp())
        .sum();
    Ok(log_scale + tail.ln())
}

fn chain_r2(model: &ModelSpec, sigma: f64, grid: &QuadratureGrid, n: usize) -> Result<f64> {
    let nodes = grid.nodes();
    let g = nodes.len();
    let h1 = model.kernel.coupling(1);
    let h2 = model.kernel.coupling(2);
    let logw: Vec<Vec<f64>> = (0..n)
        .map(|i| site_log_weight(model, sigma, grid, Some(i)))
        .collect();
    // share of l(x_i) not carried by bonds (each bond carries a quarter)
    let leftover = |i: usize| -> f64 {
        let bonds = usize::from(i >= 1)
            + usize::from(i + 1 < n)
            + usize::from(i >= 2)
            + usize::from(i + 2 < n);
        1.0 - 0.25 * bonds as f64
    };
    if n == 1 {
        return Ok(log_sum_exp(&logw[0]));
    }
    let e1 = |la: &[f64], lb: &[f64]| bond_matrix(nodes, h1, la, lb, 0.25);
    let e2 = |la: &[f64], lc: &[f64]| bond_matrix(nodes, h2, la, lc, 0.25);
    // v[(a, b)]: a = x_{k-1}, b = x_k
    let mut v = e1(&logw[0], &logw[1])?;
    for a in 0..g {
        for b in 0..g {
            v[(a, b)] *= (leftover(0) * logw[0][a] + leftover(1) * logw[1][b]).exp();
        }
    }
    let mut log_scale = 0.0;
    for k in 2..n {
        let b1 = e1(&logw[k - 1], &logw[k])?;
        let b2 = e2(&logw[k - 2], &logw[k])?;
        // w[(b, c)] = sum_a v[(a, b)] b2[(a, c)] * b1[(b, c)]
        let mut w = v.tr_mul(&b2);
        let lk = leftover(k);
        for c in 0..g {
            let fc = (lk * logw[k][c]).exp();
            for b in 0..g {
                w[(b, c)] *= b1[(b, c)] * fc;
            }
        }
        let norm = w.amax();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical("pair-state recursion underflow".into()));
        }
        w /= norm;
        log_scale += norm.ln();
        v = w;
    }
    Ok(log_scale + v.sum().ln())
}

/// Exact grand-canonical `(E[x_i], E[x_i^2])` for every site of an `R = 1`
/// model, by forward-backward transfer sweeps.
pub fn gce_site_moments(model: &ModelSpec, sigma: f64, grid: &QuadratureGrid) -> Result<Vec<(f64, f64)>> {
    check_grid(sigma, grid)?;
    if model.range() != 1 {
        return Err(Error::UnsupportedRange(model.range()));
    }
    let n = model.n;
    let nodes = grid.nodes();
    let g = nodes.len();
    let h = model.kernel.coupling(1);
    let logw: Vec<Vec<f64>> = (0..n)
        .map(|i| site_log_weight(model, sigma, grid, Some(i)))
        .collect();
    let half = |l: &[f64]| DVector::from_iterator(g, l.iter().map(|v| (0.5 * v).exp()));
    let bonds: Vec<DMatrix<f64>> = (0..n.saturating_sub(1))
        .map(|k| bond_matrix(nodes, h, &logw[k], &logw[k + 1], 0.5))
        .collect::<Result<_>>()?;
    let mut forward = vec![half(&logw[0])];
    for k in 0..n.saturating_sub(1) {
        let mut next = bonds[k].tr_mul(&forward[k]);
        let s = next.amax();
        next /= s;
        forward.push(next);
    }
    let mut backward = vec![DVector::zeros(g); n];
    backward[n - 1] = half(&logw[n - 1]);
    for k in (0..n.saturating_sub(1)).rev() {
        let mut prev = &bonds[k] * &backward[k + 1];
        let s = prev.amax();
        prev /= s;
        backward[k] = prev;
    }
    Ok((0..n)
        .map(|k| {
            let p: Vec<f64> = (0..g).map(|a| forward[k][a] * backward[k][a]).collect();
            let z: f64 = p.iter().sum();
            let m1: f64 = p.iter().zip(nodes).map(|(p, x)| p * x).sum::<f64>() / z;
            let m2: f64 = p.iter().zip(nodes).map(|(p, x)| p * x * x).sum::<f64>() / z;
            (m1, m2)
        })
        .collect())
}

/// `a_{N1+N2} - a_{N1} - a_{N2}`.
pub fn subadditivity_defect(
    model: &ModelSpec,
    sigma: f64,
    grid: &QuadratureGrid,
    n1: usize,
    n2: usize,
) -> Result<f64> {
    Ok(a_n(model, sigma, grid, n1 + n2)? - a_n(model, sigma, grid, n1)? - a_n(model, sigma, grid, n2)?)
}

/// Thermodynamic limit `A(sigma)`: log of the top eigenvalue of the
/// symmetrised transfer kernel, by power iteration to relative `1e-12`.
pub fn a_limit(model: &ModelSpec, sigma: f64, grid: &QuadratureGrid) -> Result<f64> {
    check_grid(sigma, grid)?;
    if model.range() != 1 {
        return Err(Error::UnsupportedRange(model.range()));
    }
    if model.has_field() {
        return Err(Error::InvalidModel(
            "the infinite-volume limit needs a homogeneous model (no external field)".into(),
        ));
    }
    let l = site_log_weight(model, sigma, grid, None);
    let k = bond_matrix(grid.nodes(), model.kernel.coupling(1), &l, &l, 0.5)?;
    let (lambda, _) = top_eigenpair(&k, 1e-12, 10_000)?;
    Ok(lambda.ln())
}

/// Largest eigenvalue of a symmetric positive kernel and its eigenvector.
pub(crate) fn top_eigenpair(k: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<(f64, DVector<f64>)> {
    let g = k.nrows();
    let mut v = DVector::from_element(g, 1.0 / (g as f64).sqrt());
    let mut lambda = 0.0;
    for it in 0..max_iter {
        let w = k * &v;
        let rq = v.dot(&w);
        let norm = w.norm();
        if !(norm > 0.0) {
            return Err(Error::Numerical("transfer kernel annihilated the iterate".into()));
        }
        let next = w / norm;
        let delta = (&next - &v).norm();
        v = next;
        if it > 2 && (rq - lambda).abs() <= tol * rq.abs() && delta < 1e-6 {
            return Ok((rq, v));
        }
        lambda = rq;
    }
    Err(Error::Numerical(format!(
        "power iteration did not converge in {max_iter} steps (degenerate top eigenvalue?)"
    )))
}

fn log_sum_exp(ls: &[f64]) -> f64 {
    let m = ls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + ls.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}
