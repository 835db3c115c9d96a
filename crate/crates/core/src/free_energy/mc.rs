//! Monte Carlo thermodynamic integration for kernels of range `R >= 3`,
//! where no transfer recursion is provided.
//!
//! `a_N(sigma) = a_N^0(sigma) - int_0^1 E_t[V] dt` with `V` the pair
//! interaction, `a_N^0` the product reference and `E_t` the grand-canonical
//! expectation for couplings `t h`. The `t` integral uses 16-point
//! Gauss–Legendre; each node is one MALA run. Lower precision than the
//! recursions: the result carries a standard error.

use rayon::prelude::*;

use crate::error::Result;
use crate::model::{InteractionKernel, ModelSpec};
use crate::quadrature::{gauss_legendre_interval, QuadratureGrid};
use crate::sampler::{run_chain, ChainConfig, ConstraintSpec};
use crate::stats::{self, MomentReport};

pub const TI_NODES: usize = 16;

/// Pair part `sum_{i<j} h(j-i) x_i x_j`.
pub fn interaction_energy(model: &ModelSpec, x: &[f64]) -> f64 {
    let n = x.len();
    let mut e = 0.0;
    for (r, &h) in model.kernel.couplings().iter().enumerate() {
        let d = r + 1;
        for i in 0..n.saturating_sub(d) {
            e += h * x[i] * x[i + d];
        }
    }
    e
}

pub fn scaled_model(model: &ModelSpec, t: f64) -> ModelSpec {
    let mut m = model.clone();
    m.kernel = InteractionKernel::new(
        model.kernel.couplings().iter().map(|h| t * h).collect(),
        model.kernel.margin(),
    )
    .expect("scaled couplings stay finite");
    m
}

/// `a_N(sigma)` for any range, with a standard error.
pub fn a_n_thermodynamic(model: &ModelSpec, sigma: f64, cfg: &ChainConfig, samples: usize) -> Result<MomentReport> {
    let grid = QuadratureGrid::for_params(sigma, 0.0);
    let reference: f64 = (0..model.n)
        .map(|i| {
            let s = model.field_at(i);
            grid.integrate(|x| ((sigma - s) * x - model.potential.psi(x)).exp()).ln()
        })
        .sum();
    let (ts, ws) = gauss_legendre_interval(TI_NODES, 0.0, 1.0);
    let mut base = model.clone();
    base.sigma = sigma;
    let nodes: Vec<MomentReport> = ts
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let mt = scaled_model(&base, t);
            let mut series = Vec::with_capacity(samples);
            run_chain(&mt, &ConstraintSpec::None, cfg, samples, k as u64, None, |x| {
                series.push(interaction_energy(model, x))
            })?;
            stats::batch_means(&series)
        })
        .collect::<Result<_>>()?;
    let integral: f64 = nodes.iter().zip(&ws).map(|(r, w)| w * r.estimate).sum();
    let var: f64 = nodes
        .iter()
        .zip(&ws)
        .map(|(r, w)| (w * r.standard_error).powi(2))
        .sum();
    Ok(MomentReport {
        estimate: reference - integral,
        standard_error: var.sqrt(),
        effective_sample_size: nodes.iter().map(|r| r.effective_sample_size).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_energy::transfer::a_n;
    use crate::model::PotentialSpec;
    use crate::sampler::ProposalKind;

    #[test]
    fn agrees_with_the_recursion_for_nearest_neighbours() {
        let model = ModelSpec::new(6, PotentialSpec::double_well(), InteractionKernel::nearest_neighbour(0.2, 0.1));
        let cfg = ChainConfig {
            step: 0.4,
            burn_in: Some(1000),
            thinning: 2,
            kind: ProposalKind::Mala,
            seed: 17,
        };
        let mc = a_n_thermodynamic(&model, 0.3, &cfg, 20_000).unwrap();
        let exact = a_n(&model, 0.3, &QuadratureGrid::for_params(0.3, 0.0), 6).unwrap();
        assert!((mc.estimate - exact).abs() < 4.0 * mc.standard_error + 1e-3, "{} vs {exact}", mc.estimate);
    }
}
