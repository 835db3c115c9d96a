//! The multi-block coarse-grained Hamiltonian `Hbar_Y`.
//!
//! `Hbar_Y` is never tabulated: it is the block-separable `Hbar_aux`
//! (exact, from one-constraint curves) plus Monte Carlo corrections under
//! the block-conditional measure `mu(dx | y)`.
//!
//! Gradients and Hessians are taken with respect to the inner product
//! `<u, v>_Y = (1/M) sum alpha_l u_l v_l`, i.e. row `l` is `N / K_l` times
//! the Euclidean partial derivatives in `y` (`M` times for equal blocks).
//! This is the inner product for which the block-constant lift is `N P*`.
//! The Hessian entry reads
//!
//! ```text
//! d_ln (1 + (1/K) E sum_{B(l)} psi_b'') + (1/K) sum_{i in B(l), j in B(n)} M_ij
//!     - (1/K) cov(G_l, G_n),    G_l = sum_{j in B(l)} (sum_i M_ij x_i + psi_b'(x_j))
//! ```
//!
//! where `M_ij` is the off-diagonal coupling and `K = K_l`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scheme::BlockScheme;
use crate::error::{Error, Result};
use crate::free_energy::CoarseGrainedCurve;
use crate::model::ModelSpec;
use crate::quadrature::gauss_legendre_interval;
use crate::sampler::{drive, Chain, ChainConfig, ConstraintSpec};
use crate::stats::{self, MomentReport};

/// Monte Carlo budget for block-conditional expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSampler {
    pub chain: ChainConfig,
    pub samples_per_chain: usize,
    pub chains: usize,
}

impl Default for BlockSampler {
    fn default() -> Self {
        BlockSampler {
            chain: ChainConfig {
                step: 0.3,
                ..ChainConfig::default()
            },
            samples_per_chain: 20_000,
            chains: 4,
        }
    }
}

impl BlockSampler {
    fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        if self.samples_per_chain < 8 || self.chains == 0 {
            return Err(Error::InvalidConfig(
                "block sampler needs >= 8 samples per chain and >= 1 chain".into(),
            ));
        }
        Ok(())
    }
}

fn curve_for<'c>(curves: &'c [CoarseGrainedCurve], k: usize) -> Result<&'c CoarseGrainedCurve> {
    curves
        .iter()
        .find(|c| c.k == k)
        .ok_or_else(|| Error::InvalidConfig(format!("no Hbar_K curve for block size K = {k}")))
}

fn check_y(scheme: &BlockScheme, y: &[f64]) -> Result<()> {
    if y.len() != scheme.blocks() {
        return Err(Error::Dimension {
            expected: scheme.blocks(),
            got: y.len(),
        });
    }
    Ok(())
}

/// `Hbar_aux(y) = (1/M) sum_l alpha_l Hbar_{K_l}(y_l)`.
pub fn hbar_y_aux(scheme: &BlockScheme, curves: &[CoarseGrainedCurve], y: &[f64]) -> Result<f64> {
    check_y(scheme, y)?;
    let mut sum = 0.0;
    for (l, &yl) in y.iter().enumerate() {
        sum += scheme.alpha(l) * curve_for(curves, scheme.size(l))?.value(yl)?;
    }
    Ok(sum / scheme.blocks() as f64)
}

/// Y-gradient of `Hbar_aux`: `Hbar_{K_l}'(y_l)`.
pub fn hbar_y_aux_gradient(scheme: &BlockScheme, curves: &[CoarseGrainedCurve], y: &[f64]) -> Result<Vec<f64>> {
    check_y(scheme, y)?;
    y.iter()
        .enumerate()
        .map(|(l, &yl)| curve_for(curves, scheme.size(l))?.slope(yl))
        .collect()
}

/// Second difference of `Hbar_aux` along `v`, divided by `|v|_Y^2`.
pub fn directional_second_difference(
    scheme: &BlockScheme,
    curves: &[CoarseGrainedCurve],
    y: &[f64],
    v: &[f64],
    step: f64,
) -> Result<f64> {
    check_y(scheme, y)?;
    check_y(scheme, v)?;
    let norm2 = v.iter().enumerate().map(|(l, a)| scheme.alpha(l) * a * a).sum::<f64>() / scheme.blocks() as f64;
    if !(norm2 > 0.0) {
        return Err(Error::InvalidConfig("direction must be non-zero".into()));
    }
    let shifted = |s: f64| -> Vec<f64> { y.iter().zip(v).map(|(a, b)| a + s * b).collect() };
    let plus = hbar_y_aux(scheme, curves, &shifted(step))?;
    let mid = hbar_y_aux(scheme, curves, y)?;
    let minus = hbar_y_aux(scheme, curves, &shifted(-step))?;
    Ok((plus - 2.0 * mid + minus) / (step * step * norm2))
}

/// Gradient or Hessian estimate with per-entry standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub values: Vec<f64>,
    pub standard_errors: Vec<f64>,
}

/// One Hessian entry in a dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianEntry {
    pub l: usize,
    pub n: usize,
    pub value: f64,
    pub se: f64,
}

/// `{y, entries: [{l, n, value, se}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianDump {
    pub y: Vec<f64>,
    pub entries: Vec<HessianEntry>,
}

impl HessianDump {
    pub fn entry(&self, l: usize, n: usize) -> Option<&HessianEntry> {
        self.entries.iter().find(|e| e.l == l && e.n == n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-sample block observables: `G_l` (fluctuating part of the block
/// force) and `sum_{B(l)} psi_b''`.
fn block_forces(model: &ModelSpec, scheme: &BlockScheme, x: &[f64], g: &mut [f64], curv: &mut [f64]) {
    g.iter_mut().for_each(|v| *v = 0.0);
    curv.iter_mut().for_each(|v| *v = 0.0);
    let n = x.len();
    for j in 0..n {
        let l = scheme.block_of(j);
        let mut f = model.potential.perturbation_d1(x[j]);
        for (r, &h) in model.kernel.couplings().iter().enumerate() {
            let d = r + 1;
            if j >= d {
                f += h * x[j - d];
            }
            if j + d < n {
                f += h * x[j + d];
            }
        }
        g[l] += f;
        curv[l] += model.potential.perturbation_d2(x[j]);
    }
}

/// `sum_{i in B(l), j in B(n)} M_ij` for the off-diagonal couplings.
fn coupling_mass(model: &ModelSpec, scheme: &BlockScheme, l: usize, n: usize) -> f64 {
    let mut s = 0.0;
    for i in scheme.range(l) {
        for j in scheme.range(n) {
            if i != j {
                s += model.kernel.coupling(i.abs_diff(j));
            }
        }
    }
    s
}

fn block_constraint(model: &ModelSpec, scheme: &BlockScheme, y: &[f64]) -> Result<ConstraintSpec> {
    if scheme.n() != model.n {
        return Err(Error::Dimension {
            expected: model.n,
            got: scheme.n(),
        });
    }
    check_y(scheme, y)?;
    scheme.check_model(model)?;
    Ok(ConstraintSpec::BlockMeans {
        scheme: scheme.clone(),
        y: y.to_vec(),
    })
}

struct ChainMoments {
    g_mean: Vec<MomentReport>,
    curv_mean: Vec<MomentReport>,
    /// Row-major `M x M`.
    cov: Vec<MomentReport>,
}

fn run_block_chains(model: &ModelSpec, scheme: &BlockScheme, y: &[f64], sampler: &BlockSampler) -> Result<Vec<ChainMoments>> {
    sampler.validate()?;
    let constraint = block_constraint(model, scheme, y)?;
    let mb = scheme.blocks();
    (0..sampler.chains as u64)
        .into_par_iter()
        .map(|c| {
            let mut acc = stats::StreamingMoments::new(2 * mb, sampler.samples_per_chain);
            let mut obs = vec![0.0; 2 * mb];
            let chain = Chain::new(model, &constraint, &sampler.chain, c, None)?;
            drive(chain, &sampler.chain, sampler.samples_per_chain, |x| {
                let (g, curv) = obs.split_at_mut(mb);
                block_forces(model, scheme, x, g, curv);
                acc.push(&obs);
            })?;
            let (means, covs) = acc.into_reports()?;
            let d = 2 * mb;
            let mut cov = Vec::with_capacity(mb * mb);
            for l in 0..mb {
                for n in 0..mb {
                    cov.push(covs[l * d + n]);
                }
            }
            Ok(ChainMoments {
                g_mean: means[..mb].to_vec(),
                curv_mean: means[mb..].to_vec(),
                cov,
            })
        })
        .collect()
}

fn pool_column(runs: &[ChainMoments], pick: impl Fn(&ChainMoments) -> MomentReport) -> Result<MomentReport> {
    let reports: Vec<MomentReport> = runs.iter().map(pick).collect();
    pool_equal(&reports)
}

/// Equal-weight pooling of independent chains of equal length. Unlike
/// inverse-variance pooling this does not favour chains whose noisy SE
/// happens to be small.
fn pool_equal(reports: &[MomentReport]) -> Result<MomentReport> {
    if reports.is_empty() {
        return Err(Error::EmptySamples);
    }
    let k = reports.len() as f64;
    let estimate = reports.iter().map(|r| r.estimate).sum::<f64>() / k;
    let var = reports.iter().map(|r| r.standard_error.powi(2)).sum::<f64>() / (k * k);
    let mut se = var.sqrt();
    if reports.len() >= 4 {
        // spread between chains is an independent check on the within-chain SE
        let ests: Vec<f64> = reports.iter().map(|r| r.estimate).collect();
        se = se.max((stats::variance(&ests) / k).sqrt());
    }
    Ok(MomentReport {
        estimate,
        standard_error: se,
        effective_sample_size: reports.iter().map(|r| r.effective_sample_size).sum(),
    })
}

/// Monte Carlo Y-gradient of `Hbar_Y`:
/// `y_l + (sum_{B(l)} s_j + E[G_l]) / K_l`.
pub fn hbar_y_gradient(model: &ModelSpec, scheme: &BlockScheme, y: &[f64], sampler: &BlockSampler) -> Result<GradientEstimate> {
    let runs = run_block_chains(model, scheme, y, sampler)?;
    let mut values = Vec::with_capacity(y.len());
    let mut ses = Vec::with_capacity(y.len());
    for l in 0..scheme.blocks() {
        let g = pool_column(&runs, |r| r.g_mean[l])?;
        let field: f64 = scheme.range(l).map(|j| model.field_at(j)).sum();
        let scale = 1.0 / scheme.size(l) as f64;
        values.push(y[l] + scale * (field + g.estimate));
        ses.push(scale * g.standard_error);
    }
    Ok(GradientEstimate {
        values,
        standard_errors: ses,
    })
}

fn assemble_entry(model: &ModelSpec, scheme: &BlockScheme, runs: &[ChainMoments], l: usize, n: usize) -> Result<HessianEntry> {
    let mb = scheme.blocks();
    let scale = 1.0 / scheme.size(l) as f64;
    let cov = pool_column(runs, |r| r.cov[l * mb + n])?;
    let mut value = scale * (coupling_mass(model, scheme, l, n) - cov.estimate);
    let mut var = (scale * cov.standard_error).powi(2);
    if l == n {
        let curv = pool_column(runs, |r| r.curv_mean[l])?;
        value += scale * (scheme.size(l) as f64 + curv.estimate);
        var += (scale * curv.standard_error).powi(2);
    }
    Ok(HessianEntry {
        l,
        n,
        value,
        se: var.sqrt(),
    })
}

/// One Y-Hessian entry of `Hbar_Y` with its standard error.
pub fn hbar_y_hessian_entry(
    model: &ModelSpec,
    scheme: &BlockScheme,
    y: &[f64],
    l: usize,
    n: usize,
    sampler: &BlockSampler,
) -> Result<HessianEntry> {
    let mb = scheme.blocks();
    if l >= mb || n >= mb {
        return Err(Error::Dimension {
            expected: mb,
            got: l.max(n),
        });
    }
    let runs = run_block_chains(model, scheme, y, sampler)?;
    assemble_entry(model, scheme, &runs, l, n)
}

/// All Y-Hessian entries from one sample set.
pub fn hbar_y_hessian(model: &ModelSpec, scheme: &BlockScheme, y: &[f64], sampler: &BlockSampler) -> Result<HessianDump> {
    let runs = run_block_chains(model, scheme, y, sampler)?;
    let mb = scheme.blocks();
    let mut entries = Vec::with_capacity(mb * mb);
    for l in 0..mb {
        for n in 0..mb {
            entries.push(assemble_entry(model, scheme, &runs, l, n)?);
        }
    }
    Ok(HessianDump { y: y.to_vec(), entries })
}

/// Number of interpolation nodes for [`aux_gap`].
pub const GAP_NODES: usize = 16;

/// `Hbar_Y(y) - Hbar_aux(y) = (1/N) int_0^1 E_t[V] dt`, where `V` is the
/// cross-block interaction and `E_t` the block-conditional law of
/// `H - (1 - t) V`.
pub fn aux_gap(model: &ModelSpec, scheme: &BlockScheme, y: &[f64], sampler: &BlockSampler) -> Result<MomentReport> {
    sampler.validate()?;
    let constraint = block_constraint(model, scheme, y)?;
    let (ts, ws) = gauss_legendre_interval(GAP_NODES, 0.0, 1.0);
    let jobs: Vec<(usize, u64)> = (0..GAP_NODES)
        .flat_map(|k| (0..sampler.chains as u64).map(move |c| (k, c)))
        .collect();
    let reports: Vec<(usize, MomentReport)> = jobs
        .par_iter()
        .map(|&(k, c)| {
            let chain = Chain::new(model, &constraint, &sampler.chain, (k as u64) << 32 | c, None)?
                .with_cross_scale(scheme, ts[k])?;
            let mut series = Vec::with_capacity(sampler.samples_per_chain);
            drive(chain, &sampler.chain, sampler.samples_per_chain, |x| {
                series.push(model.cross_block_energy(scheme, x))
            })?;
            Ok((k, stats::batch_means(&series)?))
        })
        .collect::<Result<_>>()?;
    let mut estimate = 0.0;
    let mut var = 0.0;
    let mut ess = 0.0;
    for k in 0..GAP_NODES {
        let node: Vec<MomentReport> = reports.iter().filter(|(j, _)| *j == k).map(|(_, r)| *r).collect();
        let r = pool_equal(&node)?;
        estimate += ws[k] * r.estimate;
        var += (ws[k] * r.standard_error).powi(2);
        ess += r.effective_sample_size;
    }
    let n = model.n as f64;
    Ok(MomentReport {
        estimate: estimate / n,
        standard_error: var.sqrt() / n,
        effective_sample_size: ess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_energy::sigma_grid;
    use crate::model::{InteractionKernel, PotentialSpec};

    fn quick() -> BlockSampler {
        BlockSampler {
            chain: ChainConfig {
                step: 0.4,
                burn_in: Some(500),
                thinning: 2,
                seed: 5,
                ..ChainConfig::default()
            },
            samples_per_chain: 4000,
            chains: 2,
        }
    }

    #[test]
    fn gaussian_gradient_is_y() {
        let model = ModelSpec::gaussian(24);
        let scheme = BlockScheme::equal(24, 8).unwrap();
        let y = [0.7, -0.2, 0.4];
        let g = hbar_y_gradient(&model, &scheme, &y, &quick()).unwrap();
        for l in 0..3 {
            assert!((g.values[l] - y[l]).abs() < 1e-12, "{:?}", g.values);
        }
    }

    #[test]
    fn gaussian_hessian_is_identity() {
        // psi_b = 0 and h = 0: G_l vanishes identically
        let model = ModelSpec::gaussian(16);
        let scheme = BlockScheme::equal(16, 8).unwrap();
        let d = hbar_y_hessian(&model, &scheme, &[0.3, -0.3], &quick()).unwrap();
        assert_eq!(d.entry(0, 0).unwrap().value, 1.0);
        assert_eq!(d.entry(0, 1).unwrap().value, 0.0);
        let json = d.to_json().unwrap();
        assert!(json.contains("\"entries\""));
    }

    #[test]
    fn aux_matches_single_block_and_gaussian() {
        let model = ModelSpec::gaussian(8);
        let m_grid = sigma_grid(-2.0, 2.0, 0.1);
        let curves = vec![CoarseGrainedCurve::tabulate(&model, 8, m_grid.clone()).unwrap()];
        let one = BlockScheme::equal(8, 8).unwrap();
        let v = hbar_y_aux(&one, &curves, &[0.5]).unwrap();
        let direct = crate::free_energy::hbar_n(&model, 0.5, 8, &crate::free_energy::ConstrainedGrid::for_size(8)).unwrap();
        assert!((v - direct).abs() < 1e-8);
        let two = BlockScheme::equal(16, 8).unwrap();
        let v2 = hbar_y_aux(&two, &curves, &[0.0, 0.0]).unwrap();
        let exact = -(7.0 / 16.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((v2 - exact).abs() < 1e-6);
        assert!(hbar_y_aux(&two, &curves, &[0.0, 3.0]).is_err());
        assert!(hbar_y_aux(&BlockScheme::equal(16, 4).unwrap(), &curves, &[0.0; 4]).is_err());
        let d2 = directional_second_difference(&two, &curves, &[0.2, -0.2], &[1.0, -1.0], 0.05).unwrap();
        assert!((d2 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn aux_gap_vanishes_without_cross_terms_and_is_small_otherwise() {
        let free = ModelSpec::new(8, PotentialSpec::double_well(), InteractionKernel::nearest_neighbour(0.0, 0.1));
        let scheme = BlockScheme::equal(8, 4).unwrap();
        let gap = aux_gap(&free, &scheme, &[0.2, -0.2], &quick()).unwrap();
        assert_eq!(gap.estimate, 0.0);
        let model = ModelSpec::double_well(8);
        let gap = aux_gap(&model, &scheme, &[0.2, -0.2], &quick()).unwrap();
        // |gap| <= (h/N) sup E|x_4 x_5| stays well below 0.2/8 * 3
        assert!(gap.estimate.abs() < 0.08, "{gap:?}");
    }
}
