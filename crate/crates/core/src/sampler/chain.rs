//! Langevin samplers (ULA / MALA) for the grand-canonical, canonical and
//! block-conditional measures.
//!
//! Constrained targets live on an affine subspace `{x : Px = y}` or
//! `{x : mean(x) = m}`. Drift and Gaussian increments are projected
//! orthogonally onto the tangent space, so every proposal stays on the
//! constraint set and the Metropolis ratio is computed with the projected
//! Gaussian density.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coarse_grain::BlockScheme;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, SpinConfiguration};
use crate::rng::{self, StreamRng};
use crate::stats;

/// Hyperplane tolerance for every emitted sample.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Ula,
    Mala,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Langevin step `tau` in `(0, 1]`.
    pub step: f64,
    /// Burn-in steps; `None` runs a pilot and uses ten integrated
    /// autocorrelation times.
    pub burn_in: Option<usize>,
    pub thinning: usize,
    pub kind: ProposalKind,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            step: 0.2,
            burn_in: None,
            thinning: 1,
            kind: ProposalKind::Mala,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "step size {} must lie in (0, 1]",
                self.step
            )));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidConfig("thinning must be >= 1".into()));
        }
        Ok(())
    }
}

/// Which measure to sample.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSpec {
    /// Grand-canonical ensemble at the model's chemical potential.
    None,
    /// Canonical ensemble on `{mean(x) = m}`.
    GlobalMean(f64),
    /// Block-conditional ensemble on `{Px = y}`.
    BlockMeans { scheme: BlockScheme, y: Vec<f64> },
}

impl ConstraintSpec {
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        match self {
            ConstraintSpec::None | ConstraintSpec::GlobalMean(_) => Ok(()),
            ConstraintSpec::BlockMeans { scheme, y } => {
                if scheme.n() != model.n {
                    return Err(Error::Dimension {
                        expected: model.n,
                        got: scheme.n(),
                    });
                }
                if y.len() != scheme.blocks() {
                    return Err(Error::Dimension {
                        expected: scheme.blocks(),
                        got: y.len(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Block means consistent with a global mean `m`.
    pub fn blocks_with_mean(scheme: BlockScheme, y: Vec<f64>, m: f64) -> Result<Self> {
        let wm = scheme.weighted_mean(&y);
        if (wm - m).abs() > 1e-12 * (1.0 + m.abs()) {
            return Err(Error::Constraint(format!(
                "block means average to {wm}, not {m}"
            )));
        }
        Ok(ConstraintSpec::BlockMeans { scheme, y })
    }

    /// Natural starting point on the constraint set.
    pub fn initial_state(&self, n: usize) -> Vec<f64> {
        match self {
            ConstraintSpec::None => vec![0.0; n],
            ConstraintSpec::GlobalMean(m) => vec![*m; n],
            ConstraintSpec::BlockMeans { scheme, y } => scheme.embed(y).expect("validated constraint"),
        }
    }

    /// Orthogonal projection onto the tangent space, in place.
    pub fn project_tangent(&self, v: &mut [f64]) {
        match self {
            ConstraintSpec::None => {}
            ConstraintSpec::GlobalMean(_) => {
                let mu = v.iter().sum::<f64>() / v.len() as f64;
                v.iter_mut().for_each(|x| *x -= mu);
            }
            ConstraintSpec::BlockMeans { scheme, .. } => {
                for l in 0..scheme.blocks() {
                    let r = scheme.range(l);
                    let mu = v[r.clone()].iter().sum::<f64>() / r.len() as f64;
                    v[r].iter_mut().for_each(|x| *x -= mu);
                }
            }
        }
    }

    /// Removes rounding drift so that `x` satisfies the constraint.
    pub fn restore(&self, x: &mut [f64]) {
        match self {
            ConstraintSpec::None => {}
            ConstraintSpec::GlobalMean(m) => {
                let mu = x.iter().sum::<f64>() / x.len() as f64;
                let d = mu - m;
                x.iter_mut().for_each(|v| *v -= d);
            }
            ConstraintSpec::BlockMeans { scheme, y } => {
                for l in 0..scheme.blocks() {
                    let r = scheme.range(l);
                    let mu = x[r.clone()].iter().sum::<f64>() / r.len() as f64;
                    let d = mu - y[l];
                    x[r].iter_mut().for_each(|v| *v -= d);
                }
            }
        }
    }

    /// Largest constraint violation of `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        match self {
            ConstraintSpec::None => 0.0,
            ConstraintSpec::GlobalMean(m) => (x.iter().sum::<f64>() / x.len() as f64 - m).abs(),
            ConstraintSpec::BlockMeans { scheme, y } => (0..scheme.blocks())
                .map(|l| {
                    let r = scheme.range(l);
                    (x[r.clone()].iter().sum::<f64>() / r.len() as f64 - y[l]).abs()
                })
                .fold(0.0, f64::max),
        }
    }
}

/// A single Langevin chain.
pub struct Chain<'a> {
    model: &'a ModelSpec,
    constraint: &'a ConstraintSpec,
    /// Cross-block pair terms are multiplied by `t` when set.
    cross_scale: Option<(&'a BlockScheme, f64)>,
    kind: ProposalKind,
    step: f64,
    rng: StreamRng,
    x: Vec<f64>,
    grad: Vec<f64>,
    energy: f64,
    proposal: Vec<f64>,
    proposal_grad: Vec<f64>,
    noise: Vec<f64>,
    accepted: u64,
    proposed: u64,
}

impl<'a> Chain<'a> {
    /// Chain `index` of the family seeded by `cfg.seed`.
    pub fn new(
        model: &'a ModelSpec,
        constraint: &'a ConstraintSpec,
        cfg: &ChainConfig,
        index: u64,
        initial: Option<Vec<f64>>,
    ) -> Result<Self> {
        cfg.validate()?;
        model.ensure_valid()?;
        constraint.validate(model)?;
        let mut x = initial.unwrap_or_else(|| constraint.initial_state(model.n));
        if x.len() != model.n {
            return Err(Error::Dimension {
                expected: model.n,
                got: x.len(),
            });
        }
        let tol = CONSTRAINT_TOLERANCE * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max));
        if constraint.violation(&x) > tol {
            return Err(Error::Constraint("initial state violates its constraint".into()));
        }
        constraint.restore(&mut x);
        let n = model.n;
        let mut chain = Chain {
            model,
            constraint,
            cross_scale: None,
            kind: cfg.kind,
            step: cfg.step,
            rng: rng::stream(cfg.seed, index),
            x,
            grad: vec![0.0; n],
            energy: 0.0,
            proposal: vec![0.0; n],
            proposal_grad: vec![0.0; n],
            noise: vec![0.0; n],
            accepted: 0,
            proposed: 0,
        };
        chain.refresh();
        Ok(chain)
    }

    /// Targets `H - (1 - t) V` where `V` collects the pair terms between
    /// different blocks of `scheme`.
    pub fn with_cross_scale(mut self, scheme: &'a BlockScheme, t: f64) -> Result<Self> {
        if scheme.n() != self.model.n {
            return Err(Error::Dimension {
                expected: self.model.n,
                got: scheme.n(),
            });
        }
        self.cross_scale = Some((scheme, t));
        self.refresh();
        Ok(self)
    }

    fn refresh(&mut self) {
        let x = self.x.clone();
        self.energy = self.potential(&x);
        let mut g = vec![0.0; x.len()];
        self.potential_grad(&x, &mut g);
        self.grad = g;
    }

    fn potential(&self, x: &[f64]) -> f64 {
        let mut u = self.model.energy_unchecked(x);
        if matches!(self.constraint, ConstraintSpec::None) && self.model.sigma != 0.0 {
            u -= self.model.sigma * x.iter().sum::<f64>();
        }
        if let Some((scheme, t)) = self.cross_scale {
            u -= (1.0 - t) * self.model.cross_block_energy(scheme, x);
        }
        u
    }

    /// Projected gradient of the potential.
    fn potential_grad(&self, x: &[f64], g: &mut [f64]) {
        self.model.grad_into(x, g);
        if matches!(self.constraint, ConstraintSpec::None) && self.model.sigma != 0.0 {
            g.iter_mut().for_each(|v| *v -= self.model.sigma);
        }
        if let Some((scheme, t)) = self.cross_scale {
            self.model.cross_block_grad_add(scheme, x, -(1.0 - t), g);
        }
        self.constraint.project_tangent(g);
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            return 1.0;
        }
        self.accepted as f64 / self.proposed as f64
    }

    /// One Langevin move; returns whether it was accepted.
    pub fn step(&mut self) -> bool {
        let tau = self.step;
        let scale = (2.0 * tau).sqrt();
        for v in self.noise.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        self.constraint.project_tangent(&mut self.noise);
        for i in 0..self.x.len() {
            self.proposal[i] = self.x[i] - tau * self.grad[i] + scale * self.noise[i];
        }
        self.constraint.restore(&mut self.proposal);
        self.proposed += 1;
        let prop = std::mem::take(&mut self.proposal);
        let mut pg = std::mem::take(&mut self.proposal_grad);
        self.potential_grad(&prop, &mut pg);
        let accept = match self.kind {
            ProposalKind::Ula => true,
            ProposalKind::Mala => {
                let e_new = self.potential(&prop);
                // log q(x | x') - log q(x' | x)
                let mut fwd = 0.0;
                let mut bwd = 0.0;
                for i in 0..prop.len() {
                    let a = prop[i] - self.x[i] + tau * self.grad[i];
                    let b = self.x[i] - prop[i] + tau * pg[i];
                    fwd += a * a;
                    bwd += b * b;
                }
                let log_alpha = self.energy - e_new + (fwd - bwd) / (4.0 * tau);
                if log_alpha.is_finite() && (log_alpha >= 0.0 || self.rng.random::<f64>() < log_alpha.exp()) {
                    self.energy = e_new;
                    true
                } else {
                    false
                }
            }
        };
        if accept {
            if self.kind == ProposalKind::Ula {
                self.energy = self.potential(&prop);
            }
            self.proposal = std::mem::replace(&mut self.x, prop);
            self.proposal_grad = std::mem::replace(&mut self.grad, pg);
            self.accepted += 1;
        } else {
            self.proposal = prop;
            self.proposal_grad = pg;
        }
        accept
    }

    pub fn advance(&mut self, steps: usize) {
        for _ in 0..steps {
            self.step();
        }
    }
}

/// Samples together with how they were produced.
#[derive(Debug, Clone, Serialize)]
pub struct SampleRun {
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
    pub burn_in: usize,
    pub pilot_iat: Option<f64>,
    pub acceptance: f64,
    pub max_violation: f64,
}

impl SampleRun {
    pub fn configurations(&self) -> Vec<SpinConfiguration> {
        self.samples.iter().map(|x| SpinConfiguration::new(x.clone())).collect()
    }

    /// Series of an observable along the run.
    pub fn series(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.samples.iter().map(|x| f(x)).collect()
    }
}

/// Pilot length used when the burn-in is chosen automatically.
pub const PILOT_STEPS: usize = 2_000;

/// Burns in a chain and returns `(steps, pilot IAT)`.
pub fn burn_in(chain: &mut Chain<'_>, cfg: &ChainConfig) -> (usize, Option<f64>) {
    match cfg.burn_in {
        Some(b) => {
            chain.advance(b);
            (b, None)
        }
        None => {
            let mut energies = Vec::with_capacity(PILOT_STEPS);
            for _ in 0..PILOT_STEPS {
                chain.step();
                energies.push(chain.energy());
            }
            let tau = stats::integrated_autocorr_time(&energies[PILOT_STEPS / 2..]);
            let extra = (10.0 * tau).ceil() as usize;
            chain.advance(extra);
            log::debug!("auto burn-in: pilot {PILOT_STEPS} steps, IAT {tau:.1}, extra {extra}");
            (PILOT_STEPS + extra, Some(tau))
        }
    }
}

/// Draws `count` samples (after burn-in and thinning) from chain `index`.
pub fn sample(
    model: &ModelSpec,
    constraint: &ConstraintSpec,
    cfg: &ChainConfig,
    count: usize,
    index: u64,
    initial: Option<Vec<f64>>,
) -> Result<SampleRun> {
    let mut samples = Vec::with_capacity(count);
    let mut run = run_chain(model, constraint, cfg, count, index, initial, |x| samples.push(x.to_vec()))?;
    run.samples = samples;
    Ok(run)
}

/// Like [`sample`] but hands each sample to `observe` instead of storing it.
pub fn run_chain(
    model: &ModelSpec,
    constraint: &ConstraintSpec,
    cfg: &ChainConfig,
    count: usize,
    index: u64,
    initial: Option<Vec<f64>>,
    observe: impl FnMut(&[f64]),
) -> Result<SampleRun> {
    let chain = Chain::new(model, constraint, cfg, index, initial)?;
    drive(chain, cfg, count, observe)
}

/// Burns in an already built chain, then feeds `count` thinned samples to
/// `observe`.
pub fn drive(mut chain: Chain<'_>, cfg: &ChainConfig, count: usize, mut observe: impl FnMut(&[f64])) -> Result<SampleRun> {
    let constraint = chain.constraint;
    let (burn, pilot_iat) = burn_in(&mut chain, cfg);
    let mut max_violation = 0.0f64;
    for _ in 0..count {
        chain.advance(cfg.thinning);
        let x = chain.state();
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("sampler produced a non-finite state".into()));
        }
        max_violation = max_violation.max(constraint.violation(x));
        observe(x);
    }
    Ok(SampleRun {
        samples: Vec::new(),
        burn_in: burn,
        pilot_iat,
        acceptance: chain.acceptance_rate(),
        max_violation,
    })
}
