//! Euler–Maruyama integration of `dX = -A grad H dt + sqrt(2A) dB` with
//! `sqrt(2A)` realised as `sqrt(2) N D^T`, which keeps the mean spin fixed.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::operator::KawasakiOperator;
use crate::coarse_grain::BlockScheme;
use crate::error::{Error, Result};
use crate::model::{mean, ModelSpec, SpinConfiguration};
use crate::rng::{self, StreamRng};
use crate::sampler::{drive, Chain, ChainConfig, ConstraintSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stepping {
    #[default]
    EulerMaruyama,
}

/// Time stepping of the microscopic SDE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub stepping: Stepping,
    pub seed: u64,
    /// Number of equal checkpoint intervals in `[0, horizon]`.
    pub checkpoints: usize,
}

impl SdeConfig {
    /// `dt = stability_factor / (8 N^2)`.
    pub fn from_stability(n: usize, stability_factor: f64, horizon: f64, checkpoints: usize, seed: u64) -> Self {
        SdeConfig {
            dt: stability_factor / (8.0 * (n * n) as f64),
            horizon,
            stepping: Stepping::EulerMaruyama,
            seed,
            checkpoints,
        }
    }

    pub fn stability_limit(n: usize) -> f64 {
        1.0 / (8.0 * (n * n) as f64)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let limit = Self::stability_limit(n);
        if !(self.dt > 0.0) || self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::Stability { dt: self.dt, limit });
        }
        if !(self.horizon > 0.0) || self.checkpoints == 0 {
            return Err(Error::InvalidConfig("horizon and checkpoint count must be positive".into()));
        }
        Ok(())
    }

    /// `(steps per checkpoint, effective dt)`: `dt` is shrunk so that the
    /// checkpoints land on whole steps.
    pub fn schedule(&self) -> (usize, f64) {
        let interval = self.horizon / self.checkpoints as f64;
        let per = (interval / self.dt).ceil().max(1.0) as usize;
        (per, interval / per as f64)
    }
}

/// Reusable buffers for one trajectory.
pub struct KawasakiStepper<'a> {
    model: &'a ModelSpec,
    op: &'a KawasakiOperator,
    grad: Vec<f64>,
    drift: Vec<f64>,
    xi: Vec<f64>,
    noise: Vec<f64>,
}

impl<'a> KawasakiStepper<'a> {
    pub fn new(model: &'a ModelSpec, op: &'a KawasakiOperator) -> Result<Self> {
        if op.n() != model.n {
            return Err(Error::Dimension {
                expected: model.n,
                got: op.n(),
            });
        }
        let n = model.n;
        Ok(KawasakiStepper {
            model,
            op,
            grad: vec![0.0; n],
            drift: vec![0.0; n],
            xi: vec![0.0; n],
            noise: vec![0.0; n],
        })
    }

    /// One Euler–Maruyama step in place. The mean is re-imposed afterwards
    /// to remove rounding drift.
    pub fn step(&mut self, x: &mut [f64], dt: f64, rng: &mut StreamRng) {
        let m0 = mean(x);
        self.model.grad_into(x, &mut self.grad);
        self.op.apply_into(&self.grad, &mut self.drift);
        for v in self.xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        self.op.noise_into(&self.xi, &mut self.noise);
        let s = (2.0 * dt).sqrt();
        for i in 0..x.len() {
            x[i] += -dt * self.drift[i] + s * self.noise[i];
        }
        let shift = mean(x) - m0;
        x.iter_mut().for_each(|v| *v -= shift);
    }
}

/// One step from a configuration, for callers that do not keep buffers.
pub fn kawasaki_step(
    model: &ModelSpec,
    op: &KawasakiOperator,
    x: &SpinConfiguration,
    dt: f64,
    rng: &mut StreamRng,
) -> Result<SpinConfiguration> {
    let limit = SdeConfig::stability_limit(model.n);
    if dt < 0.0 || dt > limit * (1.0 + 1e-12) {
        return Err(Error::Stability { dt, limit });
    }
    let mut v = x.values().to_vec();
    if dt > 0.0 {
        KawasakiStepper::new(model, op)?.step(&mut v, dt, rng);
    }
    if !v.iter().all(|a| a.is_finite()) {
        return Err(Error::Numerical("Kawasaki step produced a non-finite state".into()));
    }
    Ok(SpinConfiguration::new(v))
}

/// Macroscopic profile on the unit torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant { m: f64 },
    /// `m + amplitude cos(2 pi mode theta)`.
    Cosine { m: f64, amplitude: f64, mode: usize },
    /// Piecewise constant on equal cells.
    Cells { values: Vec<f64> },
}

impl Profile {
    pub fn mean(&self) -> f64 {
        match self {
            Profile::Constant { m } | Profile::Cosine { m, .. } => *m,
            Profile::Cells { values } => mean(values),
        }
    }

    /// `int_0^t zeta`.
    pub fn antiderivative(&self, t: f64) -> f64 {
        match self {
            Profile::Constant { m } => m * t,
            Profile::Cosine { m, amplitude, mode } => {
                let w = 2.0 * std::f64::consts::PI * *mode as f64;
                m * t + amplitude * (w * t).sin() / w
            }
            Profile::Cells { values } => {
                let n = values.len() as f64;
                let full = (t * n).floor() as usize;
                let mut s: f64 = values.iter().take(full).sum::<f64>() / n;
                if full < values.len() {
                    s += values[full] * (t - full as f64 / n);
                }
                s
            }
        }
    }

    /// Average over `[a, b]`.
    pub fn average(&self, a: f64, b: f64) -> f64 {
        (self.antiderivative(b) - self.antiderivative(a)) / (b - a)
    }

    /// Block means `y_l` = averages over the block intervals; their weighted
    /// mean equals the profile mean.
    pub fn block_means(&self, scheme: &BlockScheme) -> Vec<f64> {
        let n = scheme.n() as f64;
        (0..scheme.blocks())
            .map(|l| {
                let r = scheme.range(l);
                self.average(r.start as f64 / n, r.end as f64 / n)
            })
            .collect()
    }

    pub fn cell_averages(&self, cells: usize) -> Vec<f64> {
        let h = 1.0 / cells as f64;
        (0..cells).map(|j| self.average(j as f64 * h, (j + 1) as f64 * h)).collect()
    }
}

/// Law of the initial configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialLaw {
    /// `x_i` = profile average over cell `i`.
    Deterministic { profile: Profile },
    /// Canonical ensemble conditioned on the block means of the profile.
    LocalEquilibrium {
        profile: Profile,
        block_size: usize,
        chain: ChainConfig,
    },
}

impl InitialLaw {
    pub fn profile(&self) -> &Profile {
        match self {
            InitialLaw::Deterministic { profile } | InitialLaw::LocalEquilibrium { profile, .. } => profile,
        }
    }

    /// Draws the initial configuration of trajectory `index`.
    pub fn draw(&self, model: &ModelSpec, seed: u64, index: u64) -> Result<Vec<f64>> {
        match self {
            InitialLaw::Deterministic { profile } => Ok(profile.cell_averages(model.n)),
            InitialLaw::LocalEquilibrium {
                profile,
                block_size,
                chain,
            } => {
                let scheme = BlockScheme::equal(model.n, *block_size)?;
                let y = profile.block_means(&scheme);
                let constraint = ConstraintSpec::BlockMeans { scheme, y };
                let cfg = ChainConfig {
                    seed: rng::derive_seed(seed, 0x1a1),
                    ..chain.clone()
                };
                let mut last = Vec::new();
                let c = Chain::new(model, &constraint, &cfg, index, None)?;
                drive(c, &cfg, 1, |x| last = x.to_vec())?;
                Ok(last)
            }
        }
    }
}

/// Ensemble states at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub t: f64,
    /// `states[traj]`.
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryEnsemble {
    pub n: usize,
    pub dt: f64,
    pub checkpoints: Vec<Checkpoint>,
    /// Largest `|mean(x(t)) - mean(x(0))|` seen at any checkpoint.
    pub max_mean_drift: f64,
}

impl TrajectoryEnsemble {
    /// CSV `traj,t,block_0..block_{M-1}`.
    pub fn block_csv(&self, scheme: &BlockScheme) -> Result<String> {
        let mut out = String::from("traj,t");
        for l in 0..scheme.blocks() {
            out.push_str(&format!(",block_{l}"));
        }
        out.push('\n');
        let trajectories = self.checkpoints.first().map_or(0, |c| c.states.len());
        for traj in 0..trajectories {
            for c in &self.checkpoints {
                let y = scheme.project(&c.states[traj])?;
                out.push_str(&format!("{traj},{}", c.t));
                for v in &y.y {
                    out.push_str(&format!(",{v}"));
                }
                out.push('\n');
            }
        }
        Ok(out)
    }
}

fn run_trajectory(
    model: &ModelSpec,
    op: &KawasakiOperator,
    law: &InitialLaw,
    cfg: &SdeConfig,
    index: u64,
) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut x = law.draw(model, cfg.seed, index)?;
    let (per, dt) = cfg.schedule();
    let mut stepper = KawasakiStepper::new(model, op)?;
    let mut rng = rng::stream(cfg.seed, index);
    let m0 = mean(&x);
    let mut drift = 0.0f64;
    let mut snaps = Vec::with_capacity(cfg.checkpoints + 1);
    snaps.push(x.clone());
    for _ in 0..cfg.checkpoints {
        for _ in 0..per {
            stepper.step(&mut x, dt, &mut rng);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "trajectory {index} blew up (dt = {dt:e}); reduce the stability factor"
            )));
        }
        drift = drift.max((mean(&x) - m0).abs());
        snaps.push(x.clone());
    }
    Ok((snaps, drift))
}

/// Integrates `trajectories` independent paths from `law`. Trajectory `k`
/// uses RNG stream `k` of `cfg.seed`, so runs are reproducible regardless of
/// scheduling.
pub fn simulate_ensemble(model: &ModelSpec, law: &InitialLaw, cfg: &SdeConfig, trajectories: usize) -> Result<TrajectoryEnsemble> {
    model.ensure_valid()?;
    cfg.validate(model.n)?;
    if trajectories == 0 {
        return Err(Error::InvalidConfig("need at least one trajectory".into()));
    }
    let op = KawasakiOperator::new(model.n)?;
    let runs: Vec<(Vec<Vec<f64>>, f64)> = (0..trajectories as u64)
        .into_par_iter()
        .map(|k| run_trajectory(model, &op, law, cfg, k))
        .collect::<Result<_>>()?;
    let (_, dt) = cfg.schedule();
    let interval = cfg.horizon / cfg.checkpoints as f64;
    let checkpoints = (0..=cfg.checkpoints)
        .map(|c| Checkpoint {
            t: c as f64 * interval,
            states: runs.iter().map(|r| r.0[c].clone()).collect(),
        })
        .collect();
    let max_mean_drift = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(TrajectoryEnsemble {
        n: model.n,
        dt,
        checkpoints,
        max_mean_drift,
    })
}

/// Time average of `observe` along one long stationary run, sampled every
/// `every` steps after `burn` steps.
pub fn time_average(
    model: &ModelSpec,
    x0: Vec<f64>,
    dt: f64,
    steps: usize,
    burn: usize,
    every: usize,
    seed: u64,
    mut observe: impl FnMut(&[f64]),
) -> Result<f64> {
    let limit = SdeConfig::stability_limit(model.n);
    if !(dt > 0.0) || dt > limit {
        return Err(Error::Stability { dt, limit });
    }
    let op = KawasakiOperator::new(model.n)?;
    let mut stepper = KawasakiStepper::new(model, &op)?;
    let mut rng = rng::stream(seed, 0);
    let mut x = x0;
    let m0 = mean(&x);
    let mut drift = 0.0f64;
    for s in 0..burn + steps {
        stepper.step(&mut x, dt, &mut rng);
        if s >= burn && (s - burn) % every.max(1) == 0 {
            observe(&x);
        }
        if s % 4096 == 0 {
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical("stationary run blew up".into()));
            }
            drift = drift.max((mean(&x) - m0).abs());
        }
    }
    Ok(drift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PotentialSpec;
    use rand::SeedableRng;

    #[test]
    fn zero_step_is_identity_and_mean_is_conserved() {
        let model = ModelSpec::double_well(16);
        let op = KawasakiOperator::new(16).unwrap();
        let mut rng = rng::stream(1, 0);
        let x = SpinConfiguration::new((0..16).map(|i| (i as f64 * 0.37).sin()).collect());
        let y = kawasaki_step(&model, &op, &x, 0.0, &mut rng).unwrap();
        assert_eq!(x.values(), y.values());
        let mut cur = x.clone();
        let dt = SdeConfig::stability_limit(16) * 0.5;
        for _ in 0..1000 {
            let next = kawasaki_step(&model, &op, &cur, dt, &mut rng).unwrap();
            assert!((next.mean() - cur.mean()).abs() <= 1e-12);
            cur = next;
        }
        assert!(kawasaki_step(&model, &op, &x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn noise_alone_conserves_sum_exactly_in_structure() {
        let op = KawasakiOperator::new(10).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let xi: Vec<f64> = (0..10).map(|_| r.sample(StandardNormal)).collect();
        let mut out = vec![0.0; 10];
        op.noise_into(&xi, &mut out);
        assert!(out.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn profile_block_means_preserve_mass() {
        let p = Profile::Cosine {
            m: 0.3,
            amplitude: 0.5,
            mode: 1,
        };
        let scheme = BlockScheme::from_sizes(vec![5, 4, 5, 6, 4]).unwrap();
        let y = p.block_means(&scheme);
        assert!((scheme.weighted_mean(&y) - 0.3).abs() < 1e-14);
        let cells = Profile::Cells {
            values: p.cell_averages(24),
        };
        assert!((cells.average(0.25, 0.5) - p.average(0.25, 0.5)).abs() < 1e-14);
    }

    #[test]
    fn ensembles_are_reproducible_and_conservative() {
        let model = ModelSpec::new(8, PotentialSpec::double_well(), crate::model::InteractionKernel::nearest_neighbour(0.2, 0.1));
        let law = InitialLaw::LocalEquilibrium {
            profile: Profile::Cosine {
                m: 0.1,
                amplitude: 0.5,
                mode: 1,
            },
            block_size: 4,
            chain: ChainConfig {
                burn_in: Some(200),
                ..ChainConfig::default()
            },
        };
        let cfg = SdeConfig::from_stability(8, 0.5, 0.02, 4, 9);
        let a = simulate_ensemble(&model, &law, &cfg, 3).unwrap();
        let b = simulate_ensemble(&model, &law, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.max_mean_drift < 1e-12);
        assert_eq!(a.checkpoints.len(), 5);
        let scheme = BlockScheme::equal(8, 4).unwrap();
        let y0 = scheme.project(&a.checkpoints[0].states[1]).unwrap();
        let target = law.profile().block_means(&scheme);
        for l in 0..2 {
            assert!((y0.y[l] - target[l]).abs() < 1e-12);
        }
        let csv = a.block_csv(&scheme).unwrap();
        assert!(csv.starts_with("traj,t,block_0,block_1\n"));
        assert_eq!(csv.lines().count(), 1 + 3 * 5);
        let bad = SdeConfig { dt: 1.0, ..cfg };
        assert!(matches!(simulate_ensemble(&model, &law, &bad, 1), Err(Error::Stability { .. })));
    }
}
