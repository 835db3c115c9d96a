//! The mesoscopic gradient flow `d eta / dt = -Abar grad_Y Hbar(eta)` with
//! `Abar^{-1} = P A^{-1} N P*`.

use nalgebra::{DMatrix, DVector, LU, Dyn};
use serde::{Deserialize, Serialize};

use super::operator::KawasakiOperator;
use crate::coarse_grain::{hbar_y_aux, hbar_y_aux_gradient, BlockScheme};
use crate::error::{Error, Result};
use crate::free_energy::{CoarseGrainedCurve, FreeEnergyCurve};

/// `Abar` for one block scheme, factorised once.
#[derive(Debug, Clone)]
pub struct CoarseOperator {
    scheme: BlockScheme,
    /// `B = P A^+ N P*` restricted to weighted-mean-zero vectors.
    inverse: DMatrix<f64>,
    /// LU of `[[B, 1], [alpha^T, 0]]`.
    augmented: LU<f64, Dyn, Dyn>,
}

impl CoarseOperator {
    pub fn new(scheme: &BlockScheme) -> Result<Self> {
        let n = scheme.n();
        let mb = scheme.blocks();
        if mb < 2 {
            return Err(Error::InvalidConfig("coarse operator needs M >= 2 blocks".into()));
        }
        let op = KawasakiOperator::new(n)?;
        let mut b = DMatrix::zeros(mb, mb);
        for l in 0..mb {
            // lift of e_l, centred: 1_{B(l)} - K_l / N
            let c = scheme.size(l) as f64 / n as f64;
            let mut v = vec![-c; n];
            for i in scheme.range(l) {
                v[i] += 1.0;
            }
            let u = op.pseudo_inverse(&v)?;
            let py = scheme.project(&u)?;
            for k in 0..mb {
                b[(k, l)] = py.y[k];
            }
        }
        let mut aug = DMatrix::zeros(mb + 1, mb + 1);
        aug.view_mut((0, 0), (mb, mb)).copy_from(&b);
        for l in 0..mb {
            aug[(l, mb)] = 1.0;
            aug[(mb, l)] = scheme.alpha(l);
        }
        Ok(CoarseOperator {
            scheme: scheme.clone(),
            inverse: b,
            augmented: aug.lu(),
        })
    }

    pub fn scheme(&self) -> &BlockScheme {
        &self.scheme
    }

    /// Matrix of `Abar^{-1}` on weighted-mean-zero vectors.
    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    fn weighted_mean(&self, g: &[f64]) -> f64 {
        self.scheme.weighted_mean(g)
    }

    fn check_mean_zero(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.scheme.blocks() {
            return Err(Error::Dimension {
                expected: self.scheme.blocks(),
                got: g.len(),
            });
        }
        let m = self.weighted_mean(g);
        let scale = 1.0 + g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if m.abs() > 1e-10 * scale {
            return Err(Error::NonZeroMean { mean: m });
        }
        Ok(())
    }

    /// `u = Abar g`, i.e. the weighted-mean-zero solution of
    /// `P A^{-1} N P* u = g`. Constant directions are rejected.
    pub fn solve(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_mean_zero(g)?;
        let mb = g.len();
        let mut rhs = DVector::zeros(mb + 1);
        for l in 0..mb {
            rhs[l] = g[l];
        }
        let sol = self
            .augmented
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("coarse operator is singular".into()))?;
        Ok(sol.rows(0, mb).iter().cloned().collect())
    }

    /// `Abar^{-1} u = P A^+ N P* u` for weighted-mean-zero `u`.
    pub fn apply_inverse(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_mean_zero(u)?;
        Ok((&self.inverse * DVector::from_column_slice(u)).iter().cloned().collect())
    }

    /// `Abar g` after removing the constant part of `g`, which `Abar`
    /// annihilates.
    pub fn apply_projected(&self, g: &[f64]) -> Result<Vec<f64>> {
        let m = self.weighted_mean(g);
        let centred: Vec<f64> = g.iter().map(|v| v - m).collect();
        self.solve(&centred)
    }
}

/// Source of `Hbar` and its Y-gradient for the flow.
#[derive(Debug, Clone, Copy)]
pub enum MesoMode<'a> {
    /// Block-separable `Hbar_aux` from `Hbar_K` tables.
    Aux(&'a [CoarseGrainedCurve]),
    /// `phi` in every block, the large-`K` surrogate.
    Phi(&'a FreeEnergyCurve),
}

impl MesoMode<'_> {
    fn gradient(&self, scheme: &BlockScheme, eta: &[f64]) -> Result<Vec<f64>> {
        match self {
            MesoMode::Aux(curves) => hbar_y_aux_gradient(scheme, curves, eta),
            MesoMode::Phi(curve) => eta.iter().map(|&y| curve.phi_prime(y)).collect(),
        }
    }

    pub fn energy(&self, scheme: &BlockScheme, eta: &[f64]) -> Result<f64> {
        match self {
            MesoMode::Aux(curves) => hbar_y_aux(scheme, curves, eta),
            MesoMode::Phi(curve) => {
                let mut s = 0.0;
                for (l, &y) in eta.iter().enumerate() {
                    s += scheme.alpha(l) * curve.phi(y)?;
                }
                Ok(s / scheme.blocks() as f64)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MesoMode::Aux(_) => "aux",
            MesoMode::Phi(_) => "phi",
        }
    }
}

/// Adaptive Dormand–Prince settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MesoOdeConfig {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
    /// Number of equal output intervals.
    pub checkpoints: usize,
}

impl Default for MesoOdeConfig {
    fn default() -> Self {
        MesoOdeConfig {
            rtol: 1e-6,
            atol: 1e-6,
            initial_step: 1e-5,
            min_step: 1e-14,
            max_steps: 1_000_000,
            checkpoints: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MesoTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `Hbar(eta)` at the checkpoints.
    pub energy: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Largest increase of `Hbar` over one accepted step (zero for a
    /// dissipative run).
    pub max_energy_increase: f64,
    /// Largest `|weighted mean(eta(t)) - weighted mean(eta_0)|`.
    pub max_mass_drift: f64,
}

// Dormand–Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the mesoscopic flow from `eta0` to `horizon`.
pub fn integrate_meso(
    op: &CoarseOperator,
    mode: MesoMode<'_>,
    eta0: &[f64],
    horizon: f64,
    cfg: &MesoOdeConfig,
) -> Result<MesoTrajectory> {
    let scheme = op.scheme();
    let mb = scheme.blocks();
    if eta0.len() != mb {
        return Err(Error::Dimension {
            expected: mb,
            got: eta0.len(),
        });
    }
    if !(horizon > 0.0) || cfg.checkpoints == 0 || !(cfg.rtol > 0.0) || !(cfg.atol > 0.0) {
        return Err(Error::InvalidConfig("meso flow needs positive horizon, tolerances and checkpoints".into()));
    }
    let rhs = |eta: &[f64]| -> Result<Vec<f64>> {
        let g = mode.gradient(scheme, eta)?;
        Ok(op.apply_projected(&g)?.into_iter().map(|v| -v).collect())
    };
    let mass0 = scheme.weighted_mean(eta0);
    let mut eta = eta0.to_vec();
    let mut energy = mode.energy(scheme, &eta)?;
    let mut out = MesoTrajectory {
        times: vec![0.0],
        states: vec![eta.clone()],
        energy: vec![energy],
        accepted_steps: 0,
        rejected_steps: 0,
        max_energy_increase: 0.0,
        max_mass_drift: 0.0,
    };
    let interval = horizon / cfg.checkpoints as f64;
    let mut t = 0.0;
    let mut h = cfg.initial_step.min(interval);
    let mut k = vec![vec![0.0; mb]; 7];
    k[0] = rhs(&eta)?;
    let mut stage = vec![0.0; mb];
    let mut steps = 0usize;
    for c in 1..=cfg.checkpoints {
        let target = c as f64 * interval;
        while t < target * (1.0 - 1e-14) {
            steps += 1;
            if steps > cfg.max_steps {
                return Err(Error::Numerical(format!(
                    "meso flow exceeded {} steps at t = {t:e}; reduce M or switch mode",
                    cfg.max_steps
                )));
            }
            let last = t + h >= target;
            let hs = if last { target - t } else { h };
            for s in 1..7 {
                for i in 0..mb {
                    let mut acc = eta[i];
                    for j in 0..s {
                        acc += hs * A[s][j] * k[j][i];
                    }
                    stage[i] = acc;
                }
                k[s] = rhs(&stage)?;
            }
            let mut err = 0.0f64;
            let mut next = vec![0.0; mb];
            for i in 0..mb {
                let mut y5 = eta[i];
                let mut e = 0.0;
                for s in 0..7 {
                    y5 += hs * B5[s] * k[s][i];
                    e += hs * (B5[s] - B4[s]) * k[s][i];
                }
                next[i] = y5;
                let sc = cfg.atol + cfg.rtol * eta[i].abs().max(y5.abs());
                err = err.max((e / sc).abs());
            }
            if !err.is_finite() {
                err = f64::INFINITY;
            }
            if err <= 1.0 {
                t = if last { target } else { t + hs };
                let e_new = mode.energy(scheme, &next)?;
                out.max_energy_increase = out.max_energy_increase.max(e_new - energy);
                energy = e_new;
                eta = next;
                // first-same-as-last: stage 7 was evaluated at the new point
                k[0] = k[6].clone();
                out.accepted_steps += 1;
                out.max_mass_drift = out.max_mass_drift.max((scheme.weighted_mean(&eta) - mass0).abs());
            } else {
                out.rejected_steps += 1;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if !last || err > 1.0 {
                h = hs * factor;
            }
            if h < cfg.min_step {
                return Err(Error::Numerical(format!(
                    "meso step size underflow at t = {t:e} ({} mode); the flow is too stiff, reduce M or switch mode",
                    mode.name()
                )));
            }
        }
        out.times.push(target);
        out.states.push(eta.clone());
        out.energy.push(energy);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_energy::{sigma_grid, FreeEnergySource};
    use crate::model::ModelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn centred(rng: &mut ChaCha8Rng, scheme: &BlockScheme) -> Vec<f64> {
        let g: Vec<f64> = (0..scheme.blocks()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = scheme.weighted_mean(&g);
        g.iter().map(|v| v - m).collect()
    }

    #[test]
    fn single_site_blocks_reproduce_the_operator() {
        let scheme = BlockScheme::equal(12, 1).unwrap();
        let op = CoarseOperator::new(&scheme).unwrap();
        let a = KawasakiOperator::new(12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = centred(&mut rng, &scheme);
        let u = op.solve(&g).unwrap();
        let direct = a.apply(&g).unwrap();
        for i in 0..12 {
            assert!((u[i] - direct[i]).abs() < 1e-8 * (1.0 + direct[i].abs()));
        }
        assert!(op.solve(&vec![1.0; 12]).is_err());
    }

    #[test]
    fn round_trip_on_equal_and_unequal_blocks() {
        for scheme in [BlockScheme::equal(64, 8).unwrap(), BlockScheme::from_sizes(vec![5, 4, 6, 5, 4, 6]).unwrap()] {
            let op = CoarseOperator::new(&scheme).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let g = centred(&mut rng, &scheme);
            let u = op.solve(&g).unwrap();
            let back = op.apply_inverse(&u).unwrap();
            for i in 0..g.len() {
                assert!((back[i] - g[i]).abs() < 1e-10);
            }
            assert!(scheme.weighted_mean(&u).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_flow_decays_at_the_operator_rate() {
        let model = ModelSpec::gaussian(64);
        let curve = crate::free_energy::FreeEnergyCurve::tabulate(&FreeEnergySource::limit(&model), sigma_grid(-3.0, 3.0, 0.1)).unwrap();
        let scheme = BlockScheme::equal(64, 4).unwrap();
        let op = CoarseOperator::new(&scheme).unwrap();
        let mb = scheme.blocks();
        let v: Vec<f64> = (0..mb).map(|l| (2.0 * std::f64::consts::PI * l as f64 / mb as f64).cos()).collect();
        // v is an eigenvector of the circulant Abar
        let av = op.solve(&v).unwrap();
        let rate = av[0] / v[0];
        let eta0: Vec<f64> = v.iter().map(|x| 0.2 * x).collect();
        let cfg = MesoOdeConfig {
            rtol: 1e-9,
            atol: 1e-12,
            ..MesoOdeConfig::default()
        };
        let tr = integrate_meso(&op, MesoMode::Phi(&curve), &eta0, 0.02, &cfg).unwrap();
        let last = tr.states.last().unwrap();
        let expected = 0.2 * (-rate * 0.02).exp();
        assert!((last[0] - expected).abs() < 1e-6, "{} vs {expected}", last[0]);
        assert!(tr.max_energy_increase <= 1e-12);
        assert!(tr.max_mass_drift < 1e-10);
        // dense oracle: Abar^{-1} = P A^+ E with E the block embedding
        let n = 64;
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let s = (n * n) as f64;
            if i == j {
                2.0 * s
            } else if (i + 1) % n == j || (j + 1) % n == i {
                -s
            } else {
                0.0
            }
        });
        let pinv = a.pseudo_inverse(1e-9).unwrap();
        let lifted = nalgebra::DVector::from_vec(scheme.embed(&v).unwrap());
        let u: Vec<f64> = (&pinv * lifted).iter().cloned().collect();
        let back = scheme.project(&u).unwrap().y;
        let oracle = v[0] / back[0];
        assert!((rate / oracle - 1.0).abs() < 1e-8, "{rate} vs {oracle}");
        let still = integrate_meso(&op, MesoMode::Phi(&curve), &vec![0.3; mb], 0.01, &cfg).unwrap();
        assert!(still.states.last().unwrap().iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
