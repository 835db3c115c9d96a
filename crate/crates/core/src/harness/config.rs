use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarse_grain::BlockSampler;
use crate::dynamics::Profile;
use crate::error::{Error, Result};
use crate::model::{ModelFile, ModelSpec};
use crate::sampler::ChainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Validate,
    FreeEnergy,
    Phi,
    Cramer,
    Hessian,
    Simulate,
    Converge,
    Certify,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Validate => "validate",
            StudyKind::FreeEnergy => "free_energy",
            StudyKind::Phi => "phi",
            StudyKind::Cramer => "cramer",
            StudyKind::Hessian => "hessian",
            StudyKind::Simulate => "simulate",
            StudyKind::Converge => "converge",
            StudyKind::Certify => "certify",
        }
    }
}

/// Where the model comes from: a JSON file (relative paths resolve against
/// the config file) or an inline model object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelFile),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Deterministic,
    #[default]
    LocalEquilibrium,
}

/// Inputs of the two-scale LSI combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleInputs {
    pub rho1: f64,
    pub rho2: f64,
    pub kappa: f64,
}

/// Numeric knobs shared by the studies. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyParams {
    /// Chemical potentials probed by `free_energy`.
    pub sigma_points: Vec<f64>,
    /// Mean spins probed by `cramer`.
    pub m_points: Vec<f64>,
    /// Grid of `m` for the `phi` table: `[lo, hi, step]`.
    pub phi_grid: [f64; 3],
    /// Sigma grid of the Legendre tables: `[lo, hi, step]`.
    pub sigma_grid: [f64; 3],
    pub profile: Profile,
    pub initial: InitialKind,
    /// Chain used to draw local-equilibrium initial data.
    pub initial_chain: ChainConfig,
    /// `dt = stability_factor / (8 N^2)`.
    pub stability_factor: f64,
    pub checkpoints: usize,
    pub pde_cells: usize,
    pub pde_dt: f64,
    pub meso_rtol: f64,
    /// Mesoscopic `y` grid of the `Hbar_K` tables: `[lo, hi, step]`.
    pub meso_grid: [f64; 3],
    pub sampler: BlockSampler,
    /// Samples per chain per rung for `hessian`; empty uses `sampler`.
    pub hessian_samples: Vec<usize>,
    /// Block index `l` of the off-diagonal entry `(l, l + 1)`.
    pub hessian_block: usize,
    /// Constant block mean at which the Hessian is evaluated.
    pub hessian_y: f64,
    pub two_scale: Option<TwoScaleInputs>,
}

impl Default for StudyParams {
    fn default() -> Self {
        StudyParams {
            sigma_points: vec![0.0, 1.0, 2.0],
            m_points: vec![-1.0, 0.0, 0.5, 1.0],
            phi_grid: [-2.0, 2.0, 0.1],
            sigma_grid: [-4.0, 4.0, 0.05],
            profile: Profile::Cosine {
                m: 0.2,
                amplitude: 0.5,
                mode: 1,
            },
            initial: InitialKind::LocalEquilibrium,
            initial_chain: ChainConfig {
                burn_in: Some(500),
                ..ChainConfig::default()
            },
            stability_factor: 0.5,
            checkpoints: 10,
            pde_cells: 512,
            pde_dt: 2e-5,
            meso_rtol: 1e-6,
            meso_grid: [-2.0, 2.0, 0.02],
            sampler: BlockSampler::default(),
            hessian_samples: Vec::new(),
            hessian_block: 1,
            hessian_y: 0.0,
            two_scale: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    /// Optional here; the CLI subcommand sets it.
    #[serde(default)]
    pub study: Option<StudyKind>,
    /// `(N, M)` pairs, strictly increasing in `N`.
    pub ladder: Vec<(usize, usize)>,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub params: StudyParams,
    /// Directory that relative model paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_ensemble() -> usize {
    64
}

fn default_horizon() -> f64 {
    0.05
}

/// What the config hash covers: every knob except the output location.
#[derive(Serialize)]
struct HashView<'a> {
    model: String,
    study: Option<StudyKind>,
    ladder: &'a [(usize, usize)],
    ensemble: usize,
    horizon: f64,
    seed: u64,
    params: &'a StudyParams,
}

impl ExperimentConfig {
    pub fn new(model: &ModelSpec, study: StudyKind, ladder: Vec<(usize, usize)>) -> Self {
        ExperimentConfig {
            model: ModelSource::Inline(ModelFile::from(model)),
            study: Some(study),
            ladder,
            ensemble: default_ensemble(),
            horizon: default_horizon(),
            seed: 0,
            output: None,
            params: StudyParams::default(),
            base_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| e.context(format!("parsing {}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// The model at its file size `N`; studies resize it per rung.
    pub fn load_model(&self) -> Result<ModelSpec> {
        match &self.model {
            ModelSource::Inline(f) => f.clone().try_into(),
            ModelSource::Path(p) => {
                let full = match (&self.base_dir, p.is_relative()) {
                    (Some(b), true) => b.join(p),
                    _ => p.clone(),
                };
                ModelSpec::load(&full).map_err(|e| e.context(format!("model {}", full.display())))
            }
        }
    }

    pub fn study(&self) -> Result<StudyKind> {
        self.study
            .ok_or_else(|| Error::InvalidConfig("no study selected".into()))
    }

    /// Checks the ladder and numeric knobs against the model.
    pub fn validate(&self) -> Result<()> {
        let model = self.load_model()?;
        model.ensure_valid()?;
        let study = self.study()?;
        let needs_ladder = !matches!(study, StudyKind::Validate | StudyKind::Phi | StudyKind::Certify);
        if needs_ladder && self.ladder.is_empty() {
            return Err(Error::InvalidConfig(format!("study {} needs a ladder", study.name())));
        }
        let r = model.range();
        for (k, &(n, m)) in self.ladder.iter().enumerate() {
            if m == 0 || n % m != 0 {
                return Err(Error::InvalidConfig(format!("rung {k}: M = {m} must divide N = {n}")));
            }
            let block = n / m;
            if block < 2 * r + 2 {
                return Err(Error::InvalidConfig(format!(
                    "rung {k}: K = N/M = {block} is below 2R + 2 = {}",
                    2 * r + 2
                )));
            }
            if k > 0 && n <= self.ladder[k - 1].0 {
                return Err(Error::InvalidConfig("ladder must be strictly increasing in N".into()));
            }
        }
        let p = &self.params;
        if matches!(study, StudyKind::Simulate | StudyKind::Converge) {
            if self.ensemble == 0 || !(self.horizon > 0.0) || p.checkpoints == 0 {
                return Err(Error::InvalidConfig("ensemble, horizon and checkpoints must be positive".into()));
            }
            if !(p.stability_factor > 0.0 && p.stability_factor <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "stability factor {} must lie in (0, 1]",
                    p.stability_factor
                )));
            }
            if !(p.pde_dt > 0.0) || p.pde_cells < crate::metrics::MIN_CELLS || !(p.meso_rtol > 0.0) {
                return Err(Error::InvalidConfig("PDE and meso solver settings must be positive".into()));
            }
        }
        for g in [p.phi_grid, p.sigma_grid, p.meso_grid] {
            if !(g[0] < g[1]) || !(g[2] > 0.0) {
                return Err(Error::InvalidConfig(format!("grid {g:?} must read [lo, hi, step] with lo < hi")));
            }
        }
        if !p.hessian_samples.is_empty() && p.hessian_samples.len() != self.ladder.len() {
            return Err(Error::InvalidConfig("hessian_samples needs one entry per rung".into()));
        }
        Ok(())
    }

    /// SHA-256 over every numeric knob, the model content and the seed.
    pub fn hash(&self) -> Result<String> {
        let view = HashView {
            model: self.load_model()?.content_hash(),
            study: self.study,
            ladder: &self.ladder,
            ensemble: self.ensemble,
            horizon: self.horizon,
            seed: self.seed,
            params: &self.params,
        };
        let json = serde_json::to_string(&view)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::new(&ModelSpec::double_well(32), StudyKind::Converge, vec![(32, 8), (64, 16)])
    }

    #[test]
    fn ladder_rules() {
        assert!(base().validate().is_ok());
        let mut c = base();
        c.ladder = vec![(64, 16), (32, 8)];
        assert!(c.validate().is_err());
        c.ladder = vec![(32, 16)];
        assert!(c.validate().is_err(), "K = 2 < 2R + 2");
        c.ladder = vec![(30, 8)];
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_knobs_but_not_output() {
        let a = base();
        let mut b = base();
        b.output = Some("elsewhere".into());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.params.pde_dt *= 2.0;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        let mut c = base();
        c.seed = 1;
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn round_trip_and_unknown_fields() {
        let text = serde_json::to_string(&base()).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.hash().unwrap(), base().hash().unwrap());
        let bad = text.replacen("\"ensemble\"", "\"ensembel\"", 1);
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }
}
