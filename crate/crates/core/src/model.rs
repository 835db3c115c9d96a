//! Lattice Hamiltonian for unbounded continuous spins on `[N]` with a
//! perturbed-quadratic single-site potential and a finite-range,
//! translation-invariant, strictly diagonally dominant interaction.
//!
//! ```text
//! H(x) = sum_i [ psi(x_i) + s_i x_i ] + sum_{i<j, j-i<=R} h(j-i) x_i x_j,
//! psi(z) = z^2/2 + psi_b(z)
//! ```
//!
//! Sites outside `[N]` are pinned to zero (free boundary).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coarse_grain::BlockScheme;
use crate::error::{Error, Result};

/// Tolerance for the hyperplane invariant of [`SpinConfiguration`].
pub const MEAN_TOLERANCE: f64 = 1e-12;

/// Bounded perturbation `psi_b` of the quadratic single-site potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialSpec {
    Zero,
    /// `psi_b(z) = amplitude * cos(frequency * z)`
    Cosine { amplitude: f64, frequency: f64 },
    /// `psi_b(z) = -depth * exp(-z^2 / (2 width^2))`. A negative depth
    /// raises a hump at the origin and produces a double well.
    GaussianBump { depth: f64, width: f64 },
}

impl PotentialSpec {
    /// The reference double well `z^2/2 + 2 exp(-z^2/2)`, minima at
    /// `±sqrt(2 ln 2)`.
    pub fn double_well() -> Self {
        PotentialSpec::GaussianBump {
            depth: -2.0,
            width: 1.0,
        }
    }

    #[inline]
    pub fn perturbation(&self, z: f64) -> f64 {
        match *self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Cosine {
                amplitude,
                frequency,
            } => amplitude * (frequency * z).cos(),
            PotentialSpec::GaussianBump { depth, width } => {
                -depth * (-z * z / (2.0 * width * width)).exp()
            }
        }
    }

    #[inline]
    pub fn perturbation_d1(&self, z: f64) -> f64 {
        match *self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Cosine {
                amplitude,
                frequency,
            } => -amplitude * frequency * (frequency * z).sin(),
            PotentialSpec::GaussianBump { depth, width } => {
                let w2 = width * width;
                depth * z / w2 * (-z * z / (2.0 * w2)).exp()
            }
        }
    }

    #[inline]
    pub fn perturbation_d2(&self, z: f64) -> f64 {
        match *self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Cosine {
                amplitude,
                frequency,
            } => -amplitude * frequency * frequency * (frequency * z).cos(),
            PotentialSpec::GaussianBump { depth, width } => {
                let w2 = width * width;
                depth / w2 * (1.0 - z * z / w2) * (-z * z / (2.0 * w2)).exp()
            }
        }
    }

    #[inline]
    pub fn psi(&self, z: f64) -> f64 {
        0.5 * z * z + self.perturbation(z)
    }

    #[inline]
    pub fn psi_d1(&self, z: f64) -> f64 {
        z + self.perturbation_d1(z)
    }

    #[inline]
    pub fn psi_d2(&self, z: f64) -> f64 {
        1.0 + self.perturbation_d2(z)
    }

    /// True when `psi_b` is even, so that `x -> -x` is a symmetry at zero field.
    pub fn is_even(&self) -> bool {
        true
    }

    /// Numerical sup-norms of `psi_b`, `psi_b'`, `psi_b''`, the infimum of
    /// `psi_b''` and the oscillation of `psi_b`, scanned over `[-100, 100]`.
    pub fn perturbation_bounds(&self) -> PerturbationBounds {
        let n = 200_001;
        let mut b = PerturbationBounds {
            sup_value: 0.0,
            sup_d1: 0.0,
            sup_d2: 0.0,
            inf_d2: f64::INFINITY,
            osc: 0.0,
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..n {
            let z = -100.0 + 200.0 * k as f64 / (n - 1) as f64;
            let v = self.perturbation(z);
            b.sup_value = b.sup_value.max(v.abs());
            lo = lo.min(v);
            hi = hi.max(v);
            b.sup_d1 = b.sup_d1.max(self.perturbation_d1(z).abs());
            let d2 = self.perturbation_d2(z);
            b.sup_d2 = b.sup_d2.max(d2.abs());
            b.inf_d2 = b.inf_d2.min(d2);
        }
        b.osc = hi - lo;
        b
    }

    fn kind_name(&self) -> &'static str {
        match self {
            PotentialSpec::Zero => "zero",
            PotentialSpec::Cosine { .. } => "cosine",
            PotentialSpec::GaussianBump { .. } => "gaussian_bump",
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            PotentialSpec::Zero => vec![],
            PotentialSpec::Cosine {
                amplitude,
                frequency,
            } => vec![amplitude, frequency],
            PotentialSpec::GaussianBump { depth, width } => vec![depth, width],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationBounds {
    pub sup_value: f64,
    pub sup_d1: f64,
    pub sup_d2: f64,
    pub inf_d2: f64,
    /// `sup psi_b - inf psi_b`.
    pub osc: f64,
}

impl PerturbationBounds {
    pub fn total(&self) -> f64 {
        self.sup_value + self.sup_d1 + self.sup_d2
    }
}

/// Translation-invariant couplings `M_ij = h(|i-j|)` for `1 <= |i-j| <= R`,
/// with `M_ii = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionKernel {
    couplings: Vec<f64>,
    margin: f64,
}

impl InteractionKernel {
    /// `couplings[r-1] = h(r)`; the range is `couplings.len()`.
    pub fn new(couplings: Vec<f64>, margin: f64) -> Result<Self> {
        if couplings.is_empty() {
            return Err(Error::InvalidModel("interaction range must be >= 1".into()));
        }
        if couplings.iter().any(|h| !h.is_finite()) || !margin.is_finite() {
            return Err(Error::InvalidModel("non-finite coupling".into()));
        }
        Ok(InteractionKernel { couplings, margin })
    }

    /// Nearest-neighbour kernel `h(1) = coupling`.
    pub fn nearest_neighbour(coupling: f64, margin: f64) -> Self {
        InteractionKernel {
            couplings: vec![coupling],
            margin,
        }
    }

    pub fn range(&self) -> usize {
        self.couplings.len()
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// `h(r)`, zero outside `1..=R`.
    #[inline]
    pub fn coupling(&self, r: usize) -> f64 {
        if r == 0 || r > self.couplings.len() {
            0.0
        } else {
            self.couplings[r - 1]
        }
    }

    /// Off-diagonal entry `M_ij` (zero on the diagonal).
    #[inline]
    pub fn off_diagonal(&self, i: usize, j: usize) -> f64 {
        self.coupling(i.abs_diff(j))
    }

    pub fn is_zero(&self) -> bool {
        self.couplings.iter().all(|&h| h == 0.0)
    }

    /// `2 * sum_r |h(r)|`, the off-diagonal row sum of an interior row.
    pub fn row_sum(&self) -> f64 {
        2.0 * self.couplings.iter().map(|h| h.abs()).sum::<f64>()
    }
}

/// Full model definition.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub n: usize,
    pub potential: PotentialSpec,
    pub kernel: InteractionKernel,
    /// Per-site external field; `None` means identically zero.
    pub field: Option<Vec<f64>>,
    /// Chemical potential used by the grand-canonical ensemble.
    pub sigma: f64,
}

impl ModelSpec {
    pub fn new(n: usize, potential: PotentialSpec, kernel: InteractionKernel) -> Self {
        ModelSpec {
            n,
            potential,
            kernel,
            field: None,
            sigma: 0.0,
        }
    }

    /// `psi_b = 0`, `h = 0`: the product standard Gaussian.
    pub fn gaussian(n: usize) -> Self {
        Self::new(
            n,
            PotentialSpec::Zero,
            InteractionKernel::nearest_neighbour(0.0, 0.5),
        )
    }

    /// Reference nonlinear model: double well with `h(1) = 0.2`.
    pub fn double_well(n: usize) -> Self {
        Self::new(
            n,
            PotentialSpec::double_well(),
            InteractionKernel::nearest_neighbour(0.2, 0.1),
        )
    }

    pub fn with_size(&self, n: usize) -> Self {
        let mut m = self.clone();
        m.n = n;
        if let Some(s) = &self.field {
            let mut s = s.clone();
            s.resize(n, 0.0);
            m.field = Some(s);
        }
        m
    }

    pub fn with_field(mut self, field: Vec<f64>) -> Result<Self> {
        if field.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: field.len(),
            });
        }
        self.field = if field.iter().all(|&s| s == 0.0) {
            None
        } else {
            Some(field)
        };
        Ok(self)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn range(&self) -> usize {
        self.kernel.range()
    }

    #[inline]
    pub fn field_at(&self, i: usize) -> f64 {
        self.field.as_ref().map_or(0.0, |s| s[i])
    }

    pub fn has_field(&self) -> bool {
        self.field.is_some()
    }

    /// `x -> -x` leaves the measure invariant (no field, even `psi_b`).
    pub fn is_flip_symmetric(&self) -> bool {
        !self.has_field() && self.potential.is_even()
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// The Hamiltonian `H(x)`.
    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(self.energy_unchecked(x))
    }

    pub(crate) fn energy_unchecked(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut e = 0.0;
        for i in 0..n {
            e += self.potential.psi(x[i]) + self.field_at(i) * x[i];
            for (r, &h) in self.kernel.couplings().iter().enumerate() {
                let j = i + r + 1;
                if j < n {
                    e += h * x[i] * x[j];
                }
            }
        }
        e
    }

    /// `grad H(x)`.
    pub fn grad_energy(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut g = vec![0.0; x.len()];
        self.grad_into(x, &mut g);
        Ok(g)
    }

    pub(crate) fn grad_into(&self, x: &[f64], g: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            g[i] = self.potential.psi_d1(x[i]) + self.field_at(i);
        }
        for (r, &h) in self.kernel.couplings().iter().enumerate() {
            if h == 0.0 {
                continue;
            }
            let d = r + 1;
            for i in 0..n.saturating_sub(d) {
                g[i] += h * x[i + d];
                g[i + d] += h * x[i];
            }
        }
    }

    /// Hessian action `Hess H(x) v`.
    pub fn hessian_apply(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        self.check_len(v)?;
        let n = x.len();
        let mut out: Vec<f64> = (0..n).map(|i| self.potential.psi_d2(x[i]) * v[i]).collect();
        for (r, &h) in self.kernel.couplings().iter().enumerate() {
            let d = r + 1;
            for i in 0..n.saturating_sub(d) {
                out[i] += h * v[i + d];
                out[i + d] += h * v[i];
            }
        }
        Ok(out)
    }

    /// `H_aux(x)`: the Hamiltonian with every interaction between distinct
    /// blocks of `scheme` removed.
    pub fn aux_energy(&self, scheme: &BlockScheme, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        if scheme.n() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: scheme.n(),
            });
        }
        Ok(self.energy_unchecked(x) - self.cross_block_energy(scheme, x))
    }

    /// Sum of the pair terms `M_ij x_i x_j` with `i`, `j` in different blocks.
    pub(crate) fn cross_block_energy(&self, scheme: &BlockScheme, x: &[f64]) -> f64 {
        let n = x.len();
        let mut e = 0.0;
        for i in 0..n {
            let bi = scheme.block_of(i);
            for (r, &h) in self.kernel.couplings().iter().enumerate() {
                let j = i + r + 1;
                if j < n && scheme.block_of(j) != bi {
                    e += h * x[i] * x[j];
                }
            }
        }
        e
    }

    /// Adds `factor` times the gradient of [`Self::cross_block_energy`] to `g`.
    pub(crate) fn cross_block_grad_add(&self, scheme: &BlockScheme, x: &[f64], factor: f64, g: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let bi = scheme.block_of(i);
            for (r, &h) in self.kernel.couplings().iter().enumerate() {
                let j = i + r + 1;
                if j < n && scheme.block_of(j) != bi {
                    g[i] += factor * h * x[j];
                    g[j] += factor * h * x[i];
                }
            }
        }
    }

    /// Number of unordered interacting pairs `(i, j)` straddling two blocks.
    pub fn cross_block_pairs(&self, scheme: &BlockScheme) -> usize {
        let n = self.n;
        let mut count = 0;
        for i in 0..n {
            for r in 1..=self.range() {
                let j = i + r;
                if j < n && scheme.block_of(j) != scheme.block_of(i) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Structural checks on the model; never fails, the report carries the
    /// verdict.
    pub fn validate(&self) -> ValidationReport {
        let mut checks = Vec::new();
        let couplings_ok = self
            .kernel
            .couplings()
            .iter()
            .all(|&h| h > -1.0 && h < 1.0);
        checks.push(Check::new(
            "coupling_range",
            couplings_ok,
            format!("h = {:?} must lie in (-1, 1)", self.kernel.couplings()),
        ));
        let dominance = self.kernel.row_sum() + self.kernel.margin();
        checks.push(Check::new(
            "diagonal_dominance",
            self.kernel.margin() > 0.0 && dominance <= 1.0 + 1e-15,
            format!(
                "2*sum|h| + delta = {:.6} (must be <= 1, delta = {} > 0)",
                dominance,
                self.kernel.margin()
            ),
        ));
        let bounds = self.potential.perturbation_bounds();
        checks.push(Check::new(
            "perturbation_bounded",
            bounds.total().is_finite(),
            format!(
                "sup|psi_b| = {:.4}, sup|psi_b'| = {:.4}, sup|psi_b''| = {:.4}",
                bounds.sup_value, bounds.sup_d1, bounds.sup_d2
            ),
        ));
        checks.push(Check::new(
            "lattice_size",
            self.n >= 2,
            format!("N = {}", self.n),
        ));
        let field_ok = self
            .field
            .as_ref()
            .map_or(true, |s| s.len() == self.n && s.iter().all(|v| v.is_finite()));
        checks.push(Check::new(
            "external_field",
            field_ok,
            "field has length N and finite entries".to_string(),
        ));
        ValidationReport { checks }
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.passed() {
            Ok(())
        } else {
            Err(Error::InvalidModel(report.failures().join("; ")))
        }
    }

    /// Stable content hash of the model description.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(&ModelFile::from(self)).expect("model serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail))
            .collect()
    }
}

/// Current version of the model file schema.
pub const MODEL_VERSION: u32 = 1;

/// On-disk JSON form of a [`ModelSpec`].
///
/// ```json
/// {"model_version": 1, "N": 64,
///  "potential": {"kind": "gaussian_bump", "params": [-2.0, 1.0]},
///  "kernel": {"R": 1, "h": [0.2], "delta": 0.1},
///  "s": [...], "sigma": 0.0}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub model_version: u32,
    #[serde(rename = "N")]
    pub n: usize,
    pub potential: PotentialFile,
    pub kernel: KernelFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialFile {
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelFile {
    #[serde(rename = "R")]
    pub range: usize,
    pub h: Vec<f64>,
    pub delta: f64,
}

impl From<&ModelSpec> for ModelFile {
    fn from(m: &ModelSpec) -> Self {
        ModelFile {
            model_version: MODEL_VERSION,
            n: m.n,
            potential: PotentialFile {
                kind: m.potential.kind_name().to_string(),
                params: m.potential.params(),
            },
            kernel: KernelFile {
                range: m.kernel.range(),
                h: m.kernel.couplings().to_vec(),
                delta: m.kernel.margin(),
            },
            s: m.field.clone(),
            sigma: m.sigma,
        }
    }
}

impl TryFrom<ModelFile> for ModelSpec {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.model_version != MODEL_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported model_version {}",
                f.model_version
            )));
        }
        let want = |k: usize| -> Result<()> {
            if f.potential.params.len() != k {
                return Err(Error::InvalidModel(format!(
                    "potential '{}' takes {} params, got {}",
                    f.potential.kind,
                    k,
                    f.potential.params.len()
                )));
            }
            Ok(())
        };
        let potential = match f.potential.kind.as_str() {
            "zero" => {
                want(0)?;
                PotentialSpec::Zero
            }
            "cosine" => {
                want(2)?;
                PotentialSpec::Cosine {
                    amplitude: f.potential.params[0],
                    frequency: f.potential.params[1],
                }
            }
            "gaussian_bump" => {
                want(2)?;
                if f.potential.params[1] <= 0.0 {
                    return Err(Error::InvalidModel("bump width must be positive".into()));
                }
                PotentialSpec::GaussianBump {
                    depth: f.potential.params[0],
                    width: f.potential.params[1],
                }
            }
            other => {
                return Err(Error::InvalidModel(format!(
                    "unknown potential kind '{other}'"
                )))
            }
        };
        if f.kernel.h.len() != f.kernel.range {
            return Err(Error::InvalidModel(format!(
                "kernel R = {} but {} couplings given",
                f.kernel.range,
                f.kernel.h.len()
            )));
        }
        let kernel = InteractionKernel::new(f.kernel.h, f.kernel.delta)?;
        let mut model = ModelSpec::new(f.n, potential, kernel).with_sigma(f.sigma);
        if let Some(s) = f.s {
            model = model.with_field(s)?;
        }
        Ok(model)
    }
}

/// A point of the hyperplane `{ (1/N) sum x_i = m }`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfiguration {
    values: Vec<f64>,
    mean: f64,
}

impl SpinConfiguration {
    pub fn new(values: Vec<f64>) -> Self {
        let mean = mean(&values);
        SpinConfiguration { values, mean }
    }

    /// Constant configuration `x_i = m`.
    pub fn constant(n: usize, m: f64) -> Self {
        SpinConfiguration {
            values: vec![m; n],
            mean: m,
        }
    }

    /// Wraps `values`, requiring that they already average to `m`.
    pub fn on_hyperplane(values: Vec<f64>, m: f64) -> Result<Self> {
        let c = SpinConfiguration { values, mean: m };
        c.check()?;
        Ok(c)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Adds a mean-zero increment. Rounding in the increment is removed so
    /// that the cached mean stays exact; the invariant is re-checked.
    pub fn apply_increment(&mut self, increment: &mut [f64]) -> Result<()> {
        if increment.len() != self.values.len() {
            return Err(Error::Dimension {
                expected: self.values.len(),
                got: increment.len(),
            });
        }
        let drift = mean(increment);
        if drift.abs() > 1e-8 * (1.0 + increment.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            return Err(Error::Constraint(format!(
                "increment is not mean-zero (mean {drift:e})"
            )));
        }
        for (x, d) in self.values.iter_mut().zip(increment.iter()) {
            *x += d - drift;
        }
        let residual = mean(&self.values) - self.mean;
        if residual.abs() > MEAN_TOLERANCE * 1e-2 {
            for x in self.values.iter_mut() {
                *x -= residual;
            }
        }
        self.check()
    }

    pub fn check(&self) -> Result<()> {
        let actual = mean(&self.values);
        if !actual.is_finite() {
            return Err(Error::Numerical("non-finite spin value".into()));
        }
        if (actual - self.mean).abs() > MEAN_TOLERANCE * (1.0 + self.mean.abs()) {
            return Err(Error::Constraint(format!(
                "mean {actual} drifted from {}",
                self.mean
            )));
        }
        Ok(())
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}
