use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Partition of `[N]` into `M` consecutive blocks `B(l)` of sizes `K_l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockScheme {
    sizes: Vec<usize>,
    starts: Vec<usize>,
    owner: Vec<usize>,
}

impl BlockScheme {
    /// Blocks with the given sizes. Unequal sizes must satisfy
    /// `max K_l <= 2 min K_l`, which keeps the weights `alpha_l = M K_l / N`
    /// within a factor two of each other.
    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidConfig("block sizes must be positive".into()));
        }
        let kmin = *sizes.iter().min().unwrap();
        let kmax = *sizes.iter().max().unwrap();
        if kmax > 2 * kmin {
            return Err(Error::InvalidConfig(format!(
                "block sizes {kmin}..{kmax} violate max K <= 2 min K"
            )));
        }
        let mut starts = Vec::with_capacity(sizes.len());
        let mut owner = Vec::new();
        let mut s = 0;
        for (l, &k) in sizes.iter().enumerate() {
            starts.push(s);
            owner.extend(std::iter::repeat_n(l, k));
            s += k;
        }
        Ok(BlockScheme {
            sizes,
            starts,
            owner,
        })
    }

    /// `M = N / K` blocks of size `K`.
    pub fn equal(n: usize, k: usize) -> Result<Self> {
        if k == 0 || n % k != 0 {
            return Err(Error::InvalidConfig(format!(
                "block size {k} does not divide N = {n}"
            )));
        }
        Self::from_sizes(vec![k; n / k])
    }

    /// `M` blocks whose sizes differ by at most one.
    pub fn balanced(n: usize, m: usize) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::InvalidConfig(format!("cannot split N = {n} into M = {m} blocks")));
        }
        let base = n / m;
        let extra = n % m;
        Self::from_sizes((0..m).map(|l| base + usize::from(l < extra)).collect())
    }

    pub fn n(&self) -> usize {
        self.owner.len()
    }

    /// Number of blocks `M`.
    pub fn blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn size(&self, l: usize) -> usize {
        self.sizes[l]
    }

    pub fn min_size(&self) -> usize {
        *self.sizes.iter().min().unwrap()
    }

    pub fn is_equal(&self) -> bool {
        self.sizes.iter().all(|&k| k == self.sizes[0])
    }

    #[inline]
    pub fn block_of(&self, i: usize) -> usize {
        self.owner[i]
    }

    pub fn range(&self, l: usize) -> std::ops::Range<usize> {
        self.starts[l]..self.starts[l] + self.sizes[l]
    }

    /// `alpha_l = M K_l / N`.
    pub fn alpha(&self, l: usize) -> f64 {
        self.blocks() as f64 * self.sizes[l] as f64 / self.n() as f64
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.blocks()).map(|l| self.alpha(l)).collect()
    }

    /// Requires `K_l >= 2R + 2` for every block and a matching lattice size.
    pub fn check_model(&self, model: &ModelSpec) -> Result<()> {
        if model.n != self.n() {
            return Err(Error::Dimension {
                expected: model.n,
                got: self.n(),
            });
        }
        let need = 2 * model.range() + 2;
        if self.min_size() < need {
            return Err(Error::InvalidConfig(format!(
                "block size {} below 2R + 2 = {need}",
                self.min_size()
            )));
        }
        Ok(())
    }

    /// Weighted mean `(1/M) sum_l alpha_l y_l`, equal to the mean spin of any
    /// configuration projecting to `y`.
    pub fn weighted_mean(&self, y: &[f64]) -> f64 {
        y.iter()
            .enumerate()
            .map(|(l, v)| self.sizes[l] as f64 * v)
            .sum::<f64>()
            / self.n() as f64
    }

    /// The projection `P`: block means.
    pub fn project(&self, x: &[f64]) -> Result<MesoState> {
        if x.len() != self.n() {
            return Err(Error::Dimension {
                expected: self.n(),
                got: x.len(),
            });
        }
        let y: Vec<f64> = (0..self.blocks())
            .map(|l| x[self.range(l)].iter().sum::<f64>() / self.sizes[l] as f64)
            .collect();
        let m = x.iter().sum::<f64>() / x.len() as f64;
        Ok(MesoState { y, m })
    }

    /// The lift `N P* y`: the block-constant configuration.
    pub fn embed(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.blocks() {
            return Err(Error::Dimension {
                expected: self.blocks(),
                got: y.len(),
            });
        }
        let mut x = Vec::with_capacity(self.n());
        for (l, &v) in y.iter().enumerate() {
            x.extend(std::iter::repeat_n(v, self.sizes[l]));
        }
        Ok(x)
    }
}

/// A mesoscopic profile `y` with its conserved weighted mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MesoState {
    pub y: Vec<f64>,
    pub m: f64,
}

impl MesoState {
    pub fn new(scheme: &BlockScheme, y: Vec<f64>) -> Result<Self> {
        if y.len() != scheme.blocks() {
            return Err(Error::Dimension {
                expected: scheme.blocks(),
                got: y.len(),
            });
        }
        let m = scheme.weighted_mean(&y);
        Ok(MesoState { y, m })
    }

    pub fn check(&self, scheme: &BlockScheme) -> Result<()> {
        let actual = scheme.weighted_mean(&self.y);
        if (actual - self.m).abs() > 1e-12 * (1.0 + self.m.abs()) {
            return Err(Error::Constraint(format!(
                "weighted mean {actual} differs from {}",
                self.m
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        let s = BlockScheme::equal(4, 2).unwrap();
        let p = s.project(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p.y, vec![1.5, 3.5]);
        assert_eq!(s.embed(&p.y).unwrap(), vec![1.5, 1.5, 3.5, 3.5]);
        let c = s.project(&[0.7; 4]).unwrap();
        assert!(c.y.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn unequal_blocks() {
        let s = BlockScheme::from_sizes(vec![3, 2]).unwrap();
        let p = s.project(&[1.0, 1.0, 1.0, 4.0, 4.0]).unwrap();
        assert_eq!(p.y, vec![1.0, 4.0]);
        assert!((s.alpha(0) - 6.0 / 5.0).abs() < 1e-15);
        assert!((s.alpha(1) - 4.0 / 5.0).abs() < 1e-15);
        assert!((p.m - 2.2).abs() < 1e-15);
        assert!(p.check(&s).is_ok());
        assert!(BlockScheme::from_sizes(vec![5, 2]).is_err());
    }

    #[test]
    fn balanced_sizes() {
        let s = BlockScheme::balanced(10, 4).unwrap();
        assert_eq!(s.sizes(), &[3, 3, 2, 2]);
        assert_eq!(s.block_of(5), 1);
        assert_eq!(s.range(2), 6..8);
    }

    #[test]
    fn block_size_versus_range() {
        let model = ModelSpec::double_well(16);
        assert!(BlockScheme::equal(16, 4).unwrap().check_model(&model).is_ok());
        assert!(BlockScheme::equal(16, 2).unwrap().check_model(&model).is_err());
    }
}
