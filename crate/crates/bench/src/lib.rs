//! Shared inputs for the kernel benchmarks.

use kawasaki_core::metrics::TorusFunction;

/// Spins `0.2 + 0.5 cos(2 pi i / n)`.
pub fn cosine_spins(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.2 + 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Mean-zero step function with `cells` cells.
pub fn mean_zero_profile(cells: usize) -> TorusFunction {
    let mut v = cosine_spins(cells);
    let m = v.iter().sum::<f64>() / cells as f64;
    v.iter_mut().for_each(|x| *x -= m);
    TorusFunction::new(v).expect("finite values")
}
