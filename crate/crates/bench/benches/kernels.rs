use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kawasaki_bench::{cosine_spins, mean_zero_profile};
use kawasaki_core::dynamics::{solve_cyclic_tridiagonal, KawasakiOperator, KawasakiStepper, SdeConfig};
use kawasaki_core::free_energy::{hbar_n, ConstrainedGrid, FreeEnergySource};
use kawasaki_core::metrics::h_minus1_norm;
use kawasaki_core::rng::stream;
use kawasaki_core::ModelSpec;

fn kawasaki_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("kawasaki_step");
    for n in [64usize, 256, 1024] {
        let model = ModelSpec::double_well(n);
        let op = KawasakiOperator::new(n).unwrap();
        let mut stepper = KawasakiStepper::new(&model, &op).unwrap();
        let dt = 0.5 * SdeConfig::stability_limit(n);
        let mut x = cosine_spins(n);
        let mut rng = stream(7, 0);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| stepper.step(black_box(&mut x), dt, &mut rng))
        });
    }
    g.finish();
}

fn free_energy(c: &mut Criterion) {
    let model = ModelSpec::double_well(16);
    let limit = FreeEnergySource::limit(&model);
    c.bench_function("limit_free_energy", |b| b.iter(|| limit.value(black_box(0.7)).unwrap()));
    let finite = FreeEnergySource::finite(&model, 32);
    c.bench_function("finite_free_energy_n32", |b| b.iter(|| finite.value(black_box(0.7)).unwrap()));
    let grid = ConstrainedGrid::for_size(8);
    c.bench_function("hbar_n8", |b| b.iter(|| hbar_n(&model, black_box(0.3), 8, &grid).unwrap()));
}

fn h_minus1(c: &mut Criterion) {
    let mut g = c.benchmark_group("h_minus1_norm");
    for cells in [256usize, 4096] {
        let f = mean_zero_profile(cells);
        g.bench_with_input(BenchmarkId::from_parameter(cells), &cells, |b, _| {
            b.iter(|| h_minus1_norm(black_box(&f)).unwrap())
        });
    }
    g.finish();
}

fn cyclic_tridiagonal(c: &mut Criterion) {
    let n = 1024;
    let lower = vec![-1.0; n];
    let upper = vec![-1.0; n];
    let diag = vec![4.0; n];
    let rhs = cosine_spins(n);
    c.bench_function("cyclic_tridiagonal_1024", |b| {
        b.iter(|| solve_cyclic_tridiagonal(&lower, &diag, &upper, black_box(&rhs)).unwrap())
    });
}

criterion_group!(benches, kawasaki_step, free_energy, h_minus1, cyclic_tridiagonal);
criterion_main!(benches);
