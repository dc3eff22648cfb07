use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bergman_core::harmonic::{factor_gram, raw_factor_basis};
use bergman_core::kernel::{density_at, kernel_value};
use bergman_core::{Complex64, HarmonicBasis, ProductModel, ThetaSeries, TorusFactor};

fn tau() -> Complex64 {
    Complex64::new(0.1, 0.95)
}

fn theta_eval(c: &mut Criterion) {
    let z = Complex64::new(0.37, 0.21);
    let mut group = c.benchmark_group("theta_eval");
    for level in [4u32, 16, 40] {
        let th = ThetaSeries::new(level, 1, tau()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(level), &th, |b, th| {
            b.iter(|| th.eval(black_box(z), 1e-12).unwrap())
        });
    }
    group.finish();
}

fn gram(c: &mut Criterion) {
    let factor = TorusFactor::new(tau(), -1).unwrap();
    let mut group = c.benchmark_group("factor_gram");
    group.sample_size(10);
    for k in [8i64, 16] {
        let set = raw_factor_basis(&factor, k).unwrap();
        let n = 4 * k as usize;
        group.bench_with_input(BenchmarkId::from_parameter(k), &set, |b, set| {
            b.iter(|| factor_gram(black_box(set), n).unwrap())
        });
    }
    group.finish();
}

fn kernel(c: &mut Criterion) {
    let model = ProductModel::from_specs(&[(tau(), -1), (Complex64::new(0.0, 1.0), 1)]).unwrap();
    let basis = HarmonicBasis::build(&model, 12, 48, 1e-12).unwrap();
    let x = [Complex64::new(0.31, 0.22), Complex64::new(0.5, 0.7)];
    let y = [Complex64::new(0.35, 0.2), Complex64::new(0.48, 0.73)];
    c.bench_function("kernel_value_sig11_k12", |b| {
        b.iter(|| kernel_value(&basis, black_box(&x), black_box(&y)))
    });
    c.bench_function("density_sig11_k12", |b| {
        b.iter(|| density_at(&basis, black_box(&x)))
    });
}

criterion_group!(benches, theta_eval, gram, kernel);
criterion_main!(benches);
