use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use limper_bench::staged_potential;
use limper_core::transfer::{lifted_monodromy, monodromy, naive_transfer_product};
use limper_core::ScaledMatrix2;

fn monodromy_by_depth(c: &mut Criterion) {
    let mut g = c.benchmark_group("monodromy");
    for levels in [1u32, 2, 3, 4] {
        let r = staged_potential(levels, 16, 8);
        g.bench_with_input(BenchmarkId::new("scaled", r.period()), &r, |b, r| b.iter(|| monodromy(black_box(0.37), r)));
        g.bench_with_input(BenchmarkId::new("lifted", r.period()), &r, |b, r| {
            b.iter(|| lifted_monodromy(black_box(0.37), r))
        });
    }
    g.finish();
}

fn naive_baseline(c: &mut Criterion) {
    let r = staged_potential(2, 16, 8);
    c.bench_function(&format!("naive product, period {}", r.period()), |b| {
        b.iter(|| naive_transfer_product(black_box(0.37), &r, 0, r.period()))
    });
}

fn powers(c: &mut Criterion) {
    let elliptic = ScaledMatrix2::step(1.3);
    let hyperbolic = ScaledMatrix2::step(3.1);
    c.bench_function("pow 2^50 elliptic", |b| b.iter(|| black_box(elliptic).pow(1 << 50)));
    c.bench_function("pow 2^50 hyperbolic", |b| b.iter(|| black_box(hyperbolic).pow(1 << 50)));
}

criterion_group!(benches, monodromy_by_depth, naive_baseline, powers);
criterion_main!(benches);
