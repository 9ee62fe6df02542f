use bddsolve::builder::{decompose, recursive_construct, BuilderParams};
use bddsolve::chain::refine;
use bddsolve::graphs::GraphKind;
use bddsolve::schur::{approx_schur, SchurParams};
use bddsolve::selection::bdd_subset;
use bddsolve_bench::{instance, rhs};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const SIZES: [usize; 3] = [500, 1000, 2000];

fn build(c: &mut Criterion) {
    let mut g = c.benchmark_group("build");
    g.sample_size(10);
    for &n in &SIZES {
        let m = instance(GraphKind::Band, n, 1, 1).unwrap();
        let p = BuilderParams::default().with_seed(1);
        g.bench_with_input(BenchmarkId::new("chain", n), &m, |b, m| {
            b.iter(|| recursive_construct(m, &p).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("udu", n), &m, |b, m| {
            b.iter(|| decompose(m, &p).unwrap())
        });
    }
    g.finish();
}

fn solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for &n in &SIZES {
        let m = instance(GraphKind::Band, n, 2, 1).unwrap();
        let chain = recursive_construct(&m, &BuilderParams::default().with_seed(1)).unwrap();
        let b = rhs(n, 2);
        g.bench_with_input(BenchmarkId::new("refine", n), &n, |bch, _| {
            bch.iter(|| refine(&chain, &m, &b, 1e-8, 200).unwrap())
        });
    }
    g.finish();
}

fn schur(c: &mut Criterion) {
    let mut g = c.benchmark_group("approx_schur");
    g.sample_size(10);
    for &n in &SIZES {
        let m = instance(GraphKind::RandomRegular, n, 1, 2).unwrap();
        let f = bdd_subset(&m, 4.0, 2).unwrap().f;
        let p = SchurParams::new(4.0, 0.25, 2).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| approx_schur(&m, &f, &p).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, build, solve, schur);
criterion_main!(benches);
