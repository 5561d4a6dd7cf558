use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pessirelax::setlab::excess;
use pessirelax::{perf_profile, solve, FbSystem, Measure, Scheme, SolveOptions};
use pessirelax_bench::{point, problems, records, set_pair};

fn system(c: &mut Criterion) {
    let mut g = c.benchmark_group("fbsys");
    for spec in problems() {
        for scheme in Scheme::ALL {
            let sys = FbSystem::new(&spec, scheme, 1e-2, 1e-3).unwrap();
            let z = point(&spec, scheme, 1);
            let id = format!("{}/{}", spec.name, scheme.tag());
            g.bench_with_input(BenchmarkId::new("residual", &id), &z, |b, z| b.iter(|| sys.residual(black_box(z)).unwrap()));
            g.bench_with_input(BenchmarkId::new("jacobian", &id), &z, |b, z| b.iter(|| sys.jacobian(black_box(z)).unwrap()));
        }
    }
    g.finish();
}

fn solver(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for spec in problems() {
        for scheme in [Scheme::S, Scheme::LF, Scheme::KS] {
            let opts = SolveOptions { seed: 2, ..SolveOptions::new(scheme) };
            g.bench_function(BenchmarkId::new(spec.name.as_str(), scheme.tag()), |b| b.iter(|| solve(&spec, black_box(&opts)).unwrap()));
        }
    }
    g.finish();
}

fn sets(c: &mut Criterion) {
    let mut g = c.benchmark_group("setlab");
    g.sample_size(20);
    for step in [1e-1, 2e-2] {
        g.bench_function(BenchmarkId::new("sample", step), |b| b.iter(|| set_pair(Scheme::KS, 0.1, black_box(step))));
        let (d, dt) = set_pair(Scheme::KS, 0.1, step);
        g.bench_function(BenchmarkId::new("excess", step), |b| b.iter(|| excess(black_box(&dt), black_box(&d))));
    }
    g.finish();
}

fn profiles(c: &mut Criterion) {
    let recs = records(200);
    c.bench_function("perf_profile/1000", |b| b.iter(|| perf_profile(black_box(&recs), Measure::Time).unwrap()));
}

criterion_group!(benches, system, solver, sets, profiles);
criterion_main!(benches);
