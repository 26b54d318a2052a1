use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spateq::homotopies::{solve_amenity_homotopy, solve_total_degree, SolveConfig};
use spateq::model::City;
use spateq::oracle::{brute_force_equilibria, GridSpec};
use spateq::par::Exec;
use spateq::polysys::Rational;

fn cfg(exec: Exec) -> SolveConfig {
    SolveConfig {
        exec,
        ..SolveConfig::default()
    }
}

fn modes() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("sequential", Exec::Sequential)];
    if cfg!(feature = "parallel") {
        v.push(("parallel", Exec::Parallel));
    }
    v
}

fn total_degree(c: &mut Criterion) {
    let city = City::line(3, 2.5, 1.0).with_populations(2.4, 0.6);
    let mut g = c.benchmark_group("total_degree_343");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| solve_total_degree(&city, Rational { p: 5, q: 2 }, &cfg(e)).unwrap())
        });
    }
    g.finish();
}

fn amenity(c: &mut Criterion) {
    let city = City::line(7, 2.5, 1.0);
    let mut g = c.benchmark_group("amenity_j7");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| solve_amenity_homotopy(&city, Rational { p: 5, q: 2 }, &cfg(e)).unwrap())
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let city = City::line(3, 2.5, 1.0).with_populations(2.4, 0.6);
    let mut g = c.benchmark_group("oracle_grid16");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| brute_force_equilibria(&city, &GridSpec::default(), e))
        });
    }
    g.finish();
}

criterion_group!(benches, total_degree, amenity, oracle);
criterion_main!(benches);
