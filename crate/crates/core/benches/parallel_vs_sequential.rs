use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use korn_lab::constants::{estimate_constant, EstimateOptions, QuotientKind, QuotientProblem};
use korn_lab::divsolve::{solve, solver_grid, truncate_datum};
use korn_lab::fields::{ExponentParams, Grid};
use korn_lab::gallery::{l_shape, rooms_and_corridors, square, RoomsSpec};
use korn_lab::geom::WhitneyDecomposition;
use korn_lab::par::Execution;
use korn_lab::qhyp::{geodesic_chains, QhGraph};
use korn_lab::scaling::{measure_scaling_with, HPolicy, Quantity};

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_restarts(c: &mut Criterion) {
    let g = Grid::uniform(&l_shape(1.0, 0.5).unwrap(), 1.0 / 16.0).unwrap();
    let problem = QuotientProblem {
        kind: QuotientKind::Poincare,
        params: ExponentParams { p: 3.0, ..Default::default() },
    };
    let opts = EstimateOptions { iterations: 30, restarts: 8, ..Default::default() };
    let mut group = c.benchmark_group("ascent_restarts");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| estimate_constant(&g, &problem, &opts, &[], exec).unwrap())
        });
    }
    group.finish();
}

fn bench_scaling(c: &mut Criterion) {
    let (d, table) = rooms_and_corridors(&RoomsSpec::geometric(2.0, 1.0, 4.0, 4)).unwrap();
    let params = ExponentParams { p: 2.0, b: 2.0, sigma: 2.0, ..Default::default() };
    let mut group = c.benchmark_group("scaling_rooms");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| measure_scaling_with(&d, &table, &params, Quantity::CorridorEps, &HPolicy::default(), 1..=4, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_graph(c: &mut Criterion) {
    let d = square(1.0).unwrap();
    let w = WhitneyDecomposition::new(&d, 7).unwrap();
    let mut group = c.benchmark_group("qh_graph");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| QhGraph::with_execution(&d, &w, exec))
        });
    }
    group.finish();
}

fn bench_divsolve(c: &mut Criterion) {
    let d = square(1.0).unwrap();
    let w = WhitneyDecomposition::new(&d, 4).unwrap();
    let chains = geodesic_chains(&d, &w, w.base_center()).unwrap();
    let g = solver_grid(&d, &w).unwrap();
    let f = truncate_datum(&g, &w, &g.sample(|p| p.x - 0.5), 0.0).unwrap();
    let params = ExponentParams { p: 2.0, b: 2.0, ..Default::default() };
    let mut group = c.benchmark_group("divsolve_square");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| solve(&g, &f, &w, &chains, &params, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_restarts, bench_scaling, bench_graph, bench_divsolve);
criterion_main!(benches);
