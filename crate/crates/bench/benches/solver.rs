use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use harnack_bench::{bump, coupled_params, square_grid};
use harnack_core::{Solver, SolverConfig, TimeMethod};

fn steps(c: &mut Criterion) {
    let p = coupled_params();
    let mut group = c.benchmark_group("solver_step");
    for n in [32usize, 64] {
        let grid = square_grid(&p, n);
        let u0 = bump(grid.clone());
        for (label, method) in [("cn", TimeMethod::CrankNicolson), ("be", TimeMethod::BackwardEuler)] {
            let config = SolverConfig { time_method: method, ..SolverConfig::monotone(1.0, 0.01) };
            let mut solver = Solver::new(grid.clone(), &p, &config).unwrap();
            group.bench_with_input(BenchmarkId::new(label, n), &u0, |b, u| b.iter(|| solver.step(u, 0.01).unwrap()));
        }
    }
    group.finish();
}

criterion_group!(benches, steps);
criterion_main!(benches);
