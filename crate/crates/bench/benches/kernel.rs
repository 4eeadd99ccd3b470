use criterion::{criterion_group, criterion_main, Criterion};
use harnack_bench::{coupled_params, square_grid};
use harnack_core::kernel::{explicit_kernel_samples, fit_bound_constants, numerical_kernel_row, EnvelopeForm, FitOptions, SampleLaw};
use harnack_core::{HalfSpacePoint, OperatorParams, SolverConfig};

fn kernels(c: &mut Criterion) {
    let p = coupled_params();
    let grid = square_grid(&p, 40);
    let source = HalfSpacePoint { x: vec![0.075], y: 1.05 };
    let config = SolverConfig::monotone(0.25, 0.01);
    c.bench_function("numerical_kernel_row_40", |b| {
        b.iter(|| numerical_kernel_row(0.25, &source, &p, grid.clone(), &config).unwrap())
    });

    let q = OperatorParams::uncoupled(1, 0.5).unwrap();
    let samples = explicit_kernel_samples(&q, &SampleLaw::default(), 2000, 3).unwrap();
    c.bench_function("explicit_samples_2000", |b| b.iter(|| explicit_kernel_samples(&q, &SampleLaw::default(), 2000, 3).unwrap()));
    c.bench_function("fit_bound_constants_2000", |b| {
        b.iter(|| fit_bound_constants(&samples, &q, EnvelopeForm::Weight, &FitOptions::default()).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
