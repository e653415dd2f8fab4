use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kslab_core::bounds::exponents;
use kslab_core::geometry::{diffusion_conductances, gaussian_bump, gradient, FaceCoeffs, Grid, ScalarField};
use kslab_core::model::{DiffusionKind, DiffusionSpec, ModelSpec};
use kslab_core::solver::{cg_solve, step, ShiftedDiffusion, SolverConfig, SystemState};

fn cg(c: &mut Criterion) {
    let mut g = c.benchmark_group("cg_shifted_laplacian");
    for n in [64, 128] {
        let grid = Grid::unit(2, n).unwrap();
        let coeffs = FaceCoeffs::uniform(grid, 1.0);
        let diag = vec![1.0; grid.len()];
        let b = gaussian_bump(grid, (0.4, 0.6), 0.1, 1.0).into_values();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| {
                let op = ShiftedDiffusion { diag: &diag, dt: 1e-2, coeffs: &coeffs };
                let mut x = vec![0.0; b.len()];
                black_box(cg_solve(&op, &b, &mut x, 1e-10, 5000))
            })
        });
    }
    g.finish();
}

fn conductances(c: &mut Criterion) {
    let grid = Grid::unit(2, 128).unwrap();
    let n = gaussian_bump(grid, (0.5, 0.5), 0.2, 1.0);
    let spec = DiffusionSpec { a0: 1.0, alpha: 0.5, p: 2.5, kind: DiffusionKind::Product };
    c.bench_function("p_laplacian_conductances_128", |b| {
        b.iter(|| black_box(diffusion_conductances(&n, &spec, 1e-6).unwrap()))
    });
    c.bench_function("gradient_128", |b| b.iter(|| black_box(gradient(&n))));
}

fn time_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    let cases = [
        ("example_a_64", ModelSpec::example_a(0.5), 64),
        ("general_64", ModelSpec::general(), 64),
        ("example_d_64", ModelSpec::example_d(2.5), 64),
    ];
    for (name, model, n) in cases {
        let grid = Grid::unit(2, n).unwrap();
        let n0 = gaussian_bump(grid, (0.4, 0.6), 0.15, 0.5);
        let st = SystemState::new(&model, n0, ScalarField::constant(grid, 0.1), None).unwrap();
        let cfg = SolverConfig::default();
        g.bench_function(name, |b| b.iter(|| black_box(step(&st, &model, &cfg, 1e-3).unwrap())));
    }
    g.finish();
}

fn exponent_table(c: &mut Criterion) {
    c.bench_function("exponents_sweep_100", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for k in 0..100 {
                let p = 1.5 + 0.02 * k as f64;
                let e = exponents(p, 2, -0.2, 0.5).unwrap();
                acc += e.theta_hat;
            }
            black_box(acc)
        })
    });
}

criterion_group!(benches, cg, conductances, time_step, exponent_table);
criterion_main!(benches);
