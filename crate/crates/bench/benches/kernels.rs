//! Criterion benchmarks for the hot kernels: tridiagonal solves, the delta
//! kernel transfer operators, advection, and a full fluid step.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ibflow_core::gm::{gm_step, GMParams, GMState};
use ibflow_core::harness::{build_problem, ProblemConfig, ProblemKind};
use ibflow_core::ib::{compute_force_density, spread_force, IbState};
use ibflow_core::mac_grid::{advection_skew, GridSpec, MacField};
use ibflow_core::runtime::{partition_domain, spmd};
use ibflow_core::tridiag::{cyclic_solve_serial, CyclicFactorization, CyclicTridiagMatrix};

fn bench_tridiag(c: &mut Criterion) {
    let mut group = c.benchmark_group("tridiag");
    for n in [64usize, 256, 1024] {
        let m = CyclicTridiagMatrix::constant(n, 4.0, -1.0, -1.0);
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        group.bench_with_input(BenchmarkId::new("cyclic_solve", n), &n, |b, _| {
            b.iter(|| cyclic_solve_serial(&m, &rhs).unwrap())
        });
        let fact = CyclicFactorization::new(&m).unwrap();
        group.bench_with_input(BenchmarkId::new("cyclic_factored", n), &n, |b, _| {
            b.iter(|| fact.solve(&rhs))
        });
    }
    group.finish();
}

fn bench_advection(c: &mut Criterion) {
    let mut group = c.benchmark_group("advection");
    for n in [64usize, 128] {
        let spec = GridSpec::square(2, n, 1.0).unwrap();
        let mut u = MacField::zeros_global(&spec);
        let pi2 = 2.0 * std::f64::consts::PI;
        u.comps[0].sample(spec.h, [0; 3], |x, y, _| (pi2 * x).sin() * (pi2 * y).cos());
        u.comps[1].sample(spec.h, [0; 3], |x, y, _| -(pi2 * x).cos() * (pi2 * y).sin());
        u.fill_halo_self_periodic();
        group.bench_with_input(BenchmarkId::new("skew", n), &n, |b, _| {
            b.iter(|| advection_skew(&u, spec.h, 2))
        });
    }
    group.finish();
}

fn bench_spreading(c: &mut Criterion) {
    let cfg = ProblemConfig::defaults(ProblemKind::ThinEllipse)
        .finalize()
        .unwrap();
    let setup = build_problem(&cfg).unwrap();
    let mut st = IbState::new(setup.points.clone(), setup.conns.clone());
    compute_force_density(&mut st, &setup.spec).unwrap();
    c.bench_function("spread_force_thin_ellipse_n64", |b| {
        b.iter(|| {
            let mut f = MacField::zeros_global(&setup.spec);
            spread_force(&st, &mut f, &setup.spec, [0; 3]).unwrap();
            f
        })
    });
}

fn bench_fluid_step(c: &mut Criterion) {
    let spec = GridSpec::square(2, 64, 1.0).unwrap();
    let part = partition_domain(spec, 1, 1, 1).unwrap();
    c.bench_function("gm_step_n64_serial", |b| {
        b.iter(|| {
            spmd(&part, |ctx| {
                let mut st = GMState::zeros(ctx.local_n(), 2);
                let pi2 = 2.0 * std::f64::consts::PI;
                st.u.comps[0].sample(spec.h, [0; 3], |x, y, _| (pi2 * x).sin() * (pi2 * y).cos());
                st.u.comps[1].sample(spec.h, [0; 3], |x, y, _| {
                    -(pi2 * x).cos() * (pi2 * y).sin()
                });
                for cmp in &mut st.u.comps {
                    ctx.exchange_halo(cmp)?;
                }
                let prm = GMParams::new(1.0, 0.01, 1e-3, 0.6)?;
                let f = MacField::zeros(ctx.local_n(), 2);
                for _ in 0..5 {
                    gm_step(ctx, &mut st, &f, &prm)?;
                }
                Ok(st.u.max_abs())
            })
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_tridiag,
    bench_advection,
    bench_spreading,
    bench_fluid_step
);
criterion_main!(benches);
