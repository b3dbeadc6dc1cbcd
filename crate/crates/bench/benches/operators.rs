use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use cutdg::dg2d::{assemble_stab_2d, assemble_upwind_2d, project_2d, Discretization2D, StabConfig2D};
use cutdg::geom2d::{build_ramp_mesh, classify_faces, stabilized_set, Velocity};
use cutdg::timestep::Stepper;
use cutdg::{SchemeConfig, SchemeKind};

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    for n in [40, 80] {
        let mesh = build_ramp_mesh(n, 30.0).unwrap();
        let beta = Velocity::ramp_varying(30.0);
        let cls = classify_faces(&mesh, &beta).unwrap();
        let stab = stabilized_set(&mesh, 0.1).unwrap();
        group.bench_with_input(BenchmarkId::new("mesh", n), &n, |b, &n| {
            b.iter(|| build_ramp_mesh(black_box(n), 30.0).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("upwind", n), &mesh, |b, mesh| {
            b.iter(|| assemble_upwind_2d(mesh, &beta, 1, None).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("stabilization", n), &mesh, |b, mesh| {
            b.iter(|| assemble_stab_2d(mesh, &cls, &beta, 1, 1e-3, &stab, 0.5).unwrap())
        });
    }
    group.finish();
}

fn rk2_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("rk2_step");
    for n in [40, 80] {
        let mesh = build_ramp_mesh(n, 30.0).unwrap();
        let disc =
            Discretization2D::new(mesh, Velocity::ramp_varying(30.0), 1, None, StabConfig2D::default(), None)
                .unwrap();
        let u = project_2d(&disc.mesh, 1, |p| (4.0 * p[0]).sin()).unwrap();
        let limiter = disc.limiter();
        let config = SchemeConfig::new(SchemeKind::TvdRk2, disc.dt);
        let mut plain = Stepper::new(&disc.ops, config, None).unwrap();
        group.bench_function(BenchmarkId::new("plain", n), |b| {
            b.iter(|| plain.step(black_box(&u), 0.0).unwrap())
        });
        let mut limited = Stepper::new(&disc.ops, config.with_limiter(true), Some(&limiter)).unwrap();
        group.bench_function(BenchmarkId::new("limited", n), |b| {
            b.iter(|| limited.step(black_box(&u), 0.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, assembly, rk2_step);
criterion_main!(benches);
