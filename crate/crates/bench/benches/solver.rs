use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shakegen::projection::constraint_jacobian;
use shakegen::{
    active_set, analytic_denoiser, nullspace_projector, reverse_sample, shake_project,
    AnalyticTarget, NoiseSchedule, SamplerConfig, ShakeConfig,
};
use shakegen_bench::{chain_constraints, perturbed_chain};

fn shake(c: &mut Criterion) {
    let mut group = c.benchmark_group("shake_project");
    for n in [8usize, 21, 64] {
        let exprs = chain_constraints(n);
        let x = perturbed_chain(n, 0.1, 1);
        for (name, nearest_point) in [("linearized", false), ("nearest_point", true)] {
            let config = ShakeConfig {
                nearest_point,
                ..ShakeConfig::default()
            };
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| shake_project(&x, &exprs, &config).unwrap())
            });
        }
    }
    group.finish();
}

fn projector(c: &mut Criterion) {
    let mut group = c.benchmark_group("nullspace_projector");
    for n in [8usize, 21, 64] {
        let exprs = chain_constraints(n);
        let x = perturbed_chain(n, 0.0, 1);
        let active = active_set(&exprs, &x).unwrap();
        let j = constraint_jacobian(&active, &x).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| nullspace_projector(&j))
        });
    }
    group.finish();
}

fn sampler(c: &mut Criterion) {
    let mut group = c.benchmark_group("reverse_sample");
    group.sample_size(10);
    for n in [6usize, 21] {
        let schedule = NoiseSchedule::polynomial(100, 2.0, 1e-5).unwrap();
        let denoiser = analytic_denoiser(
            AnalyticTarget::IsotropicGaussian { variance: 1.0 },
            &schedule,
        )
        .unwrap();
        let config = SamplerConfig::new(schedule, 0);
        let exprs: Vec<_> = chain_constraints(n).into_iter().take(n - 1).collect();
        group.bench_with_input(BenchmarkId::new("T100", n), &n, |b, &n| {
            b.iter(|| reverse_sample(n, &exprs, &denoiser, &config, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, shake, projector, sampler);
criterion_main!(benches);
