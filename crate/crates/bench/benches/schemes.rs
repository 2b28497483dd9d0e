use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use conslab::backward::{backward_step, BackwardOptions, GridFunction};
use conslab::functionals::{
    decompose_backward, decompose_semidiscrete, potential_backward, potential_semidiscrete,
};
use conslab::kernels::{backward_oracle_relative, KernelParams};
use conslab::semidiscrete::{integrate, IntegrateOptions, LatticeState};
use conslab::SystemSpec;

fn chromatography_profile(len: usize) -> GridFunction {
    GridFunction::from_fn(-5.0, 0.05, len, &[1.0, 1.0], |x, u| {
        u[0] = 1.0 + 0.02 * (1.0 + (x - 10.0).tanh());
        u[1] = 1.0 - 0.01 * (1.0 + (0.5 * (x - 20.0)).tanh());
    })
    .expect("valid grid")
}

fn chromatography_lattice(len: usize) -> LatticeState {
    LatticeState::from_fn(0, len, &[1.0, 1.0], |n, u| {
        let x = n as f64;
        u[0] = 1.0 + 0.02 * (1.0 + (x - 10.0).tanh());
        u[1] = 1.0 - 0.01 * (1.0 + (0.5 * (x - 20.0)).tanh());
    })
    .expect("valid lattice")
}

fn schemes(c: &mut Criterion) {
    let sys = SystemSpec::chromatography();
    let options = BackwardOptions::for_system(&sys);
    let mut group = c.benchmark_group("backward_step");
    for len in [1_000, 10_000] {
        let profile = chromatography_profile(len);
        group.bench_with_input(BenchmarkId::from_parameter(len), &profile, |b, p| {
            b.iter(|| backward_step(&sys, black_box(p), &options).expect("step succeeds"))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("lattice_unit_time");
    for len in [100, 1_000] {
        let state = chromatography_lattice(len);
        let opts = IntegrateOptions::default();
        group.bench_with_input(BenchmarkId::from_parameter(len), &state, |b, s| {
            b.iter(|| {
                integrate(&sys, black_box(s), 1.0, &opts, |_| {}).expect("integration succeeds")
            })
        });
    }
    group.finish();
}

fn functionals(c: &mut Criterion) {
    let sys = SystemSpec::chromatography();
    let prev = chromatography_profile(4_000);
    let cur =
        backward_step(&sys, &prev, &BackwardOptions::for_system(&sys)).expect("step succeeds");
    c.bench_function("potential_backward_4000", |b| {
        b.iter(|| {
            let a = decompose_backward(&sys, black_box(&cur)).expect("decomposes");
            let p = decompose_backward(&sys, black_box(&prev)).expect("decomposes");
            potential_backward(&sys, &a, &p).expect("potential")
        })
    });
    let state = chromatography_lattice(4_000);
    c.bench_function("potential_semidiscrete_4000", |b| {
        b.iter(|| {
            let comps = decompose_semidiscrete(&sys, black_box(&state)).expect("decomposes");
            potential_semidiscrete(&sys, &comps).expect("potential")
        })
    });
}

fn kernels(c: &mut Criterion) {
    let p = KernelParams::new(0.7, 0.3).expect("valid speeds");
    c.bench_function("backward_oracle_0.7_0.3", |b| {
        b.iter(|| backward_oracle_relative(black_box(-1.0), p).expect("oracle converges"))
    });
}

criterion_group!(benches, schemes, functionals, kernels);
criterion_main!(benches);
