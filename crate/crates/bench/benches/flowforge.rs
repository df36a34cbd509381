use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use flowforge_bench::{
    dense_hamiltonian, latent_points, quadratic_hamiltonian, skewed_gaussian, small_config,
    small_network,
};
use flowforge_core::coupling::{discretize, network_pushforward};
use flowforge_core::henon::{solve_coefficients, HenonConfig};
use flowforge_core::metrics::{sample_gaussian, sliced_w1};
use flowforge_core::pipeline::{build_network, reference_flow};
use flowforge_core::Direction;

fn coefficients(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_coefficients");
    let cfg = |degree| HenonConfig { degree, gamma: 1.0, tau: 0.1, forward: false };
    let quadratic = quadratic_hamiltonian();
    g.bench_function("quadratic_d1", |b| b.iter(|| solve_coefficients(black_box(&quadratic), &cfg(1)).unwrap()));
    let cubic = dense_hamiltonian(2, 3);
    g.bench_function("cubic_d2", |b| b.iter(|| solve_coefficients(black_box(&cubic), &cfg(2)).unwrap()));
    g.finish();

    let sys = solve_coefficients(&quadratic, &cfg(1)).unwrap();
    c.bench_function("discretize_101_steps", |b| b.iter(|| discretize(black_box(&sys), 0.0622, 101).unwrap()));
}

fn network(c: &mut Criterion) {
    let net = small_network();
    let points = latent_points(1000);
    let mut g = c.benchmark_group("network");
    g.bench_function("forward_1000", |b| {
        b.iter(|| network_pushforward(&net, black_box(&points), Direction::Forward).unwrap())
    });
    g.bench_function("inverse_1000", |b| {
        b.iter(|| network_pushforward(&net, black_box(&points), Direction::Inverse).unwrap())
    });
    g.bench_function("forward_with_jacobian", |b| {
        b.iter(|| net.forward_with_jacobian(black_box(&points[17])).unwrap())
    });
    g.finish();
}

fn reference(c: &mut Criterion) {
    let p0 = skewed_gaussian();
    c.bench_function("reference_flow_rk4_2000", |b| {
        b.iter(|| reference_flow(black_box(&p0), 1.0, 1.0, 0.0, 2000).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let p = skewed_gaussian();
    let a = sample_gaussian(&p, 10_000, 1, 0).unwrap();
    let b2 = sample_gaussian(&p, 10_000, 2, 0).unwrap();
    c.bench_function("sliced_w1_10k_64", |b| b.iter(|| sliced_w1(black_box(&a), &b2, 64, 0).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("build");
    g.sample_size(10);
    g.bench_function("phi1_tau0.25", |b| {
        b.iter_batched(|| small_config(0.25), |cfg| build_network(&cfg).unwrap(), BatchSize::SmallInput)
    });
    g.finish();
}

criterion_group!(benches, coefficients, network, reference, metrics, pipeline);
criterion_main!(benches);
