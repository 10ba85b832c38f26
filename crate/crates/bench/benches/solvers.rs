use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use expertgame::sim::MyopicSaddle;
use expertgame::{simulate, solve_reduced_fd, solve_value, AdversaryPolicy, ForecasterPolicy, GridSpec};
use expertgame_bench::{five_experts, matrix_game, phi, two_experts};

fn bench_dp(c: &mut Criterion) {
    let (m, _) = two_experts();
    let phi = phi();
    let mut group = c.benchmark_group("dp_two_experts");
    group.sample_size(10);
    for horizon in [16, 64, 256] {
        group.bench_with_input(BenchmarkId::from_parameter(horizon), &horizon, |b, &h| {
            b.iter(|| solve_value(h, &m, &phi).unwrap())
        });
    }
    group.finish();
}

fn bench_lp(c: &mut Criterion) {
    let mut group = c.benchmark_group("lp_matrix_game");
    for n in [4, 16, 64] {
        let lp = matrix_game(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &lp, |b, lp| {
            b.iter(|| lp.solve().unwrap())
        });
    }
    group.finish();
}

fn bench_simulate(c: &mut Criterion) {
    let (m, _) = two_experts();
    let phi = phi();
    let adv = AdversaryPolicy::hat(2).unwrap();
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    group.bench_function("hat_vs_mw_M256_r2000", |b| {
        let fore = ForecasterPolicy::MultiplicativeWeights { eta: None };
        b.iter(|| simulate(&m, &adv, &fore, &phi, black_box(256), 2000, 1).unwrap())
    });
    let five = five_experts();
    let saddle = AdversaryPolicy::MyopicSaddle(MyopicSaddle::new(&five, &phi).unwrap());
    group.bench_function("myopic_vs_best_response_M256_r500", |b| {
        let fore = ForecasterPolicy::BestResponse(five.clone());
        b.iter(|| simulate(&five, &saddle, &fore, &phi, black_box(256), 500, 1).unwrap())
    });
    group.finish();
}

fn bench_fd(c: &mut Criterion) {
    let (m, an) = two_experts();
    let mut group = c.benchmark_group("reduced_fd");
    group.sample_size(10);
    for (nz, nt) in [(201, 800), (401, 3200)] {
        group.bench_with_input(BenchmarkId::from_parameter(nz), &(nz, nt), |b, &(nz, nt)| {
            b.iter(|| solve_reduced_fd(&m, &an, 0.1, GridSpec::new(-6.0, 6.0, nz, nt)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_dp, bench_lp, bench_simulate, bench_fd);
criterion_main!(benches);
