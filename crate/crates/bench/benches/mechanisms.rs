use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tfmlab_bench::{random_profile, BOUNDED};
use tfmlab_core::bayesian::{
    expected_p_and_b, min_reserve_mic, Distribution, McConfig, Method, ReserveSearch,
};
use tfmlab_core::catalog::build;
use tfmlab_core::grid::{Budget, GridSpec};
use tfmlab_core::mechanism::{bids_under, run_bids};
use tfmlab_core::properties::{check_cscp, check_uic};
use tfmlab_core::revelation::transform_multi;
use tfmlab_core::{BidRule, Randomness};

fn honest_runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("honest_run");
    let profile = random_profile(64, 5.0, 1);
    for (name, r) in BOUNDED {
        let m = build(name, Some(4), r).unwrap();
        let bids = bids_under(m.bidding_rule(), &profile);
        g.bench_function(BenchmarkId::new(name, 64), |b| {
            b.iter(|| run_bids(m.as_ref(), black_box(&bids), Randomness::default()).unwrap())
        });
    }
    let even = transform_multi(build("even_auction", None, None).unwrap()).unwrap();
    let small = random_profile(8, 5.0, 2);
    let bids = bids_under(BidRule::Truthful, &small);
    g.bench_function(BenchmarkId::new("revealed_multi:even_auction", 8), |b| {
        b.iter(|| run_bids(&even, black_box(&bids), Randomness::default()).unwrap())
    });
    g.finish();
}

fn property_checks(c: &mut Criterion) {
    let mut g = c.benchmark_group("check");
    g.sample_size(10);
    let grid = GridSpec {
        values: vec![0.0, 1.0, 2.5, 4.0],
        ..GridSpec::default()
    };
    let budget = Budget::default();
    let fp = build("first_price", Some(1), None).unwrap();
    g.bench_function("uic/first_price", |b| {
        b.iter(|| check_uic(fp.as_ref(), &grid, &budget).unwrap())
    });
    let pn = build("pay_nothing", Some(2), None).unwrap();
    g.bench_function("scp1/pay_nothing", |b| {
        b.iter(|| check_cscp(pn.as_ref(), 1, &grid, &budget).unwrap())
    });
    g.finish();
}

fn reserve(c: &mut Criterion) {
    let mut g = c.benchmark_group("reserve");
    g.sample_size(10);
    let d = Distribution::uniform(0.0, 1.0).unwrap();
    for n in [2usize, 10] {
        g.bench_function(BenchmarkId::new("p_and_b_quadrature", n), |b| {
            b.iter(|| expected_p_and_b(&d, 0.3, n, &[0.5], Method::Quadrature, McConfig::default()).unwrap())
        });
    }
    let mc = McConfig {
        samples: 100_000,
        seed: 1,
    };
    g.bench_function("p_and_b_mc/100", |b| {
        b.iter(|| expected_p_and_b(&d, 0.48, 100, &[0.6], Method::MonteCarlo, mc).unwrap())
    });
    g.bench_function("min_reserve/3", |b| {
        b.iter(|| min_reserve_mic(&d, 3, 1, &ReserveSearch::default()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, honest_runs, property_checks, reserve);
criterion_main!(benches);
