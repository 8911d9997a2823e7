use apricot::mechanisms::{ap_optimal, ap_revenue_analytic, ap_revenue_mc, example1_market, opt_revenue_triangular};
use apricot::orderstats::{exact_order_stat_cdf, exact_order_stat_cdfs, market_accept_types};
use apricot::worstcase::{opt_k1, WorstCase};
use apricot_bench::{small_probs, spread_market};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn order_stats(c: &mut Criterion) {
    let mut g = c.benchmark_group("order_stats");
    for n in [64usize, 1024] {
        let probs = small_probs(n, 0.01);
        g.bench_with_input(BenchmarkId::new("exact_d8", n), &probs, |b, p| {
            b.iter(|| exact_order_stat_cdf(black_box(p), 8).unwrap())
        });
    }
    let m = spread_market(16, 50, 1_000_000);
    g.bench_function("multiplicity_k16", |b| {
        b.iter(|| exact_order_stat_cdfs(market_accept_types(black_box(&m), 0.7), 16))
    });
    g.finish();
}

fn mechanisms(c: &mut Criterion) {
    let mut g = c.benchmark_group("mechanisms");
    let m = spread_market(4, 50, 3);
    g.bench_function("ap_analytic", |b| b.iter(|| ap_revenue_analytic(black_box(&m), 1.3).unwrap()));
    g.bench_function("ap_optimal", |b| b.iter(|| ap_optimal(black_box(&m)).unwrap()));
    g.bench_function("opt_spp", |b| b.iter(|| opt_revenue_triangular(black_box(&m)).unwrap()));
    g.bench_function("ap_mc_10k", |b| b.iter(|| ap_revenue_mc(black_box(&m), 1.3, 10_000, 1).unwrap()));
    let ex = example1_market(256).unwrap();
    g.bench_function("example1_ap_optimal_256", |b| b.iter(|| ap_optimal(black_box(&ex)).unwrap()));
    g.finish();
}

fn worst_case(c: &mut Criterion) {
    let mut g = c.benchmark_group("worst_case");
    g.sample_size(10);
    g.bench_function("opt_k1", |b| b.iter(|| opt_k1().unwrap()));
    for k in [2usize, 4, 16] {
        let wc = WorstCase::new(k).unwrap();
        g.bench_with_input(BenchmarkId::new("ear", k), &wc, |b, wc| b.iter(|| wc.ear().unwrap()));
    }
    let wc = WorstCase::new(1).unwrap();
    g.bench_function("market_400", |b| b.iter(|| wc.market(400, 1e3, 1e-3).unwrap()));
    g.finish();
}

criterion_group!(benches, order_stats, mechanisms, worst_case);
criterion_main!(benches);
