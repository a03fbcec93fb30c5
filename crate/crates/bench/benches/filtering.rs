use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sigma_bench::ct_fixture;
use sigma_core::estimate::loglik_gradient_sensitivity;
use sigma_core::gauss::filter_pass;
use sigma_core::{build_rule, Scheme};

const SCHEMES: [&str; 5] = ["sym3", "sym5", "sym7", "gh(3)", "gh(5)"];

fn rule_construction(c: &mut Criterion) {
    let mut g = c.benchmark_group("rule_construction");
    for s in SCHEMES {
        let scheme: Scheme = s.parse().unwrap();
        for n in [2, 5, 8] {
            g.bench_with_input(BenchmarkId::new(s, n), &n, |b, &n| b.iter(|| build_rule(black_box(&scheme), n).unwrap()));
        }
    }
    g.finish();
}

fn filter(c: &mut Criterion) {
    let (model, theta, ys) = ct_fixture(50);
    let mut g = c.benchmark_group("filter_pass_ct_50");
    for s in SCHEMES {
        let rule = build_rule(&s.parse().unwrap(), 5).unwrap();
        g.bench_function(s, |b| b.iter(|| filter_pass(&model, black_box(&theta), &ys, &rule).unwrap()));
    }
    g.finish();
}

fn sensitivity_gradient(c: &mut Criterion) {
    let (model, theta, ys) = ct_fixture(50);
    let mut g = c.benchmark_group("sensitivity_gradient_ct_50");
    for s in SCHEMES {
        let rule = build_rule(&s.parse().unwrap(), 5).unwrap();
        g.bench_function(s, |b| b.iter(|| loglik_gradient_sensitivity(&model, black_box(&theta), &ys, &rule).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, rule_construction, filter, sensitivity_gradient);
criterion_main!(benches);
