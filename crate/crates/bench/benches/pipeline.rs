use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use metagam_bench::{cohort, formula, unit_grid};
use metagam_core::{
    combine_pvalues, eval_basis, fit_gam, place_knots, pool_pointwise, predict_term, strip_rawdata,
    CombineMethod, Constraint, DataTable, FitOptions, PlacementRule, PoolMethod, SmoothSpec,
};

fn basis(c: &mut Criterion) {
    let mut group = c.benchmark_group("eval_basis");
    let x = unit_grid(10_000);
    for k in [10, 20, 40] {
        let knots = place_knots(&x, k, PlacementRule::Quantile).unwrap();
        let spec = SmoothSpec::new("s(x)", "x", knots, Constraint::None, None).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &spec, |b, spec| {
            b.iter(|| eval_basis(spec, black_box(&x)).unwrap())
        });
    }
    group.finish();
}

fn fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_gam");
    group.sample_size(10);
    let f = formula();
    for n in [500, 2000, 8000] {
        let data = cohort(n, 0.0, 1.0, 0.0, 1);
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, data| {
            b.iter(|| fit_gam(data, &f, &FitOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn pool(c: &mut Criterion) {
    let f = formula();
    let grid = DataTable::new().with_numeric("x", unit_grid(1000)).unwrap();
    let predictions: Vec<_> = (0..6)
        .map(|i| {
            let lo = 0.1 * i as f64;
            let data = cohort(400, lo, lo + 0.5, 0.0, 10 + i as u64);
            let model = strip_rawdata(&fit_gam(&data, &f, &FitOptions::default()).unwrap());
            predict_term(&model, "s(x)", &grid, true).unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("pool_pointwise");
    for (name, method) in [
        ("fe", PoolMethod::FixedEffect),
        ("dl", PoolMethod::DerSimonianLaird),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| pool_pointwise(black_box(&predictions), method, true).unwrap())
        });
    }
    group.finish();

    let p = [0.03, 0.2, 0.5, 0.01, 0.7, 0.4];
    c.bench_function("combine_pvalues/fisher", |b| {
        b.iter(|| combine_pvalues(black_box(&p), None, CombineMethod::Fisher).unwrap())
    });
}

criterion_group!(benches, basis, fit, pool);
criterion_main!(benches);
