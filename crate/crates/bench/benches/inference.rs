use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use clueset_bench::fixture;
use clueset_core::clue::{delta_clue, ExperimentConfig, InitContext};
use clueset_core::divclue::{diverse_clue, DivMethod};
use clueset_core::glam::{train_mapper, MapperConfig};

fn per_input(c: &mut Criterion) {
    let f = fixture();
    let mapper = train_mapper(&f.bundle, &f.xu, f.nu, &f.xc, f.nc, f.group, f.group, &MapperConfig::default())
        .expect("mapper");
    let x = f.uncertain(0).to_vec();
    let ctx = InitContext::default();
    let cfg = ExperimentConfig::default();

    let mut g = c.benchmark_group("counterfactual per input");
    g.bench_function("glam apply", |b| b.iter(|| mapper.apply(&f.bundle, &x).unwrap()));
    g.sample_size(20);
    g.bench_function("delta-clue k=10", |b| b.iter(|| delta_clue(&x, &f.bundle, &cfg, &ctx).unwrap()));
    let div = ExperimentConfig {
        lambda_d: 1.0,
        ..cfg.clone()
    };
    g.bench_function("divclue simultaneous k=10", |b| {
        b.iter(|| diverse_clue(DivMethod::Simultaneous, &x, &f.bundle, &div, &ctx).unwrap())
    });
    g.finish();
}

fn mapper_training(c: &mut Criterion) {
    let f = fixture();
    let cfg = MapperConfig {
        steps: 200,
        ..Default::default()
    };
    let mut g = c.benchmark_group("mapper training");
    g.sample_size(10);
    g.bench_function("200 steps", |b| {
        b.iter_batched(
            || cfg.clone(),
            |cfg| train_mapper(&f.bundle, &f.xu, f.nu, &f.xc, f.nc, f.group, f.group, &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

criterion_group!(benches, per_input, mapper_training);
criterion_main!(benches);
