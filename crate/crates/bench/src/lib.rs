//! Criterion benchmarks for `evppi-core`, run with `cargo bench -p evppi-bench`.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use evppi_core::estimators::{sample_level, z_level};
use evppi_core::mlmc::{mlmc_run, MlmcConfig};
use evppi_core::models;
use evppi_core::normal::standard_normal_quantile;
use evppi_core::RandomStream;

pub fn normal_quantile(c: &mut Criterion) {
    let mut g = c.benchmark_group("normal");
    g.throughput(Throughput::Elements(1024));
    g.bench_function("quantile", |b| {
        let p: Vec<f64> = (0..1024).map(|i| (i as f64 + 0.5) / 1024.0).collect();
        b.iter(|| {
            p.iter()
                .map(|&u| standard_normal_quantile(black_box(u)))
                .sum::<f64>()
        })
    });
    g.bench_function("stream", |b| {
        let mut s = RandomStream::new(1);
        b.iter(|| (0..1024).map(|_| s.standard_normal()).sum::<f64>())
    });
    g.finish();
}

pub fn level_corrections(c: &mut Criterion) {
    let mut g = c.benchmark_group("z_level");
    for name in ["synthetic1", "bkoc"] {
        let model = models::builtin(name).unwrap();
        for level in [2u32, 6, 10] {
            g.throughput(Throughput::Elements(1 << level));
            g.bench_with_input(BenchmarkId::new(name, level), &level, |b, &level| {
                let mut s = RandomStream::new(2);
                b.iter(|| z_level(model.as_ref(), level, &mut s).unwrap().z)
            });
        }
    }
    g.finish();
}

pub fn level_blocks(c: &mut Criterion) {
    let model = models::builtin("synthetic2").unwrap();
    let mut g = c.benchmark_group("sample_level");
    g.sample_size(20);
    g.throughput(Throughput::Elements(16 * 4096));
    g.bench_function("synthetic2/level4/4096", |b| {
        let s = RandomStream::new(3);
        b.iter(|| sample_level(model.as_ref(), 4, 4096, &s).unwrap().mean_z())
    });
    g.finish();
}

pub fn driver(c: &mut Criterion) {
    let model = models::builtin("synthetic1").unwrap();
    let config = MlmcConfig {
        warmup_samples: 1000,
        ..MlmcConfig::new(0.01)
    };
    let mut g = c.benchmark_group("mlmc_run");
    g.sample_size(10);
    g.bench_function("synthetic1/eps0.01", |b| {
        b.iter(|| {
            mlmc_run(model.as_ref(), &config, &RandomStream::new(4))
                .unwrap()
                .estimate
        })
    });
    g.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    normal_quantile(c);
    level_corrections(c);
    level_blocks(c);
    driver(c);
}
