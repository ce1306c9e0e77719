use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use speckle_tomo::config::ExperimentConfig;
use speckle_tomo::correlation::{build_correlation_stack, comp_scale_series};
use speckle_tomo::grid::{dft3, xcorr2, Direction, Interpolation};
use speckle_tomo::retrieval::{init_state, RetrievalConfig, Update};
use speckle_tomo_bench::{capture, random_volume, sparse_power_spectrum};

fn bench_dft3(c: &mut Criterion) {
    let mut group = c.benchmark_group("dft3");
    for dims in [(32, 32, 8), (64, 64, 11)] {
        let v = random_volume(dims, 1).to_complex();
        group.bench_with_input(BenchmarkId::from_parameter(format!("{dims:?}")), &v, |b, v| {
            b.iter(|| dft3(v, Direction::Forward).unwrap())
        });
    }
    group.finish();
}

fn bench_xcorr2(c: &mut Criterion) {
    let mut group = c.benchmark_group("xcorr2");
    for n in [128, 256] {
        let img = capture(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &img, |b, img| b.iter(|| xcorr2(img, img).unwrap()));
    }
    group.finish();
}

fn bench_retrieval_step(c: &mut Criterion) {
    let power = sparse_power_spectrum((64, 64, 11));
    let cfg = RetrievalConfig::default();
    c.bench_function("retrieval_step_hio_64x64x11", |b| {
        let mut state = init_state(&power, &cfg).unwrap();
        b.iter(|| state.step(Update::Hio { beta: 0.9 }).unwrap())
    });
}

fn bench_stack(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let img = capture(cfg.scene.sensor_n);
    let series = comp_scale_series(cfg.scene.z_o, cfg.scene.z_i, cfg.scene.delta_z, cfg.m).unwrap();
    let mut group = c.benchmark_group("correlation_stack");
    group.sample_size(10);
    group.bench_function("default_scene", |b| {
        b.iter(|| build_correlation_stack(&img, &series, cfg.crop(), cfg.preprocess.downsample, Interpolation::Bicubic).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_dft3, bench_xcorr2, bench_retrieval_step, bench_stack);
criterion_main!(benches);
