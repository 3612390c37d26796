use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dbk_core::data::gen_step1d;
use dbk_core::dense::{dense_lml_grad, RbfArdParams};
use dbk_core::exact::lml_gradient;
use dbk_core::nn::init_feature_map;
use dbk_core::rng::Rng;
use dbk_core::svi::SviTrainer;
use dbk_core::{Matrix, TrainConfig};

fn random_features(n: usize, r: usize) -> (Matrix, Vec<f64>) {
    let mut rng = Rng::new(0);
    let phi = Matrix::from_fn(n, r, |_, _| rng.normal());
    let y = (0..n).map(|_| rng.normal()).collect();
    (phi, y)
}

fn lml(c: &mut Criterion) {
    let mut g = c.benchmark_group("lml_gradient_r128");
    g.sample_size(20);
    for n in [1_000, 10_000] {
        let (phi, y) = random_features(n, 128);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| lml_gradient(black_box(&phi), black_box(&y), 0.01).unwrap())
        });
    }
    g.finish();
}

fn svi_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("svi_step_b256_r128");
    g.sample_size(30);
    for n in [1_000, 100_000] {
        let data = gen_step1d(n, 0.01, 0);
        let cfg = TrainConfig { max_iters: usize::MAX, eval_every: usize::MAX, ..Default::default() };
        let map = init_feature_map(1, &[128, 128], 128, false, 0).unwrap();
        let mut trainer = SviTrainer::new(&data, None, map, &cfg).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| trainer.step().unwrap()));
    }
    g.finish();
}

fn dense(c: &mut Criterion) {
    let mut g = c.benchmark_group("dense_lml_gradient");
    g.sample_size(10);
    for n in [200, 500] {
        let data = gen_step1d(n, 0.01, 0);
        let params = RbfArdParams::init(1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| dense_lml_grad(black_box(&data.x), black_box(&data.y), &params).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, lml, svi_step, dense);
criterion_main!(benches);
