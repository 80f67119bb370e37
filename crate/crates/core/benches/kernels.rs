use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dscnn::config::RunConfig;
use dscnn::data::{make_synthetic, Difficulty};
use dscnn::metrics::evaluate;
use dscnn::parallel::{set_exec, Exec};
use dscnn::train::Trainer;
use dscnn::{build_dscnn, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(Exec, &str); 2] = [(Exec::Sequential, "sequential"), (Exec::Parallel, "parallel")];

fn random(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3_32ch_64px");
    let x = random([4, 32, 64, 64], 1);
    let w = random([32, 32, 3, 3], 2);
    for (mode, name) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_exec(mode);
            b.iter(|| {
                let mut tape = Tape::<f32>::new();
                let xv = tape.leaf(x.clone(), true);
                let wv = tape.leaf(w.clone(), true);
                let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
                let s = tape.sum(y);
                tape.backward(s).unwrap()
            })
        });
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("train_step_dscnn8_batch4_32px");
    g.sample_size(10);
    let data = make_synthetic(8, 32, Difficulty::Medium, 0).unwrap();
    let config = RunConfig { base_channels: 8, batch_size: 4, ..RunConfig::default() };
    for (mode, name) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_exec(mode);
            let mut trainer = Trainer::new(config.clone(), data.clone()).unwrap();
            b.iter(|| trainer.step().unwrap())
        });
    }
    g.finish();
}

fn eval(c: &mut Criterion) {
    let mut g = c.benchmark_group("evaluate_dscnn8_16x32px");
    g.sample_size(10);
    let data = make_synthetic(16, 32, Difficulty::Medium, 0).unwrap();
    let model = build_dscnn(1, 8, 0).unwrap();
    for (mode, name) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_exec(mode);
            b.iter(|| evaluate(&model, &data, 0.5, "bench").unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, conv, train_step, eval);
criterion_main!(benches);
