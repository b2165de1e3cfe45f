use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use mdslu_bench::fixture;
use mdslu_core::autodiff::Tape;
use mdslu_core::metrics::{LabeledPrediction, MetricsReport};
use mdslu_core::optim::{AdamConfig, AdamState};
use mdslu_core::training::example_loss;
use mdslu_core::{ModeFlags, Rng, Tensor};

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [16usize, 64, 128] {
        let a = Tensor::new(vec![n, n], (0..n * n).map(|i| (i % 7) as f64 * 0.1).collect()).unwrap();
        let b = a.clone();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| {
                let mut t = Tape::new();
                let x = t.constant(a.clone());
                let y = t.constant(b.clone());
                black_box(t.matmul(x, y).unwrap());
            })
        });
    }
    g.finish();
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("predict");
    for (name, modes) in [
        ("full", ModeFlags::full()),
        ("no_local", ModeFlags::parse("no_local").unwrap()),
        ("no_gcn", ModeFlags::parse("no_gcn").unwrap()),
    ] {
        let fx = fixture(32, modes);
        let ex = &fx.encoded[0];
        let d = ex.domain.unwrap();
        g.bench_function(name, |b| b.iter(|| black_box(fx.model.predict(ex, d).unwrap())));
    }
    g.finish();
}

fn forward_backward(c: &mut Criterion) {
    let fx = fixture(32, ModeFlags::full());
    let ex = &fx.encoded[0];
    c.bench_function("forward_backward/full", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let loss = example_loss(&mut tape, &fx.model, ex, &fx.config, Some(&mut Rng::seed(3))).unwrap();
            tape.backward(loss).unwrap();
            black_box(tape.grad(loss).is_some());
        })
    });
}

fn train_step(c: &mut Criterion) {
    let fx = fixture(32, ModeFlags::full());
    c.bench_function("train_step/accumulate_16", |b| {
        let mut model = fx.model.clone();
        let mut adam = AdamState::new(&model.store, AdamConfig::default());
        let mut rng = Rng::seed(9);
        b.iter(|| {
            for ex in &fx.encoded[..16] {
                let mut tape = Tape::new();
                let loss = example_loss(&mut tape, &model, ex, &fx.config, Some(&mut rng)).unwrap();
                tape.backward(loss).unwrap();
                tape.write_param_grads(&mut model.store).unwrap();
            }
            adam.step(&mut model.store).unwrap();
        })
    });
}

fn metrics(c: &mut Criterion) {
    let fx = fixture(8, ModeFlags::full());
    let gold: Vec<_> = fx.corpus.train.iter().cycle().take(1000).cloned().collect();
    let pred: Vec<LabeledPrediction> = gold
        .iter()
        .map(|e| LabeledPrediction {
            intent: e.intent.clone(),
            slots: e.slots.clone(),
            routed_domain: e.domain.clone(),
        })
        .collect();
    c.bench_function("metrics/1000_examples", |b| {
        b.iter(|| black_box(MetricsReport::compute(&gold, &pred).unwrap()))
    });
}

criterion_group!(benches, matmul, forward, forward_backward, train_step, metrics);
criterion_main!(benches);
