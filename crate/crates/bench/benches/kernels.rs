use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use milc_core::metrics::roc_auc;
use milc_core::nn::{bce_loss, init_model, AdamState};
use milc_core::pooling::{mc_dropout_predict, pool_bag, McSettings};
use milc_core::{DropoutMode, Graph, ModelSpec, Pooling, RngStream, ScoredSet, Tensor};
use rand::Rng;

fn random(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = RngStream::new(0);
    let a = random(128, 2048, &mut rng);
    let b = random(2048, 1024, &mut rng);
    c.bench_function("matmul 128x2048x1024", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let av = g.constant(a.clone());
            let bv = g.constant(b.clone());
            black_box(g.matmul(av, bv).unwrap());
        })
    });
}

fn mc_predict(c: &mut Criterion) {
    let mut rng = RngStream::new(1);
    let state = init_model(&ModelSpec::mnist_fc(), &mut rng).unwrap();
    let x = random(100, 784, &mut rng);
    let stream = RngStream::new(2);
    c.bench_function("mc_dropout_predict T=10 K=100 mnist", |bench| {
        bench.iter(|| black_box(mc_dropout_predict(&state, &x, 10, &stream).unwrap()))
    });
}

fn auc(c: &mut Criterion) {
    let mut rng = RngStream::new(3);
    let n = 20_000;
    let set = ScoredSet::new(
        (0..n).map(|_| rng.random::<f64>()).collect(),
        (0..n).map(|i| (i % 2) as u8).collect(),
    )
    .unwrap();
    c.bench_function("roc_auc n=20000", |bench| {
        bench.iter(|| black_box(roc_auc(&set).unwrap()))
    });
}

fn train_step(c: &mut Criterion) {
    let mut rng = RngStream::new(4);
    let x = random(100, 784, &mut rng);
    let mut group = c.benchmark_group("train step K=100 mnist");
    for pooling in Pooling::ALL {
        let state = init_model(&ModelSpec::mnist_fc(), &mut rng).unwrap();
        group.bench_function(pooling.name(), |bench| {
            bench.iter_batched(
                || (state.clone(), AdamState::new(state.params(), 5e-4)),
                |(mut model, mut adam)| {
                    let mut g = Graph::new();
                    let (loss, vars) = {
                        let b = model.bind(&mut g, true);
                        let xv = g.constant(x.clone());
                        let mc = McSettings {
                            passes: 10,
                            eps: 1e-6,
                        };
                        let f = pool_bag(
                            &mut g,
                            &b,
                            xv,
                            pooling,
                            DropoutMode::Train,
                            mc,
                            &RngStream::new(5),
                        )
                        .unwrap();
                        (bce_loss(&mut g, f.pool.z, 1).unwrap(), b.vars().to_vec())
                    };
                    let grads = g.backward(loss).unwrap();
                    let refs: Vec<Option<&Tensor>> = vars.iter().map(|v| grads.get(*v)).collect();
                    adam.step(model.params_mut(), &refs).unwrap();
                    black_box(model)
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, mc_predict, auc, train_step);
criterion_main!(benches);
