use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use drgrad_bench::mnist_shaped;
use drgrad_core::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use drgrad_core::ClassWeights;

fn per_step(c: &mut Criterion) {
    let fx = mnist_shaped(50, 20, 16);
    let weights = ClassWeights::constant(10, 1.0);
    let mut group = c.benchmark_group("step");
    group.sample_size(20);
    for kind in [
        OptimizerKind::Sgd,
        OptimizerKind::IwSgd,
        OptimizerKind::Momentum,
        OptimizerKind::Svrg,
        OptimizerKind::Sdrg,
    ] {
        let mut cfg = OptimizerConfig::new(kind);
        // Keep the svrg full pass out of the steady-state timing.
        cfg.snapshot_period = usize::MAX;
        group.bench_function(kind.name(), |b| {
            b.iter_batched(
                || Optimizer::new(cfg.clone(), &fx.model, &fx.dataset, &fx.theta).unwrap(),
                |mut opt| {
                    let mut theta = fx.theta.clone();
                    for batch in &fx.batches {
                        theta = opt.advance(&fx.model, &fx.dataset, &theta, batch, &weights).unwrap().0;
                    }
                    theta
                },
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let fx = mnist_shaped(5, 20, 1);
    let examples: Vec<_> = fx.batches[0].indices.iter().map(|&i| fx.dataset.example(i)).collect();
    c.bench_function("grad_batch_20", |b| {
        b.iter(|| fx.model.grad_batch(&fx.theta, &examples).unwrap())
    });
}

criterion_group!(benches, per_step, gradients);
criterion_main!(benches);
