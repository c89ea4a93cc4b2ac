//! Shared fixtures for the estimator benchmarks.

use drgrad_core::data::synth_blobs;
use drgrad_core::sampling::draw_batch_seeded;
use drgrad_core::{Dataset, MiniBatch, ModelSpec, ParamVector, SkewSchedule};

/// An MNIST-shaped problem: 784 inputs, 100 hidden units, 10 classes.
pub struct Fixture {
    pub model: ModelSpec,
    pub dataset: Dataset,
    pub theta: ParamVector,
    pub batches: Vec<MiniBatch>,
}

pub fn mnist_shaped(per_class: usize, batch_size: usize, batches: usize) -> Fixture {
    let dataset = synth_blobs(10, per_class, 784, 3.0, 7).expect("fixture data");
    let model = ModelSpec::mlp(784, 100, 10).expect("fixture model");
    let theta = model.init_params(11);
    let schedule = SkewSchedule::fixed(0, 0.8);
    let batches = (0..batches)
        .map(|t| draw_batch_seeded(&dataset, &schedule, t, batch_size, t as u64).expect("fixture batch"))
        .collect();
    Fixture {
        model,
        dataset,
        theta,
        batches,
    }
}
