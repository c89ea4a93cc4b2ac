//! Target and sampling distributions over classes, mini-batch draws, and
//! per-class importance weights `w_c = p_c / q_c`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// A probability distribution over class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDist {
    probs: Vec<f64>,
}

impl ClassDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("class distribution"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Config(format!("invalid class probabilities {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::Config(format!("class probabilities sum to {total}, not 1")));
        }
        Ok(ClassDist { probs })
    }

    pub fn uniform(num_classes: usize) -> Self {
        ClassDist {
            probs: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    /// Proportional to the class sizes of `dataset`, i.e. the class
    /// marginal of drawing one example uniformly.
    pub fn empirical(dataset: &Dataset) -> Self {
        let n = dataset.len() as f64;
        ClassDist {
            probs: dataset.class_counts().iter().map(|&k| k as f64 / n).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, c: usize) -> f64 {
        self.probs[c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkewKind {
    Uniform,
    #[serde(alias = "fixed_skew")]
    Fixed,
    #[serde(alias = "rotating_skew")]
    Rotating,
}

/// How the sampling distribution `q` over classes evolves with the
/// iteration counter.
///
/// `Fixed` puts `skew_prob` on `skewed_class` for the whole run; `Rotating`
/// moves the over-sampled class to the next label every `rotation_period`
/// iterations, starting from `skewed_class`. The remaining mass is spread
/// evenly over the other classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewSchedule {
    pub kind: SkewKind,
    #[serde(default = "default_skew_prob")]
    pub skew_prob: f64,
    #[serde(default)]
    pub skewed_class: usize,
    #[serde(default = "default_rotation_period")]
    pub rotation_period: usize,
}

fn default_skew_prob() -> f64 {
    0.8
}

fn default_rotation_period() -> usize {
    50
}

impl SkewSchedule {
    pub fn uniform() -> Self {
        SkewSchedule {
            kind: SkewKind::Uniform,
            skew_prob: default_skew_prob(),
            skewed_class: 0,
            rotation_period: default_rotation_period(),
        }
    }

    pub fn fixed(skewed_class: usize, skew_prob: f64) -> Self {
        SkewSchedule {
            kind: SkewKind::Fixed,
            skew_prob,
            skewed_class,
            rotation_period: default_rotation_period(),
        }
    }

    pub fn rotating(rotation_period: usize, skew_prob: f64) -> Self {
        SkewSchedule {
            kind: SkewKind::Rotating,
            skew_prob,
            skewed_class: 0,
            rotation_period,
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.kind == SkewKind::Uniform {
            return Ok(());
        }
        let floor = 1.0 / num_classes as f64;
        if !(self.skew_prob >= floor - SUM_TOL && self.skew_prob <= 1.0) {
            return Err(Error::Config(format!(
                "skew_prob {} outside [1/C, 1] = [{floor}, 1]",
                self.skew_prob
            )));
        }
        if self.skewed_class >= num_classes {
            return Err(Error::Config(format!(
                "skewed_class {} out of range for {num_classes} classes",
                self.skewed_class
            )));
        }
        if self.rotation_period == 0 {
            return Err(Error::Config("rotation_period must be at least 1".into()));
        }
        Ok(())
    }

    /// The over-sampled class at iteration `t`, if any.
    pub fn skewed_class_at(&self, t: usize, num_classes: usize) -> Option<usize> {
        match self.kind {
            SkewKind::Uniform => None,
            SkewKind::Fixed => Some(self.skewed_class),
            SkewKind::Rotating => {
                Some((self.skewed_class + t / self.rotation_period) % num_classes)
            }
        }
    }

    /// Sampling distribution `q` at iteration `t`.
    pub fn q_at(&self, t: usize, num_classes: usize) -> ClassDist {
        match self.skewed_class_at(t, num_classes) {
            None => ClassDist::uniform(num_classes),
            Some(s) => {
                let rest = (1.0 - self.skew_prob) / (num_classes - 1) as f64;
                let probs = (0..num_classes)
                    .map(|c| if c == s { self.skew_prob } else { rest })
                    .collect();
                ClassDist { probs }
            }
        }
    }
}

/// Dataset indices drawn at one iteration, with their per-class partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    pub indices: Vec<usize>,
    pub by_class: Vec<Vec<usize>>,
    pub iteration: usize,
}

impl MiniBatch {
    pub fn new(dataset: &Dataset, indices: Vec<usize>, iteration: usize) -> Self {
        let mut by_class = vec![Vec::new(); dataset.num_classes()];
        for &i in &indices {
            by_class[dataset.example(i).label].push(i);
        }
        MiniBatch {
            indices,
            by_class,
            iteration,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }

    /// Classes with at least one sample, ascending.
    pub fn nonempty_classes(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.by_class
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(c, m)| (c, m.as_slice()))
    }
}

/// Draws `batch_size` slots independently: a class from `q_at(t)`, then an
/// example of that class uniformly.
pub fn draw_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    schedule: &SkewSchedule,
    t: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<MiniBatch> {
    if batch_size == 0 {
        return Err(Error::EmptyInput("batch_size"));
    }
    let q = schedule.q_at(t, dataset.num_classes());
    for (c, &p) in q.probs().iter().enumerate() {
        if p > 0.0 && dataset.class_indices(c).is_empty() {
            return Err(Error::Data(format!(
                "class {c} has sampling probability {p} but no examples"
            )));
        }
    }
    let classes = WeightedIndex::new(q.probs())
        .map_err(|e| Error::Config(format!("sampling distribution: {e}")))?;
    let mut indices = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let members = dataset.class_indices(classes.sample(rng));
        indices.push(members[rng.random_range(0..members.len())]);
    }
    Ok(MiniBatch::new(dataset, indices, t))
}

/// Convenience wrapper seeding a fresh ChaCha8 generator.
pub fn draw_batch_seeded(
    dataset: &Dataset,
    schedule: &SkewSchedule,
    t: usize,
    batch_size: usize,
    rng_seed: u64,
) -> Result<MiniBatch> {
    draw_batch(dataset, schedule, t, batch_size, &mut ChaCha8Rng::seed_from_u64(rng_seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w_c = p_c / q_c` with the true sampling distribution.
    Exact,
    /// `w_c = p_c / q_hat_c` with `q_hat_c = |I_{t,c}| / |I_t|`.
    Empirical,
    /// Exact weights times a fixed per-class factor in `[0.5, 2]`.
    Misspecified,
    /// `w_c = 1` for every class.
    Unit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightModel {
    pub mode: WeightMode,
    pub target: ClassDist,
    pub perturbation_seed: u64,
}

impl WeightModel {
    pub fn new(mode: WeightMode, target: ClassDist) -> Self {
        WeightModel {
            mode,
            target,
            perturbation_seed: 0,
        }
    }

    pub fn misspecified(target: ClassDist, perturbation_seed: u64) -> Self {
        WeightModel {
            mode: WeightMode::Misspecified,
            target,
            perturbation_seed,
        }
    }
}

/// Per-class importance weights; `None` marks a class whose weight is
/// undefined (empty in empirical mode, or never sampled).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(pub Vec<Option<f64>>);

impl ClassWeights {
    pub fn constant(num_classes: usize, w: f64) -> Self {
        ClassWeights(vec![Some(w); num_classes])
    }

    /// `p_c / q_c`, absent where `q_c = 0`.
    pub fn ratio(target: &ClassDist, sampling: &ClassDist) -> Result<Self> {
        if target.num_classes() != sampling.num_classes() {
            return Err(Error::Dimension {
                context: "importance weights",
                expected: target.num_classes(),
                got: sampling.num_classes(),
            });
        }
        Ok(ClassWeights(
            target
                .probs()
                .iter()
                .zip(sampling.probs())
                .map(|(&p, &q)| (q > 0.0).then(|| p / q))
                .collect(),
        ))
    }

    pub fn get(&self, c: usize) -> Option<f64> {
        self.0.get(c).copied().flatten()
    }

    /// Weight of a class that has samples in the current batch.
    pub fn require(&self, c: usize) -> Result<f64> {
        self.get(c)
            .ok_or_else(|| Error::Precondition(format!("no importance weight for sampled class {c}")))
    }
}

/// Deterministic per-class multiplicative perturbation in `[0.5, 2]`,
/// kept at least 0.1 away from 1 so the weights are genuinely wrong.
pub fn perturbation_factors(num_classes: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(0.5, 2.0).expect("valid range");
    (0..num_classes)
        .map(|_| loop {
            let f: f64 = dist.sample(&mut rng);
            if (f - 1.0).abs() >= 0.1 {
                break f;
            }
        })
        .collect()
}

/// Importance weights for `batch` under `model`.
pub fn weights_for(
    batch: &MiniBatch,
    model: &WeightModel,
    schedule: &SkewSchedule,
    t: usize,
) -> Result<ClassWeights> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("weights_for batch"));
    }
    let c = model.target.num_classes();
    if batch.by_class.len() != c {
        return Err(Error::Dimension {
            context: "weights_for classes",
            expected: c,
            got: batch.by_class.len(),
        });
    }
    match model.mode {
        WeightMode::Unit => Ok(ClassWeights::constant(c, 1.0)),
        WeightMode::Exact => ClassWeights::ratio(&model.target, &schedule.q_at(t, c)),
        WeightMode::Misspecified => {
            let exact = ClassWeights::ratio(&model.target, &schedule.q_at(t, c))?;
            let factors = perturbation_factors(c, model.perturbation_seed);
            Ok(ClassWeights(
                exact.0.iter().zip(&factors).map(|(w, f)| w.map(|w| w * f)).collect(),
            ))
        }
        WeightMode::Empirical => {
            let total = batch.len() as f64;
            Ok(ClassWeights(
                batch
                    .by_class
                    .iter()
                    .enumerate()
                    .map(|(k, members)| {
                        (!members.is_empty())
                            .then(|| model.target.prob(k) / (members.len() as f64 / total))
                    })
                    .collect(),
            ))
        }
    }
}
