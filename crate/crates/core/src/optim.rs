//! Control-variate SGD.
//!
//! Every optimizer here produces an update direction of the form
//!
//! ```text
//! delta = grad_i(theta) - g_i(theta_snap) + E[g(theta_snap)]
//! ```
//!
//! and differs only in how the control variates `g_i` and their expectation
//! are maintained:
//!
//! | kind       | control variate                         | expectation term            |
//! |------------|-----------------------------------------|-----------------------------|
//! | `sgd`      | none                                    | none                        |
//! | `iw_sgd`   | none, per-class importance weights      | none                        |
//! | `momentum` | previous step, see [`step_momentum`]    | previous step               |
//! | `svrg`     | gradient at a snapshot refreshed every m| full gradient at snapshot   |
//! | `saga`     | stored gradient table                   | mean of the table           |
//! | `sag`      | stored gradient table, correction / n   | mean of the table           |
//! | `sdrg`     | gradient at a per-class snapshot        | per-class momentum          |
//!
//! `sdrg` combines importance weights with per-class control variates and
//! is unbiased when either the weights or the control variates are right.
//! The per-class control variates are supplied through
//! [`ClassControlVariates`], so alternative models (the momentum reduction,
//! oracle-chosen variates) reuse the same estimator.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::sampling::{ClassWeights, MiniBatch, WeightMode};
use crate::tensor::{reduce_mean, Vec64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    IwSgd,
    Momentum,
    Svrg,
    Saga,
    Sag,
    Sdrg,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Sgd,
        OptimizerKind::IwSgd,
        OptimizerKind::Momentum,
        OptimizerKind::Svrg,
        OptimizerKind::Saga,
        OptimizerKind::Sag,
        OptimizerKind::Sdrg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::IwSgd => "iw_sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Svrg => "svrg",
            OptimizerKind::Saga => "saga",
            OptimizerKind::Sag => "sag",
            OptimizerKind::Sdrg => "sdrg",
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer kind `{s}`")))
    }
}

/// When the SDRG per-class momentum absorbs the current batch gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccumulatorOrder {
    /// Update the accumulator, then use it in this step's delta.
    BeforeStep,
    /// Use last step's accumulator, then update it.
    AfterStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    /// Snapshot refresh period `m` for svrg and sdrg.
    #[serde(default = "defaults::snapshot_period")]
    pub snapshot_period: usize,
    #[serde(default = "defaults::momentum_gamma")]
    pub momentum_gamma: f64,
    #[serde(default = "defaults::momentum_eta")]
    pub momentum_eta: f64,
    /// Scale of the weighted gradient term (sdrg).
    #[serde(default = "defaults::one")]
    pub alpha: f64,
    /// Scale of the control-variate correction (sdrg).
    #[serde(default = "defaults::one")]
    pub beta: f64,
    #[serde(default = "defaults::weight_mode")]
    pub weight_mode: WeightMode,
    #[serde(default = "defaults::accumulator_order")]
    pub accumulator_order: AccumulatorOrder,
    /// Upper bound on the saga/sag gradient table.
    #[serde(default = "defaults::table_memory_cap_bytes")]
    pub table_memory_cap_bytes: u64,
}

mod defaults {
    use super::*;
    pub fn lr() -> f64 {
        0.01
    }
    pub fn snapshot_period() -> usize {
        50
    }
    pub fn momentum_gamma() -> f64 {
        0.9
    }
    pub fn momentum_eta() -> f64 {
        0.1
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn weight_mode() -> WeightMode {
        WeightMode::Unit
    }
    pub fn accumulator_order() -> AccumulatorOrder {
        AccumulatorOrder::BeforeStep
    }
    pub fn table_memory_cap_bytes() -> u64 {
        1 << 30
    }
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerConfig {
            kind,
            lr: defaults::lr(),
            snapshot_period: defaults::snapshot_period(),
            momentum_gamma: defaults::momentum_gamma(),
            momentum_eta: defaults::momentum_eta(),
            alpha: 1.0,
            beta: 1.0,
            weight_mode: defaults::weight_mode(),
            accumulator_order: defaults::accumulator_order(),
            table_memory_cap_bytes: defaults::table_memory_cap_bytes(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum_gamma) {
            return bad(format!("momentum_gamma must lie in [0, 1), got {}", self.momentum_gamma));
        }
        if !(self.momentum_eta.is_finite() && self.momentum_eta > 0.0) {
            return bad(format!("momentum_eta must be positive, got {}", self.momentum_eta));
        }
        if self.snapshot_period == 0 {
            return bad("snapshot_period must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return bad(format!("alpha and beta must be positive, got {} and {}", self.alpha, self.beta));
        }
        Ok(())
    }

    /// Learning rate applied to delta. Momentum bakes its step size into
    /// delta, so it is applied with rate 1.
    pub fn effective_lr(&self) -> f64 {
        if self.kind == OptimizerKind::Momentum {
            1.0
        } else {
            self.lr
        }
    }
}

/// One stochastic update direction (before learning-rate scaling).
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub delta: Vec64,
    pub batch: MiniBatch,
    /// `(class, term)` pairs for estimators that average per-class terms.
    pub per_class_terms: Option<Vec<(usize, Vec64)>>,
}

fn finish(delta: Vec64, batch: &MiniBatch, terms: Option<Vec<(usize, Vec64)>>) -> Result<GradEstimate> {
    delta
        .check_finite("gradient estimate")
        .map_err(|e| e.at_iteration(batch.iteration))?;
    Ok(GradEstimate {
        delta,
        batch: batch.clone(),
        per_class_terms: terms,
    })
}

fn require_nonempty(batch: &MiniBatch) -> Result<()> {
    if batch.is_empty() {
        Err(Error::EmptyInput("mini-batch"))
    } else {
        Ok(())
    }
}

/// Mean gradient over `members` (dataset indices) at `theta`.
pub fn mean_grad(
    model: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    members: &[usize],
) -> Result<Vec64> {
    model.grad_mean_raw(theta.theta.as_slice(), members.iter().map(|&i| dataset.example(i)))
}

/// Plain mini-batch SGD: the unweighted mean gradient.
pub fn step_sgd(
    model: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    batch: &MiniBatch,
) -> Result<GradEstimate> {
    require_nonempty(batch)?;
    let delta = mean_grad(model, theta, dataset, &batch.indices)?;
    finish(delta, batch, None)
}

/// Importance-weighted SGD in per-class form:
/// `(1/C') * sum_c w_c * mean_{i in I_c} grad_i`, over the `C'` classes
/// present in the batch.
pub fn step_iw_sgd(
    model: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    batch: &MiniBatch,
    weights: &ClassWeights,
) -> Result<GradEstimate> {
    require_nonempty(batch)?;
    let mut sum = Vec64::zeros(theta.len());
    let mut terms = Vec::new();
    for (c, members) in batch.nonempty_classes() {
        let w = weights.require(c)?;
        let term = mean_grad(model, theta, dataset, members)?.scale(w);
        sum.axpy_in_place(1.0, &term)?;
        terms.push((c, term));
    }
    let delta = sum.scale(1.0 / terms.len() as f64);
    finish(delta, batch, Some(terms))
}

/// Which stored-gradient schedule [`step_generic_cv`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvSchedule {
    Svrg,
    Saga,
    Sag,
}

/// SVRG snapshot: `theta_snap` and the full-data mean gradient there.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrgState {
    pub period: usize,
    snapshot: Option<(ParamVector, Vec64)>,
}

impl SvrgState {
    pub fn new(period: usize) -> Self {
        SvrgState {
            period: period.max(1),
            snapshot: None,
        }
    }

    /// A snapshot fixed at `theta_snap`, never refreshed.
    pub fn frozen(model: &ModelSpec, dataset: &Dataset, theta_snap: &ParamVector) -> Result<Self> {
        let mut s = SvrgState {
            period: usize::MAX,
            snapshot: None,
        };
        s.take_snapshot(model, dataset, theta_snap)?;
        Ok(s)
    }

    fn take_snapshot(&mut self, model: &ModelSpec, dataset: &Dataset, theta: &ParamVector) -> Result<()> {
        let all: Vec<usize> = (0..dataset.len()).collect();
        let full = mean_grad(model, theta, dataset, &all)?;
        self.snapshot = Some((theta.clone(), full));
        Ok(())
    }

    pub fn snapshot(&self) -> Option<&ParamVector> {
        self.snapshot.as_ref().map(|(s, _)| s)
    }
}

/// Per-example stored gradients `g_i`, one row per dataset example, with a
/// running row sum.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    n: usize,
    dim: usize,
    rows: Vec<f64>,
    sum: Vec64,
}

impl GradientTable {
    /// Zero-initialised table; fails if it would exceed `cap_bytes`.
    pub fn new(n: usize, dim: usize, cap_bytes: u64) -> Result<Self> {
        let needed = n as u128 * dim as u128 * std::mem::size_of::<f64>() as u128;
        if needed > u128::from(cap_bytes) {
            return Err(Error::MemoryCap {
                needed,
                cap: u128::from(cap_bytes),
            });
        }
        Ok(GradientTable {
            n,
            dim,
            rows: vec![0.0; n * dim],
            sum: Vec64::zeros(dim),
        })
    }

    pub fn from_rows(rows: &[Vec64]) -> Result<Self> {
        let dim = rows.first().ok_or(Error::EmptyInput("gradient table"))?.len();
        let mut table = GradientTable::new(rows.len(), dim, u64::MAX)?;
        for (i, r) in rows.iter().enumerate() {
            crate::tensor::ensure_len("gradient table row", dim, r.len())?;
            table.rows[i * dim..(i + 1) * dim].copy_from_slice(r.as_slice());
        }
        let mut sum = Vec64::zeros(dim);
        for r in rows {
            sum.axpy_in_place(1.0, r)?;
        }
        table.sum = sum;
        Ok(table)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mean(&self) -> Vec64 {
        self.sum.scale(1.0 / self.n as f64)
    }

    fn set_row(&mut self, i: usize, value: &Vec64) {
        let row = &mut self.rows[i * self.dim..(i + 1) * self.dim];
        for ((r, s), v) in row.iter_mut().zip(self.sum.as_mut_slice()).zip(value.as_slice()) {
            *s += v - *r;
            *r = *v;
        }
    }
}

/// Optimizer memory: snapshots, tables and accumulators, owned by one
/// trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlVariateState {
    Stateless,
    Momentum { prev_delta: Vec64 },
    Svrg(SvrgState),
    Table(GradientTable),
    Sdrg(SnapshotMomentum),
}

impl ControlVariateState {
    pub fn for_config(
        config: &OptimizerConfig,
        model: &ModelSpec,
        dataset: &Dataset,
        theta0: &ParamVector,
    ) -> Result<Self> {
        Ok(match config.kind {
            OptimizerKind::Sgd | OptimizerKind::IwSgd => ControlVariateState::Stateless,
            OptimizerKind::Momentum => ControlVariateState::Momentum {
                prev_delta: Vec64::zeros(theta0.len()),
            },
            OptimizerKind::Svrg => ControlVariateState::Svrg(SvrgState::new(config.snapshot_period)),
            OptimizerKind::Saga | OptimizerKind::Sag => ControlVariateState::Table(GradientTable::new(
                dataset.len(),
                model.param_len(),
                config.table_memory_cap_bytes,
            )?),
            OptimizerKind::Sdrg => ControlVariateState::Sdrg(SnapshotMomentum::new(
                theta0,
                dataset.num_classes(),
                config,
            )),
        })
    }
}

/// The generic control-variate step for SVRG, SAGA and SAG.
///
/// With `a` the batch mean gradient at `theta`, `b` the batch mean of the
/// control variates and `e` their expectation:
/// SVRG and SAGA return `(a - b) + e`, SAG returns `(a - b) / n + e`.
/// SVRG refreshes its snapshot when `t mod m == 0`, before forming delta.
/// SAGA/SAG overwrite the table rows of the sampled examples afterwards.
pub fn step_generic_cv(
    model: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    batch: &MiniBatch,
    schedule: CvSchedule,
    state: &mut ControlVariateState,
) -> Result<GradEstimate> {
    require_nonempty(batch)?;
    let t = batch.iteration;
    match (schedule, state) {
        (CvSchedule::Svrg, ControlVariateState::Svrg(svrg)) => {
            if t.is_multiple_of(svrg.period) {
                svrg.take_snapshot(model, dataset, theta)?;
            }
            let (snap, full) = svrg
                .snapshot
                .as_ref()
                .ok_or_else(|| Error::State(format!("svrg snapshot missing at iteration {t}")))?;
            let current = mean_grad(model, theta, dataset, &batch.indices)?;
            let control = mean_grad(model, snap, dataset, &batch.indices)?;
            let delta = current.sub(&control)?.add(full)?;
            finish(delta, batch, None)
        }
        (CvSchedule::Saga | CvSchedule::Sag, ControlVariateState::Table(table)) => {
            if table.n != dataset.len() || table.dim != theta.len() {
                return Err(Error::State(format!(
                    "gradient table is {}x{}, problem is {}x{}",
                    table.n,
                    table.dim,
                    dataset.len(),
                    theta.len()
                )));
            }
            let grads = batch
                .indices
                .iter()
                .map(|&i| model.grad(theta, dataset.example(i)))
                .collect::<Result<Vec<_>>>()?;
            let current = reduce_mean(&grads)?;
            let mut stored = Vec64::zeros(theta.len());
            for &i in &batch.indices {
                for (s, r) in stored.as_mut_slice().iter_mut().zip(table.row(i)) {
                    *s += r;
                }
            }
            let stored = stored.scale(1.0 / batch.len() as f64);
            let correction = current.sub(&stored)?;
            let correction = if schedule == CvSchedule::Sag {
                correction.scale(1.0 / table.n as f64)
            } else {
                correction
            };
            let delta = correction.add(&table.mean())?;
            for (&i, g) in batch.indices.iter().zip(&grads) {
                table.set_row(i, g);
            }
            finish(delta, batch, None)
        }
        (schedule, state) => Err(Error::State(format!(
            "{schedule:?} step needs matching state, found {}",
            match state {
                ControlVariateState::Stateless => "no state",
                ControlVariateState::Momentum { .. } => "momentum state",
                ControlVariateState::Svrg(_) => "svrg state",
                ControlVariateState::Table(_) => "gradient table",
                ControlVariateState::Sdrg(_) => "sdrg state",
            }
        ))),
    }
}

/// `alpha * w * grad - beta * (w * cv_sample - cv_expectation)`, evaluated
/// as `(alpha*w*grad - beta*w*cv_sample) + beta*cv_expectation`.
///
/// This is the weight-corrected, control-variate-augmented gradient of one
/// class (or one draw). It is unbiased when either `w` is the true density
/// ratio or `cv_sample` equals the gradient it stands in for.
pub fn weighted_cv_term(
    alpha: f64,
    beta: f64,
    weight: f64,
    grad: &Vec64,
    cv_sample: &Vec64,
    cv_expectation: &Vec64,
) -> Result<Vec64> {
    crate::tensor::ensure_len("weighted_cv_term", grad.len(), cv_sample.len())?;
    crate::tensor::ensure_len("weighted_cv_term", grad.len(), cv_expectation.len())?;
    let (a, b) = (alpha * weight, beta * weight);
    Ok(Vec64::new(
        grad.as_slice()
            .iter()
            .zip(cv_sample.as_slice())
            .zip(cv_expectation.as_slice())
            .map(|((g, s), e)| (a * g - b * s) + beta * e)
            .collect(),
    ))
}

/// A per-class control-variate model for [`step_sdrg`].
pub trait ClassControlVariates {
    /// Called once at the start of every step.
    fn begin_step(&mut self, theta: &ParamVector, t: usize) -> Result<()>;

    /// `(cv_sample, cv_expectation)` for class `c`, whose members in the
    /// batch are `members` with mean gradient `class_grad` at `theta`.
    fn class_pair(
        &mut self,
        model: &ModelSpec,
        dataset: &Dataset,
        c: usize,
        members: &[usize],
        class_grad: &Vec64,
    ) -> Result<(Vec64, Vec64)>;

    /// Called with the finished delta.
    fn end_step(&mut self, _delta: &Vec64) -> Result<()> {
        Ok(())
    }
}

/// The SDRG control variates: `g_i = grad_i(theta_c)` at a per-class
/// snapshot refreshed every `period` iterations, with a per-class momentum
/// accumulator `g_c <- eta * class_grad + gamma * g_c` as the expectation
/// term. Classes absent from a batch keep their accumulator untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMomentum {
    pub period: usize,
    pub gamma: f64,
    pub eta: f64,
    pub order: AccumulatorOrder,
    snapshots: Vec<ParamVector>,
    momentum: Vec<Vec64>,
}

impl SnapshotMomentum {
    /// Snapshots start at `theta0`, accumulators at zero.
    pub fn new(theta0: &ParamVector, num_classes: usize, config: &OptimizerConfig) -> Self {
        SnapshotMomentum {
            period: config.snapshot_period.max(1),
            gamma: config.momentum_gamma,
            eta: config.momentum_eta,
            order: config.accumulator_order,
            snapshots: vec![theta0.clone(); num_classes],
            momentum: vec![Vec64::zeros(theta0.len()); num_classes],
        }
    }

    pub fn snapshot(&self, c: usize) -> &ParamVector {
        &self.snapshots[c]
    }

    pub fn accumulator(&self, c: usize) -> &Vec64 {
        &self.momentum[c]
    }

    /// Never refresh snapshots from here on.
    pub fn freeze_snapshots(&mut self) {
        self.period = usize::MAX;
    }

    pub fn set_snapshot(&mut self, c: usize, theta: ParamVector) {
        self.snapshots[c] = theta;
    }

    pub fn set_accumulator(&mut self, c: usize, value: Vec64) {
        self.momentum[c] = value;
    }

    fn accumulate(&mut self, c: usize, class_grad: &Vec64) {
        let (eta, gamma) = (self.eta, self.gamma);
        for (m, g) in self.momentum[c].as_mut_slice().iter_mut().zip(class_grad.as_slice()) {
            *m = eta * g + gamma * *m;
        }
    }
}

impl ClassControlVariates for SnapshotMomentum {
    fn begin_step(&mut self, theta: &ParamVector, t: usize) -> Result<()> {
        if t.is_multiple_of(self.period) {
            for s in &mut self.snapshots {
                s.clone_from(theta);
            }
        }
        Ok(())
    }

    fn class_pair(
        &mut self,
        model: &ModelSpec,
        dataset: &Dataset,
        c: usize,
        members: &[usize],
        class_grad: &Vec64,
    ) -> Result<(Vec64, Vec64)> {
        let sample = mean_grad(model, &self.snapshots[c], dataset, members)?;
        let expectation = match self.order {
            AccumulatorOrder::BeforeStep => {
                self.accumulate(c, class_grad);
                self.momentum[c].clone()
            }
            AccumulatorOrder::AfterStep => {
                let old = self.momentum[c].clone();
                self.accumulate(c, class_grad);
                old
            }
        };
        Ok((sample, expectation))
    }
}

/// Control variates equal to a scaled copy of the previous delta, for both
/// the per-sample and the expectation term. With weight `eta` and scale
/// `gamma / (1 - eta)` the weighted control-variate step reproduces heavy-ball
/// momentum exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledPreviousDelta {
    pub scale: f64,
    prev: Vec64,
}

impl ScaledPreviousDelta {
    pub fn new(dim: usize, scale: f64) -> Self {
        ScaledPreviousDelta {
            scale,
            prev: Vec64::zeros(dim),
        }
    }

    pub fn for_momentum(dim: usize, gamma: f64, eta: f64) -> Self {
        Self::new(dim, gamma / (1.0 - eta))
    }
}

impl ClassControlVariates for ScaledPreviousDelta {
    fn begin_step(&mut self, _theta: &ParamVector, _t: usize) -> Result<()> {
        Ok(())
    }

    fn class_pair(
        &mut self,
        _model: &ModelSpec,
        _dataset: &Dataset,
        _c: usize,
        _members: &[usize],
        _class_grad: &Vec64,
    ) -> Result<(Vec64, Vec64)> {
        let cv = self.prev.scale(self.scale);
        Ok((cv.clone(), cv))
    }

    fn end_step(&mut self, delta: &Vec64) -> Result<()> {
        self.prev.clone_from(delta);
        Ok(())
    }
}

/// Stochastic doubly robust gradient.
///
/// For each class `c` present in the batch,
/// `term_c = alpha * w_c * grad_c(theta) - beta * (w_c * cv_sample_c - cv_expectation_c)`
/// and `delta` is the mean of `term_c` over the present classes. Absent
/// classes contribute nothing.
#[allow(clippy::too_many_arguments)]
pub fn step_sdrg(
    model: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    batch: &MiniBatch,
    weights: &ClassWeights,
    control: &mut dyn ClassControlVariates,
    alpha: f64,
    beta: f64,
) -> Result<GradEstimate> {
    require_nonempty(batch)?;
    control.begin_step(theta, batch.iteration)?;
    let mut sum = Vec64::zeros(theta.len());
    let mut terms = Vec::new();
    for (c, members) in batch.nonempty_classes() {
        let w = weights.require(c)?;
        let grad = mean_grad(model, theta, dataset, members)?;
        let (sample, expectation) = control.class_pair(model, dataset, c, members, &grad)?;
        let term = weighted_cv_term(alpha, beta, w, &grad, &sample, &expectation)?;
        sum.axpy_in_place(1.0, &term)?;
        terms.push((c, term));
    }
    let delta = sum.scale(1.0 / terms.len() as f64);
    control.end_step(&delta)?;
    finish(delta, batch, Some(terms))
}

/// Heavy-ball momentum: `delta = eta * grad + gamma * prev_delta`, applied
/// with learning rate 1.
pub fn step_momentum(
    model: &ModelSpec,
    theta: &ParamVector,
    dataset: &Dataset,
    batch: &MiniBatch,
    prev_delta: &Vec64,
    config: &OptimizerConfig,
) -> Result<GradEstimate> {
    require_nonempty(batch)?;
    let grad = mean_grad(model, theta, dataset, &batch.indices)?;
    crate::tensor::ensure_len("momentum history", grad.len(), prev_delta.len())?;
    let (eta, gamma) = (config.momentum_eta, config.momentum_gamma);
    let delta = Vec64::new(
        grad.as_slice()
            .iter()
            .zip(prev_delta.as_slice())
            .map(|(g, p)| eta * g + gamma * p)
            .collect(),
    );
    finish(delta, batch, None)
}

/// `theta - lr * delta`; a non-finite result is reported with the
/// iteration of the estimate.
pub fn apply_update(theta: &ParamVector, estimate: &GradEstimate, lr: f64) -> Result<ParamVector> {
    crate::tensor::ensure_len("apply_update", theta.len(), estimate.delta.len())?;
    let next = Vec64::new(
        theta
            .theta
            .as_slice()
            .iter()
            .zip(estimate.delta.as_slice())
            .map(|(t, d)| t - lr * d)
            .collect(),
    );
    if !next.is_finite() {
        return Err(Error::NonFinite {
            context: "parameter update",
            iteration: Some(estimate.batch.iteration),
        });
    }
    theta.with_theta(next)
}

/// A configured optimizer with its state, stepping one trajectory.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: ControlVariateState,
}

impl Optimizer {
    pub fn new(
        config: OptimizerConfig,
        model: &ModelSpec,
        dataset: &Dataset,
        theta0: &ParamVector,
    ) -> Result<Self> {
        config.validate()?;
        let state = ControlVariateState::for_config(&config, model, dataset, theta0)?;
        Ok(Optimizer { config, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &ControlVariateState {
        &self.state
    }

    /// Computes the update direction for `batch`. `weights` is consulted
    /// by the weighted estimators only.
    pub fn step(
        &mut self,
        model: &ModelSpec,
        dataset: &Dataset,
        theta: &ParamVector,
        batch: &MiniBatch,
        weights: &ClassWeights,
    ) -> Result<GradEstimate> {
        let cfg = &self.config;
        match cfg.kind {
            OptimizerKind::Sgd => step_sgd(model, theta, dataset, batch),
            OptimizerKind::IwSgd => step_iw_sgd(model, theta, dataset, batch, weights),
            OptimizerKind::Momentum => {
                let ControlVariateState::Momentum { prev_delta } = &mut self.state else {
                    return Err(Error::State("momentum history missing".into()));
                };
                let est = step_momentum(model, theta, dataset, batch, prev_delta, cfg)?;
                prev_delta.clone_from(&est.delta);
                Ok(est)
            }
            OptimizerKind::Svrg => {
                step_generic_cv(model, theta, dataset, batch, CvSchedule::Svrg, &mut self.state)
            }
            OptimizerKind::Saga => {
                step_generic_cv(model, theta, dataset, batch, CvSchedule::Saga, &mut self.state)
            }
            OptimizerKind::Sag => {
                step_generic_cv(model, theta, dataset, batch, CvSchedule::Sag, &mut self.state)
            }
            OptimizerKind::Sdrg => {
                let ControlVariateState::Sdrg(cv) = &mut self.state else {
                    return Err(Error::State("sdrg control variates missing".into()));
                };
                step_sdrg(model, theta, dataset, batch, weights, cv, cfg.alpha, cfg.beta)
            }
        }
    }

    /// Step and update in one go.
    pub fn advance(
        &mut self,
        model: &ModelSpec,
        dataset: &Dataset,
        theta: &ParamVector,
        batch: &MiniBatch,
        weights: &ClassWeights,
    ) -> Result<(ParamVector, GradEstimate)> {
        let est = self.step(model, dataset, theta, batch, weights)?;
        let next = apply_update(theta, &est, self.config.effective_lr())?;
        Ok((next, est))
    }
}
