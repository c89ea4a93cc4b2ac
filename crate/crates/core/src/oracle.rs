//! Exact expectations and variances of gradient estimators by brute-force
//! enumeration of the sample space on small problems.
//!
//! A draw picks a class `c` with probability `q_c` and then an example of
//! that class uniformly, so example `i` of class `c` has probability
//! `q_c / |c|`. A batch of size `k` is `k` independent draws; all `n^k`
//! ordered sequences are enumerated.
//!
//! The reference gradient is the `p`-weighted full gradient
//! `sum_c p_c * mean_{i in c} grad_i(theta)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::optim::{
    self, step_generic_cv, step_iw_sgd, step_sdrg, step_sgd, ClassControlVariates, ControlVariateState,
    CvSchedule, GradientTable, OptimizerConfig, OptimizerKind, ScaledPreviousDelta, SnapshotMomentum,
    SvrgState,
};
use crate::sampling::{perturbation_factors, ClassDist, ClassWeights, MiniBatch};
use crate::tensor::Vec64;

/// Largest number of outcomes any enumeration may visit.
pub const ENUMERATION_CAP: u128 = 10_000;

/// Largest dataset a toy problem may hold.
pub const MAX_TOY_EXAMPLES: usize = 12;

/// A small problem whose sample space can be enumerated exactly.
#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub model: ModelSpec,
    pub dataset: Dataset,
    /// Sampling distribution over classes.
    pub q: ClassDist,
    /// Target distribution over classes.
    pub p: ClassDist,
}

impl ToyProblem {
    pub fn new(model: ModelSpec, dataset: Dataset, q: ClassDist, p: ClassDist) -> Result<Self> {
        model.validate()?;
        let c = dataset.num_classes();
        if model.num_classes != c || q.num_classes() != c || p.num_classes() != c {
            return Err(Error::Consistency(format!(
                "toy problem class counts disagree: model {}, data {c}, q {}, p {}",
                model.num_classes,
                q.num_classes(),
                p.num_classes()
            )));
        }
        if dataset.len() > MAX_TOY_EXAMPLES {
            return Err(Error::Precondition(format!(
                "toy problems hold at most {MAX_TOY_EXAMPLES} examples, got {}",
                dataset.len()
            )));
        }
        if let Some(empty) = (0..c).find(|&k| dataset.class_indices(k).is_empty()) {
            return Err(Error::Precondition(format!("class {empty} of the toy problem has no examples")));
        }
        Ok(ToyProblem { model, dataset, q, p })
    }

    /// Quadratic losses `0.5 * ||theta - a_i||^2` with centres `a_i`.
    pub fn quadratic(centres: Vec<(Vec64, usize)>, num_classes: usize, q: ClassDist, p: ClassDist) -> Result<Self> {
        let dim = centres.first().ok_or(Error::EmptyInput("toy problem centres"))?.0.len();
        let model = ModelSpec::quadratic(dim, num_classes)?;
        let dataset = Dataset::new("toy-quadratic", num_classes, centres)?;
        ToyProblem::new(model, dataset, q, p)
    }

    pub fn with_q(&self, q: ClassDist) -> Result<Self> {
        ToyProblem::new(self.model, self.dataset.clone(), q, self.p.clone())
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.num_classes()
    }

    /// Probability that one draw returns example `i`.
    pub fn draw_prob(&self, i: usize) -> f64 {
        let c = self.dataset.example(i).label;
        self.q.prob(c) / self.dataset.class_indices(c).len() as f64
    }

    /// Every ordered sequence of `k` draws with nonzero probability.
    pub fn outcomes(&self, k: usize) -> Result<Vec<Outcome>> {
        if k == 0 {
            return Err(Error::EmptyInput("batch size"));
        }
        let n = self.dataset.len();
        let total = (n as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
        if total > ENUMERATION_CAP {
            return Err(Error::Size {
                outcomes: total,
                cap: ENUMERATION_CAP,
            });
        }
        let mut out = Vec::with_capacity(total as usize);
        let mut digits = vec![0usize; k];
        loop {
            let prob: f64 = digits.iter().map(|&i| self.draw_prob(i)).product();
            if prob > 0.0 {
                out.push(Outcome {
                    indices: digits.clone(),
                    prob,
                });
            }
            let mut pos = k;
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                digits[pos] += 1;
                if digits[pos] < n {
                    break;
                }
                digits[pos] = 0;
            }
        }
    }

    /// `sum_c p_c * mean_{i in c} grad_i(theta)`.
    pub fn reference_gradient(&self, theta: &ParamVector) -> Result<Vec64> {
        let mut g = Vec64::zeros(theta.len());
        for c in 0..self.num_classes() {
            let mean = optim::mean_grad(&self.model, theta, &self.dataset, self.dataset.class_indices(c))?;
            g.axpy_in_place(self.p.prob(c), &mean)?;
        }
        Ok(g)
    }

    /// Exact importance weights `p_c / q_c`.
    pub fn exact_weights(&self) -> Result<ClassWeights> {
        ClassWeights::ratio(&self.p, &self.q)
    }

    fn batch(&self, outcome: &Outcome) -> MiniBatch {
        // Iteration 1: never a snapshot-refresh step for frozen states.
        MiniBatch::new(&self.dataset, outcome.indices.clone(), 1)
    }
}

/// One enumerated sequence of draws and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub indices: Vec<usize>,
    pub prob: f64,
}

/// Exact moments of an estimator at one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorReport {
    pub exact_mean: Vec64,
    pub exact_variance_trace: f64,
    pub reference_gradient: Vec64,
    pub bias_norm: f64,
    pub outcomes: usize,
}

/// Estimators the oracle knows how to evaluate. Stateful estimators start
/// every outcome from a copy of the given state.
#[derive(Debug, Clone)]
pub enum Estimator {
    Sgd,
    IwSgd(ClassWeights),
    /// SVRG with a snapshot frozen at the given parameters.
    Svrg(ParamVector),
    Saga(GradientTable),
    Sag(GradientTable),
    /// Per-draw weighted control-variate estimator with fixed per-example
    /// control variates and their exact `p`-expectation.
    DoublyRobust {
        weights: ClassWeights,
        variates: Vec<Vec64>,
    },
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Sgd => "sgd",
            Estimator::IwSgd(_) => "iw_sgd",
            Estimator::Svrg(_) => "svrg",
            Estimator::Saga(_) => "saga",
            Estimator::Sag(_) => "sag",
            Estimator::DoublyRobust { .. } => "doubly_robust",
        }
    }

    /// The estimate for one batch.
    pub fn evaluate(&self, problem: &ToyProblem, theta: &ParamVector, batch: &MiniBatch) -> Result<Vec64> {
        let (model, data) = (&problem.model, &problem.dataset);
        let est = match self {
            Estimator::Sgd => step_sgd(model, theta, data, batch)?,
            Estimator::IwSgd(w) => step_iw_sgd(model, theta, data, batch, w)?,
            Estimator::Svrg(snap) => {
                let mut state = ControlVariateState::Svrg(SvrgState::frozen(model, data, snap)?);
                step_generic_cv(model, theta, data, batch, CvSchedule::Svrg, &mut state)?
            }
            Estimator::Saga(table) => {
                let mut state = ControlVariateState::Table(table.clone());
                step_generic_cv(model, theta, data, batch, CvSchedule::Saga, &mut state)?
            }
            Estimator::Sag(table) => {
                let mut state = ControlVariateState::Table(table.clone());
                step_generic_cv(model, theta, data, batch, CvSchedule::Sag, &mut state)?
            }
            Estimator::DoublyRobust { weights, variates } => {
                let mut cv = FixedVariates::new(problem, variates.clone())?;
                step_sdrg(model, theta, data, batch, weights, &mut cv, 1.0, 1.0)?
            }
        };
        Ok(est.delta)
    }
}

/// Per-example control variates `g_i` held fixed, with expectation term
/// `sum_c p_c * mean_{i in c} g_i`.
#[derive(Debug, Clone)]
pub struct FixedVariates {
    variates: Vec<Vec64>,
    expectation: Vec64,
}

impl FixedVariates {
    pub fn new(problem: &ToyProblem, variates: Vec<Vec64>) -> Result<Self> {
        crate::tensor::ensure_len("control variates", problem.dataset.len(), variates.len())?;
        let dim = problem.model.param_len();
        let mut expectation = Vec64::zeros(dim);
        for c in 0..problem.num_classes() {
            let members = problem.dataset.class_indices(c);
            let mut sum = Vec64::zeros(dim);
            for &i in members {
                sum.axpy_in_place(1.0, &variates[i])?;
            }
            expectation.axpy_in_place(problem.p.prob(c) / members.len() as f64, &sum)?;
        }
        Ok(FixedVariates { variates, expectation })
    }

    pub fn expectation(&self) -> &Vec64 {
        &self.expectation
    }
}

impl ClassControlVariates for FixedVariates {
    fn begin_step(&mut self, _theta: &ParamVector, _t: usize) -> Result<()> {
        Ok(())
    }

    fn class_pair(
        &mut self,
        _model: &ModelSpec,
        _dataset: &Dataset,
        _c: usize,
        members: &[usize],
        _class_grad: &Vec64,
    ) -> Result<(Vec64, Vec64)> {
        let mut sample = Vec64::zeros(self.expectation.len());
        for &i in members {
            sample.axpy_in_place(1.0, &self.variates[i])?;
        }
        Ok((sample.scale(1.0 / members.len() as f64), self.expectation.clone()))
    }
}

/// Exact mean and variance trace of `estimator` over all batches of size
/// `k`, compared against the reference gradient at `theta`.
pub fn enumerate_mean<F>(problem: &ToyProblem, theta: &ParamVector, k: usize, estimator: F) -> Result<EstimatorReport>
where
    F: Fn(&MiniBatch) -> Result<Vec64>,
{
    let outcomes = problem.outcomes(k)?;
    let values = outcomes
        .iter()
        .map(|o| estimator(&problem.batch(o)))
        .collect::<Result<Vec<_>>>()?;
    let reference = problem.reference_gradient(theta)?;
    let mut mean = Vec64::zeros(theta.len());
    for (o, v) in outcomes.iter().zip(&values) {
        mean.axpy_in_place(o.prob, v)?;
    }
    let mut variance = 0.0;
    for (o, v) in outcomes.iter().zip(&values) {
        variance += o.prob * v.sub(&mean)?.norm_sq();
    }
    let bias_norm = mean.sub(&reference)?.norm();
    Ok(EstimatorReport {
        exact_mean: mean,
        exact_variance_trace: variance,
        reference_gradient: reference,
        bias_norm,
        outcomes: outcomes.len(),
    })
}

/// [`enumerate_mean`] for a built-in estimator.
pub fn report(problem: &ToyProblem, theta: &ParamVector, k: usize, estimator: &Estimator) -> Result<EstimatorReport> {
    enumerate_mean(problem, theta, k, |b| estimator.evaluate(problem, theta, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Exact weights, arbitrary fixed control variates.
    WOkGBad,
    /// Perturbed weights, control variates equal to the current gradients.
    WBadGOk,
    /// Perturbed weights and arbitrary control variates.
    BothBad,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::WOkGBad, Scenario::WBadGOk, Scenario::BothBad];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::WOkGBad => "w_ok_g_bad",
            Scenario::WBadGOk => "w_bad_g_ok",
            Scenario::BothBad => "both_bad",
        }
    }
}

/// Seeded standard-normal control variates, one per example.
pub fn random_variates(problem: &ToyProblem, seed: u64) -> Vec<Vec64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = problem.model.param_len();
    (0..problem.dataset.len())
        .map(|_| Vec64::new((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()))
        .collect()
}

/// Exact weights times a per-class factor from [`perturbation_factors`].
pub fn perturbed_weights(problem: &ToyProblem, seed: u64) -> Result<ClassWeights> {
    let exact = problem.exact_weights()?;
    let f = perturbation_factors(problem.num_classes(), seed);
    Ok(ClassWeights(exact.0.iter().zip(&f).map(|(w, f)| w.map(|w| w * f)).collect()))
}

/// The doubly robust estimator under `scenario`, over single draws.
pub fn check_double_robustness(
    problem: &ToyProblem,
    theta: &ParamVector,
    scenario: Scenario,
    seed: u64,
) -> Result<EstimatorReport> {
    let current = || -> Result<Vec<Vec64>> {
        problem
            .dataset
            .examples()
            .iter()
            .map(|ex| problem.model.grad(theta, ex))
            .collect()
    };
    let (weights, variates) = match scenario {
        Scenario::WOkGBad => (problem.exact_weights()?, random_variates(problem, seed)),
        Scenario::WBadGOk => (perturbed_weights(problem, seed)?, current()?),
        Scenario::BothBad => (perturbed_weights(problem, seed)?, random_variates(problem, seed)),
    };
    report(problem, theta, 1, &Estimator::DoublyRobust { weights, variates })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceComparison {
    pub a: EstimatorReport,
    pub b: EstimatorReport,
    /// `a.exact_variance_trace - b.exact_variance_trace`.
    pub difference: f64,
}

/// Bias tolerance an estimator must meet before variances are compared.
pub const UNBIASED_TOL: f64 = 1e-10;

/// Exact variance traces of two estimators over batches of size `k`. Both
/// must be unbiased on the problem.
pub fn compare_variance(
    problem: &ToyProblem,
    theta: &ParamVector,
    k: usize,
    a: &Estimator,
    b: &Estimator,
) -> Result<VarianceComparison> {
    let ra = report(problem, theta, k, a)?;
    let rb = report(problem, theta, k, b)?;
    for (est, r) in [(a, &ra), (b, &rb)] {
        if r.bias_norm >= UNBIASED_TOL {
            return Err(Error::Precondition(format!(
                "estimator {} is biased (bias norm {:e})",
                est.name(),
                r.bias_norm
            )));
        }
    }
    let difference = ra.exact_variance_trace - rb.exact_variance_trace;
    Ok(VarianceComparison { a: ra, b: rb, difference })
}

/// Exact single-draw moments of the SAG delta with table `stale_table`.
pub fn check_sag_bias(problem: &ToyProblem, theta: &ParamVector, stale_table: &GradientTable) -> Result<EstimatorReport> {
    report(problem, theta, 1, &Estimator::Sag(stale_table.clone()))
}

/// Exact single-draw moments of the SAGA delta with table `table`.
pub fn check_saga_bias(problem: &ToyProblem, theta: &ParamVector, table: &GradientTable) -> Result<EstimatorReport> {
    report(problem, theta, 1, &Estimator::Saga(table.clone()))
}

/// Largest per-coordinate gap between a heavy-ball momentum trajectory and
/// the weighted control-variate step with weight `eta` and control variates
/// `gamma / (1 - eta)` times the previous delta, over `steps` single-example
/// steps drawn uniformly with `seed`.
pub fn momentum_trajectory_gap(
    problem: &ToyProblem,
    theta0: &ParamVector,
    eta: f64,
    gamma: f64,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    use rand::Rng;
    let mut cfg = OptimizerConfig::new(OptimizerKind::Momentum);
    cfg.momentum_eta = eta;
    cfg.momentum_gamma = gamma;
    cfg.validate()?;
    let (model, data) = (&problem.model, &problem.dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = Vec64::zeros(theta0.len());
    let mut cv = ScaledPreviousDelta::for_momentum(theta0.len(), gamma, eta);
    let weights = ClassWeights::constant(problem.num_classes(), eta);
    let (mut a, mut b) = (theta0.clone(), theta0.clone());
    let mut gap = 0.0f64;
    for t in 0..steps {
        let batch = MiniBatch::new(data, vec![rng.random_range(0..data.len())], t);
        let m = optim::step_momentum(model, &a, data, &batch, &prev, &cfg)?;
        prev.clone_from(&m.delta);
        a = optim::apply_update(&a, &m, 1.0)?;
        let s = step_sdrg(model, &b, data, &batch, &weights, &mut cv, 1.0, 1.0)?;
        b = optim::apply_update(&b, &s, 1.0)?;
        gap = gap.max(a.theta.max_abs_diff(&b.theta)?);
    }
    Ok(gap)
}

/// State of the per-class snapshot estimator at one iteration.
#[derive(Debug, Clone)]
pub struct SdrgFrozenState {
    pub snapshots: Vec<ParamVector>,
    pub accumulators: Vec<Vec64>,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub gamma: f64,
}

/// Exact moments of the SDRG delta (exact weights, frozen snapshots,
/// accumulator updated before the step) over batches of size `k`, and
/// for `k <= 2` the closed form `sum_c q_c * T_c` with
/// `T_c = (alpha*w_c + beta*eta) * M_c(theta) - beta*w_c * M_c(snap_c) + beta*gamma*acc_c`
/// where `M_c` is the class-mean gradient.
pub fn sdrg_expectation(
    problem: &ToyProblem,
    theta: &ParamVector,
    state: &SdrgFrozenState,
    k: usize,
) -> Result<(EstimatorReport, Vec64)> {
    let c_count = problem.num_classes();
    crate::tensor::ensure_len("sdrg snapshots", c_count, state.snapshots.len())?;
    crate::tensor::ensure_len("sdrg accumulators", c_count, state.accumulators.len())?;
    let mut cfg = OptimizerConfig::new(OptimizerKind::Sdrg);
    cfg.momentum_eta = state.eta;
    cfg.momentum_gamma = state.gamma;
    let mut base = SnapshotMomentum::new(theta, c_count, &cfg);
    base.freeze_snapshots();
    for c in 0..c_count {
        base.set_snapshot(c, state.snapshots[c].clone());
        base.set_accumulator(c, state.accumulators[c].clone());
    }
    let weights = problem.exact_weights()?;
    let (model, data) = (&problem.model, &problem.dataset);
    let r = enumerate_mean(problem, theta, k, |batch| {
        let mut cv = base.clone();
        Ok(step_sdrg(model, theta, data, batch, &weights, &mut cv, state.alpha, state.beta)?.delta)
    })?;
    let mut analytic = Vec64::zeros(theta.len());
    for c in 0..c_count {
        let q = problem.q.prob(c);
        if q == 0.0 {
            continue;
        }
        let w = weights.require(c)?;
        let members = data.class_indices(c);
        let now = optim::mean_grad(model, theta, data, members)?;
        let snap = optim::mean_grad(model, &state.snapshots[c], data, members)?;
        let mut t_c = now.scale(state.alpha * w + state.beta * state.eta);
        t_c.axpy_in_place(-state.beta * w, &snap)?;
        t_c.axpy_in_place(state.beta * state.gamma, &state.accumulators[c])?;
        analytic.axpy_in_place(q, &t_c)?;
    }
    Ok((r, analytic))
}

/// Shipped verification instances.
pub mod fixtures {
    use super::*;

    fn rows(points: &[([f64; 2], usize)]) -> Vec<(Vec64, usize)> {
        points.iter().map(|(a, c)| (Vec64::new(a.to_vec()), *c)).collect()
    }

    /// Five quadratic terms, one per class, sampled uniformly.
    pub fn five_point() -> ToyProblem {
        ToyProblem::quadratic(
            rows(&[
                ([1.0, 0.0], 0),
                ([0.0, 2.0], 1),
                ([-1.0, 1.0], 2),
                ([3.0, -1.0], 3),
                ([0.5, 0.5], 4),
            ]),
            5,
            ClassDist::uniform(5),
            ClassDist::uniform(5),
        )
        .expect("valid fixture")
    }

    /// Two classes of three quadratic terms with well-separated centres;
    /// `skew` is the sampling probability of class 0.
    pub fn two_class(skew: f64) -> ToyProblem {
        ToyProblem::quadratic(
            rows(&[
                ([2.0, 0.5], 0),
                ([3.0, -0.5], 0),
                ([2.5, 1.0], 0),
                ([-2.0, 0.0], 1),
                ([-1.0, 1.5], 1),
                ([-3.0, -1.0], 1),
            ]),
            2,
            ClassDist::new(vec![skew, 1.0 - skew]).expect("valid skew"),
            ClassDist::uniform(2),
        )
        .expect("valid fixture")
    }

    pub fn theta_for(problem: &ToyProblem, values: &[f64]) -> ParamVector {
        ParamVector::new(&problem.model, Vec64::new(values.to_vec())).expect("fixture dims")
    }

    /// The adversarial instance for the both-wrong case: the two-class
    /// problem under 0.8 skew, a parameter point, and the seed of the
    /// weight perturbation and control variates.
    pub fn both_bad() -> (ToyProblem, ParamVector, u64) {
        let problem = two_class(0.8);
        let theta = theta_for(&problem, &[0.25, -0.75]);
        (problem, theta, 17)
    }

    /// A small softmax-linear classification problem.
    pub fn softmax_toy(skew: f64) -> (ToyProblem, ParamVector) {
        let data = vec![
            (Vec64::new(vec![0.9, 0.1]), 0),
            (Vec64::new(vec![0.8, 0.3]), 0),
            (Vec64::new(vec![0.2, 0.7]), 1),
            (Vec64::new(vec![0.1, 0.9]), 1),
            (Vec64::new(vec![0.4, 0.4]), 1),
        ];
        let model = ModelSpec::softmax_linear(2, 2).expect("valid model");
        let dataset = Dataset::new("toy-softmax", 2, data).expect("valid data");
        let theta = model.init_params(5);
        let problem = ToyProblem::new(
            model,
            dataset,
            ClassDist::new(vec![skew, 1.0 - skew]).expect("valid skew"),
            ClassDist::uniform(2),
        )
        .expect("valid fixture");
        (problem, theta)
    }
}
