//! Differentiable per-example losses `f_i(theta)` with closed-form gradients.
//!
//! Three model families share one [`ModelSpec`]:
//!
//! * `SoftmaxLinear`: multinomial logistic regression, cross-entropy loss.
//! * `Mlp1Hidden`: one fully connected ReLU hidden layer, softmax output,
//!   cross-entropy loss.
//! * `Quadratic`: `f_i(theta) = 0.5 * ||theta - a_i||^2` where the centre
//!   `a_i` is stored as the example's features. Used by the oracle fixtures,
//!   where expectations have closed forms.
//!
//! Parameters are one flat vector; [`Layout`] records where each weight
//! matrix and bias lives and is a pure function of the spec.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ensure_len, matvec_into, nonzero_indices, Vec64};

/// One labelled training instance. `index` is its position in the owning
/// dataset and keys per-example optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec64,
    pub label: usize,
    pub index: usize,
}

impl Example {
    pub fn new(features: Vec64, label: usize, index: usize) -> Self {
        Example {
            features,
            label,
            index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SoftmaxLinear,
    #[serde(rename = "mlp_1hidden")]
    Mlp1Hidden,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Ignored unless `kind` is `Mlp1Hidden`.
    pub hidden_dim: usize,
    pub num_classes: usize,
}

/// A contiguous region of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub name: &'static str,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub is_bias: bool,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    blocks: Vec<Block>,
}

impl Layout {
    fn from_shapes(shapes: &[(&'static str, usize, usize, bool)]) -> Self {
        let mut offset = 0;
        let blocks = shapes
            .iter()
            .map(|&(name, rows, cols, is_bias)| {
                let b = Block {
                    name,
                    offset,
                    rows,
                    cols,
                    is_bias,
                };
                offset += rows * cols;
                b
            })
            .collect();
        Layout { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn total_len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.offset + b.len())
    }
}

/// Flat parameter vector together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub theta: Vec64,
    layout: Layout,
}

impl ParamVector {
    pub fn new(spec: &ModelSpec, theta: Vec64) -> Result<Self> {
        let layout = spec.layout();
        ensure_len("ParamVector::new", layout.total_len(), theta.len())?;
        Ok(ParamVector { theta, layout })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        let layout = spec.layout();
        ParamVector {
            theta: Vec64::zeros(layout.total_len()),
            layout,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .block(name)
            .map(|b| &self.theta.as_slice()[b.range()])
    }

    /// Same layout, different values.
    pub fn with_theta(&self, theta: Vec64) -> Result<Self> {
        ensure_len("ParamVector::with_theta", self.len(), theta.len())?;
        Ok(ParamVector {
            theta,
            layout: self.layout.clone(),
        })
    }
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let spec = ModelSpec {
            kind,
            input_dim,
            hidden_dim,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn softmax_linear(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::SoftmaxLinear, input_dim, 0, num_classes)
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Mlp1Hidden, input_dim, hidden_dim, num_classes)
    }

    pub fn quadratic(dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Quadratic, dim, 0, num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.kind == ModelKind::Mlp1Hidden && self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive for mlp_1hidden".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        match self.kind {
            ModelKind::SoftmaxLinear => {
                Layout::from_shapes(&[("weight", c, d, false), ("bias", c, 1, true)])
            }
            ModelKind::Mlp1Hidden => Layout::from_shapes(&[
                ("hidden.weight", h, d, false),
                ("hidden.bias", h, 1, true),
                ("output.weight", c, h, false),
                ("output.bias", c, 1, true),
            ]),
            ModelKind::Quadratic => Layout::from_shapes(&[("center", d, 1, false)]),
        }
    }

    pub fn param_len(&self) -> usize {
        self.layout().total_len()
    }

    /// Uniform weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamVector::zeros(self);
        let theta = params.theta.as_mut_slice();
        for block in params.layout.blocks.iter().filter(|b| !b.is_bias) {
            let bound = 1.0 / (block.cols as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut theta[block.range()] {
                *w = dist.sample(&mut rng);
            }
        }
        params
    }

    fn check_example(&self, theta: &[f64], ex: &Example) -> Result<()> {
        ensure_len("model parameters", self.param_len(), theta.len())?;
        ensure_len("example features", self.input_dim, ex.features.len())?;
        if self.kind != ModelKind::Quadratic && ex.label >= self.num_classes {
            return Err(Error::Data(format!(
                "label {} out of range for {} classes",
                ex.label, self.num_classes
            )));
        }
        Ok(())
    }

    /// Per-example loss: cross-entropy for the classifiers, half squared
    /// distance for the quadratic family.
    pub fn loss(&self, theta: &ParamVector, ex: &Example) -> Result<f64> {
        self.loss_raw(theta.theta.as_slice(), ex)
    }

    pub(crate) fn loss_raw(&self, theta: &[f64], ex: &Example) -> Result<f64> {
        self.check_example(theta, ex)?;
        let value = match self.kind {
            ModelKind::Quadratic => {
                0.5 * theta
                    .iter()
                    .zip(ex.features.as_slice())
                    .fold(0.0, |acc, (t, a)| acc + (t - a) * (t - a))
            }
            _ => {
                let fwd = self.forward(theta, ex.features.as_slice());
                cross_entropy(&fwd.logits, ex.label)
            }
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite {
                context: "loss",
                iteration: None,
            })
        }
    }

    /// Exact gradient of [`ModelSpec::loss`], laid out like `theta`.
    pub fn grad(&self, theta: &ParamVector, ex: &Example) -> Result<Vec64> {
        let mut out = Vec64::zeros(theta.len());
        self.grad_into(theta.theta.as_slice(), ex, out.as_mut_slice())?;
        out.check_finite("grad")?;
        Ok(out)
    }

    /// Mean gradient over `exs`, accumulated in list order.
    ///
    /// Bitwise equal to `reduce_mean` of the individual gradients.
    pub fn grad_batch(&self, theta: &ParamVector, exs: &[&Example]) -> Result<Vec64> {
        self.grad_mean_raw(theta.theta.as_slice(), exs.iter().copied())
    }

    pub(crate) fn grad_mean_raw<'a>(
        &self,
        theta: &[f64],
        exs: impl IntoIterator<Item = &'a Example>,
    ) -> Result<Vec64> {
        let mut sum = Vec64::zeros(theta.len());
        let mut count = 0usize;
        for ex in exs {
            self.grad_into(theta, ex, sum.as_mut_slice())?;
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyInput("grad_batch"));
        }
        let k = count as f64;
        for s in sum.as_mut_slice() {
            *s /= k;
        }
        sum.check_finite("grad_batch")?;
        Ok(sum)
    }

    /// Adds the gradient of example `ex` at `theta` into `out`.
    ///
    /// Every gradient entry is formed as a single product before being
    /// added, so accumulating here matches computing the gradient and
    /// summing afterwards.
    pub(crate) fn grad_into(&self, theta: &[f64], ex: &Example, out: &mut [f64]) -> Result<()> {
        self.check_example(theta, ex)?;
        ensure_len("gradient buffer", theta.len(), out.len())?;
        let x = ex.features.as_slice();
        match self.kind {
            ModelKind::Quadratic => {
                for ((o, t), a) in out.iter_mut().zip(theta).zip(x) {
                    *o += t - a;
                }
            }
            ModelKind::SoftmaxLinear => {
                let (d, c) = (self.input_dim, self.num_classes);
                let fwd = self.forward(theta, x);
                let dlogits = softmax_minus_onehot(&fwd.logits, ex.label);
                let nz = nonzero_indices(x);
                let (w, b) = out.split_at_mut(c * d);
                for (k, &g) in dlogits.iter().enumerate() {
                    outer_row_add(&mut w[k * d..(k + 1) * d], g, x, &nz);
                    b[k] += g;
                }
            }
            ModelKind::Mlp1Hidden => {
                let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
                let fwd = self.forward(theta, x);
                let dlogits = softmax_minus_onehot(&fwd.logits, ex.label);
                let w2 = &theta[h * d + h..h * d + h + c * h];
                let nz_x = nonzero_indices(x);
                let nz_hidden = nonzero_indices(&fwd.hidden);

                let (gw1, rest) = out.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                for (k, &g) in dlogits.iter().enumerate() {
                    outer_row_add(&mut gw2[k * h..(k + 1) * h], g, &fwd.hidden, &nz_hidden);
                    gb2[k] += g;
                }
                for j in 0..h {
                    if fwd.pre[j] <= 0.0 {
                        continue;
                    }
                    let mut dz = 0.0;
                    for (k, &g) in dlogits.iter().enumerate() {
                        dz += w2[k * h + j] * g;
                    }
                    outer_row_add(&mut gw1[j * d..(j + 1) * d], dz, x, &nz_x);
                    gb1[j] += dz;
                }
            }
        }
        Ok(())
    }

    /// Class with the largest logit (ties go to the lowest index).
    pub fn predict(&self, theta: &ParamVector, features: &Vec64) -> Result<usize> {
        ensure_len("model parameters", self.param_len(), theta.len())?;
        ensure_len("example features", self.input_dim, features.len())?;
        if self.kind == ModelKind::Quadratic {
            return Err(Error::Config("quadratic models do not classify".into()));
        }
        let fwd = self.forward(theta.theta.as_slice(), features.as_slice());
        Ok(argmax(&fwd.logits))
    }

    /// Smallest |pre-activation| of the hidden layer; `None` for models
    /// without one. Finite-difference checks stay away from ReLU kinks.
    pub fn min_abs_preactivation(&self, theta: &ParamVector, ex: &Example) -> Option<f64> {
        if self.kind != ModelKind::Mlp1Hidden {
            return None;
        }
        let fwd = self.forward(theta.theta.as_slice(), ex.features.as_slice());
        fwd.pre.iter().map(|z| z.abs()).reduce(f64::min)
    }

    /// Max over coordinates of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`
    /// where `numeric` is the central difference with step `h`.
    pub fn fd_check(&self, theta: &ParamVector, ex: &Example, h: f64) -> Result<f64> {
        if h.is_nan() || h <= 0.0 {
            return Err(Error::Precondition(format!("fd step must be positive, got {h}")));
        }
        let analytic = self.grad(theta, ex)?;
        let mut probe = theta.theta.as_slice().to_vec();
        let mut worst = 0.0f64;
        for j in 0..probe.len() {
            let orig = probe[j];
            probe[j] = orig + h;
            let up = self.loss_raw(&probe, ex)?;
            probe[j] = orig - h;
            let down = self.loss_raw(&probe, ex)?;
            probe[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[j];
            let denom = a.abs().max(numeric.abs()).max(FD_REL_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
        Ok(worst)
    }

    fn forward(&self, theta: &[f64], x: &[f64]) -> Forward {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        match self.kind {
            ModelKind::SoftmaxLinear => {
                let mut logits = vec![0.0; c];
                matvec_into(&theta[..c * d], c, d, x, &mut logits);
                for (l, b) in logits.iter_mut().zip(&theta[c * d..c * d + c]) {
                    *l += b;
                }
                Forward {
                    pre: Vec::new(),
                    hidden: Vec::new(),
                    logits,
                }
            }
            ModelKind::Mlp1Hidden => {
                let mut pre = vec![0.0; h];
                matvec_into(&theta[..h * d], h, d, x, &mut pre);
                for (z, b) in pre.iter_mut().zip(&theta[h * d..h * d + h]) {
                    *z += b;
                }
                let hidden: Vec<f64> = pre.iter().map(|&z| if z < 0.0 { 0.0 } else { z }).collect();
                let off = h * d + h;
                let mut logits = vec![0.0; c];
                matvec_into(&theta[off..off + c * h], c, h, &hidden, &mut logits);
                for (l, b) in logits.iter_mut().zip(&theta[off + c * h..off + c * h + c]) {
                    *l += b;
                }
                Forward {
                    pre,
                    hidden,
                    logits,
                }
            }
            ModelKind::Quadratic => unreachable!("quadratic model has no forward pass"),
        }
    }
}

const FD_REL_FLOOR: f64 = 1e-3;

struct Forward {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

/// `row[i] += scale * x[i]` over the nonzero positions `nz` of `x`.
fn outer_row_add(row: &mut [f64], scale: f64, x: &[f64], nz: &[usize]) {
    for &i in nz {
        row[i] += scale * x[i];
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}

/// `-log softmax(logits)[label]` with max subtraction.
fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum = logits.iter().fold(0.0, |acc, l| acc + (l - m).exp());
    (m + sum.ln()) - logits[label]
}

fn softmax_minus_onehot(logits: &[f64], label: usize) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let sum = exps.iter().fold(0.0, |acc, e| acc + e);
    let mut g: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    g[label] -= 1.0;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::reduce_mean;
    use rand::Rng;

    fn random_example(rng: &mut ChaCha8Rng, dim: usize, classes: usize, index: usize) -> Example {
        let f: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        Example::new(Vec64::new(f), rng.random_range(0..classes), index)
    }

    /// Scalar re-implementation of the MLP forward pass, written from the
    /// layer definitions without sharing code with `ModelSpec::forward`.
    fn reference_mlp_loss(spec: &ModelSpec, theta: &[f64], ex: &Example) -> f64 {
        let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
        let w1 = |j: usize, i: usize| theta[j * d + i];
        let b1 = |j: usize| theta[h * d + j];
        let w2 = |k: usize, j: usize| theta[h * d + h + k * h + j];
        let b2 = |k: usize| theta[h * d + h + c * h + k];
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let z: f64 = (0..d).map(|i| w1(j, i) * ex.features[i]).sum::<f64>() + b1(j);
                z.max(0.0)
            })
            .collect();
        let logits: Vec<f64> = (0..c)
            .map(|k| (0..h).map(|j| w2(k, j) * hidden[j]).sum::<f64>() + b2(k))
            .collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        -(logits[ex.label].exp() / z).ln()
    }

    #[test]
    fn zero_weights_give_log_c() {
        let spec = ModelSpec::softmax_linear(4, 10).unwrap();
        let theta = ParamVector::zeros(&spec);
        let ex = Example::new(Vec64::new(vec![0.3, 0.1, 0.9, 0.0]), 7, 0);
        let l = spec.loss(&theta, &ex).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class_has_tiny_loss() {
        let spec = ModelSpec::softmax_linear(1, 2).unwrap();
        // logits = W x + b with x = [1]: (+20, -20)
        let theta = ParamVector::new(&spec, Vec64::new(vec![10.0, -10.0, 10.0, -10.0])).unwrap();
        let ex = Example::new(Vec64::new(vec![1.0]), 0, 0);
        assert!(spec.loss(&theta, &ex).unwrap() < 1e-8);
    }

    #[test]
    fn mlp_loss_matches_scalar_reference() {
        let spec = ModelSpec::mlp(6, 4, 3).unwrap();
        let theta = spec.init_params(42);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..10 {
            let ex = random_example(&mut rng, 6, 3, i);
            let fast = spec.loss(&theta, &ex).unwrap();
            let slow = reference_mlp_loss(&spec, theta.theta.as_slice(), &ex);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn bias_gradient_at_zero_weights() {
        let spec = ModelSpec::softmax_linear(5, 10).unwrap();
        let theta = ParamVector::zeros(&spec);
        let ex = Example::new(Vec64::new(vec![0.2; 5]), 3, 0);
        let g = spec.grad(&theta, &ex).unwrap();
        let range = spec.layout().block("bias").unwrap().range();
        for (k, v) in g.as_slice()[range].iter().enumerate() {
            let expected = if k == 3 { -0.9 } else { 0.1 };
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_is_deterministic() {
        let spec = ModelSpec::mlp(8, 5, 3).unwrap();
        let theta = spec.init_params(1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ex = random_example(&mut rng, 8, 3, 0);
        let a = spec.grad(&theta, &ex).unwrap();
        let b = spec.grad(&theta, &ex).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn grad_batch_matches_reduce_mean_bitwise() {
        let spec = ModelSpec::mlp(12, 6, 4).unwrap();
        let theta = spec.init_params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exs: Vec<Example> = (0..20).map(|i| random_example(&mut rng, 12, 4, i)).collect();
        let refs: Vec<&Example> = exs.iter().collect();
        let batch = spec.grad_batch(&theta, &refs).unwrap();
        let singles: Vec<Vec64> = exs.iter().map(|e| spec.grad(&theta, e).unwrap()).collect();
        let mean = reduce_mean(&singles).unwrap();
        assert!(batch.as_slice().iter().zip(mean.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));

        let one = spec.grad_batch(&theta, &refs[..1]).unwrap();
        assert_eq!(one, singles[0]);
        let dup = spec.grad_batch(&theta, &[refs[2], refs[2]]).unwrap();
        assert_eq!(dup, singles[2]);
        assert!(matches!(spec.grad_batch(&theta, &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn fd_check_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let soft = ModelSpec::softmax_linear(6, 4).unwrap();
        let ex = random_example(&mut rng, 6, 4, 0);
        assert!(soft.fd_check(&soft.init_params(42), &ex, 1e-5).unwrap() < 1e-5);
        assert!(soft.fd_check(&ParamVector::zeros(&soft), &ex, 1e-5).unwrap() < 1e-7);

        let mlp = ModelSpec::mlp(10, 5, 3).unwrap();
        let theta = mlp.init_params(7);
        let ex = loop {
            let ex = random_example(&mut rng, 10, 3, 0);
            if mlp.min_abs_preactivation(&theta, &ex).unwrap() > 1e-4 {
                break ex;
            }
        };
        assert!(mlp.fd_check(&theta, &ex, 1e-5).unwrap() < 1e-4);

        let quad = ModelSpec::quadratic(3, 2).unwrap();
        let ex = Example::new(Vec64::new(vec![1.0, -2.0, 0.5]), 1, 0);
        assert!(quad.fd_check(&quad.init_params(3), &ex, 1e-5).unwrap() < 1e-7);
        assert!(quad.fd_check(&quad.init_params(3), &ex, 0.0).is_err());
    }

    #[test]
    fn init_params_is_seeded() {
        let spec = ModelSpec::mlp(20, 7, 3).unwrap();
        let a = spec.init_params(0);
        assert_eq!(a, spec.init_params(0));
        assert_ne!(a, spec.init_params(1));
        for block in a.layout().blocks() {
            let vals = &a.theta.as_slice()[block.range()];
            if block.is_bias {
                assert!(vals.iter().all(|v| *v == 0.0));
            } else {
                let bound = 1.0 / (block.cols as f64).sqrt();
                assert!(vals.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn loss_is_nonnegative_and_errors_on_bad_input() {
        let spec = ModelSpec::mlp(4, 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for s in 0..20 {
            let theta = spec.init_params(s);
            let ex = random_example(&mut rng, 4, 3, 0);
            assert!(spec.loss(&theta, &ex).unwrap() >= 0.0);
        }
        let theta = spec.init_params(0);
        let bad_label = Example::new(Vec64::new(vec![0.0; 4]), 3, 0);
        assert!(spec.loss(&theta, &bad_label).is_err());
        let bad_dim = Example::new(Vec64::new(vec![0.0; 5]), 0, 0);
        assert!(matches!(spec.loss(&theta, &bad_dim), Err(Error::Dimension { .. })));
        let mut huge = theta.clone();
        huge.theta[0] = f64::NAN;
        let ex = Example::new(Vec64::new(vec![1.0; 4]), 0, 0);
        assert!(matches!(spec.loss(&huge, &ex), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::softmax_linear(3, 1).is_err());
        assert!(ModelSpec::mlp(3, 0, 2).is_err());
        assert!(ModelSpec::quadratic(0, 2).is_err());
        let spec = ModelSpec::mlp(784, 100, 10).unwrap();
        assert_eq!(spec.param_len(), 784 * 100 + 100 + 100 * 10 + 10);
    }
}
