//! Doubly robust control-variate SGD under class-skewed sampling.

pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod oracle;
pub mod sampling;
pub mod tensor;

pub use data::Dataset;
pub use error::{Error, Result};
pub use model::{Example, ModelKind, ModelSpec, ParamVector};
pub use optim::{GradEstimate, Optimizer, OptimizerConfig, OptimizerKind};
pub use sampling::{ClassDist, ClassWeights, MiniBatch, SkewSchedule, WeightMode};
pub use tensor::{Mat64, Vec64};
