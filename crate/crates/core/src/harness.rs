//! Multi-seed training runs, CSV/JSON persistence and the verification
//! suite.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_idx, synth_blobs, Dataset};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec, ParamVector};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::sampling::{draw_batch, weights_for, ClassDist, SkewSchedule, WeightModel};

pub const DATA_DIR_ENV: &str = "DRGRAD_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// IDX image/label files, stratified-subsampled per class.
    Idx {
        /// Directory the file names are relative to. Falls back to
        /// `DRGRAD_DATA_DIR`, then the working directory.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        root: Option<PathBuf>,
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_per_class: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_per_class: Option<usize>,
        #[serde(default)]
        subsample_seed: u64,
    },
    /// Gaussian blobs; train and test sets come from different seeds.
    Synth {
        num_classes: usize,
        dim: usize,
        train_per_class: usize,
        test_per_class: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_total_iterations")]
    pub total_iterations: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Evaluate the training loss on the first this-many training examples
    /// only; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss_examples: Option<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default = "SkewSchedule::uniform")]
    pub skew: SkewSchedule,
    pub optimizer: OptimizerConfig,
    /// Seed of the per-class factors in misspecified weight mode.
    #[serde(default)]
    pub weight_perturbation_seed: u64,
}

fn default_batch_size() -> usize {
    20
}
fn default_total_iterations() -> usize {
    3000
}
fn default_eval_every() -> usize {
    50
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.total_iterations == 0 {
            return bad("total_iterations must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.model.kind == ModelKind::Quadratic {
            return bad("training runs need a classifier model");
        }
        if self.model.kind == ModelKind::Mlp1Hidden && self.model.hidden_dim.is_none() {
            return bad("mlp_1hidden needs hidden_dim");
        }
        self.optimizer.validate()
    }

    /// SHA-256 of the canonical JSON form, ignoring `seeds` and
    /// `output_dir`, which do not change what a single run computes.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("seeds");
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn model_spec(&self, data: &PreparedData) -> Result<ModelSpec> {
        let (d, c) = (data.train.feature_dim(), data.train.num_classes());
        match self.model.kind {
            ModelKind::SoftmaxLinear => ModelSpec::softmax_linear(d, c),
            ModelKind::Mlp1Hidden => ModelSpec::mlp(d, self.model.hidden_dim.unwrap_or(0), c),
            ModelKind::Quadratic => Err(Error::Config("training runs need a classifier model".into())),
        }
    }
}

/// Train and test sets for one suite, shared read-only by all seeds.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
}

fn data_root(root: &Option<PathBuf>) -> PathBuf {
    match root {
        Some(r) => r.clone(),
        None => std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(".")),
    }
}

impl PreparedData {
    pub fn load(config: &DataConfig) -> Result<Self> {
        let (train, test) = match config {
            DataConfig::Idx {
                root,
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_per_class,
                test_per_class,
                subsample_seed,
            } => {
                let root = data_root(root);
                let mut train = load_idx(root.join(train_images), root.join(train_labels))?;
                let mut test = load_idx(root.join(test_images), root.join(test_labels))?;
                if let Some(k) = train_per_class {
                    train = train.subsample(*k, *subsample_seed)?;
                }
                if let Some(k) = test_per_class {
                    test = test.subsample(*k, subsample_seed.wrapping_add(1))?;
                }
                (train, test)
            }
            DataConfig::Synth {
                num_classes,
                dim,
                train_per_class,
                test_per_class,
                separation,
                seed,
            } => (
                synth_blobs(*num_classes, *train_per_class, *dim, *separation, *seed)?,
                synth_blobs(*num_classes, *test_per_class, *dim, *separation, seed.wrapping_add(1))?,
            ),
        };
        if train.num_classes() != test.num_classes() || train.feature_dim() != test.feature_dim() {
            return Err(Error::Consistency(format!(
                "train set has {} classes of dim {}, test set {} of dim {}",
                train.num_classes(),
                train.feature_dim(),
                test.num_classes(),
                test.feature_dim()
            )));
        }
        Ok(PreparedData { train, test })
    }
}

/// One evaluation point of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    /// Number of updates applied so far.
    pub t: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    /// Norm of the most recent delta (0 before the first step).
    pub delta_norm: f64,
    /// Per-class counts of the most recent batch.
    pub class_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Diverged; `last_good_iteration` updates were applied cleanly.
    Failed { last_good_iteration: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub rows: Vec<EvalRow>,
    pub status: RunStatus,
    /// Seconds; kept out of the CSV so reruns compare bitwise.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunRecord {
    pub fn final_test_acc(&self) -> Option<f64> {
        self.rows.last().map(|r| r.test_acc)
    }

    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

/// Mean training loss (over the first `limit` examples) and accuracy.
fn evaluate(
    model: &ModelSpec,
    theta: &ParamVector,
    data: &PreparedData,
    limit: Option<usize>,
) -> Result<(f64, f64)> {
    let n = limit.unwrap_or(usize::MAX).min(data.train.len());
    let losses = data.train.examples()[..n]
        .par_iter()
        .map(|ex| model.loss(theta, ex))
        .collect::<Result<Vec<_>>>()?;
    let train_loss = losses.iter().sum::<f64>() / n as f64;
    let hits = data
        .test
        .examples()
        .par_iter()
        .map(|ex| model.predict(theta, &ex.features).map(|p| usize::from(p == ex.label)))
        .collect::<Result<Vec<_>>>()?;
    let test_acc = hits.iter().sum::<usize>() as f64 / data.test.len() as f64;
    Ok((train_loss, test_acc))
}

fn is_numeric(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

/// Runs one seed, handing every evaluation row to `on_row` as soon as it
/// exists.
pub fn run_trajectory_with(
    config: &RunConfig,
    data: &PreparedData,
    seed: u64,
    mut on_row: impl FnMut(&EvalRow) -> Result<()>,
) -> Result<RunRecord> {
    config.validate()?;
    let start = Instant::now();
    let c = data.train.num_classes();
    config.skew.validate(c)?;
    let model = config.model_spec(data)?;
    let mut theta = model.init_params(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut opt = Optimizer::new(config.optimizer.clone(), &model, &data.train, &theta)?;
    let weight_model = WeightModel {
        mode: config.optimizer.weight_mode,
        target: ClassDist::uniform(c),
        perturbation_seed: config.weight_perturbation_seed,
    };

    let mut rows = Vec::new();
    let mut status = RunStatus::Completed;
    let mut delta_norm = 0.0;
    let mut counts = vec![0; c];
    let mut push = |t: usize, theta: &ParamVector, delta_norm: f64, counts: &[usize], rows: &mut Vec<EvalRow>| {
        let (train_loss, test_acc) = evaluate(&model, theta, data, config.train_loss_examples)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite {
                context: "training loss",
                iteration: Some(t),
            });
        }
        let row = EvalRow {
            t,
            train_loss,
            test_acc,
            delta_norm,
            class_counts: counts.to_vec(),
        };
        on_row(&row)?;
        rows.push(row);
        Ok(())
    };

    push(0, &theta, delta_norm, &counts, &mut rows)?;
    for t in 0..config.total_iterations {
        let batch = draw_batch(&data.train, &config.skew, t, config.batch_size, &mut rng)?;
        let weights = weights_for(&batch, &weight_model, &config.skew, t)?;
        let applied = t + 1;
        let stepped = opt
            .advance(&model, &data.train, &theta, &batch, &weights)
            .map_err(|e| e.at_iteration(t))
            .and_then(|(next, est)| {
                delta_norm = est.delta.norm();
                counts = batch.class_counts();
                theta = next;
                if applied % config.eval_every == 0 || applied == config.total_iterations {
                    push(applied, &theta, delta_norm, &counts, &mut rows)?;
                }
                Ok(())
            });
        match stepped {
            Ok(()) => {}
            Err(e) if is_numeric(&e) => {
                status = RunStatus::Failed {
                    last_good_iteration: t,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunRecord {
        config_hash: config.config_hash(),
        seed,
        optimizer: config.optimizer.kind,
        rows,
        status,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Runs one seed in memory.
pub fn run_trajectory(config: &RunConfig, data: &PreparedData, seed: u64) -> Result<RunRecord> {
    run_trajectory_with(config, data, seed, |_| Ok(()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

pub fn csv_header(num_classes: usize) -> Vec<String> {
    let mut h: Vec<String> = ["t", "train_loss", "test_acc", "delta_norm"]
        .into_iter()
        .map(String::from)
        .collect();
    h.extend((0..num_classes).map(|c| format!("count_{c}")));
    h
}

fn row_fields(row: &EvalRow) -> Vec<String> {
    let mut f = vec![
        row.t.to_string(),
        row.train_loss.to_string(),
        row.test_acc.to_string(),
        row.delta_norm.to_string(),
    ];
    f.extend(row.class_counts.iter().map(usize::to_string));
    f
}

/// Runs one seed, appending each row to the CSV at `path` and flushing it
/// immediately so an interrupted run leaves a readable prefix.
pub fn run_trajectory_to_csv(config: &RunConfig, data: &PreparedData, seed: u64, path: &Path) -> Result<RunRecord> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(csv_header(data.train.num_classes()))
        .and_then(|_| w.flush().map_err(csv::Error::from))
        .map_err(|e| csv_error(path, e))?;
    run_trajectory_with(config, data, seed, |row| {
        w.write_record(row_fields(row)).map_err(|e| csv_error(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    })
}

/// Reads a run CSV back into rows.
pub fn read_run_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let parse_err = |what: &str| Error::Data(format!("{}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let num = |i: usize| rec.get(i).ok_or_else(|| parse_err("row"));
        rows.push(EvalRow {
            t: num(0)?.parse().map_err(|_| parse_err("t"))?,
            train_loss: num(1)?.parse().map_err(|_| parse_err("train_loss"))?,
            test_acc: num(2)?.parse().map_err(|_| parse_err("test_acc"))?,
            delta_norm: num(3)?.parse().map_err(|_| parse_err("delta_norm"))?,
            class_counts: (4..rec.len())
                .map(|i| num(i)?.parse().map_err(|_| parse_err("class count")))
                .collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}

/// Mean and population standard deviation across runs at one eval point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanRow {
    pub t: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub mean_train_loss: f64,
    pub runs: usize,
}

/// Aggregates completed runs by eval point. Only eval points present in
/// every completed run are kept.
pub fn mean_curve(records: &[RunRecord]) -> Vec<MeanRow> {
    let done: Vec<&RunRecord> = records.iter().filter(|r| r.completed()).collect();
    let Some(first) = done.first() else {
        return Vec::new();
    };
    let len = done.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let k = done.len() as f64;
            let acc: Vec<f64> = done.iter().map(|r| r.rows[i].test_acc).collect();
            let mean = acc.iter().sum::<f64>() / k;
            let var = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / k;
            MeanRow {
                t: first.rows[i].t,
                mean_test_acc: mean,
                std_test_acc: var.sqrt(),
                mean_train_loss: done.iter().map(|r| r.rows[i].train_loss).sum::<f64>() / k,
                runs: done.len(),
            }
        })
        .collect()
}

pub fn write_mean_curve(path: &Path, rows: &[MeanRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["t", "mean_test_acc", "std_test_acc", "mean_train_loss", "runs"])
        .map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.mean_test_acc.to_string(),
            r.std_test_acc.to_string(),
            r.mean_train_loss.to_string(),
            r.runs.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestRun {
    pub seed: u64,
    pub csv: PathBuf,
    #[serde(flatten)]
    pub status: RunStatus,
    pub final_test_acc: Option<f64>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub train_digest: String,
    pub test_digest: String,
    pub train_examples: usize,
    pub test_examples: usize,
    pub crate_version: &'static str,
    pub partial: bool,
    pub runs: Vec<ManifestRun>,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub records: Vec<RunRecord>,
    pub mean_curve: Vec<MeanRow>,
    /// Some run failed.
    pub partial: bool,
    pub output_dir: PathBuf,
}

impl SuiteReport {
    /// Mean final test accuracy over completed runs.
    pub fn mean_final_test_acc(&self) -> Option<f64> {
        self.mean_curve.last().map(|r| r.mean_test_acc)
    }
}

fn run_dir_names(seeds: &[u64]) -> Vec<String> {
    seeds
        .iter()
        .enumerate()
        .map(|(k, s)| {
            if seeds.iter().filter(|x| *x == s).count() > 1 {
                format!("seed-{s}-run-{k}")
            } else {
                format!("seed-{s}")
            }
        })
        .collect()
}

/// Runs every seed in parallel and writes `seed-<s>/run.csv`,
/// `mean_curve.csv` and `manifest.json` under the output directory.
pub fn run_suite(config: &RunConfig) -> Result<SuiteReport> {
    config.validate()?;
    let data = PreparedData::load(&config.data)?;
    run_suite_with_data(config, &data)
}

pub fn run_suite_with_data(config: &RunConfig, data: &PreparedData) -> Result<SuiteReport> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let names = run_dir_names(&config.seeds);
    let records = config
        .seeds
        .par_iter()
        .zip(names.par_iter())
        .map(|(&seed, name)| run_trajectory_to_csv(config, data, seed, &out.join(name).join("run.csv")))
        .collect::<Result<Vec<_>>>()?;
    let curve = mean_curve(&records);
    write_mean_curve(&out.join("mean_curve.csv"), &curve)?;
    let partial = records.iter().any(|r| !r.completed());
    let manifest = Manifest {
        config_hash: config.config_hash(),
        config: config.clone(),
        seeds: config.seeds.clone(),
        train_digest: data.train.source_digest().to_string(),
        test_digest: data.test.source_digest().to_string(),
        train_examples: data.train.len(),
        test_examples: data.test.len(),
        crate_version: env!("CARGO_PKG_VERSION"),
        partial,
        runs: records
            .iter()
            .zip(&names)
            .map(|(r, name)| ManifestRun {
                seed: r.seed,
                csv: PathBuf::from(name).join("run.csv"),
                status: r.status.clone(),
                final_test_acc: r.final_test_acc(),
                wall_time_secs: r.wall_time,
            })
            .collect(),
    };
    let path = out.join("manifest.json");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| Error::Data(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
    Ok(SuiteReport {
        records,
        mean_curve: curve,
        partial,
        output_dir: out.clone(),
    })
}

pub mod verify {
    //! The fixture-level verification suite behind `drgrad verify`.

    use serde::Serialize;

    use crate::data::synth_blobs;
    use crate::error::Result;
    use crate::model::ModelSpec;
    use crate::optim::{GradientTable, OptimizerKind};
    use crate::oracle::{self, fixtures, Estimator, Scenario, SdrgFrozenState};
    use crate::tensor::Vec64;
    use crate::ClassWeights;

    #[derive(Debug, Clone, Serialize)]
    pub struct Check {
        pub name: String,
        pub value: f64,
        pub threshold: f64,
        /// `below`, `at_most` or `above` the threshold.
        pub direction: &'static str,
        pub passed: bool,
        pub covers: Vec<OptimizerKind>,
    }

    fn below(name: &str, value: f64, threshold: f64, covers: &[OptimizerKind]) -> Check {
        Check {
            name: name.into(),
            value,
            threshold,
            direction: "below",
            passed: value < threshold,
            covers: covers.to_vec(),
        }
    }

    fn at_most(name: &str, value: f64, threshold: f64, covers: &[OptimizerKind]) -> Check {
        Check {
            name: name.into(),
            value,
            threshold,
            direction: "at_most",
            passed: value <= threshold,
            covers: covers.to_vec(),
        }
    }

    fn above(name: &str, value: f64, threshold: f64, covers: &[OptimizerKind]) -> Check {
        Check {
            name: name.into(),
            value,
            threshold,
            direction: "above",
            passed: value > threshold,
            covers: covers.to_vec(),
        }
    }

    /// Largest fd_check error over `count` random points per model kind.
    pub fn fd_worst(count: usize) -> Result<(f64, f64)> {
        let data = synth_blobs(3, 10, 6, 2.0, 9)?;
        let soft = ModelSpec::softmax_linear(6, 3)?;
        let mlp = ModelSpec::mlp(6, 5, 3)?;
        let mut worst = (0.0f64, 0.0f64);
        let mut seed = 0u64;
        let mut done = 0;
        while done < count {
            let ex = data.example((seed as usize * 7) % data.len());
            let ts = soft.init_params(seed);
            let tm = mlp.init_params(seed);
            seed += 1;
            if mlp.min_abs_preactivation(&tm, ex).is_some_and(|z| z <= 1e-4) {
                continue;
            }
            worst.0 = worst.0.max(soft.fd_check(&ts, ex, 1e-5)?);
            worst.1 = worst.1.max(mlp.fd_check(&tm, ex, 1e-5)?);
            done += 1;
        }
        Ok(worst)
    }

    /// Runs every check. The last entry confirms each optimizer kind is
    /// exercised by some check.
    pub fn run_checks() -> Result<Vec<Check>> {
        use OptimizerKind::*;
        let mut checks = Vec::new();

        let (fd_soft, fd_mlp) = fd_worst(10)?;
        checks.push(below("fd_check softmax_linear", fd_soft, 1e-4, &[]));
        checks.push(below("fd_check mlp_1hidden", fd_mlp, 1e-4, &[]));

        let uniform = fixtures::two_class(0.5);
        let skewed = fixtures::two_class(0.8);
        let theta = fixtures::theta_for(&uniform, &[0.3, 0.1]);
        let snap = fixtures::theta_for(&uniform, &[-1.0, 2.0]);
        let stale: Vec<Vec64> = uniform
            .dataset
            .examples()
            .iter()
            .map(|ex| uniform.model.grad(&snap, ex))
            .collect::<Result<_>>()?;
        let stale = GradientTable::from_rows(&stale)?;

        let r = oracle::report(&uniform, &theta, 1, &Estimator::Sgd)?;
        checks.push(below("unbiased sgd, uniform sampling", r.bias_norm, 1e-12, &[Sgd]));
        let r = oracle::report(&skewed, &theta, 1, &Estimator::IwSgd(skewed.exact_weights()?))?;
        checks.push(below("unbiased iw_sgd, exact weights, 0.8 skew", r.bias_norm, 1e-10, &[IwSgd]));
        let r = oracle::report(&skewed, &theta, 1, &Estimator::IwSgd(ClassWeights::constant(2, 1.0)))?;
        checks.push(above("biased iw_sgd, unit weights, 0.8 skew", r.bias_norm, 1e-3, &[IwSgd]));
        let r = oracle::report(&uniform, &theta, 1, &Estimator::Svrg(snap.clone()))?;
        checks.push(below("unbiased svrg, stale snapshot", r.bias_norm, 1e-10, &[Svrg]));
        let r = oracle::check_saga_bias(&uniform, &theta, &stale)?;
        checks.push(below("unbiased saga, stale table", r.bias_norm, 1e-10, &[Saga]));

        for scenario in Scenario::ALL {
            let r = match scenario {
                Scenario::BothBad => {
                    let (p, t, seed) = fixtures::both_bad();
                    oracle::check_double_robustness(&p, &t, scenario, seed)?
                }
                _ => oracle::check_double_robustness(&skewed, &theta, scenario, 3)?,
            };
            let name = format!("double robustness {}", scenario.name());
            checks.push(match scenario {
                Scenario::BothBad => above(&name, r.bias_norm, 1e-6, &[Sdrg]),
                _ => below(&name, r.bias_norm, 1e-10, &[Sdrg]),
            });
        }

        let five = fixtures::five_point();
        let t5 = fixtures::theta_for(&five, &[0.3, -0.7]);
        let zero = GradientTable::new(five.dataset.len(), 2, u64::MAX)?;
        let sag = oracle::check_sag_bias(&five, &t5, &zero)?;
        let closed = sag.reference_gradient.scale(1.0 / 5.0 - 1.0).norm();
        checks.push(below("sag bias matches closed form", (sag.bias_norm - closed).abs(), 1e-10, &[Sag]));
        checks.push(above("sag biased on zero table", sag.bias_norm, 1e-6, &[Sag]));
        let saga = oracle::check_saga_bias(&five, &t5, &zero)?;
        checks.push(below("saga unbiased on zero table", saga.bias_norm, 1e-12, &[Saga]));

        let cmp = oracle::compare_variance(&uniform, &theta, 1, &Estimator::Svrg(theta.clone()), &Estimator::Sgd)?;
        checks.push(below("svrg variance minus sgd variance", cmp.difference, 0.0, &[Svrg, Sgd]));

        let gap = oracle::momentum_trajectory_gap(&five, &t5, 0.1, 0.9, 100, 1)?;
        checks.push(at_most("momentum equivalence gap", gap, 1e-12, &[Momentum, Sdrg]));

        let state = SdrgFrozenState {
            snapshots: vec![
                fixtures::theta_for(&skewed, &[1.0, -1.0]),
                fixtures::theta_for(&skewed, &[-0.5, 0.5]),
            ],
            accumulators: vec![Vec64::new(vec![0.2, -0.1]), Vec64::new(vec![-0.3, 0.4])],
            alpha: 0.5,
            beta: 1.5,
            eta: 0.1,
            gamma: 0.9,
        };
        let (r, analytic) = oracle::sdrg_expectation(&skewed, &theta, &state, 2)?;
        checks.push(below(
            "sdrg batch-of-2 expectation vs closed form",
            r.exact_mean.max_abs_diff(&analytic)?,
            1e-12,
            &[Sdrg],
        ));

        checks.push(completeness(&checks));
        Ok(checks)
    }

    /// Fails unless every optimizer kind is covered by some check.
    pub fn completeness(checks: &[Check]) -> Check {
        let missing = OptimizerKind::ALL
            .iter()
            .filter(|k| !checks.iter().any(|c| c.covers.contains(k)))
            .count();
        Check {
            name: "every optimizer kind verified".into(),
            value: missing as f64,
            threshold: 1.0,
            direction: "below",
            passed: missing == 0,
            covers: Vec::new(),
        }
    }
}
