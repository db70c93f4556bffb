//! Dataset splitting, the Adam/plateau training loop, checkpoints,
//! evaluation and the training-set-size study.

mod adam;
mod checkpoint;
mod scheduler;
mod split;

use std::collections::BTreeMap;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aerometrics::{mean_relative_error, mse, r_squared, MetricsError};
use crate::autodiff::{AutodiffError, Mode, Tape, Tensor};
use crate::model::{ModelError, RegDgcnn, RegDgcnnConfig};
use crate::pointcloud::{cache_file_name, read_cache, PointCloudError};
use crate::real::Real;
use crate::rng::{epoch_stream, Purpose};

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use scheduler::{PlateauScheduler, DEFAULT_MIN_LR, DEFAULT_THRESHOLD};
pub use split::{nested_subsets, split_dataset, split_sizes, SplitAssignment};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("need at least 3 designs to split, got {0}")]
    TooFewDesigns(usize),
    #[error("the {0} split is empty")]
    EmptyDataset(&'static str),
    #[error("no cached point cloud for: {}", .0.join(", "))]
    MissingCache(Vec<String>),
    #[error("design {0} is not in the dataset")]
    UnknownDesign(String),
    #[error("loss diverged (non-finite) in epoch {epoch}")]
    DivergedLoss { epoch: u64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl From<AutodiffError> for TrainError {
    fn from(e: AutodiffError) -> Self {
        TrainError::Model(ModelError::Autodiff(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub scheduler_patience: usize,
    pub scheduler_factor: f64,
    pub seed: u64,
    pub points_per_cloud: usize,
    pub train_fraction_of_train_split: f64,
    /// Seed the point-cloud caches were sampled with.
    pub sample_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            learning_rate: 0.001,
            scheduler_patience: 10,
            scheduler_factor: 0.1,
            seed: 0,
            points_per_cloud: 5000,
            train_fraction_of_train_split: 1.0,
            sample_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return bad("scheduler_factor must lie in (0, 1)");
        }
        let f = self.train_fraction_of_train_split;
        if !(f > 0.0 && f <= 1.0) {
            return bad("train_fraction_of_train_split must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.points_per_cloud == 0 {
            return bad("points_per_cloud must be positive");
        }
        Ok(())
    }
}

/// z-score statistics of the training targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetNorm {
    pub mean: f64,
    pub std: f64,
}

impl TargetNorm {
    pub const IDENTITY: TargetNorm = TargetNorm { mean: 0.0, std: 1.0 };

    /// Population mean and standard deviation; a zero spread maps to 1.
    pub fn fit(targets: &[f64]) -> Self {
        let n = targets.len().max(1) as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 0.0 && std.is_finite() { std } else { 1.0 },
        }
    }

    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One design's cached point cloud and drag target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Flat `n × 3` coordinates.
    pub points: Vec<f32>,
    pub target: f64,
}

/// Samples keyed by design id, all with the same point count.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    samples: BTreeMap<String, Sample>,
    points_per_cloud: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self, TrainError> {
        let points_per_cloud = samples.first().map_or(0, |s| s.points.len() / 3);
        let mut map = BTreeMap::new();
        for s in samples {
            if s.points.len() != 3 * points_per_cloud || s.points.is_empty() {
                return Err(TrainError::ShapeMismatch(format!(
                    "design {} has {} coordinates, expected {}",
                    s.id,
                    s.points.len(),
                    3 * points_per_cloud
                )));
            }
            if map.contains_key(&s.id) {
                return Err(TrainError::InvalidConfig(format!("duplicate design {}", s.id)));
            }
            map.insert(s.id.clone(), s);
        }
        Ok(Self {
            samples: map,
            points_per_cloud,
        })
    }

    /// Loads `<id>_<n>_<seed>.dapc` for every `(id, target)`; every missing
    /// file is reported at once.
    pub fn from_cache(cache_dir: &Path, targets: &[(String, f64)], n: usize, seed: u64) -> Result<Self, TrainError> {
        let missing: Vec<String> = targets
            .iter()
            .filter(|(id, _)| !cache_dir.join(cache_file_name(id, n, seed)).is_file())
            .map(|(id, _)| id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(TrainError::MissingCache(missing));
        }
        let samples = targets
            .iter()
            .map(|(id, target)| {
                let pts = read_cache(&cache_dir.join(cache_file_name(id, n, seed)))?;
                if pts.len() != n {
                    return Err(TrainError::ShapeMismatch(format!("cache for {id} holds {} points, expected {n}", pts.len())));
                }
                Ok(Sample {
                    id: id.clone(),
                    points: pts.into_iter().flatten().collect(),
                    target: *target,
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points_per_cloud(&self) -> usize {
        self.points_per_cloud
    }

    pub fn ids(&self) -> Vec<String> {
        self.samples.keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Result<&Sample, TrainError> {
        self.samples
            .get(id)
            .ok_or_else(|| TrainError::UnknownDesign(id.to_string()))
    }

    fn targets(&self, ids: &[String]) -> Result<Vec<f64>, TrainError> {
        ids.iter().map(|id| self.get(id).map(|s| s.target)).collect()
    }

    /// `[ids.len(), n, 3]` tensor of the given designs.
    pub fn batch<T: Real>(&self, ids: &[String]) -> Result<Tensor<T>, TrainError> {
        let mut data = Vec::with_capacity(ids.len() * self.points_per_cloud * 3);
        for id in ids {
            data.extend(self.get(id)?.points.iter().map(|&v| T::of(v as f64)));
        }
        Ok(Tensor::new(vec![ids.len(), self.points_per_cloud, 3], data)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mse: f64,
    /// NaN when fewer than two samples or the targets have no spread.
    pub r2: f64,
    /// NaN when a target is zero.
    pub mean_rel_err_pct: f64,
}

/// De-normalised inference-mode predictions for `ids`.
pub fn predict_ids<T: Real>(
    model: &RegDgcnn<T>,
    dataset: &Dataset,
    ids: &[String],
    norm: TargetNorm,
) -> Result<Vec<f64>, TrainError> {
    ids.iter()
        .map(|id| {
            let cloud: Vec<T> = dataset.get(id)?.points.iter().map(|&v| T::of(v as f64)).collect();
            Ok(norm.denormalize(model.predict_cloud(&cloud)?.f64()))
        })
        .collect()
}

/// MSE, R² and mean relative error of the model on `ids`, in target units.
pub fn evaluate<T: Real>(
    model: &RegDgcnn<T>,
    dataset: &Dataset,
    ids: &[String],
    norm: TargetNorm,
) -> Result<Metrics, TrainError> {
    if ids.is_empty() {
        return Err(TrainError::EmptyDataset("evaluation"));
    }
    let actual = dataset.targets(ids)?;
    let predicted = predict_ids(model, dataset, ids, norm)?;
    metrics(&actual, &predicted)
}

pub fn metrics(actual: &[f64], predicted: &[f64]) -> Result<Metrics, TrainError> {
    let undefined = |r: Result<f64, MetricsError>| match r {
        Ok(v) => Ok(v),
        Err(MetricsError::TooFew | MetricsError::ZeroVariance | MetricsError::NearZeroActual { .. }) => Ok(f64::NAN),
        Err(e) => Err(e),
    };
    Ok(Metrics {
        n: actual.len(),
        mse: mse(actual, predicted)?,
        r2: undefined(r_squared(actual, predicted))?,
        mean_rel_err_pct: undefined(mean_relative_error(actual, predicted))?,
    })
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// State after the epoch with the lowest validation MSE.
    pub best: Checkpoint<T>,
    /// State after the final epoch.
    pub last: Checkpoint<T>,
    pub history: Vec<EpochRecord>,
}

/// Epoch-by-epoch training driver.
pub struct Trainer<'a, T: Real> {
    config: TrainConfig,
    dataset: &'a Dataset,
    train_ids: Vec<String>,
    val_ids: Vec<String>,
    model: RegDgcnn<T>,
    adam: AdamState<T>,
    scheduler: PlateauScheduler,
    norm: TargetNorm,
    epoch: u64,
    best_val: f64,
    best: Option<Checkpoint<T>>,
    history: Vec<EpochRecord>,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Fresh run. Targets are standardised with statistics of the (possibly
    /// subsampled) training ids.
    pub fn new(
        model: RegDgcnn<T>,
        dataset: &'a Dataset,
        train_ids: &[String],
        val_ids: &[String],
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let mut train_ids = train_ids.to_vec();
        if config.train_fraction_of_train_split < 1.0 {
            train_ids = nested_subsets(&train_ids, &[config.train_fraction_of_train_split], config.seed)?.remove(0);
        }
        let norm = TargetNorm::fit(&dataset.targets(&train_ids)?);
        let adam = AdamState::for_parameters(model.parameters());
        let scheduler = PlateauScheduler::new(config.learning_rate, config.scheduler_factor, config.scheduler_patience);
        Self::assemble(config, dataset, train_ids, val_ids.to_vec(), model, adam, scheduler, norm, 0, f64::INFINITY, None)
    }

    /// Continues from `last`; `best` is the best checkpoint recorded so far,
    /// if any. Epoch streams depend only on `(seed, epoch)`, so resuming
    /// reproduces an uninterrupted run.
    pub fn resume(
        last: Checkpoint<T>,
        best: Option<Checkpoint<T>>,
        dataset: &'a Dataset,
        train_ids: &[String],
        val_ids: &[String],
    ) -> Result<Self, TrainError> {
        let config = last.train_config.clone();
        config.validate()?;
        let mut train_ids = train_ids.to_vec();
        if config.train_fraction_of_train_split < 1.0 {
            train_ids = nested_subsets(&train_ids, &[config.train_fraction_of_train_split], config.seed)?.remove(0);
        }
        let model = last.model()?;
        Self::assemble(
            config,
            dataset,
            train_ids,
            val_ids.to_vec(),
            model,
            last.adam,
            last.scheduler,
            last.target_norm,
            last.epoch,
            last.best_val_loss,
            best,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainConfig,
        dataset: &'a Dataset,
        train_ids: Vec<String>,
        val_ids: Vec<String>,
        mut model: RegDgcnn<T>,
        adam: AdamState<T>,
        scheduler: PlateauScheduler,
        norm: TargetNorm,
        epoch: u64,
        best_val: f64,
        best: Option<Checkpoint<T>>,
    ) -> Result<Self, TrainError> {
        if train_ids.is_empty() {
            return Err(TrainError::EmptyDataset("train"));
        }
        if val_ids.is_empty() {
            return Err(TrainError::EmptyDataset("validation"));
        }
        for id in train_ids.iter().chain(&val_ids) {
            dataset.get(id)?;
        }
        if adam.m.len() != model.parameters().len() {
            return Err(TrainError::ShapeMismatch("optimizer state does not mirror the parameters".into()));
        }
        model.set_mode(Mode::Training);
        Ok(Self {
            config,
            dataset,
            train_ids,
            val_ids,
            model,
            adam,
            scheduler,
            norm,
            epoch,
            best_val,
            best,
            history: Vec::new(),
        })
    }

    pub fn model(&self) -> &RegDgcnn<T> {
        &self.model
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn target_norm(&self) -> TargetNorm {
        self.norm
    }

    /// Best checkpoint so far (lowest validation MSE).
    pub fn best(&self) -> Option<&Checkpoint<T>> {
        self.best.as_ref()
    }

    pub fn train_ids(&self) -> &[String] {
        &self.train_ids
    }

    /// Extends or shortens the run; only affects [`Trainer::run`].
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    /// Snapshot of the current state.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::capture(
            &self.model,
            &self.config,
            &self.adam,
            &self.scheduler,
            self.norm,
            self.epoch,
            self.best_val,
        )
    }

    /// One pass over the shuffled training ids followed by validation,
    /// scheduling and best-checkpoint tracking.
    pub fn run_epoch(&mut self) -> Result<EpochRecord, TrainError> {
        let epoch = self.epoch;
        let diverged = TrainError::DivergedLoss { epoch: epoch + 1 };
        let lr = self.scheduler.lr;
        let mut order = self.train_ids.clone();
        order.shuffle(&mut epoch_stream(self.config.seed, Purpose::Shuffle, epoch, 0));

        self.model.set_mode(Mode::Training);
        let mut loss_sum = 0.0;
        for (b, ids) in order.chunks(self.config.batch_size).enumerate() {
            let x = self.dataset.batch::<T>(ids)?;
            let target: Vec<T> = self
                .dataset
                .targets(ids)?
                .into_iter()
                .map(|y| T::of(self.norm.normalize(y)))
                .collect();
            let mut rng = epoch_stream(self.config.seed, Purpose::Dropout, epoch, b as u64);
            let mut tape = Tape::new();
            let step = (|| -> Result<f64, TrainError> {
                let pass = self.model.forward(&mut tape, &x, &mut rng)?;
                let loss = tape.mse_loss(pass.output, &target)?;
                let grads = tape.backward(loss)?;
                self.model.zero_grad();
                self.model.accumulate_gradients(&pass, &grads);
                Ok(tape.value(loss).data()[0].f64())
            })();
            let loss = match step {
                Ok(l) if l.is_finite() => l,
                Ok(_) | Err(TrainError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))) => return Err(diverged),
                Err(e) => return Err(e),
            };
            adam_step(self.model.parameters_mut(), &mut self.adam, lr)?;
            loss_sum += loss * ids.len() as f64;
        }
        let train_mse = loss_sum / order.len() as f64 * self.norm.std * self.norm.std;

        self.model.set_mode(Mode::Inference);
        let val = evaluate(&self.model, self.dataset, &self.val_ids, self.norm)?;
        self.model.set_mode(Mode::Training);
        if !val.mse.is_finite() {
            return Err(diverged);
        }
        self.scheduler.step(val.mse);
        self.epoch += 1;
        let record = EpochRecord {
            epoch: self.epoch,
            train_mse,
            val_mse: val.mse,
            lr,
        };
        self.history.push(record);
        if val.mse < self.best_val || self.best.is_none() {
            self.best_val = self.best_val.min(val.mse);
            self.best = Some(self.checkpoint());
        }
        info!(
            "epoch {:>4}  train_mse {:.6e}  val_mse {:.6e}  lr {:.1e}",
            record.epoch, record.train_mse, record.val_mse, record.lr
        );
        Ok(record)
    }

    /// Runs until `config.epochs` epochs have completed.
    pub fn run(mut self) -> Result<TrainOutcome<T>, TrainError> {
        while self.epoch < self.config.epochs as u64 {
            self.run_epoch()?;
        }
        let last = self.checkpoint();
        Ok(TrainOutcome {
            best: self.best.unwrap_or_else(|| last.clone()),
            last,
            history: self.history,
        })
    }
}

/// Trains a freshly initialised model (seeded by `config.seed`).
pub fn train<T: Real>(
    model_config: &RegDgcnnConfig,
    dataset: &Dataset,
    train_ids: &[String],
    val_ids: &[String],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    let model = RegDgcnn::<T>::init(model_config.clone(), config.seed)?;
    Trainer::new(model, dataset, train_ids, val_ids, config.clone())?.run()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub fraction: f64,
    pub n_train: usize,
    pub mean_rel_err_pct: f64,
    pub test_mse: f64,
    pub test_r2: f64,
    /// Designs trained on, sorted.
    pub train_ids: Vec<String>,
}

/// One independent training run per fraction on nested subsets of the
/// training split, each evaluated (best checkpoint) on the same test split.
pub fn scaling_study<T: Real>(
    model_config: &RegDgcnnConfig,
    dataset: &Dataset,
    split: &SplitAssignment,
    fractions: &[f64],
    config: &TrainConfig,
) -> Result<Vec<ScalingRow>, TrainError> {
    if split.test.is_empty() {
        return Err(TrainError::EmptyDataset("test"));
    }
    let subsets = nested_subsets(&split.train, fractions, config.seed)?;
    let run_config = TrainConfig {
        train_fraction_of_train_split: 1.0,
        ..config.clone()
    };
    fractions
        .iter()
        .zip(subsets)
        .map(|(&fraction, ids)| {
            info!("scaling study: fraction {fraction} ({} designs)", ids.len());
            let outcome = train::<T>(model_config, dataset, &ids, &split.validation, &run_config)?;
            let mut train_ids = ids.clone();
            train_ids.sort();
            let model = outcome.best.model()?;
            let m = evaluate(&model, dataset, &split.test, outcome.best.target_norm)?;
            Ok(ScalingRow {
                fraction,
                n_train: ids.len(),
                mean_rel_err_pct: m.mean_rel_err_pct,
                test_mse: m.mse,
                test_r2: m.r2,
                train_ids,
            })
        })
        .collect()
}
