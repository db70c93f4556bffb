//! Binary checkpoint: magic `RDGC`, `u32` version, `u64`-length-prefixed
//! JSON configuration, `u32` record count, then named tensor records
//! (`u32` name length, name, `u8` dtype, `u32` rank, `u64` dims, data).
//! Everything is little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AdamState, PlateauScheduler, TargetNorm, TrainConfig};
use crate::autodiff::{RunningStats, Tensor};
use crate::model::{RegDgcnn, RegDgcnnConfig};
use crate::real::{DType, Real};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RDGC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
}

/// Full training state at the end of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model_config: RegDgcnnConfig,
    pub train_config: TrainConfig,
    pub parameters: Vec<(String, Tensor<T>)>,
    pub running_stats: Vec<(String, RunningStats<T>)>,
    pub adam: AdamState<T>,
    pub scheduler: PlateauScheduler,
    pub target_norm: TargetNorm,
    /// Completed epochs.
    pub epoch: u64,
    pub best_val_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    model: RegDgcnnConfig,
    train: TrainConfig,
    scheduler: PlateauScheduler,
}

struct Record {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl<T: Real> Checkpoint<T> {
    /// Snapshot of `model` with the given optimiser and bookkeeping state.
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        model: &RegDgcnn<T>,
        train_config: &TrainConfig,
        adam: &AdamState<T>,
        scheduler: &PlateauScheduler,
        target_norm: TargetNorm,
        epoch: u64,
        best_val_loss: f64,
    ) -> Self {
        Self {
            model_config: model.config().clone(),
            train_config: train_config.clone(),
            parameters: model.parameters().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            running_stats: model.running_stats().to_vec(),
            adam: adam.clone(),
            scheduler: scheduler.clone(),
            target_norm,
            epoch,
            best_val_loss,
        }
    }

    /// Rebuilds the model (parameters and running statistics).
    pub fn model(&self) -> Result<RegDgcnn<T>, CheckpointError> {
        let mut model = RegDgcnn::from_parameters(self.model_config.clone(), self.parameters.clone())
            .map_err(|e| CheckpointError::CorruptFile(e.to_string()))?;
        if model.running_stats().len() != self.running_stats.len() {
            return Err(CheckpointError::CorruptFile("batch-norm buffer count".into()));
        }
        for (slot, (name, stats)) in model.running_stats_mut().iter_mut().zip(&self.running_stats) {
            if slot.0 != *name || slot.1.mean.len() != stats.mean.len() {
                return Err(CheckpointError::CorruptFile(format!("buffer {name}")));
            }
            slot.1 = stats.clone();
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: format!("{:?}", T::DTYPE).to_lowercase(),
            model: self.model_config.clone(),
            train: self.train_config.clone(),
            scheduler: self.scheduler.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut records = Vec::new();
        let real = |name: String, shape: Vec<usize>, values: &[T]| {
            let mut data = Vec::with_capacity(values.len() * T::DTYPE.size());
            values.iter().for_each(|v| v.write_le(&mut data));
            Record { name, dtype: T::DTYPE, shape, data }
        };
        for (name, t) in &self.parameters {
            records.push(real(format!("param.{name}"), t.shape().to_vec(), t.data()));
        }
        for (name, s) in &self.running_stats {
            records.push(real(format!("buffer.{name}.running_mean"), vec![s.mean.len()], &s.mean));
            records.push(real(format!("buffer.{name}.running_var"), vec![s.var.len()], &s.var));
        }
        for (i, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            records.push(real(format!("adam.m.{i}"), vec![m.len()], m));
            records.push(real(format!("adam.v.{i}"), vec![v.len()], v));
        }
        let f64s = [
            ("state.best_val_loss", self.best_val_loss),
            ("state.lr", self.scheduler.lr),
            ("state.scheduler_best", self.scheduler.best),
            ("state.target_mean", self.target_norm.mean),
            ("state.target_std", self.target_norm.std),
        ];
        for (name, v) in f64s {
            records.push(Record {
                name: name.into(),
                dtype: DType::F64,
                shape: vec![],
                data: v.to_le_bytes().to_vec(),
            });
        }
        let u64s = [
            ("state.adam_step", self.adam.t),
            ("state.epoch", self.epoch),
            ("state.scheduler_bad", self.scheduler.num_bad as u64),
            ("state.seed", self.train_config.seed),
        ];
        for (name, v) in u64s {
            records.push(Record {
                name: name.into(),
                dtype: DType::U64,
                shape: vec![],
                data: v.to_le_bytes().to_vec(),
            });
        }

        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for r in records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.dtype.code());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for d in &r.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            out.extend_from_slice(&r.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.u64()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| corrupt(&format!("config block: {e}")))?;
        let expected_dtype = format!("{:?}", T::DTYPE).to_lowercase();
        if header.dtype != expected_dtype {
            return Err(corrupt(&format!("stored as {}, loading as {expected_dtype}", header.dtype)));
        }
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| corrupt("record name"))?;
            let dtype = DType::from_code(r.take(1)?[0]).ok_or_else(|| corrupt(&format!("dtype of {name}")))?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(corrupt(&format!("rank of {name}")));
            }
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| corrupt(&format!("size of {name}")))?;
            let data = r.take(n)?.to_vec();
            records.push(Record { name, dtype, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        assemble(header, records)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn corrupt(msg: &str) -> CheckpointError {
    CheckpointError::CorruptFile(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            corrupt(&format!("truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn assemble<T: Real>(header: Header, records: Vec<Record>) -> Result<Checkpoint<T>, CheckpointError> {
    let mut parameters = Vec::new();
    let mut buffers: Vec<(String, Vec<T>, Option<Vec<T>>)> = Vec::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    let mut f64s = std::collections::HashMap::new();
    let mut u64s = std::collections::HashMap::new();
    for rec in records {
        let reals = || -> Result<Vec<T>, CheckpointError> {
            if rec.dtype != T::DTYPE {
                return Err(corrupt(&format!("dtype of {}", rec.name)));
            }
            Ok(rec.data.chunks_exact(T::DTYPE.size()).map(T::read_le).collect())
        };
        if let Some(name) = rec.name.strip_prefix("param.") {
            let t = Tensor::new(rec.shape.clone(), reals()?).map_err(|e| corrupt(&e.to_string()))?;
            parameters.push((name.to_string(), t));
        } else if let Some(name) = rec.name.strip_prefix("buffer.") {
            if let Some(layer) = name.strip_suffix(".running_mean") {
                buffers.push((layer.to_string(), reals()?, None));
            } else if let Some(layer) = name.strip_suffix(".running_var") {
                match buffers.last_mut() {
                    Some(b) if b.0 == layer && b.2.is_none() => b.2 = Some(reals()?),
                    _ => return Err(corrupt(&format!("unpaired buffer {name}"))),
                }
            } else {
                return Err(corrupt(&format!("unknown buffer {name}")));
            }
        } else if rec.name.starts_with("adam.m.") {
            m.push(reals()?);
        } else if rec.name.starts_with("adam.v.") {
            v.push(reals()?);
        } else if rec.name.starts_with("state.") {
            let bytes: [u8; 8] = rec
                .data
                .as_slice()
                .try_into()
                .map_err(|_| corrupt(&format!("scalar {}", rec.name)))?;
            match rec.dtype {
                DType::F64 => {
                    f64s.insert(rec.name, f64::from_le_bytes(bytes));
                }
                DType::U64 => {
                    u64s.insert(rec.name, u64::from_le_bytes(bytes));
                }
                DType::F32 => return Err(corrupt(&format!("dtype of {}", rec.name))),
            }
        } else {
            return Err(corrupt(&format!("unknown record {}", rec.name)));
        }
    }
    let f = |k: &str| f64s.get(k).copied().ok_or_else(|| corrupt(&format!("missing {k}")));
    let u = |k: &str| u64s.get(k).copied().ok_or_else(|| corrupt(&format!("missing {k}")));
    let running_stats = buffers
        .into_iter()
        .map(|(name, mean, var)| {
            let var = var.ok_or_else(|| corrupt(&format!("missing running_var of {name}")))?;
            Ok((name, RunningStats { mean, var }))
        })
        .collect::<Result<Vec<_>, CheckpointError>>()?;
    let mut scheduler = header.scheduler;
    scheduler.lr = f("state.lr")?;
    scheduler.best = f("state.scheduler_best")?;
    scheduler.num_bad = u("state.scheduler_bad")? as usize;
    let mut train_config = header.train;
    train_config.seed = u("state.seed")?;
    Ok(Checkpoint {
        model_config: header.model,
        train_config,
        parameters,
        running_stats,
        adam: AdamState { m, v, t: u("state.adam_step")? },
        scheduler,
        target_norm: TargetNorm {
            mean: f("state.target_mean")?,
            std: f("state.target_std")?,
        },
        epoch: u("state.epoch")?,
        best_val_loss: f("state.best_val_loss")?,
    })
}
