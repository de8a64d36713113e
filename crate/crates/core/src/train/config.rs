use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::data::{load_cifar10, load_mnist, Dataset, Splits};
use super::optim::OptimizerKind;
use super::schedule::ScheduleKind;
use crate::config::{parse_bool, KvMap};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Optimization hyperparameters of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub schedule: ScheduleKind,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    /// Random left-right flips of training images.
    pub hflip: bool,
    /// Worker threads per batch; 1 is the deterministic reference path.
    pub threads: usize,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 64,
            base_lr: 1e-3,
            weight_decay: 0.05,
            warmup_epochs: 0,
            seed: 0,
            optimizer: OptimizerKind::AdamW,
            schedule: ScheduleKind::Cosine,
            max_steps: None,
            hflip: false,
            threads: 1,
            eval_batch_size: 250,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 || self.threads == 0 {
            return Err(Error::Config("batch sizes and threads must be positive".into()));
        }
        Ok(())
    }

    pub fn take_from(kv: &mut KvMap, base: TrainConfig) -> Result<Self> {
        let mut c = base;
        c.epochs = kv.take_or("epochs", c.epochs)?;
        c.batch_size = kv.take_or("batch_size", c.batch_size)?;
        c.base_lr = kv.take_or("base_lr", c.base_lr)?;
        c.weight_decay = kv.take_or("weight_decay", c.weight_decay)?;
        c.warmup_epochs = kv.take_or("warmup_epochs", c.warmup_epochs)?;
        c.seed = kv.take_or("seed", c.seed)?;
        c.optimizer = kv.take_or("optimizer", c.optimizer)?;
        c.schedule = kv.take_or("schedule", c.schedule)?;
        if let Some(v) = kv.take::<usize>("max_steps")? {
            c.max_steps = Some(v);
        }
        if let Some(v) = kv.take_raw("hflip") {
            c.hflip = parse_bool(&v)?;
        }
        c.threads = kv.take_or("threads", c.threads)?;
        c.eval_batch_size = kv.take_or("eval_batch_size", c.eval_batch_size)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "warmup_epochs = {}", self.warmup_epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "optimizer = {}", self.optimizer);
        let _ = writeln!(s, "schedule = {}", self.schedule);
        if let Some(m) = self.max_steps {
            let _ = writeln!(s, "max_steps = {m}");
        }
        let _ = writeln!(s, "hflip = {}", self.hflip);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "eval_batch_size = {}", self.eval_batch_size);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

impl DatasetKind {
    /// Directory used when a run names none, relative to the working
    /// directory.
    pub fn default_dir(self) -> PathBuf {
        PathBuf::from(match self {
            DatasetKind::Mnist => "data/mnist",
            DatasetKind::Cifar10 => "data/cifar10",
        })
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}

/// Where the data comes from and how much of it is used.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    /// Use only the first `n` training images.
    pub train_limit: Option<usize>,
    /// Use only the first `n` evaluation images.
    pub eval_limit: Option<usize>,
}

impl DataConfig {
    pub fn take_from(kv: &mut KvMap) -> Result<Self> {
        Ok(Self {
            dataset: kv.take_or("dataset", DatasetKind::Mnist)?,
            data_dir: kv.take_raw("data_dir").map(PathBuf::from),
            train_limit: kv.take("train_limit")?,
            eval_limit: kv.take("eval_limit")?,
        })
    }
}

impl DataConfig {
    pub fn dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.dataset.default_dir())
    }

    /// Loads both splits, zero-pads the images up to `resolution` and
    /// applies the size limits.
    pub fn load(&self, resolution: usize) -> Result<Splits> {
        let dir = self.dir();
        let splits = match self.dataset {
            DatasetKind::Mnist => load_mnist(&dir)?,
            DatasetKind::Cifar10 => load_cifar10(&dir)?,
        };
        let [_, _, h, w] = splits.train.shape();
        if h != w || h > resolution || (resolution - h) % 2 != 0 {
            return Err(Error::Config(format!(
                "{h}x{w} images cannot be centred in a {resolution}x{resolution} input"
            )));
        }
        let pad = (resolution - h) / 2;
        let fit = |d: Dataset, limit: Option<usize>| {
            let d = if pad > 0 { d.padded(pad) } else { d };
            match limit {
                Some(n) => d.truncated(n),
                None => d,
            }
        };
        Ok(Splits {
            train: fit(splits.train, self.train_limit),
            test: fit(splits.test, self.eval_limit),
        })
    }
}

/// A whole run file: model, data and training keys together.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub precision: Precision,
}

impl RunConfig {
    /// Consumes every known key from `kv` and rejects the rest.
    pub fn from_kv(mut kv: KvMap) -> Result<Self> {
        let model = ModelConfig::take_from(&mut kv, ModelConfig::nano())?;
        let train = TrainConfig::take_from(&mut kv, TrainConfig::default())?;
        let data = DataConfig::take_from(&mut kv)?;
        let precision = kv.take_or("precision", Precision::F32)?;
        kv.finish()?;
        Ok(Self {
            model,
            train,
            data,
            precision,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(KvMap::parse(text)?)
    }
}
