use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::Dataset;
use super::optim::{Optimizer, OptimizerConfig};
use super::schedule::Schedule;
use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::params::{Graph, ParamGrads};
use crate::tensor::{Real, Tensor};

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Real> {
    pub model: Model<T>,
    pub optimizer: Optimizer<T>,
    /// Drives shuffling and augmentation.
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: u64,
}

impl<T: Real> TrainState<T> {
    /// Fresh model and optimizer, both derived from `cfg.seed`.
    pub fn new(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        let model = build_model::<T>(model_cfg, cfg.seed)?;
        let optimizer = Optimizer::new(optimizer_config(cfg), &model.store);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            model,
            optimizer,
            rng,
            epoch: 0,
        })
    }
}

pub fn optimizer_config(cfg: &TrainConfig) -> OptimizerConfig {
    OptimizerConfig::new(cfg.optimizer, cfg.weight_decay)
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: u64,
    /// Rate used by the last step of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss of the first batch, before its update.
    pub initial_loss: Option<f64>,
    pub epochs: Vec<EpochMetrics>,
    /// Loss of every step in order.
    pub step_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub count: usize,
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn correct<T: Real>(logits: &[T], classes: usize, labels: &[usize]) -> usize {
    logits
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

/// Loss, correct count and gradients of one (sub-)batch.
fn batch_grads<T: Real>(model: &Model<T>, x: &Tensor<T>, labels: &[usize]) -> Result<(f64, usize, ParamGrads<T>)> {
    let mut g = Graph::new(&model.store);
    let xv = g.leaf(x);
    let logits = model.net.forward(&mut g, xv)?;
    let hits = correct(g.value(logits), model.config().num_classes, labels);
    let loss = g.softmax_cross_entropy(logits, labels)?;
    let value = g.value(loss)[0].as_f64();
    let grads = g.backward(loss)?;
    Ok((value, hits, grads))
}

/// Splits the batch across `threads` workers and averages their gradients.
fn parallel_grads<T: Real>(
    model: &Model<T>,
    data: &Dataset,
    idx: &[usize],
    threads: usize,
    flip: Option<&mut dyn rand::RngCore>,
) -> Result<(f64, usize, ParamGrads<T>)> {
    let (x, labels) = data.batch::<T>(idx, flip);
    if threads <= 1 || idx.len() < 2 {
        return batch_grads(model, &x, &labels);
    }
    let per = idx.len().div_ceil(threads);
    let image = x.len() / idx.len();
    let mut shape = x.shape().to_vec();
    let parts: Vec<(Tensor<T>, &[usize])> = labels
        .chunks(per)
        .enumerate()
        .map(|(k, lab)| {
            shape[0] = lab.len();
            let start = k * per * image;
            let t = Tensor::new(shape.clone(), x.data()[start..start + lab.len() * image].to_vec())
                .expect("sub-batch extent");
            (t, lab)
        })
        .collect();
    let results: Vec<Result<(f64, usize, ParamGrads<T>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .iter()
            .map(|(t, lab)| s.spawn(move || batch_grads(model, t, lab)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let total = idx.len() as f64;
    let mut loss = 0.0;
    let mut hits = 0;
    let mut merged: Option<ParamGrads<T>> = None;
    for ((l, h, mut g), (_, lab)) in results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().zip(&parts) {
        let w = lab.len() as f64 / total;
        loss += l * w;
        hits += h;
        g.scale(T::of(w));
        match merged.as_mut() {
            Some(m) => m.merge(g),
            None => merged = Some(g),
        }
    }
    Ok((loss, hits, merged.expect("at least one part")))
}

/// Runs epochs `state.epoch + 1 ..= cfg.epochs`, stopping early once
/// `cfg.max_steps` optimizer steps have been taken in total. `on_epoch` sees
/// each metrics row as soon as it is complete.
pub fn train<T: Real>(
    state: &mut TrainState<T>,
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.num_classes() != state.model.config().num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model {}",
            data.num_classes(),
            state.model.config().num_classes
        )));
    }
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let schedule = Schedule {
        kind: cfg.schedule,
        base_lr: cfg.base_lr,
        warmup_steps: cfg.warmup_epochs as u64 * steps_per_epoch,
        total_steps: cfg.epochs as u64 * steps_per_epoch,
    };
    let max_steps = cfg.max_steps.map_or(u64::MAX, |m| m as u64);
    let mut report = TrainReport {
        initial_loss: None,
        epochs: Vec::new(),
        step_losses: Vec::new(),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    while state.epoch < cfg.epochs as u64 && state.optimizer.steps_taken() < max_steps {
        let epoch = state.epoch + 1;
        order.sort_unstable();
        order.shuffle(&mut state.rng);
        let (mut loss_sum, mut hits, mut seen, mut lr) = (0.0, 0usize, 0usize, 0.0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            if state.optimizer.steps_taken() >= max_steps {
                break;
            }
            lr = schedule.lr(state.optimizer.steps_taken());
            let flip: Option<&mut dyn rand::RngCore> = if cfg.hflip { Some(&mut state.rng) } else { None };
            let (loss, h, grads) = parallel_grads(&state.model, data, idx, cfg.threads, flip)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {bi}, lr {lr:e}"
                )));
            }
            report.initial_loss.get_or_insert(loss);
            report.step_losses.push(loss);
            state.optimizer.step(&mut state.model.store, &grads, lr)?;
            state.model.net.project(&mut state.model.store);
            loss_sum += loss * idx.len() as f64;
            hits += h;
            seen += idx.len();
        }
        state.epoch = epoch;
        let eval_acc = match eval {
            Some(e) => Some(evaluate(&state.model, e, cfg.eval_batch_size)?.accuracy),
            None => None,
        };
        let row = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: hits as f64 / seen.max(1) as f64,
            eval_acc,
        };
        on_epoch(&row);
        report.epochs.push(row);
    }
    Ok(report)
}

/// Top-1 accuracy and mean cross-entropy; never touches the parameters.
pub fn evaluate<T: Real>(model: &Model<T>, data: &Dataset, batch_size: usize) -> Result<EvalResult> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let classes = model.config().num_classes;
    let (mut loss_sum, mut hits) = (0.0, 0usize);
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(batch_size) {
        let (x, labels) = data.batch::<T>(idx, None);
        let mut g = Graph::new(&model.store);
        let xv = g.input(x);
        let logits = model.net.forward(&mut g, xv)?;
        hits += correct(g.value(logits), classes, &labels);
        let loss = g.softmax_cross_entropy(logits, &labels)?;
        loss_sum += g.value(loss)[0].as_f64() * idx.len() as f64;
    }
    let n = data.len().max(1) as f64;
    Ok(EvalResult {
        accuracy: hits as f64 / n,
        mean_loss: loss_sum / n,
        count: data.len(),
    })
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,eval_acc";

pub fn metrics_row(m: &EpochMetrics) -> String {
    let eval = m.eval_acc.map(|a| format!("{a}")).unwrap_or_default();
    format!("{},{:e},{},{},{}", m.epoch, m.lr, m.train_loss, m.train_acc, eval)
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&metrics_row(r));
        s.push('\n');
    }
    s
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(metrics_csv(rows).as_bytes()).map_err(|e| Error::io(path, e))
}
