use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    AdamW,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::AdamW => "adamw",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            OptimizerKind::SgdMomentum => 0,
            OptimizerKind::AdamW => 1,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(OptimizerKind::SgdMomentum),
            1 => Some(OptimizerKind::AdamW),
            _ => None,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Hyperparameters other than the learning rate, which is passed per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub weight_decay: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, weight_decay: f64) -> Self {
        Self {
            kind,
            weight_decay,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// SGD with heavy-ball momentum (weight decay added to the gradient) or
/// AdamW (decoupled weight decay). Decay applies only to tensors of rank 2
/// and above.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<T> {
    cfg: OptimizerConfig,
    step: u64,
    /// Momentum (SGD) or first moment (AdamW), one per parameter.
    first: Vec<Vec<T>>,
    /// Second moment (AdamW only).
    second: Vec<Vec<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new<S: Real>(cfg: OptimizerConfig, store: &ParamStore<S>) -> Self {
        let zeros = || -> Vec<Vec<T>> { store.ids().map(|id| vec![T::zero(); store.get(id).len()]).collect() };
        let second = if cfg.kind == OptimizerKind::AdamW { zeros() } else { Vec::new() };
        Self {
            cfg,
            step: 0,
            first: zeros(),
            second,
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn buffers(&self) -> impl Iterator<Item = &Vec<T>> {
        self.first.iter().chain(&self.second)
    }

    pub(crate) fn from_parts(cfg: OptimizerConfig, step: u64, buffers: Vec<Vec<T>>) -> Result<Self> {
        let mut first = buffers;
        let second = if cfg.kind == OptimizerKind::AdamW {
            if first.len() % 2 != 0 {
                return Err(Error::Config("adamw state needs an even buffer count".into()));
            }
            first.split_off(first.len() / 2)
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg,
            step,
            first,
            second,
        })
    }

    /// Checks that the state matches the parameter layout of `store`.
    pub fn check_layout<S: Real>(&self, store: &ParamStore<S>) -> Result<()> {
        let want: Vec<usize> = store.ids().map(|id| store.get(id).len()).collect();
        let have: Vec<usize> = self.first.iter().map(Vec::len).collect();
        let second: Vec<usize> = self.second.iter().map(Vec::len).collect();
        let second_ok = match self.cfg.kind {
            OptimizerKind::AdamW => second == want,
            OptimizerKind::SgdMomentum => second.is_empty(),
        };
        if have != want || !second_ok {
            return Err(Error::shape("optimizer", "state layout does not match the model parameters"));
        }
        Ok(())
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &ParamGrads<T>, lr: f64) -> Result<()> {
        self.check_layout(store)?;
        self.step += 1;
        let lr = T::of(lr);
        let wd = T::of(self.cfg.weight_decay);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let Some(g) = grads.get(id) else { continue };
            let decay = store.get(id).shape().len() >= 2;
            let p = store.get_mut(id).data_mut();
            match self.cfg.kind {
                OptimizerKind::SgdMomentum => {
                    let mu = T::of(self.cfg.momentum);
                    for ((p, &g), v) in p.iter_mut().zip(g).zip(&mut self.first[k]) {
                        let g = if decay { g + wd * *p } else { g };
                        *v = mu * *v + g;
                        *p -= lr * *v;
                    }
                }
                OptimizerKind::AdamW => {
                    let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
                    let c1 = T::of(1.0 - b1.powi(self.step as i32));
                    let c2 = T::of(1.0 - b2.powi(self.step as i32));
                    let (b1, b2, eps) = (T::of(b1), T::of(b2), T::of(self.cfg.eps));
                    let one = T::one();
                    for (((p, &g), m), v) in p.iter_mut().zip(g).zip(&mut self.first[k]).zip(&mut self.second[k]) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                        let shrink = if decay { wd * *p } else { T::zero() };
                        *p -= lr * (update + shrink);
                    }
                }
            }
        }
        Ok(())
    }
}
