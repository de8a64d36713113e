use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::hc::HcLayer;
use crate::params::{Graph, ParamId, ParamStore};
use crate::ra::RaLayer;
use crate::tensor::{Real, Tensor, Var};

pub const NORM_EPS: f64 = 1e-6;

/// Per-channel affine of a channel layer norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full([c], T::one())),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros([c])),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.channel_norm(x, gamma, beta, T::of(NORM_EPS))
    }
}

/// `x + hc(norm1(x))` followed by `x + ra(norm2(x))`. Without norms this is
/// the plain composition of the two residual layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub norm1: Option<Norm>,
    pub hc: HcLayer,
    pub norm2: Option<Norm>,
    pub ra: RaLayer,
}

impl Block {
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, cfg: &ModelConfig) -> Result<Var> {
        let n1 = match &self.norm1 {
            Some(n) => n.forward(g, x)?,
            None => x,
        };
        let inc = self.hc.increment(g, n1, cfg.boundary)?;
        let x = g.add(x, inc)?;
        let n2 = match &self.norm2 {
            Some(n) => n.forward(g, x)?,
            None => x,
        };
        let term = self.ra.term(g, n2)?;
        g.add(x, term)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

/// Parameter handles and wiring of the backbone. Holds no values, so the
/// same network runs against any compatible [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct HcNet {
    config: ModelConfig,
    stem: Linear,
    merges: Vec<Linear>,
    stages: Vec<Vec<Block>>,
    head: Linear,
}

fn uniform<T: Real>(shape: [usize; 2], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = 1.0 / (shape[0] as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}

impl HcNet {
    fn new<T: Real>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.stage_dims;
        let linear = |store: &mut ParamStore<T>, name: &str, fan_in: usize, out: usize, rng: &mut ChaCha8Rng| Linear {
            w: store.add(format!("{name}.w"), uniform([fan_in, out], rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros([out])),
        };
        let stem = linear(store, "stem", cfg.input_channels * 16, d[0], rng);
        let mut merges = Vec::new();
        let mut stages = Vec::new();
        for s in 0..4 {
            if s > 0 {
                merges.push(linear(store, &format!("stages.{s}.merge"), 4 * d[s - 1], d[s], rng));
            }
            let c = d[s];
            let blocks = (0..cfg.stage_blocks[s])
                .map(|bi| {
                    let p = format!("stages.{s}.blocks.{bi}");
                    let norm1 = cfg.norm_enabled.then(|| Norm::new(store, &format!("{p}.norm1"), c));
                    let hc = HcLayer::new(store, &format!("{p}.hc"), c, cfg.k_mode).with_clamp(cfg.clamp_diffusivity);
                    let norm2 = cfg.norm_enabled.then(|| Norm::new(store, &format!("{p}.norm2"), c));
                    let ra = RaLayer::new(store, &format!("{p}.ra"), c, cfg.ra_hidden(c), cfg.use_filter, rng);
                    Block { norm1, hc, norm2, ra }
                })
                .collect();
            stages.push(blocks);
        }
        let head = linear(store, "head", d[3], cfg.num_classes, rng);
        Self {
            config: cfg.clone(),
            stem,
            merges,
            stages,
            head,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.stages.iter().flatten()
    }

    fn check_input(&self, shape: &[usize]) -> Result<bool> {
        let (batched, c, h, w) = match *shape {
            [c, h, w] => (false, c, h, w),
            [_, c, h, w] => (true, c, h, w),
            _ => return Err(Error::shape("forward", format!("expected [C,H,W] or [B,C,H,W], got {shape:?}"))),
        };
        if c != self.config.input_channels {
            return Err(Error::shape(
                "forward",
                format!("model takes {} channels, input {shape:?}", self.config.input_channels),
            ));
        }
        for r in [h, w] {
            super::config::check_resolution(r)?;
        }
        Ok(batched)
    }

    fn run<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, with_blocks: bool) -> Result<Var> {
        let batched = self.check_input(g.shape(x))?;
        let (w, b) = (g.param(self.stem.w), g.param(self.stem.b));
        let mut x = g.patch_embed(x, w, Some(b), 4)?;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                let m = self.merges[s - 1];
                let (w, b) = (g.param(m.w), g.param(m.b));
                x = g.patch_embed(x, w, Some(b), 2)?;
            }
            if with_blocks {
                for block in blocks {
                    x = block.forward(g, x, &self.config)?;
                }
            }
        }
        let pooled = g.global_avg_pool(x)?;
        let d = self.config.stage_dims[3];
        let rows = if batched { pooled } else { g.reshape(pooled, &[1, d])? };
        let (w, b) = (g.param(self.head.w), g.param(self.head.b));
        let logits = g.matmul(rows, w)?;
        let logits = g.add_row_bias(logits, b)?;
        if batched {
            Ok(logits)
        } else {
            g.reshape(logits, &[self.config.num_classes])
        }
    }

    /// Logits `[B,K]` for a batch, `[K]` for a single image.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.run(g, x, true)
    }

    /// Stem, merges and head with every block removed.
    pub fn forward_skipping_blocks<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        self.run(g, x, false)
    }

    /// Mean cross-entropy of a batch.
    pub fn loss<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, labels: &[usize]) -> Result<Var> {
        let logits = self.forward(g, x)?;
        g.softmax_cross_entropy(logits, labels)
    }

    /// Applies the post-step projections of every layer.
    pub fn project<T: Real>(&self, store: &mut ParamStore<T>) {
        for b in self.blocks() {
            b.hc.project(store);
        }
    }
}

/// A network together with its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    pub net: HcNet,
    pub store: ParamStore<T>,
}

/// Builds and initializes a model. The same `(cfg, seed)` always yields
/// bit-identical parameters.
pub fn build_model<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<Model<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let net = HcNet::new(cfg, &mut store, &mut rng);
    Ok(Model { net, store })
}

impl<T: Real> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        self.net.config()
    }

    pub fn count_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn count_macs(&self, resolution: usize) -> Result<u64> {
        super::count_macs(self.config(), resolution)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.store);
        let xv = g.leaf(x);
        let out = self.net.forward(&mut g, xv)?;
        Ok(g.tensor(out))
    }

    pub fn logits_skipping_blocks(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.store);
        let xv = g.leaf(x);
        let out = self.net.forward_skipping_blocks(&mut g, xv)?;
        Ok(g.tensor(out))
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            net: self.net.clone(),
            store: self.store.cast(),
        }
    }
}
