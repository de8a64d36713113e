//! Refinement layer: expand channels, apply a nonlinearity and a depthwise
//! filter, contract back, add to the input.
//!
//! The nonlinearity turns each expanded channel into new frequency content
//! and the filter selects among it; the contraction combines the results
//! into one extra term of the series.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Graph, ParamId, ParamStore};
use crate::tensor::{PaddingMode, Real, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    /// Makes the whole term linear in its input.
    Identity,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Gelu => "gelu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Noise amplitude of the off-centre filter taps at initialization.
const FILTER_NOISE: f64 = 0.01;

/// Parameter handles of one refinement layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RaLayer {
    channels: usize,
    hidden: usize,
    activation: Activation,
    expand_w: ParamId,
    expand_b: ParamId,
    filter: Option<ParamId>,
    contract_w: ParamId,
    contract_b: ParamId,
}

impl RaLayer {
    /// Registers `{prefix}.expand_w` `[C,hidden]`, `{prefix}.expand_b`,
    /// `{prefix}.filter` `[hidden,3,3]` (when `use_filter`),
    /// `{prefix}.contract_w` `[hidden,C]` and `{prefix}.contract_b`.
    ///
    /// Linear weights are uniform in `+-1/sqrt(fan_in)`, biases zero, the
    /// filter a centre tap of 1 plus small uniform noise.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        hidden: usize,
        use_filter: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let uniform = |shape: [usize; 2], fan_in: usize, rng: &mut dyn rand::RngCore| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
        };
        let expand_w = store.add(format!("{prefix}.expand_w"), uniform([channels, hidden], channels, rng));
        let expand_b = store.add(format!("{prefix}.expand_b"), Tensor::zeros([hidden]));
        let filter = use_filter.then(|| {
            let k = Tensor::from_fn([hidden, 3, 3], |i| {
                if i % 9 == 4 {
                    T::one()
                } else {
                    T::of(rng.gen_range(-FILTER_NOISE..FILTER_NOISE))
                }
            });
            store.add(format!("{prefix}.filter"), k)
        });
        let contract_w = store.add(format!("{prefix}.contract_w"), uniform([hidden, channels], hidden, rng));
        let contract_b = store.add(format!("{prefix}.contract_b"), Tensor::zeros([channels]));
        Self {
            channels,
            hidden,
            activation: Activation::Gelu,
            expand_w,
            expand_b,
            filter,
            contract_w,
            contract_b,
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn uses_filter(&self) -> bool {
        self.filter.is_some()
    }

    pub fn expand_ids(&self) -> (ParamId, ParamId) {
        (self.expand_w, self.expand_b)
    }

    pub fn filter_id(&self) -> Option<ParamId> {
        self.filter
    }

    pub fn contract_ids(&self) -> (ParamId, ParamId) {
        (self.contract_w, self.contract_b)
    }

    /// The expanded candidate terms `g_m` after the nonlinearity and filter,
    /// `[hidden, H, W]` per sample.
    pub fn features<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        let (ew, eb) = (g.param(self.expand_w), g.param(self.expand_b));
        let zm = g.channel_linear(z, ew, Some(eb))?;
        let act = match self.activation {
            Activation::Gelu => g.gelu(zm),
            Activation::Identity => zm,
        };
        let gm = match self.filter {
            Some(id) => {
                let k = g.param(id);
                g.depthwise_conv2d(act, k, PaddingMode::Replicate)?
            }
            None => act,
        };
        Ok(gm)
    }

    /// The appended term `z_M` without the residual.
    pub fn term<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        let gm = self.features(g, z)?;
        let (cw, cb) = (g.param(self.contract_w), g.param(self.contract_b));
        g.channel_linear(gm, cw, Some(cb))
    }

    /// `z + term(z)`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        let t = self.term(g, z)?;
        g.add(z, t)
    }

    pub fn apply<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let zv = g.leaf(z);
        let out = self.forward(&mut g, zv)?;
        Ok(g.tensor(out))
    }

    pub fn apply_features<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let zv = g.leaf(z);
        let out = self.features(&mut g, zv)?;
        Ok(g.tensor(out))
    }

    pub fn apply_term<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let zv = g.leaf(z);
        let out = self.term(&mut g, zv)?;
        Ok(g.tensor(out))
    }

    /// Learnable scalars of one layer.
    pub fn param_count(channels: usize, hidden: usize, use_filter: bool) -> usize {
        let filter = if use_filter { 9 * hidden } else { 0 };
        channels * hidden + hidden + filter + hidden * channels + channels
    }
}

/// Hidden width for a filterless layer that matches the parameter count of
/// a filtered layer of width `expansion * channels`.
pub fn rebalanced_hidden(channels: usize, expansion: usize) -> usize {
    let h = (expansion * channels) as f64;
    let c = channels as f64;
    (h * (2.0 * c + 10.0) / (2.0 * c + 1.0)).round() as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(store: &mut ParamStore<f64>, use_filter: bool) -> RaLayer {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        RaLayer::new(store, "ra", 2, 8, use_filter, &mut rng)
    }

    fn input() -> Tensor<f64> {
        Tensor::from_fn([2, 4, 4], |i| (i as f64 * 0.37).sin())
    }

    #[test]
    fn zero_contraction_leaves_input() {
        let mut store = ParamStore::new();
        let ra = layer(&mut store, true);
        store.get_mut(ra.contract_ids().0).data_mut().fill(0.0);
        assert_eq!(ra.apply(&store, &input()).unwrap().data(), input().data());
    }

    #[test]
    fn zero_expansion_leaves_input() {
        for use_filter in [true, false] {
            let mut store = ParamStore::new();
            let ra = layer(&mut store, use_filter);
            store.get_mut(ra.expand_ids().0).data_mut().fill(0.0);
            assert_eq!(ra.apply(&store, &input()).unwrap().data(), input().data());
        }
    }

    #[test]
    fn forward_is_input_plus_term() {
        let mut store = ParamStore::new();
        let ra = layer(&mut store, true);
        store.get_mut(ra.expand_ids().1).data_mut().fill(0.3);
        store.get_mut(ra.contract_ids().1).data_mut().fill(-0.2);
        let z = input();
        let full = ra.apply(&store, &z).unwrap();
        let term = ra.apply_term(&store, &z).unwrap();
        for ((f, t), x) in full.data().iter().zip(term.data()).zip(z.data()) {
            assert_eq!(*f, x + t);
        }
    }

    #[test]
    fn zero_input_gives_zero_term() {
        let mut store = ParamStore::new();
        let ra = layer(&mut store, true);
        let term = ra.apply_term(&store, &Tensor::zeros([2, 3, 5])).unwrap();
        assert!(term.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn filter_initializes_near_pass_through() {
        let mut store = ParamStore::new();
        let ra = layer(&mut store, true);
        let k = store.get(ra.filter_id().unwrap());
        for (i, &v) in k.data().iter().enumerate() {
            if i % 9 == 4 {
                assert_eq!(v, 1.0);
            } else {
                assert!(v.abs() < FILTER_NOISE);
            }
        }
    }

    #[test]
    fn rebalanced_width_matches_parameter_count() {
        for c in [16, 64, 320, 512] {
            let with = RaLayer::param_count(c, 4 * c, true) as f64;
            let without = RaLayer::param_count(c, rebalanced_hidden(c, 4), false) as f64;
            // Rounding the width moves the count by at most half a column.
            assert!((with - without).abs() <= (2 * c + 1) as f64 / 2.0, "c={c}");
        }
    }
}
