//! Heat-conduction layer: one explicit diffusion step per channel with a
//! learnable five-point stencil and a step ratio `k`.
//!
//! For channel `c` the update is `z + k_c * h_c` where
//! `h_c = w0 z[i+1,j] + w1 z[i-1,j] + w2 z[i,j+1] + w3 z[i,j-1] - W_c z[i,j]`
//! and `W_c = w0 + w1 + w2 + w3`. With non-negative `w` and fixed `k` this is
//! exactly [`crate::pde::fdm_step`] with `alpha = w` and `dt / dx^2 = k`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{Graph, ParamId, ParamStore};
use crate::tensor::{PaddingMode, Real, Tensor, Var};

/// How the per-channel step ratio is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KMode {
    /// The same constant for every channel and input.
    Fixed(f64),
    /// A learned `[C]` vector, used as is.
    Learnable,
    /// `sigmoid(GAP(z) W + b)` per sample and channel.
    InputDependent,
}

impl fmt::Display for KMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KMode::Fixed(v) => write!(f, "fixed:{v}"),
            KMode::Learnable => f.write_str("learnable"),
            KMode::InputDependent => f.write_str("input_dependent"),
        }
    }
}

impl FromStr for KMode {
    type Err = Error;

    /// `fixed:<value>`, `fixed` (0.5), `learnable`, `input_dependent`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learnable" => Ok(KMode::Learnable),
            "input_dependent" | "input-dependent" => Ok(KMode::InputDependent),
            "fixed" => Ok(KMode::Fixed(HcLayer::INITIAL_K)),
            other => match other.strip_prefix("fixed:") {
                Some(v) => v
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(KMode::Fixed)
                    .ok_or_else(|| Error::Config(format!("bad fixed k value {v:?}"))),
                None => Err(Error::Config(format!("unknown k mode {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum KParams {
    Fixed(f64),
    Learnable(ParamId),
    InputDependent { weight: ParamId, bias: ParamId },
}

/// Parameter handles of one heat-conduction layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HcLayer {
    channels: usize,
    w: ParamId,
    k: KParams,
    clamp_diffusivity: bool,
}

impl HcLayer {
    pub const INITIAL_W: f64 = 0.25;
    pub const INITIAL_K: f64 = 0.5;

    /// Registers `{prefix}.w` `[C,4]` and, depending on `k_mode`,
    /// `{prefix}.k` `[C]` or `{prefix}.k_weight` `[C,C]` + `{prefix}.k_bias` `[C]`.
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, channels: usize, k_mode: KMode) -> Self {
        let w = store.add(format!("{prefix}.w"), Tensor::full([channels, 4], T::of(Self::INITIAL_W)));
        let k = match k_mode {
            KMode::Fixed(v) => KParams::Fixed(v),
            KMode::Learnable => {
                KParams::Learnable(store.add(format!("{prefix}.k"), Tensor::full([channels], T::of(Self::INITIAL_K))))
            }
            KMode::InputDependent => KParams::InputDependent {
                weight: store.add(format!("{prefix}.k_weight"), Tensor::zeros([channels, channels])),
                bias: store.add(format!("{prefix}.k_bias"), Tensor::zeros([channels])),
            },
        };
        Self {
            channels,
            w,
            k,
            clamp_diffusivity: false,
        }
    }

    /// Projects `w` onto `w >= 0` after every optimizer step.
    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp_diffusivity = clamp;
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn k_mode(&self) -> KMode {
        match self.k {
            KParams::Fixed(v) => KMode::Fixed(v),
            KParams::Learnable(_) => KMode::Learnable,
            KParams::InputDependent { .. } => KMode::InputDependent,
        }
    }

    pub fn w_id(&self) -> ParamId {
        self.w
    }

    pub fn k_id(&self) -> Option<ParamId> {
        match self.k {
            KParams::Learnable(id) => Some(id),
            _ => None,
        }
    }

    /// `(weight, bias)` of the gate in input-dependent mode.
    pub fn k_linear_ids(&self) -> Option<(ParamId, ParamId)> {
        match self.k {
            KParams::InputDependent { weight, bias } => Some((weight, bias)),
            _ => None,
        }
    }

    fn check_channels(&self, g: &Graph<'_, impl Real>, z: Var) -> Result<()> {
        let shape = g.shape(z);
        let c = match shape.len() {
            3 => shape[0],
            4 => shape[1],
            _ => return Err(Error::shape("hc_forward", format!("expected [C,H,W] or [B,C,H,W], got {shape:?}"))),
        };
        if c != self.channels {
            return Err(Error::shape(
                "hc_forward",
                format!("layer has {} channels, input {shape:?}", self.channels),
            ));
        }
        Ok(())
    }

    /// `sigmoid(GAP(z) W + b)`: `[C]` for an unbatched input, `[B,C]` for a
    /// batch.
    pub fn k_values<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        let KParams::InputDependent { weight, bias } = self.k else {
            return Err(Error::Usage(format!(
                "k values are only computed in input_dependent mode, layer is {}",
                self.k_mode()
            )));
        };
        self.check_channels(g, z)?;
        let pooled = g.global_avg_pool(z)?;
        let unbatched = g.shape(pooled).len() == 1;
        let rows = if unbatched {
            g.reshape(pooled, &[1, self.channels])?
        } else {
            pooled
        };
        let (wv, bv) = (g.param(weight), g.param(bias));
        let lin = g.matmul(rows, wv)?;
        let lin = g.add_row_bias(lin, bv)?;
        let k = g.sigmoid(lin);
        if unbatched {
            g.reshape(k, &[self.channels])
        } else {
            Ok(k)
        }
    }

    /// The diffusion increment `k * h` alone.
    pub fn increment<T: Real>(&self, g: &mut Graph<'_, T>, z: Var, boundary: PaddingMode) -> Result<Var> {
        self.check_channels(g, z)?;
        let w = g.param(self.w);
        let h = g.heat_stencil(z, w, boundary)?;
        match self.k {
            KParams::Fixed(v) => Ok(g.scale(h, T::of(v))),
            KParams::Learnable(id) => {
                let k = g.param(id);
                g.scale_channels(h, k)
            }
            KParams::InputDependent { .. } => {
                let k = self.k_values(g, z)?;
                g.scale_channels(h, k)
            }
        }
    }

    /// `z + k * h`.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, z: Var, boundary: PaddingMode) -> Result<Var> {
        let inc = self.increment(g, z, boundary)?;
        g.add(z, inc)
    }

    /// Evaluates [`HcLayer::forward`] on a plain tensor.
    pub fn apply<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>, boundary: PaddingMode) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let zv = g.leaf(z);
        let out = self.forward(&mut g, zv, boundary)?;
        Ok(g.tensor(out))
    }

    /// Clamps `w` to be non-negative when the layer was built with
    /// [`HcLayer::with_clamp`]; a no-op otherwise.
    pub fn project<T: Real>(&self, store: &mut ParamStore<T>) {
        if self.clamp_diffusivity {
            for v in store.get_mut(self.w).data_mut() {
                *v = v.max(T::zero());
            }
        }
    }
}
