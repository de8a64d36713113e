//! Analytic parameter and multiply-accumulate counts.
//!
//! MACs count every multiply of a matrix product or convolution, five per
//! element for the stencil plus one for the `k` scale, and the `C x C` gate
//! of input-dependent `k`. Normalization, activations, pooling and
//! additions are not counted.

use super::config::{check_resolution, ModelConfig};
use crate::error::Result;
use crate::hc::KMode;
use crate::ra::RaLayer;

fn hc_params(cfg: &ModelConfig, c: usize) -> usize {
    4 * c
        + match cfg.k_mode {
            KMode::Fixed(_) => 0,
            KMode::Learnable => c,
            KMode::InputDependent => c * c + c,
        }
}

fn block_params(cfg: &ModelConfig, c: usize) -> usize {
    let norm = if cfg.norm_enabled { 4 * c } else { 0 };
    norm + hc_params(cfg, c) + RaLayer::param_count(c, cfg.ra_hidden(c), cfg.use_filter)
}

/// Reference size of a named variant, with the tolerance a faithful
/// reconstruction is expected to meet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub name: &'static str,
    pub params: f64,
    pub macs: f64,
    pub resolution: usize,
    pub params_tol: f64,
    pub macs_tol: f64,
}

impl Budget {
    pub fn params_ok(&self, params: usize) -> bool {
        (params as f64 / self.params - 1.0).abs() <= self.params_tol
    }

    pub fn macs_ok(&self, macs: u64) -> bool {
        (macs as f64 / self.macs - 1.0).abs() <= self.macs_tol
    }
}

/// The reference budget of `cfg` if its stage layout is one of the named
/// ImageNet variants.
pub fn reference_budget(cfg: &ModelConfig) -> Option<Budget> {
    let table = [
        ("hcnet-t", ModelConfig::hcnet_t(), 28e6, 4.1e9),
        ("hcnet-s", ModelConfig::hcnet_s(), 51e6, 8.6e9),
        ("hcnet-b", ModelConfig::hcnet_b(), 85e6, 14.2e9),
    ];
    table
        .into_iter()
        .find(|(_, c, _, _)| {
            c.stage_blocks == cfg.stage_blocks
                && c.stage_dims == cfg.stage_dims
                && c.num_classes == cfg.num_classes
                && c.input_channels == cfg.input_channels
        })
        .map(|(name, _, params, macs)| Budget {
            name,
            params,
            macs,
            resolution: 224,
            params_tol: 0.10,
            macs_tol: 0.15,
        })
}

/// Learnable scalars of a model built from `cfg`.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let d = cfg.stage_dims;
    let mut total = cfg.input_channels * 16 * d[0] + d[0];
    for s in 0..4 {
        if s > 0 {
            total += 4 * d[s - 1] * d[s] + d[s];
        }
        total += cfg.stage_blocks[s] * block_params(cfg, d[s]);
    }
    total + d[3] * cfg.num_classes + cfg.num_classes
}

/// Multiply-accumulates for one `resolution x resolution` sample.
pub fn count_macs(cfg: &ModelConfig, resolution: usize) -> Result<u64> {
    check_resolution(resolution)?;
    let d = cfg.stage_dims.map(|v| v as u64);
    let mut side = (resolution / 4) as u64;
    let mut total = side * side * cfg.input_channels as u64 * 16 * d[0];
    for s in 0..4 {
        if s > 0 {
            side /= 2;
            total += side * side * 4 * d[s - 1] * d[s];
        }
        let c = d[s];
        let p = side * side;
        let h = cfg.ra_hidden(c as usize) as u64;
        let gate = if cfg.k_mode == KMode::InputDependent { c * c } else { 0 };
        let filter = if cfg.use_filter { 9 * h * p } else { 0 };
        let block = 6 * c * p + gate + 2 * c * h * p + filter;
        total += cfg.stage_blocks[s] as u64 * block;
    }
    Ok(total + d[3] * cfg.num_classes as u64)
}
