use std::fmt::Write as _;

use crate::config::{parse_bool, KvMap};
use crate::error::{Error, Result};
use crate::hc::KMode;
use crate::ra::rebalanced_hidden;
use crate::tensor::PaddingMode;

/// Total downsampling of the backbone: a stride-4 stem and three stride-2
/// merges.
pub const TOTAL_STRIDE: usize = 32;

/// Architecture of a four-stage backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stage_blocks: [usize; 4],
    pub stage_dims: [usize; 4],
    pub num_classes: usize,
    pub input_channels: usize,
    pub input_resolution: usize,
    pub k_mode: KMode,
    pub use_filter: bool,
    /// Hidden width of the refinement layers as a multiple of the stage dim.
    pub expansion: usize,
    /// Channel layer norm in front of each layer of a block.
    pub norm_enabled: bool,
    pub boundary: PaddingMode,
    /// Keep the stencil weights non-negative during training.
    pub clamp_diffusivity: bool,
    /// Widen filterless refinement layers to the parameter count of the
    /// filtered ones.
    pub rebalance_filterless: bool,
}

impl ModelConfig {
    fn imagenet(stage_blocks: [usize; 4], stage_dims: [usize; 4]) -> Self {
        Self {
            stage_blocks,
            stage_dims,
            num_classes: 1000,
            input_channels: 3,
            input_resolution: 224,
            k_mode: KMode::InputDependent,
            use_filter: true,
            expansion: 4,
            norm_enabled: true,
            boundary: PaddingMode::Replicate,
            clamp_diffusivity: false,
            rebalance_filterless: false,
        }
    }

    pub fn hcnet_t() -> Self {
        Self::imagenet([5, 5, 14, 5], [64, 128, 320, 512])
    }

    pub fn hcnet_s() -> Self {
        Self::imagenet([6, 6, 18, 6], [64, 192, 384, 768])
    }

    pub fn hcnet_b() -> Self {
        Self::imagenet([10, 10, 28, 10], [96, 192, 384, 768])
    }

    /// Desk-scale variant for 32x32 single-channel digits. Not one of the
    /// ImageNet sizes.
    pub fn nano() -> Self {
        Self {
            num_classes: 10,
            input_channels: 1,
            input_resolution: 32,
            ..Self::imagenet([1, 1, 2, 1], [16, 32, 64, 128])
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "hcnet-t" | "hcnet_t" => Ok(Self::hcnet_t()),
            "hcnet-s" | "hcnet_s" => Ok(Self::hcnet_s()),
            "hcnet-b" | "hcnet_b" => Ok(Self::hcnet_b()),
            "nano" | "hcnet-nano" => Ok(Self::nano()),
            other => Err(Error::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.stage_dims;
        if d.iter().any(|&v| v == 0) || d.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!("stage dims must be positive and non-decreasing, got {d:?}")));
        }
        check_resolution(self.input_resolution)?;
        if self.num_classes == 0 || self.input_channels == 0 || self.expansion == 0 {
            return Err(Error::Config(
                "num_classes, input_channels and expansion must be positive".into(),
            ));
        }
        if let KMode::Fixed(k) = self.k_mode {
            if !k.is_finite() {
                return Err(Error::Config(format!("fixed k must be finite, got {k}")));
            }
        }
        Ok(())
    }

    /// Hidden width of the refinement layers in a stage of `channels`.
    pub fn ra_hidden(&self, channels: usize) -> usize {
        if !self.use_filter && self.rebalance_filterless {
            rebalanced_hidden(channels, self.expansion)
        } else {
            self.expansion * channels
        }
    }

    /// Reads every model key from `kv`, starting from `base` for keys that
    /// are absent. Keys that are not model keys are left in place.
    pub fn take_from(kv: &mut KvMap, base: ModelConfig) -> Result<Self> {
        let mut cfg = match kv.take_raw("model") {
            Some(name) => Self::preset(&name)?,
            None => base,
        };
        if let Some(v) = kv.take_array("stage_blocks")? {
            cfg.stage_blocks = v;
        }
        if let Some(v) = kv.take_array("stage_dims")? {
            cfg.stage_dims = v;
        }
        cfg.num_classes = kv.take_or("num_classes", cfg.num_classes)?;
        cfg.input_channels = kv.take_or("input_channels", cfg.input_channels)?;
        cfg.input_resolution = kv.take_or("input_resolution", cfg.input_resolution)?;
        cfg.k_mode = kv.take_or("k_mode", cfg.k_mode)?;
        cfg.expansion = kv.take_or("expansion", cfg.expansion)?;
        cfg.boundary = kv.take_or("boundary", cfg.boundary)?;
        for (key, slot) in [
            ("use_filter", &mut cfg.use_filter),
            ("norm_enabled", &mut cfg.norm_enabled),
            ("clamp_diffusivity", &mut cfg.clamp_diffusivity),
            ("rebalance_filterless", &mut cfg.rebalance_filterless),
        ] {
            if let Some(v) = kv.take_raw(key) {
                *slot = parse_bool(&v).map_err(|e| Error::Config(format!("{key}: {e}")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a document that holds only model keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let cfg = Self::take_from(&mut kv, Self::nano())?;
        kv.finish()?;
        Ok(cfg)
    }

    /// Canonical text form; [`ModelConfig::parse`] inverts it.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize; 4]| v.map(|x| x.to_string()).join(",");
        let mut s = String::new();
        let _ = writeln!(s, "stage_blocks = {}", join(&self.stage_blocks));
        let _ = writeln!(s, "stage_dims = {}", join(&self.stage_dims));
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "input_channels = {}", self.input_channels);
        let _ = writeln!(s, "input_resolution = {}", self.input_resolution);
        let _ = writeln!(s, "k_mode = {}", self.k_mode);
        let _ = writeln!(s, "use_filter = {}", self.use_filter);
        let _ = writeln!(s, "expansion = {}", self.expansion);
        let _ = writeln!(s, "norm_enabled = {}", self.norm_enabled);
        let _ = writeln!(s, "boundary = {}", self.boundary);
        let _ = writeln!(s, "clamp_diffusivity = {}", self.clamp_diffusivity);
        let _ = writeln!(s, "rebalance_filterless = {}", self.rebalance_filterless);
        s
    }
}

pub(crate) fn check_resolution(r: usize) -> Result<()> {
    if r == 0 || r % TOTAL_STRIDE != 0 {
        return Err(Error::Config(format!(
            "resolution {r} is not a positive multiple of {TOTAL_STRIDE}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trips() {
        for mut cfg in [ModelConfig::hcnet_t(), ModelConfig::nano()] {
            cfg.k_mode = KMode::Fixed(0.125);
            cfg.use_filter = false;
            cfg.boundary = PaddingMode::Periodic;
            assert_eq!(ModelConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ModelConfig::parse("input_resolution = 48").is_err());
        assert!(ModelConfig::parse("stage_dims = 64,32,64,64").is_err());
        assert!(ModelConfig::parse("k_mode = sometimes").is_err());
        assert!(ModelConfig::parse("use_filter = maybe").is_err());
        assert!(ModelConfig::parse("depth = 3").is_err());
    }

    #[test]
    fn preset_key_sets_the_base() {
        let cfg = ModelConfig::parse("model = hcnet-b\nnum_classes = 10").unwrap();
        assert_eq!(cfg.stage_blocks, [10, 10, 28, 10]);
        assert_eq!(cfg.num_classes, 10);
    }
}
