//! Four-stage backbone of heat-conduction / refinement blocks.

mod config;
mod cost;
mod net;

pub use config::{ModelConfig, TOTAL_STRIDE};
pub use cost::{count_macs, count_params, reference_budget, Budget};
pub use net::{build_model, Block, HcNet, Model, Norm, NORM_EPS};
