//! Separable spatio-temporal convolutional network: context encoding, the
//! temporal fusion encoder, SE-gated stages and full-image inference.

mod check;
mod config;
mod encode;
mod infer;
mod init;
mod model;

pub use config::{ModelConfig, CONTEXT_WIDTH, HINT_WIDTH};
pub use encode::{append_hints, hour_of_year_fraction, positional_encode, window_at, HOURS_PER_YEAR};
pub use infer::{dilate_invalid, Normalization, Predictor};
pub use init::{init_params, param_group, param_layout, InitScheme, ParamGroup};
pub use model::{distill_lengths, mftf_forward, model_forward, se_forward, stage_forward, BoundParams, Network};
pub use check::{model_suite, random_small_config};
