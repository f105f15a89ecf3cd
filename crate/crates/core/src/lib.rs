//! Text-conditioned probabilistic time-series forecasting.
//!
//! The crate is organized around a small number of subsystems:
//!
//! - [`data`] — multimodal window format, sliding-window extraction,
//!   instance normalization, and JSONL persistence.
//! - [`synth`] — component-compositional synthetic series with paired
//!   rule-based captions.
//! - [`caption`] — endpoint-fit segmentation and shape captioning for
//!   arbitrary real series.
//! - [`tape`] — a compact reverse-mode autodiff engine over `f64`
//!   matrices; everything trainable runs on it.
//! - [`model`] — the dual-branch forecaster: patch embedding, unimodal
//!   encoder, attentional text pooling, two modality-interaction stages,
//!   and a Student's-T output head.
//! - [`objectives`] — contrastive and likelihood losses plus MSE/MAE.
//! - [`train`] — AdamW training loop with early stopping, multi-seed and
//!   ablation runners, zero-shot evaluation, and diagnostic exports.
//! - [`gradcheck`] — finite-difference verification of analytic
//!   gradients.

pub mod caption;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod special;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Environment variable that forces deterministic single-worker mode.
pub const DETERMINISTIC_ENV: &str = "DUALCAST_DETERMINISTIC";

/// True when `DUALCAST_DETERMINISTIC=1` is set.
pub fn deterministic_mode() -> bool {
    std::env::var(DETERMINISTIC_ENV).map(|v| v == "1").unwrap_or(false)
}
