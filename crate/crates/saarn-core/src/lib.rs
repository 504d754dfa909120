//! Referring image segmentation for low-altitude drone scenes.
//!
//! The crate bundles everything needed to run desk-scale referring
//! segmentation experiments end to end:
//!
//! - [`lingdecomp`]: splits a referring expression into global,
//!   class-level, and descriptive components;
//! - [`encoders`]: small trainable visual/text encoders behind stable
//!   pyramid and embedding contracts;
//! - [`cdle`]: category-dominated linguistic enhancement applied inside
//!   the visual encoder;
//! - [`arfm`]: adaptive reasoning fusion across scales with a scale
//!   reasoning gate;
//! - [`decoder_loss`]: mask decoder and BCE+Dice training loss;
//! - [`metrics`]: P@0.5–0.9, oIoU, and mIoU evaluation;
//! - [`dataset`]: synthetic scene generation, oriented-box rasterization,
//!   tiling, splitting, and annotation storage;
//! - [`harness`]: data generation, training, evaluation, and ablation
//!   entry points shared by the CLI.
//!
//! All numerics run in `f64` on a small single-threaded reverse-mode
//! tape ([`autodiff`]), which keeps runs bit-reproducible for a fixed
//! seed on one platform.

pub mod arfm;
pub mod autodiff;
pub mod cdle;
pub mod config;
pub mod dataset;
pub mod decoder_loss;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod lingdecomp;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;

pub use error::{ClientError, Error, Result};
