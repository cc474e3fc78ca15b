//! Proximity-aware confidence calibration toolkit.
//!
//! Given a classifier's predictions and sample embeddings, this crate
//! measures how calibration error varies with *proximity* — how close a
//! sample sits to its nearest neighbors in embedding space — and corrects
//! it. Standard metrics (ECE, ACE, MCE, Brier) sit next to a
//! proximity-informed variant (PIECE) that refuses to let opposite-sign
//! errors in different neighborhoods cancel. Baseline calibrators
//! (temperature scaling, histogram binning, isotonic regression) compose
//! with two proximity-aware stages: density-ratio calibration via 2-D KDE
//! for continuous confidences, and bin-mean-shift for discrete ones. A
//! rank-sum bias test quantifies whether low-proximity samples are
//! systematically over-trusted.
//!
//! Batch operations fan out over rayon by default; build with
//! `--no-default-features` for a fully sequential build with identical
//! outputs.

pub mod baseline;
pub mod bias;
pub mod bin_mean_shift;
mod binning;
pub mod dataset;
pub mod density_ratio;
pub mod error;
pub mod exec;
pub mod kde;
pub mod metrics;
pub mod pipeline;
pub mod proximity;
pub mod report;
pub mod synth;

pub use error::{Error, Result};
