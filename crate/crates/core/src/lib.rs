//! Streaming anomaly detection over windowed multivariate time series.
//!
//! Each window is turned into a temporal causal graph by a sparse structural
//! equation fit with a smooth acyclicity constraint. Consecutive graphs are
//! compared through their edge-weight distributions to fire an early-symptom
//! trigger, after which an attack graph is grown incrementally from a replay
//! buffer of attack/impact edges. A small graph convolutional classifier maps
//! the resulting graphs to a Normal/Attack status.
//!
//! Module map:
//!
//! * [`stream`]: CSV ingestion, standardization, windowing, prior knowledge.
//! * [`discovery`]: lag stacking, structure fitting, the acyclicity surrogate.
//! * [`trigger`]: edge-weight histograms, Jensen-Shannon divergence, trigger state.
//! * [`incremental`]: replay buffer, edge reinforcement, cycle removal, Laplacians.
//! * [`gcn`]: featurization, forward/backward passes, Adam training.
//! * [`synth`]: synthetic scenario generation with ground-truth graphs.
//! * [`metrics`]: point-adjusted F1, ROC/PRC AUC, MAR/MAE, structural Hamming distance.
//! * [`pipeline`]: end-to-end orchestration, ablations and the mean-threshold baseline.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod discovery;
pub mod error;
pub mod gcn;
pub mod incremental;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod stream;
pub mod synth;
pub mod trigger;

mod matrix;

pub use error::{Error, Result};
