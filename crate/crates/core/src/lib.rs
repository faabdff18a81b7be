//! Distribution-informed graph attention forecasting of rare heat events.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece of
//! the pipeline:
//!
//! - [`ingest`]: station records, hourly to daily aggregation, gap filling
//! - [`synth`]: synthetic multi-station weather with GPD heat excursions
//! - [`evt`]: peaks-over-threshold extraction and GPD maximum likelihood
//! - [`dataset`]: heatwave labeling, feature assembly, normalization, windows
//! - [`graph`]: Pearson adjacency and GPD-weighted effective adjacency
//! - [`autodiff`]: a small dense tensor tape with reverse-mode gradients
//! - [`model`]: the graph attention forecaster
//! - [`training`]: soft-F1 and BCE losses, Adam, early stopping
//! - [`metrics`]: confusion counts, ROC/AUC, precision-recall and AP
//! - [`pipeline`]: glue that turns station series into a trainable problem
//!
//! File formats, checkpoints and the command line live in the `tailcast`
//! companion crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod calendar;
pub mod dataset;
mod error;
pub mod evt;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod optimize;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod training;

pub use error::Error;
