//! Multi-task perioperative risk prediction from static preoperative
//! features and intraoperative physiological time series.
//!
//! The pipeline: [`cohort`] loads encounters, [`preprocess`] fits encoding
//! statistics on the development cohort and produces model-ready tensors,
//! [`model`] holds the preoperative/intraoperative/postoperative networks
//! built on the [`numerics`] tape, [`training`] fits them, [`baseline`]
//! provides the logistic comparator, [`attribution`] explains predictions
//! with integrated gradients and [`evaluation`] computes every reported
//! statistic. [`synth`] generates cohorts with planted signal.

pub mod attribution;
pub mod baseline;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod preprocess;
pub mod schema;
pub mod stats;
pub mod synth;
pub mod training;

pub use error::{Error, ErrorKind, Result};
