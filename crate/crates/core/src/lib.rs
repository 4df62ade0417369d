//! Regional crop-yield prediction pipeline: weather indicators, detrended
//! yield targets, space/time splits, tree ensembles, exact TreeSHAP and the
//! test-versus-validation skill diagnostic.

pub mod calendar;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod explain;
pub mod indicators;
pub mod ingest;
pub mod models;
pub mod par;
pub mod splits;
pub mod targets;

pub use error::{Error, ErrorCategory, Result};
