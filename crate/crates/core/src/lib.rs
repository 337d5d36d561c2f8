#![allow(clippy::needless_range_loop)]
pub mod calendar;
pub mod config;
pub mod error;
pub mod ingest;
pub mod linalg;
pub mod motif;
pub mod pipeline;
pub mod report;
pub mod saak;
pub mod states;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
