//! Recall-gate LSTM conversation modeling.
//!
//! This crate holds every numeric and algorithmic piece of the system: dense
//! containers, the LSTM and Recall-gate cells with hand-derived backprop, the
//! loose-structured knowledge base, the conversation classifiers and their
//! baselines, sample construction, training and ranking metrics.
//!
//! It is `no_std` and only needs `alloc`. File formats, the command-line
//! front end and thread pools live in the `rlstm` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod embedding;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod kb;
pub mod lstm;
pub mod math;
pub mod models;
pub mod params;
pub mod recall;
pub mod rng;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use math::{RealMatrix, RealVector};
pub use rng::Rng;
