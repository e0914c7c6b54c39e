//! Wireless source localization from OFDM channel state information:
//! classical ToA/AoA maximum-likelihood estimators, channel charting, and
//! channel charting augmented with the classical likelihoods.

pub mod aoa;
pub mod charting;
pub mod cli;
pub mod dissimilarity;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod pipeline;
pub mod simulator;
pub mod solver;
pub mod subspace;
pub mod toa;

pub use error::{Error, Result};
