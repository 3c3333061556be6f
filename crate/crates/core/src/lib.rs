//! Backtesting and evaluation engine for multi-horizon directional equity
//! signals.
//!
//! The pipeline runs bottom-up: [`market_data`] and [`signal_store`] load and
//! validate inputs, [`trade_sim`] turns one signal into one trade,
//! [`scenario_grid`] sweeps execution parameters, [`signal_stats`] measures
//! directional accuracy against a baseline, [`perf_metrics`] summarizes
//! return streams, and [`portfolio`] runs the walk-forward long/short book.
//! [`synth`] generates inputs with known properties.

pub mod error;
pub mod market_data;
pub mod par;
pub mod perf_metrics;
pub mod portfolio;
pub mod scenario_grid;
pub mod signal_stats;
pub mod signal_store;
pub mod synth;
pub mod trade_sim;

pub use error::{Error, Result};
