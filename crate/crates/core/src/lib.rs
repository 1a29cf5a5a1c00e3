//! Probabilistic day-ahead electricity price forecasting and the trading
//! experiments built on top of it.

pub mod backtest_engine;
pub mod bess_trading;
pub mod error;
pub mod eval_metrics;
pub mod market_data;
pub mod model_selector;
pub mod point_model;
pub mod prob_models;
pub mod stats;

pub use error::{Error, Result};
