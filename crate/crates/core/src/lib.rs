//! Univariate time-series forecasting with topological attention.
//!
//! A lookback window is cut into overlapping sub-windows, each summarized by
//! its degree-0 persistence barcode (from below and from above). Barcodes are
//! vectorized with learnable coordinate functions, passed through a
//! transformer encoder and an MLP, and the resulting signal is concatenated
//! to the raw input of a linear or N-BEATS forecaster.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod params;
pub mod persistence;
pub mod train;
pub mod vectorize;
pub mod windowing;
