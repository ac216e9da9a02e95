//! Covariance filtering and minimum-variance portfolio backtesting.
//!
//! The crate covers universe construction from return panels, covariance
//! estimators (sample, analytic nonlinear shrinkage, Average Oracle,
//! single-factor augmentation, DCC), global minimum-variance portfolios with
//! turnover and gross-leverage caps, a rebalancing backtester with linear
//! transaction costs, randomized experiments with bootstrap intervals, and a
//! regime-switching covariance model comparing Average Oracle with
//! nonlinear-shrinkage oracles.

pub mod backtest;
pub mod dynmodel;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod linalg;
pub mod optim;
pub mod panel;
pub mod portfolio;
pub mod seed;

pub use error::{Error, Result};
