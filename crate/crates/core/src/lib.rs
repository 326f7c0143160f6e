//! Portfolio construction from generative models of asset returns.
//!
//! The pipeline fits a generative model on a trailing window of returns
//! ([`scenarios`]), simulates one-step scenarios, solves a proxy objective
//! ([`objectives`], [`optimizer`]) and realizes the result in a rolling
//! [`backtest`]. Fixed arms can be blended by the [`bandit`] layer and the
//! per-step outcomes attributed with a cross-validated LASSO ([`attribution`]).

pub mod attribution;
pub mod backtest;
pub mod bandit;
pub mod copula;
pub mod data;
pub mod error;
pub mod marginals;
pub mod objectives;
pub mod optim;
pub mod optimizer;
pub mod rng;
pub mod scenarios;
mod serde_util;
pub mod special;
pub mod volatility;

pub use error::{Error, Result};
