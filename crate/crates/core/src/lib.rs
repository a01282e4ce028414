//! Pricing and hedging laboratory for worst-of autocallable notes.
//!
//! The crate provides, end to end:
//!
//! * correlated GBM market simulation ([`market`]);
//! * note and vanilla-option contract logic ([`instruments`]);
//! * a Monte Carlo oracle pricer, a binomial tree for American hedge
//!   options and finite-difference Greeks ([`pricing`]);
//! * per-day tensor-product Chebyshev interpolants built from the oracle
//!   and evaluated with the barycentric formula ([`cheb`]);
//! * a hedging environment with transaction costs ([`env`]);
//! * classical and learned hedging policies ([`strategies`], [`agent`]);
//! * PnL, VaR/CVaR and runtime analytics ([`analytics`]);
//! * one experiment configuration file tying it together ([`config`]).

pub mod agent;
pub mod analytics;
pub mod cheb;
pub mod config;
pub mod env;
pub mod error;
pub mod instruments;
pub mod market;
pub mod pricing;
pub mod strategies;
pub mod util;

pub use cheb::{ChebTensorBank, GridConfig, WeightScheme};
pub use config::ExperimentConfig;
pub use env::{EnvState, HedgeEnv, Transition};
pub use error::{Error, Result};
pub use instruments::{NoteSpec, VanillaOptionSpec};
pub use market::{MarketModel, Measure, PathSet};
pub use pricing::{GreekReport, PriceResult};
