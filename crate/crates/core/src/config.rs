//! The experiment configuration file. One TOML document holds the note
//! terms, the market model, the interpolation grid, the environment and
//! the training/evaluation settings, with documented defaults for every
//! quantity the methodology leaves open (drift, volatilities, correlation,
//! rate, cost and schedule parameters).

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::agent::train::TrainConfig;
use crate::cheb::{ChebTensorBank, GridConfig};
use crate::env::{EnvConfig, NotePricer};
use crate::error::{Error, Result};
use crate::instruments::NoteSpec;
use crate::market::{MarketModel, Measure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PricingChoice {
    Oracle,
    #[default]
    Tensor,
}

/// Environment section of the experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSection {
    /// Rebalancing steps per year.
    pub rebalance_per_year: u32,
    /// Proportional transaction cost.
    pub txn_cost: f64,
    /// Hedge option life in rebalancing steps.
    pub hedge_expiry_steps: u32,
    pub tree_steps: usize,
    pub bump_rel: f64,
    pub position_cap: f64,
    pub measure: Measure,
    pub pricing: PricingChoice,
    /// Paths per oracle valuation (and per tensor fallback valuation).
    pub oracle_paths: usize,
    /// Seed shared by every oracle valuation (common random numbers).
    pub oracle_seed: u64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            rebalance_per_year: 12,
            txn_cost: 0.02,
            hedge_expiry_steps: 3,
            tree_steps: 128,
            bump_rel: 0.01,
            position_cap: 50.0,
            measure: Measure::RiskNeutral,
            pricing: PricingChoice::Tensor,
            oracle_paths: 20_000,
            oracle_seed: 7001,
        }
    }
}

/// Evaluation section: episode count and the seed for the held-out
/// common-random-number episode set (keep it disjoint from `train.seed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub episodes: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes: 5000,
            seed: 900_000_001,
        }
    }
}

/// Tensor-bank build section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankSection {
    #[serde(flatten)]
    pub grid: GridConfig,
    /// Monte Carlo paths per node during the build.
    pub build_paths: usize,
    pub build_seed: u64,
}

impl Default for BankSection {
    fn default() -> Self {
        BankSection {
            grid: GridConfig::default(),
            build_paths: 20_000,
            build_seed: 4242,
        }
    }
}

/// The whole experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub note: NoteSpec,
    pub market: MarketModel,
    pub grid: BankSection,
    pub env: EnvSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        // The reference three-asset four-year quarterly note and a pinned
        // flat market: 20% vols, 0.5 pairwise correlation, 3% rate, drift
        // equal to the rate.
        let note = NoteSpec {
            notional: 100.0,
            initial_prices: vec![382.0, 494.0, 142.0],
            maturity: 4.0,
            coupon_freq: 4,
            coupon_rate: 0.02275,
            coupon_barrier: -0.25,
            call_freq: 4,
            call_barrier: 0.0,
            protection_barrier: -0.30,
        };
        let market = MarketModel {
            spot0: note.initial_prices.clone(),
            drift: vec![0.03; 3],
            vol: vec![0.2; 3],
            corr: vec![
                vec![1.0, 0.5, 0.5],
                vec![0.5, 1.0, 0.5],
                vec![0.5, 0.5, 1.0],
            ],
            rate: 0.03,
        };
        ExperimentConfig {
            note,
            market,
            grid: BankSection::default(),
            env: EnvSection::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.note.validate()?;
        self.market.validate()?;
        if self.note.initial_prices != self.market.spot0 {
            return Err(Error::invalid(
                "market spot0 must equal the note's initial prices",
            ));
        }
        self.grid.grid.validate()?;
        self.train.validate()?;
        // Environment invariants are checked when the EnvConfig is built;
        // do the cheap schedule checks here for early errors.
        if self.env.rebalance_per_year == 0
            || self.env.rebalance_per_year % self.note.coupon_freq != 0
        {
            return Err(Error::invalid(
                "rebalance_per_year must be a positive multiple of the observation frequency",
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Valuation days for a tensor bank serving this configuration's
    /// environment: every rebalancing step in `[0, maturity)`.
    pub fn bank_days(&self) -> Vec<f64> {
        let dt = 1.0 / self.env.rebalance_per_year as f64;
        let steps = (self.note.maturity * self.env.rebalance_per_year as f64).round() as usize;
        (0..steps).map(|k| k as f64 * dt).collect()
    }

    /// Runtime environment configuration. `bank` must be provided when the
    /// pricing mode is `tensor`.
    pub fn env_config(&self, bank: Option<Arc<ChebTensorBank>>) -> Result<EnvConfig> {
        let pricer = match self.env.pricing {
            PricingChoice::Oracle => NotePricer::Oracle {
                n_paths: self.env.oracle_paths,
                seed: self.env.oracle_seed,
            },
            PricingChoice::Tensor => {
                let bank = bank.ok_or_else(|| {
                    Error::invalid(
                        "pricing mode 'tensor' needs a bank file; build one with `build-tensor` \
                         or switch [env].pricing to 'oracle'",
                    )
                })?;
                NotePricer::Tensor {
                    bank,
                    fallback_paths: self.env.oracle_paths,
                    fallback_seed: self.env.oracle_seed,
                }
            }
        };
        let cfg = EnvConfig {
            note: self.note.clone(),
            model: self.market.clone(),
            rebalance_per_year: self.env.rebalance_per_year,
            txn_cost: self.env.txn_cost,
            hedge_expiry_steps: self.env.hedge_expiry_steps,
            tree_steps: self.env.tree_steps,
            bump_rel: self.env.bump_rel,
            position_cap: self.env.position_cap,
            measure: self.env.measure,
            pricer,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
