//! Hedging policies: do-nothing, Delta-neutral, Delta-Gamma-neutral, and
//! the learned policy wrapper, plus the episode driver shared by all of
//! them.
//!
//! Baselines are stateless functions of the observable environment: the
//! same `(state, book)` always produces the same orders. They pay the same
//! proportional transaction cost as the learned agent, on options and
//! underlyings alike.

use serde::{Deserialize, Serialize};

use crate::agent::nn::DenseNet;
use crate::agent::StateNorm;
use crate::env::{HedgeEnv, HedgeOrders, Transition};
use crate::error::Result;

/// Pair counts are rounded to this grid to avoid fractional churn. Fine
/// enough that the residual gamma stays well inside the 1% rebalancing
/// tolerance at realistic pair gammas.
pub const PAIR_UNIT_GRID: f64 = 1e-4;

/// What a policy wants to do this step.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// MDP action in `[0, 1]` (fraction of the gamma-neutralizing trade).
    Proportion(f64),
    /// Explicit orders (baselines).
    Orders(HedgeOrders),
}

pub trait HedgePolicy: Send + Sync {
    fn decide(&self, env: &HedgeEnv) -> Result<Decision>;
    fn name(&self) -> &'static str;
}

/// Never hedges; the episode PnL is the raw short-note PnL.
#[derive(Debug, Clone, Copy, Default)]
pub struct NonePolicy;

impl HedgePolicy for NonePolicy {
    fn decide(&self, _env: &HedgeEnv) -> Result<Decision> {
        Ok(Decision::Proportion(0.0))
    }

    fn name(&self) -> &'static str {
        "none"
    }
}

/// Classical Delta hedge: trades underlyings so every per-asset delta of
/// the portfolio is zero after the trade.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeltaNeutralPolicy;

impl HedgePolicy for DeltaNeutralPolicy {
    fn decide(&self, env: &HedgeEnv) -> Result<Decision> {
        let t = env.current_time();
        let spots = env.state().spots.clone();
        let greeks = env.portfolio_greeks(t, &spots)?;
        Ok(Decision::Orders(HedgeOrders {
            pair_units: 0.0,
            hedge_asset: None,
            underlying_trades: greeks.delta.iter().map(|d| -d).collect(),
        }))
    }

    fn name(&self) -> &'static str {
        "delta"
    }
}

/// Classical Delta-Gamma hedge: first sizes ATM straddles on the worst
/// performer to zero the aggregate cash gamma, then cleans up the residual
/// per-asset deltas with underlying trades. Degenerate pair gamma falls
/// back to the pure delta hedge.
#[derive(Debug, Clone, Copy, Default)]
pub struct DeltaGammaNeutralPolicy;

impl HedgePolicy for DeltaGammaNeutralPolicy {
    fn decide(&self, env: &HedgeEnv) -> Result<Decision> {
        let t = env.current_time();
        let spots = env.state().spots.clone();
        let greeks = env.portfolio_greeks(t, &spots)?;
        let gamma = greeks.cash_gamma(&spots);
        let asset = env.worst_performer(&spots)?;
        let (_, pair_delta, pair_cash_gamma) = env.pair_greeks(t, &spots, asset)?;
        if pair_cash_gamma.abs() < 1e-8 * env.config().note.notional {
            log::warn!("ATM pair gamma degenerate at t={t}; falling back to delta hedge");
            return DeltaNeutralPolicy.decide(env);
        }
        let raw_units = -gamma / pair_cash_gamma;
        let pair_units = (raw_units / PAIR_UNIT_GRID).round() * PAIR_UNIT_GRID;
        // Residual deltas after the (near-zero-delta) straddle goes on.
        let underlying_trades: Vec<f64> = greeks
            .delta
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let straddle_delta = if i == asset { pair_units * pair_delta } else { 0.0 };
                -(d + straddle_delta)
            })
            .collect();
        Ok(Decision::Orders(HedgeOrders {
            pair_units,
            hedge_asset: Some(asset),
            underlying_trades,
        }))
    }

    fn name(&self) -> &'static str {
        "delta-gamma"
    }
}

/// Deterministic wrapper around a trained actor network (no exploration
/// noise at evaluation time).
#[derive(Debug, Clone)]
pub struct RlPolicy {
    pub actor: DenseNet,
    pub norm: StateNorm,
}

impl RlPolicy {
    pub fn action(&self, features: &[f64]) -> f64 {
        let out = self.actor.forward(features);
        out[0].clamp(0.0, 1.0)
    }
}

impl HedgePolicy for RlPolicy {
    fn decide(&self, env: &HedgeEnv) -> Result<Decision> {
        let features = self.norm.features(env.state());
        Ok(Decision::Proportion(self.action(&features)))
    }

    fn name(&self) -> &'static str {
        "rl"
    }
}

/// Strategy selector used by configuration files and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    None,
    Delta,
    DeltaGamma,
    Rl,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(StrategyKind::None),
            "delta" => Ok(StrategyKind::Delta),
            "delta-gamma" => Ok(StrategyKind::DeltaGamma),
            "rl" => Ok(StrategyKind::Rl),
            other => Err(format!(
                "unknown strategy '{other}' (expected none|delta|delta-gamma|rl)"
            )),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StrategyKind::None => "none",
            StrategyKind::Delta => "delta",
            StrategyKind::DeltaGamma => "delta-gamma",
            StrategyKind::Rl => "rl",
        };
        f.write_str(s)
    }
}

/// One recorded step of an episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub time: f64,
    pub spots: Vec<f64>,
    pub action: Option<f64>,
    pub pair_units: f64,
    pub hedge_asset: Option<usize>,
    pub reward: f64,
    pub txn_cost: f64,
    pub portfolio_value: f64,
}

/// Outcome of one fully played episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub pnl: f64,
    pub total_reward: f64,
    pub total_cost: f64,
    pub steps: usize,
    pub called: bool,
    pub trace: Vec<TraceRow>,
}

/// Plays `policy` on a fresh episode seeded with `seed`.
pub fn run_episode(
    env: &mut HedgeEnv,
    policy: &dyn HedgePolicy,
    seed: u64,
    record_trace: bool,
) -> Result<EpisodeSummary> {
    env.reset(seed)?;
    let mut total_reward = 0.0;
    let mut steps = 0;
    let mut called = false;
    let mut trace = Vec::new();
    while !env.is_terminal() {
        let pre_state = env.state().clone();
        let tr: Transition = match policy.decide(env)? {
            Decision::Proportion(a) => env.step(a)?,
            Decision::Orders(orders) => env.step_orders(&orders)?,
        };
        total_reward += tr.reward;
        steps += 1;
        called = tr.info.called;
        if record_trace {
            trace.push(TraceRow {
                step: steps,
                time: tr.info.time,
                spots: pre_state.spots,
                action: tr.action,
                pair_units: tr.info.pair_units,
                hedge_asset: tr.info.hedge_asset,
                reward: tr.reward,
                txn_cost: tr.info.txn_cost,
                portfolio_value: tr.info.portfolio_value,
            });
        }
    }
    Ok(EpisodeSummary {
        seed,
        pnl: env.current_value(),
        total_reward,
        total_cost: env.total_costs(),
        steps,
        called,
        trace,
    })
}
