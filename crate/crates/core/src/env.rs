//! The hedging environment: a trader short one autocallable note rebalances
//! a book of ATM American straddles (and, for the classical baselines,
//! underlying positions) on a fixed monthly grid, paying proportional
//! transaction costs, until the note autocalls or matures.
//!
//! Reward convention. At step `i` the environment measures the portfolio
//! value `P_i^-` before trading, executes the (value-neutral) trade, debits
//! the transaction cost `c_i` from cash, advances the market and settles
//! any cashflows, then measures `P_{i+1}^-`. The emitted reward is
//! `-c_i + (P_{i+1}^- - P_i^-)`, so over an episode rewards sum exactly to
//! `terminal value - initial value - total costs`. The cash account accrues
//! at the risk-free rate; note coupons and redemptions debit the trader
//! (who is short); option premiums move cash into book value at model
//! prices.
//!
//! The trader's initial cash equals the note issue price, so the initial
//! portfolio value is zero and the terminal value is the episode PnL.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::cheb::ChebTensorBank;
use crate::error::{Error, Result};
use crate::instruments::{ExerciseStyle, NoteSpec, OptionKind, VanillaOptionSpec};
use crate::market::{simulate_paths, MarketModel, Measure, PathSet};
use crate::pricing::{greeks_fd, price_note_continuation, price_vanilla, GreekReport};
use crate::util::TIME_EPS;

/// How the environment values the note.
#[derive(Debug, Clone)]
pub enum NotePricer {
    /// Monte Carlo at every valuation; one fixed seed gives common random
    /// numbers across bumped evaluations.
    Oracle { n_paths: usize, seed: u64 },
    /// Per-day Chebyshev tensors, falling back to the oracle (with a
    /// logged warning) when a query leaves the grid domain or day list.
    Tensor {
        bank: Arc<ChebTensorBank>,
        fallback_paths: usize,
        fallback_seed: u64,
    },
}

#[derive(Debug, Default)]
struct FallbackCounter(AtomicU64);

impl Clone for FallbackCounter {
    fn clone(&self) -> Self {
        FallbackCounter(AtomicU64::new(self.0.load(Ordering::Relaxed)))
    }
}

/// Runtime environment configuration.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub note: NoteSpec,
    pub model: MarketModel,
    /// Rebalancing steps per year (12 = monthly).
    pub rebalance_per_year: u32,
    /// Proportional transaction cost kappa.
    pub txn_cost: f64,
    /// Hedge option life in rebalancing steps (3 monthly steps = next call date).
    pub hedge_expiry_steps: u32,
    /// Binomial steps for hedge option valuation.
    pub tree_steps: usize,
    /// Relative bump for finite-difference Greeks.
    pub bump_rel: f64,
    /// Cap on straddle pairs per trade.
    pub position_cap: f64,
    /// Measure driving episode paths.
    pub measure: Measure,
    pub pricer: NotePricer,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.note.validate()?;
        self.model.validate()?;
        if self.note.n_assets() != self.model.n_assets() {
            return Err(Error::invalid("note/model asset count mismatch"));
        }
        if self.rebalance_per_year == 0 || self.rebalance_per_year % self.note.coupon_freq != 0 {
            return Err(Error::invalid(
                "rebalance_per_year must be a positive multiple of the observation frequency",
            ));
        }
        let steps = self.note.maturity * self.rebalance_per_year as f64;
        if (steps - steps.round()).abs() > TIME_EPS {
            return Err(Error::invalid(
                "maturity must be a whole number of rebalancing steps",
            ));
        }
        if self.txn_cost < 0.0 {
            return Err(Error::invalid("transaction cost must be non-negative"));
        }
        if self.hedge_expiry_steps == 0 {
            return Err(Error::invalid("hedge options must live at least one step"));
        }
        if self.tree_steps == 0 {
            return Err(Error::invalid("tree_steps must be positive"));
        }
        if !(self.bump_rel > 0.0) {
            return Err(Error::invalid("bump_rel must be strictly positive"));
        }
        if !(self.position_cap > 0.0) {
            return Err(Error::invalid("position_cap must be strictly positive"));
        }
        Ok(())
    }
}

/// Observable state: spots, aggregate cash gamma, time to the next call
/// observation and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub spots: Vec<f64>,
    pub portfolio_gamma: f64,
    pub time_to_next_call: f64,
    pub step_index: usize,
}

/// A live hedge option position.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionPosition {
    pub spec: VanillaOptionSpec,
    pub units: f64,
    pub entry_time: f64,
}

/// All hedge holdings: option positions plus (for the delta baselines)
/// outright underlying units.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeBook {
    pub options: Vec<OptionPosition>,
    pub underlying_units: Vec<f64>,
}

impl HedgeBook {
    fn empty(n_assets: usize) -> Self {
        HedgeBook {
            options: Vec::new(),
            underlying_units: vec![0.0; n_assets],
        }
    }
}

/// Trades to execute at the current step. `pair_units` is a signed number
/// of ATM call+put pairs on `hedge_asset` (positive buys).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HedgeOrders {
    pub pair_units: f64,
    pub hedge_asset: Option<usize>,
    /// Per-asset underlying trades; empty means none.
    pub underlying_trades: Vec<f64>,
}

/// Everything observable about one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    /// Time after the step (settlement time).
    pub time: f64,
    pub txn_cost: f64,
    pub pair_units: f64,
    /// Price of one call+put pair at trade time (zero when no pairs traded).
    pub pair_value: f64,
    pub hedge_asset: Option<usize>,
    /// Note cashflow settled this step (positive = paid by the trader).
    pub note_cashflow: f64,
    pub called: bool,
    pub matured: bool,
    /// Portfolio value after settlement.
    pub portfolio_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    /// The MDP action for [`HedgeEnv::step`]; `None` for raw order steps.
    pub action: Option<f64>,
    pub reward: f64,
    pub next_state: EnvState,
    pub terminal: bool,
    pub info: StepInfo,
}

enum ContMode<'a> {
    Tensor(&'a crate::cheb::ChebTensorDay),
    Oracle { n_paths: usize, seed: u64 },
}

/// One stateful hedging episode over one simulated path.
#[derive(Debug, Clone)]
pub struct HedgeEnv {
    cfg: EnvConfig,
    dt: f64,
    total_steps: usize,
    steps_per_obs: usize,
    steps_per_call: usize,
    path: Option<PathSet>,
    k: usize,
    cash: f64,
    book: HedgeBook,
    terminal: bool,
    state: EnvState,
    last_value: f64,
    total_costs: f64,
    issue_price: f64,
    fallbacks: FallbackCounter,
}

impl HedgeEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let dt = 1.0 / cfg.rebalance_per_year as f64;
        let total_steps = (cfg.note.maturity * cfg.rebalance_per_year as f64).round() as usize;
        let steps_per_obs = (cfg.rebalance_per_year / cfg.note.coupon_freq) as usize;
        let steps_per_call = (cfg.rebalance_per_year / cfg.note.call_freq) as usize;
        let n_assets = cfg.note.n_assets();
        Ok(HedgeEnv {
            state: EnvState {
                spots: cfg.note.initial_prices.clone(),
                portfolio_gamma: 0.0,
                time_to_next_call: steps_per_call as f64 * dt,
                step_index: 0,
            },
            cfg,
            dt,
            total_steps,
            steps_per_obs,
            steps_per_call,
            path: None,
            k: 0,
            cash: 0.0,
            book: HedgeBook::empty(n_assets),
            terminal: true,
            last_value: 0.0,
            total_costs: 0.0,
            issue_price: 0.0,
            fallbacks: FallbackCounter::default(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn book(&self) -> &HedgeBook {
        &self.book
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn total_costs(&self) -> f64 {
        self.total_costs
    }

    /// Note issue price used to seed the cash account.
    pub fn issue_price(&self) -> f64 {
        self.issue_price
    }

    /// Portfolio value at the current time (equals episode PnL once
    /// terminal, and zero right after a reset).
    pub fn current_value(&self) -> f64 {
        self.last_value
    }

    /// Times at which this environment values the note: every rebalancing
    /// step in `[0, maturity)`. Build tensor banks over exactly this grid.
    pub fn valuation_days(&self) -> Vec<f64> {
        (0..self.total_steps).map(|k| k as f64 * self.dt).collect()
    }

    /// Count of tensor-mode valuations that fell back to the oracle.
    pub fn oracle_fallbacks(&self) -> u64 {
        self.fallbacks.0.load(Ordering::Relaxed)
    }

    /// Starts a fresh episode on a new path. The trader is short one note,
    /// the hedge book is empty and the cash account holds the issue price,
    /// so the initial portfolio value is exactly zero.
    pub fn reset(&mut self, episode_seed: u64) -> Result<EnvState> {
        let mut times: Vec<f64> = (0..=self.total_steps)
            .map(|k| k as f64 * self.dt)
            .collect();
        *times.last_mut().unwrap() = self.cfg.note.maturity;
        let path = simulate_paths(&self.cfg.model, &times, 1, episode_seed, self.cfg.measure)?;
        self.path = Some(path);
        self.k = 0;
        self.book = HedgeBook::empty(self.cfg.note.n_assets());
        self.terminal = false;
        self.total_costs = 0.0;
        let spots = self.cfg.note.initial_prices.clone();
        self.issue_price = self.note_continuation(0.0, &spots)?;
        self.cash = self.issue_price;
        self.last_value = 0.0;
        let gamma = self.aggregate_gamma(0.0, &spots)?;
        self.state = EnvState {
            spots,
            portfolio_gamma: gamma,
            time_to_next_call: self.steps_per_call as f64 * self.dt,
            step_index: 0,
        };
        Ok(self.state.clone())
    }

    /// MDP step: `action` in `[0, 1]` scales the gamma-neutralizing
    /// straddle trade. `action = 1` buys (or sells) exactly the pair count
    /// that zeroes the current aggregate cash gamma, subject to the
    /// position cap; `action = 0` trades nothing.
    pub fn step(&mut self, action: f64) -> Result<Transition> {
        if !(0.0..=1.0).contains(&action) {
            return Err(Error::invalid(format!(
                "action {action} outside [0, 1]"
            )));
        }
        if self.terminal {
            return Err(Error::EpisodeTerminal);
        }
        let t = self.current_time();
        let spots = self.current_spots().to_vec();
        let asset = self.worst_performer(&spots)?;
        let gamma = self.state.portfolio_gamma;
        let (_, _, pair_cash_gamma) = self.pair_greeks(t, &spots, asset)?;
        let pair_units = if pair_cash_gamma.abs() > 1e-12 {
            let h_max = (gamma.abs() / pair_cash_gamma).min(self.cfg.position_cap);
            -gamma.signum() * action * h_max
        } else {
            0.0
        };
        let orders = HedgeOrders {
            pair_units,
            hedge_asset: Some(asset),
            underlying_trades: Vec::new(),
        };
        self.apply_orders(&orders, Some(action))
    }

    /// Applies explicit orders (used by the classical baselines) and then
    /// advances one step. Reward semantics are identical to [`Self::step`].
    pub fn step_orders(&mut self, orders: &HedgeOrders) -> Result<Transition> {
        if self.terminal {
            return Err(Error::EpisodeTerminal);
        }
        self.apply_orders(orders, None)
    }

    pub fn current_time(&self) -> f64 {
        self.path.as_ref().expect("reset first").times[self.k]
    }

    fn current_spots(&self) -> &[f64] {
        self.path.as_ref().expect("reset first").step_slice(0, self.k)
    }

    /// Index of the currently worst-performing asset.
    pub fn worst_performer(&self, spots: &[f64]) -> Result<usize> {
        if spots.len() != self.cfg.note.n_assets() {
            return Err(Error::invalid("spot vector length mismatch"));
        }
        let mut best = 0;
        let mut best_ratio = f64::INFINITY;
        for (i, (s, p0)) in spots.iter().zip(&self.cfg.note.initial_prices).enumerate() {
            let r = s / p0;
            if r < best_ratio {
                best_ratio = r;
                best = i;
            }
        }
        Ok(best)
    }

    /// The ATM call+put pair bought at `(t, spots)` on `asset`.
    pub fn hedge_pair(&self, t: f64, spots: &[f64], asset: usize) -> (VanillaOptionSpec, VanillaOptionSpec) {
        let strike = spots[asset];
        let expiry = t + self.cfg.hedge_expiry_steps as f64 * self.dt;
        let call = VanillaOptionSpec {
            underlying: asset,
            strike,
            expiry,
            kind: OptionKind::Call,
            exercise: ExerciseStyle::American,
        };
        let put = VanillaOptionSpec {
            kind: OptionKind::Put,
            ..call.clone()
        };
        (call, put)
    }

    /// Value, delta and cash gamma of one ATM pair on `asset`.
    pub fn pair_greeks(&self, t: f64, spots: &[f64], asset: usize) -> Result<(f64, f64, f64)> {
        let (call, put) = self.hedge_pair(t, spots, asset);
        let s = spots[asset];
        let price = |x: &[f64]| -> Result<f64> {
            Ok(price_vanilla(&call, &self.cfg.model, t, x[0], self.cfg.tree_steps)?
                + price_vanilla(&put, &self.cfg.model, t, x[0], self.cfg.tree_steps)?)
        };
        let value = price(&[s])?;
        let report = greeks_fd(price, &[s], self.cfg.bump_rel)?;
        Ok((value, report.delta[0], report.gamma[0] * s * s))
    }

    /// Executes the trade part of a step at the current time and prices.
    /// Returns `(cost, pair_value, hedge_asset)`.
    fn execute_trade(
        &mut self,
        orders: &HedgeOrders,
        t: f64,
        spots_now: &[f64],
    ) -> Result<(f64, f64, Option<usize>)> {
        if !orders.underlying_trades.is_empty()
            && orders.underlying_trades.len() != self.cfg.note.n_assets()
        {
            return Err(Error::invalid("underlying trade vector length mismatch"));
        }
        let mut cost = 0.0;
        let mut pair_value = 0.0;
        let mut hedge_asset = None;
        if orders.pair_units != 0.0 {
            let asset = match orders.hedge_asset {
                Some(a) if a < self.cfg.note.n_assets() => a,
                Some(_) => return Err(Error::invalid("hedge asset index out of range")),
                None => self.worst_performer(spots_now)?,
            };
            hedge_asset = Some(asset);
            let (call, put) = self.hedge_pair(t, spots_now, asset);
            let vc = price_vanilla(&call, &self.cfg.model, t, spots_now[asset], self.cfg.tree_steps)?;
            let vp = price_vanilla(&put, &self.cfg.model, t, spots_now[asset], self.cfg.tree_steps)?;
            pair_value = vc + vp;
            self.cash -= orders.pair_units * pair_value;
            self.book.options.push(OptionPosition {
                spec: call,
                units: orders.pair_units,
                entry_time: t,
            });
            self.book.options.push(OptionPosition {
                spec: put,
                units: orders.pair_units,
                entry_time: t,
            });
            cost += self.cfg.txn_cost * (orders.pair_units * pair_value).abs();
        }
        for (i, &du) in orders.underlying_trades.iter().enumerate() {
            if du != 0.0 {
                self.cash -= du * spots_now[i];
                self.book.underlying_units[i] += du;
                cost += self.cfg.txn_cost * (du * spots_now[i]).abs();
            }
        }
        self.cash -= cost;
        self.total_costs += cost;
        Ok((cost, pair_value, hedge_asset))
    }

    /// Clone of the environment with `orders` executed at the current time
    /// but the market not yet advanced. For inspecting post-trade Greeks.
    pub fn preview_orders(&self, orders: &HedgeOrders) -> Result<HedgeEnv> {
        if self.terminal {
            return Err(Error::EpisodeTerminal);
        }
        let mut next = self.clone();
        let t = next.current_time();
        let spots = next.current_spots().to_vec();
        next.execute_trade(orders, t, &spots)?;
        Ok(next)
    }

    fn apply_orders(&mut self, orders: &HedgeOrders, action: Option<f64>) -> Result<Transition> {
        let t = self.current_time();
        let spots_now = self.current_spots().to_vec();
        let value_pre = self.last_value;

        // Trade at time t. The trade itself is value-neutral; the cost is
        // debited from cash and reported separately in the reward.
        let (cost, pair_value, hedge_asset) = self.execute_trade(orders, t, &spots_now)?;

        // Advance the market one step and settle.
        self.k += 1;
        let t_next = self.current_time();
        self.cash *= (self.cfg.model.rate * (t_next - t)).exp();
        let spots_next = self.current_spots().to_vec();

        let mut note_cashflow = 0.0;
        let mut called = false;
        let mut matured = false;

        // Hedge options expiring now settle to intrinsic value.
        let mut expired_cash = 0.0;
        self.book.options.retain(|pos| {
            if pos.spec.expiry <= t_next + TIME_EPS {
                expired_cash += pos.units * pos.spec.intrinsic(spots_next[pos.spec.underlying]);
                false
            } else {
                true
            }
        });
        self.cash += expired_cash;

        if self.k % self.steps_per_obs == 0 {
            let obs = self.k / self.steps_per_obs - 1;
            let reference = self.cfg.note.reference_return(&spots_next)?;
            if reference >= self.cfg.note.coupon_barrier {
                note_cashflow += self.cfg.note.coupon_amount();
            }
            if self.cfg.note.is_call_observation(obs) && reference >= self.cfg.note.call_barrier {
                note_cashflow += self.cfg.note.notional;
                called = true;
            } else if obs + 1 == self.cfg.note.n_observations() {
                note_cashflow += if reference >= self.cfg.note.protection_barrier {
                    self.cfg.note.notional
                } else {
                    self.cfg.note.notional * (1.0 + reference)
                };
                matured = true;
            }
            // The trader is short: every note cashflow debits cash.
            self.cash -= note_cashflow;
        }
        self.terminal = called || matured;

        let value_next = if self.terminal {
            // Liquidate the book at model prices (no cost on terminal
            // settlement; positions expiring now were already settled).
            let mut cash = self.cash;
            for pos in &self.book.options {
                let v = price_vanilla(
                    &pos.spec,
                    &self.cfg.model,
                    t_next,
                    spots_next[pos.spec.underlying],
                    self.cfg.tree_steps,
                )?;
                cash += pos.units * v;
            }
            for (u, s) in self.book.underlying_units.iter().zip(&spots_next) {
                cash += u * s;
            }
            self.cash = cash;
            self.book = HedgeBook::empty(self.cfg.note.n_assets());
            cash
        } else {
            self.portfolio_value(t_next, &spots_next)?
        };

        let reward = -cost + (value_next - value_pre);
        self.last_value = value_next;

        let next_state = if self.terminal {
            EnvState {
                spots: spots_next.clone(),
                portfolio_gamma: 0.0,
                time_to_next_call: 0.0,
                step_index: self.k,
            }
        } else {
            let gamma = self.aggregate_gamma(t_next, &spots_next)?;
            let next_call_step = (self.k / self.steps_per_call + 1) * self.steps_per_call;
            EnvState {
                spots: spots_next.clone(),
                portfolio_gamma: gamma,
                time_to_next_call: (next_call_step - self.k) as f64 * self.dt,
                step_index: self.k,
            }
        };
        let prev_state = std::mem::replace(&mut self.state, next_state.clone());

        Ok(Transition {
            state: prev_state,
            action,
            reward,
            next_state,
            terminal: self.terminal,
            info: StepInfo {
                time: t_next,
                txn_cost: cost,
                pair_units: orders.pair_units,
                pair_value,
                hedge_asset,
                note_cashflow,
                called,
                matured,
                portfolio_value: value_next,
            },
        })
    }

    /// `-note + options + underlyings + cash` at `(t, spots)`; the note
    /// enters at its continuation value (cashflows on `t` itself are
    /// settled through the cash account, never double counted).
    pub fn portfolio_value(&self, t: f64, spots: &[f64]) -> Result<f64> {
        Ok(self.cash + self.book_value(t, spots)? - self.note_continuation(t, spots)?)
    }

    fn book_value(&self, t: f64, spots: &[f64]) -> Result<f64> {
        let mut v = 0.0;
        for pos in &self.book.options {
            let s = spots[pos.spec.underlying];
            let value = if pos.spec.expiry <= t + TIME_EPS {
                pos.spec.intrinsic(s)
            } else {
                price_vanilla(&pos.spec, &self.cfg.model, t, s, self.cfg.tree_steps)?
            };
            v += pos.units * value;
        }
        for (u, s) in self.book.underlying_units.iter().zip(spots) {
            v += u * s;
        }
        Ok(v)
    }

    /// Note continuation value under the configured pricing mode.
    pub fn note_continuation(&self, t: f64, spots: &[f64]) -> Result<f64> {
        let mode = self.resolve_mode(t, std::slice::from_ref(&spots.to_vec()));
        self.continuation_with(&mode, t, spots)
    }

    /// Per-asset delta and gamma of the whole portfolio. All bumped
    /// evaluations share one pricing route (tensor or oracle), never a mix.
    pub fn portfolio_greeks(&self, t: f64, spots: &[f64]) -> Result<GreekReport> {
        let mut probes = Vec::with_capacity(2 * spots.len() + 1);
        probes.push(spots.to_vec());
        for i in 0..spots.len() {
            let mut up = spots.to_vec();
            up[i] *= 1.0 + self.cfg.bump_rel;
            probes.push(up);
            let mut down = spots.to_vec();
            down[i] *= 1.0 - self.cfg.bump_rel;
            probes.push(down);
        }
        let mode = self.resolve_mode(t, &probes);
        greeks_fd(
            |s: &[f64]| {
                Ok(self.cash + self.book_value(t, s)? - self.continuation_with(&mode, t, s)?)
            },
            spots,
            self.cfg.bump_rel,
        )
    }

    /// Aggregate cash gamma (sum of `S_i^2 * d2V/dS_i^2`) of the portfolio.
    pub fn aggregate_gamma(&self, t: f64, spots: &[f64]) -> Result<f64> {
        Ok(self.portfolio_greeks(t, spots)?.cash_gamma(spots))
    }

    fn resolve_mode(&self, t: f64, probes: &[Vec<f64>]) -> ContMode<'_> {
        match &self.cfg.pricer {
            NotePricer::Oracle { n_paths, seed } => ContMode::Oracle {
                n_paths: *n_paths,
                seed: *seed,
            },
            NotePricer::Tensor {
                bank,
                fallback_paths,
                fallback_seed,
            } => {
                if let Ok(day) = bank.day_tensor(t) {
                    let in_domain = probes.iter().all(|spots| {
                        day.grids
                            .iter()
                            .zip(spots)
                            .all(|(g, &s)| g.contains(s))
                    });
                    if in_domain {
                        return ContMode::Tensor(day);
                    }
                }
                let n = self.fallbacks.0.fetch_add(1, Ordering::Relaxed);
                if n == 0 {
                    log::warn!(
                        "tensor bank cannot serve valuation at t={t}; falling back to the Monte Carlo oracle"
                    );
                }
                ContMode::Oracle {
                    n_paths: *fallback_paths,
                    seed: *fallback_seed,
                }
            }
        }
    }

    fn continuation_with(&self, mode: &ContMode<'_>, t: f64, spots: &[f64]) -> Result<f64> {
        match mode {
            ContMode::Tensor(day) => day.eval(spots),
            ContMode::Oracle { n_paths, seed } => Ok(price_note_continuation(
                &self.cfg.note,
                &self.cfg.model,
                t,
                spots,
                *n_paths,
                *seed,
            )?
            .price),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cheb::{build_bank, GridConfig};
    use approx::assert_relative_eq;

    fn note() -> NoteSpec {
        NoteSpec {
            notional: 100.0,
            initial_prices: vec![382.0, 494.0, 142.0],
            maturity: 4.0,
            coupon_freq: 4,
            coupon_rate: 0.02275,
            coupon_barrier: -0.25,
            call_freq: 4,
            call_barrier: 0.0,
            protection_barrier: -0.30,
        }
    }

    fn model() -> MarketModel {
        MarketModel {
            spot0: vec![382.0, 494.0, 142.0],
            drift: vec![0.03; 3],
            vol: vec![0.2; 3],
            corr: vec![
                vec![1.0, 0.5, 0.5],
                vec![0.5, 1.0, 0.5],
                vec![0.5, 0.5, 1.0],
            ],
            rate: 0.03,
        }
    }

    fn oracle_config(n_paths: usize) -> EnvConfig {
        EnvConfig {
            note: note(),
            model: model(),
            rebalance_per_year: 12,
            txn_cost: 0.02,
            hedge_expiry_steps: 3,
            tree_steps: 64,
            bump_rel: 0.01,
            position_cap: 50.0,
            measure: Measure::RiskNeutral,
            pricer: NotePricer::Oracle {
                n_paths,
                seed: 4242,
            },
        }
    }

    #[test]
    fn reset_establishes_a_zero_value_short_note_portfolio() {
        let mut env = HedgeEnv::new(oracle_config(2000)).unwrap();
        let s = env.reset(7).unwrap();
        assert_eq!(s.spots, vec![382.0, 494.0, 142.0]);
        assert_eq!(s.step_index, 0);
        assert_relative_eq!(s.time_to_next_call, 0.25, max_relative = 1e-12);
        assert_eq!(env.current_value(), 0.0);
        assert!(env.issue_price() > 0.0);
        // Short note alone: portfolio gamma is exactly the negative of the
        // note's cash gamma under the same pricer.
        let note_greeks = crate::pricing::greeks_fd(
            |spots: &[f64]| {
                Ok(
                    crate::pricing::price_note_continuation(
                        &env.cfg.note,
                        &env.cfg.model,
                        0.0,
                        spots,
                        2000,
                        4242,
                    )?
                    .price,
                )
            },
            &s.spots,
            0.01,
        )
        .unwrap();
        let note_cash_gamma = note_greeks.cash_gamma(&s.spots);
        assert_relative_eq!(s.portfolio_gamma, -note_cash_gamma, max_relative = 1e-9);
        assert!(s.portfolio_gamma != 0.0);
    }

    #[test]
    fn same_seed_same_episode() {
        let mut a = HedgeEnv::new(oracle_config(1000)).unwrap();
        let mut b = HedgeEnv::new(oracle_config(1000)).unwrap();
        a.reset(99).unwrap();
        b.reset(99).unwrap();
        loop {
            let ta = a.step(0.35).unwrap();
            let tb = b.step(0.35).unwrap();
            assert_eq!(ta, tb);
            if ta.terminal {
                break;
            }
        }
    }

    #[test]
    fn action_out_of_range_and_terminal_stepping_are_rejected() {
        let mut env = HedgeEnv::new(oracle_config(500)).unwrap();
        env.reset(3).unwrap();
        assert!(env.step(-0.1).is_err());
        assert!(env.step(1.1).is_err());
        assert!(env.step(f64::NAN).is_err());
        while !env.is_terminal() {
            env.step(0.0).unwrap();
        }
        assert!(matches!(env.step(0.0), Err(Error::EpisodeTerminal)));
    }

    #[test]
    fn rewards_telescope_to_unhedged_pnl_when_idle() {
        let mut env = HedgeEnv::new(oracle_config(2000)).unwrap();
        env.reset(11).unwrap();
        let mut total = 0.0;
        let mut steps = 0;
        while !env.is_terminal() {
            let tr = env.step(0.0).unwrap();
            assert_eq!(tr.info.txn_cost, 0.0);
            total += tr.reward;
            steps += 1;
        }
        assert!(steps <= 48);
        assert_relative_eq!(total, env.current_value(), epsilon = 1e-8);
        assert_eq!(env.total_costs(), 0.0);
    }

    #[test]
    fn zero_vol_episode_calls_at_step_three() {
        let mut cfg = oracle_config(500);
        cfg.model.vol = vec![0.0; 3];
        let mut env = HedgeEnv::new(cfg).unwrap();
        env.reset(1).unwrap();
        let mut steps = 0;
        loop {
            let tr = env.step(0.0).unwrap();
            steps += 1;
            if tr.terminal {
                assert!(tr.info.called);
                assert_relative_eq!(tr.info.time, 0.25, max_relative = 1e-9);
                break;
            }
        }
        assert_eq!(steps, 3);
    }

    #[test]
    fn reward_accounting_identity_with_trading() {
        let mut env = HedgeEnv::new(oracle_config(1000)).unwrap();
        env.reset(21).unwrap();
        let mut rewards = 0.0;
        let actions = [0.3, 0.8, 0.1, 1.0, 0.5];
        let mut i = 0;
        while !env.is_terminal() {
            let tr = env.step(actions[i % actions.len()]).unwrap();
            rewards += tr.reward;
            i += 1;
        }
        let identity = env.current_value() - 0.0 - env.total_costs();
        assert_relative_eq!(rewards, identity, epsilon = 1e-8);
    }

    #[test]
    fn full_action_with_zero_gamma_trades_nothing() {
        let mut env = HedgeEnv::new(oracle_config(500)).unwrap();
        env.reset(5).unwrap();
        // Force a zero-gamma state.
        env.state.portfolio_gamma = 0.0;
        let tr = env.step(1.0).unwrap();
        assert_eq!(tr.info.pair_units, 0.0);
        assert_eq!(tr.info.txn_cost, 0.0);
    }

    #[test]
    fn transaction_term_matches_kappa_times_trade_value() {
        let mut env = HedgeEnv::new(oracle_config(500)).unwrap();
        env.reset(13).unwrap();
        let t = env.current_time();
        let spots = env.state().spots.clone();
        let orders = HedgeOrders {
            pair_units: 2.0,
            hedge_asset: Some(2),
            underlying_trades: vec![],
        };
        let (pair_value, _, _) = env.pair_greeks(t, &spots, 2).unwrap();
        let tr = env.step_orders(&orders).unwrap();
        assert_relative_eq!(
            tr.info.txn_cost,
            0.02 * (2.0 * pair_value).abs(),
            max_relative = 1e-12
        );
        // kappa * |V H| = 0.2 when |V H| = 10.
        assert_relative_eq!(0.02 * 10.0, 0.2, max_relative = 1e-15);
    }

    #[test]
    fn buying_pairs_is_value_neutral_except_cost() {
        let mut env = HedgeEnv::new(oracle_config(2000)).unwrap();
        env.reset(17).unwrap();
        let t = env.current_time();
        let spots = env.state().spots.clone();
        let before = env.portfolio_value(t, &spots).unwrap();
        // Manually execute the trade part only.
        let orders = HedgeOrders {
            pair_units: 1.5,
            hedge_asset: Some(0),
            underlying_trades: vec![],
        };
        let (call, put) = env.hedge_pair(t, &spots, 0);
        let vc = price_vanilla(&call, &env.cfg.model, t, spots[0], env.cfg.tree_steps).unwrap();
        let vp = price_vanilla(&put, &env.cfg.model, t, spots[0], env.cfg.tree_steps).unwrap();
        env.cash -= orders.pair_units * (vc + vp);
        env.book.options.push(OptionPosition {
            spec: call,
            units: orders.pair_units,
            entry_time: t,
        });
        env.book.options.push(OptionPosition {
            spec: put,
            units: orders.pair_units,
            entry_time: t,
        });
        let after = env.portfolio_value(t, &spots).unwrap();
        assert_relative_eq!(before, after, epsilon = 1e-9);
    }

    #[test]
    fn tensor_mode_matches_oracle_rewards_within_certified_error() {
        let spec = note();
        let m = model();
        let mut env_oracle = HedgeEnv::new(EnvConfig {
            pricer: NotePricer::Oracle {
                n_paths: 4000,
                seed: 4242,
            },
            ..oracle_config(4000)
        })
        .unwrap();
        let days = env_oracle.valuation_days();
        let grid = GridConfig {
            nodes_per_axis: 6,
            domain_lo_rel: 0.2,
            domain_hi_rel: 2.6,
            ..GridConfig::default()
        };
        let bank = Arc::new(build_bank(&spec, &m, &days, &grid, 4000, 4242).unwrap());
        let mut env_tensor = HedgeEnv::new(EnvConfig {
            pricer: NotePricer::Tensor {
                bank: bank.clone(),
                fallback_paths: 4000,
                fallback_seed: 4242,
            },
            ..oracle_config(4000)
        })
        .unwrap();

        for seed in [101u64, 202, 303] {
            env_oracle.reset(seed).unwrap();
            env_tensor.reset(seed).unwrap();
            // Certify the bank against the oracle on the states this
            // episode actually visits, then bound reward differences.
            let mut max_err = 0.0f64;
            let mut rows = Vec::new();
            loop {
                let t = env_oracle.current_time();
                let spots = env_oracle.state().spots.clone();
                let oracle_v = price_note_continuation(&spec, &m, t, &spots, 4000, 4242)
                    .unwrap()
                    .price;
                if let Ok(tensor_v) = bank.continuation(t, &spots) {
                    max_err = max_err.max((tensor_v - oracle_v).abs());
                }
                let a = env_oracle.step(0.0).unwrap();
                let b = env_tensor.step(0.0).unwrap();
                rows.push((a.reward, b.reward));
                if a.terminal {
                    assert!(b.terminal);
                    break;
                }
            }
            for (ra, rb) in rows {
                assert!(
                    (ra - rb).abs() <= 3.0 * max_err + 1e-9,
                    "reward gap {} exceeds 3x certified error {max_err}",
                    (ra - rb).abs()
                );
            }
        }
    }
}
