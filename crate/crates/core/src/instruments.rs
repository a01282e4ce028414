//! Contract definitions and cashflow logic for the worst-of autocallable
//! note and the vanilla options used as hedges.
//!
//! Conventions, all isolated here so alternatives are one-function changes:
//! barrier comparisons use `>=`; coupons have no memory; on autocall the
//! holder receives that date's coupon plus notional; below the protection
//! barrier at maturity the loss is one-for-one with the worst-of return.
//! Call logic applies strictly before maturity; the final date applies
//! protection logic only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::TIME_EPS;

/// Worst-of autocallable coupon note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteSpec {
    pub notional: f64,
    pub initial_prices: Vec<f64>,
    /// Term in years.
    pub maturity: f64,
    /// Coupon observations per year.
    pub coupon_freq: u32,
    /// Fraction of notional paid per coupon period.
    pub coupon_rate: f64,
    /// Worst-of return at/above which the coupon is paid.
    pub coupon_barrier: f64,
    /// Call observations per year; call dates must align with coupon dates.
    pub call_freq: u32,
    /// Worst-of return at/above which the note autocalls.
    pub call_barrier: f64,
    /// Worst-of return at/above which principal is protected at maturity.
    pub protection_barrier: f64,
}

impl NoteSpec {
    pub fn n_assets(&self) -> usize {
        self.initial_prices.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.initial_prices.is_empty() {
            return Err(Error::invalid("note needs at least one underlying"));
        }
        if self.initial_prices.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::invalid("initial prices must be strictly positive"));
        }
        if !(self.notional > 0.0) {
            return Err(Error::invalid("notional must be strictly positive"));
        }
        if !(self.maturity > 0.0) {
            return Err(Error::invalid("maturity must be strictly positive"));
        }
        if self.coupon_freq == 0 || self.call_freq == 0 {
            return Err(Error::invalid("observation frequencies must be positive"));
        }
        if self.coupon_freq % self.call_freq != 0 {
            return Err(Error::invalid(
                "call dates must align with coupon observation dates \
                 (coupon_freq must be a multiple of call_freq)",
            ));
        }
        let periods = self.maturity * self.coupon_freq as f64;
        if (periods - periods.round()).abs() > TIME_EPS || periods.round() < 1.0 {
            return Err(Error::invalid(
                "maturity must be a whole number of coupon periods",
            ));
        }
        if !(self.protection_barrier <= self.coupon_barrier
            && self.coupon_barrier <= self.call_barrier)
        {
            return Err(Error::invalid(
                "barriers must satisfy protection <= coupon <= call",
            ));
        }
        Ok(())
    }

    pub fn n_observations(&self) -> usize {
        (self.maturity * self.coupon_freq as f64).round() as usize
    }

    /// Observation dates: multiples of `1/coupon_freq`, final one equal to
    /// maturity exactly.
    pub fn observation_dates(&self) -> Vec<f64> {
        let n = self.n_observations();
        let mut dates: Vec<f64> = (1..=n)
            .map(|k| k as f64 / self.coupon_freq as f64)
            .collect();
        dates[n - 1] = self.maturity;
        dates
    }

    /// Whether observation index `obs` (0-based) is a call date. Maturity
    /// itself is never a call date.
    pub fn is_call_observation(&self, obs: usize) -> bool {
        let ratio = (self.coupon_freq / self.call_freq) as usize;
        (obs + 1) % ratio == 0 && obs + 1 < self.n_observations()
    }

    pub fn coupon_amount(&self) -> f64 {
        self.coupon_rate * self.notional
    }

    /// Worst-of return `min_i(spots_i / initial_i - 1)`.
    pub fn reference_return(&self, spots: &[f64]) -> Result<f64> {
        if spots.len() != self.n_assets() {
            return Err(Error::invalid(format!(
                "expected {} spots, got {}",
                self.n_assets(),
                spots.len()
            )));
        }
        if spots.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("spots must be strictly positive"));
        }
        Ok(spots
            .iter()
            .zip(&self.initial_prices)
            .map(|(s, p0)| s / p0 - 1.0)
            .fold(f64::INFINITY, f64::min))
    }
}

/// A vanilla option on a single underlying of the basket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanillaOptionSpec {
    pub underlying: usize,
    pub strike: f64,
    /// Expiry in years (absolute calendar time).
    pub expiry: f64,
    pub kind: OptionKind,
    pub exercise: ExerciseStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptionKind {
    Call,
    Put,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExerciseStyle {
    American,
    European,
}

impl VanillaOptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0) {
            return Err(Error::invalid("strike must be strictly positive"));
        }
        if !(self.expiry > 0.0) {
            return Err(Error::invalid("expiry must be strictly positive"));
        }
        Ok(())
    }

    pub fn intrinsic(&self, spot: f64) -> f64 {
        match self.kind {
            OptionKind::Call => (spot - self.strike).max(0.0),
            OptionKind::Put => (self.strike - spot).max(0.0),
        }
    }
}

/// Realized cashflows of one note over one path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteLifecycleResult {
    /// `(time, amount)` pairs in chronological order; zero-amount coupons
    /// are omitted.
    pub cashflows: Vec<(f64, f64)>,
    pub called: bool,
    pub call_time: Option<f64>,
}

impl NoteLifecycleResult {
    pub fn total_undiscounted(&self) -> f64 {
        self.cashflows.iter().map(|(_, a)| a).sum()
    }
}

/// Cashflows over the full observation schedule. `spots_at_observations`
/// holds one row of `n_assets` prices per observation date, concatenated.
pub fn note_cashflows(spec: &NoteSpec, spots_at_observations: &[f64]) -> Result<NoteLifecycleResult> {
    note_cashflows_from(spec, 0, spots_at_observations)
}

/// Cashflows from observation index `first_obs` (0-based) onward, assuming
/// the note is alive entering that observation. Rows must cover exactly the
/// remaining observation dates.
pub fn note_cashflows_from(
    spec: &NoteSpec,
    first_obs: usize,
    rows: &[f64],
) -> Result<NoteLifecycleResult> {
    spec.validate()?;
    let n_assets = spec.n_assets();
    let n_obs = spec.n_observations();
    if first_obs >= n_obs {
        return Err(Error::invalid("first observation index beyond schedule"));
    }
    let expected = (n_obs - first_obs) * n_assets;
    if rows.len() != expected {
        return Err(Error::invalid(format!(
            "path/date misalignment: expected {expected} prices ({} observations x {n_assets} assets), got {}",
            n_obs - first_obs,
            rows.len()
        )));
    }
    let dates = spec.observation_dates();
    let coupon = spec.coupon_amount();
    let mut cashflows = Vec::new();
    for (offset, spots) in rows.chunks(n_assets).enumerate() {
        let obs = first_obs + offset;
        let t = dates[obs];
        let reference = spec.reference_return(spots)?;
        if reference >= spec.coupon_barrier && coupon != 0.0 {
            cashflows.push((t, coupon));
        }
        if spec.is_call_observation(obs) && reference >= spec.call_barrier {
            cashflows.push((t, spec.notional));
            return Ok(NoteLifecycleResult {
                cashflows,
                called: true,
                call_time: Some(t),
            });
        }
        if obs + 1 == n_obs {
            let redemption = if reference >= spec.protection_barrier {
                spec.notional
            } else {
                spec.notional * (1.0 + reference)
            };
            cashflows.push((t, redemption));
        }
    }
    Ok(NoteLifecycleResult {
        cashflows,
        called: false,
        call_time: None,
    })
}

/// Sum of note cashflows discounted to time zero at `rate`.
pub fn note_payoff_pv(spec: &NoteSpec, spots_at_observations: &[f64], rate: f64) -> Result<f64> {
    let result = note_cashflows(spec, spots_at_observations)?;
    Ok(result
        .cashflows
        .iter()
        .map(|(t, amount)| amount * (-rate * t).exp())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn table_note() -> NoteSpec {
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

    fn rows_with_constant_ratio(spec: &NoteSpec, ratio: f64) -> Vec<f64> {
        let n_obs = spec.n_observations();
        let mut rows = Vec::with_capacity(n_obs * spec.n_assets());
        for _ in 0..n_obs {
            for p0 in &spec.initial_prices {
                rows.push(p0 * ratio);
            }
        }
        rows
    }

    #[test]
    fn schedule_is_quarterly_over_four_years() {
        let spec = table_note();
        let dates = spec.observation_dates();
        assert_eq!(dates.len(), 16);
        assert_eq!(dates[0], 0.25);
        assert_eq!(*dates.last().unwrap(), 4.0);
        assert!(spec.is_call_observation(0));
        assert!(!spec.is_call_observation(15), "maturity is not a call date");
    }

    #[test]
    fn reference_return_cases() {
        let spec = table_note();
        assert_eq!(
            spec.reference_return(&[382.0, 494.0, 142.0]).unwrap(),
            0.0
        );
        assert_eq!(spec.reference_return(&[382.0, 494.0, 71.0]).unwrap(), -0.5);
        let single = NoteSpec {
            initial_prices: vec![100.0],
            ..table_note()
        };
        assert_eq!(single.reference_return(&[200.0]).unwrap(), 1.0);
        assert!(spec.reference_return(&[1.0, 2.0]).is_err());
        assert!(spec.reference_return(&[1.0, 2.0, -3.0]).is_err());
    }

    #[test]
    fn frozen_spots_call_at_first_quarter() {
        let spec = table_note();
        let rows = rows_with_constant_ratio(&spec, 1.0);
        let life = note_cashflows(&spec, &rows).unwrap();
        assert!(life.called);
        assert_eq!(life.call_time, Some(0.25));
        assert_eq!(life.cashflows.len(), 2);
        assert_relative_eq!(life.cashflows[0].1, 2.275, max_relative = 1e-12);
        assert_eq!(life.cashflows[1], (0.25, 100.0));
        assert_relative_eq!(
            note_payoff_pv(&spec, &rows, 0.0).unwrap(),
            102.275,
            max_relative = 1e-12
        );
    }

    #[test]
    fn between_coupon_and_protection_barriers_pays_par_only() {
        let spec = table_note();
        let rows = rows_with_constant_ratio(&spec, 0.73); // worst-of return -0.27
        let life = note_cashflows(&spec, &rows).unwrap();
        assert!(!life.called);
        assert_eq!(life.cashflows.len(), 1);
        assert_eq!(life.cashflows[0].0, 4.0);
        assert_relative_eq!(life.cashflows[0].1, 100.0, max_relative = 1e-12);
    }

    #[test]
    fn protection_breach_loses_one_for_one() {
        let spec = table_note();
        let rows = rows_with_constant_ratio(&spec, 0.60);
        let life = note_cashflows(&spec, &rows).unwrap();
        assert!(!life.called);
        assert_eq!(life.cashflows.len(), 1);
        assert_relative_eq!(life.cashflows[0].1, 60.0, max_relative = 1e-12);
    }

    #[test]
    fn payoff_pv_examples() {
        let spec = table_note();
        let zero_coupon = NoteSpec {
            coupon_rate: 0.0,
            ..spec.clone()
        };
        let rows = rows_with_constant_ratio(&zero_coupon, 0.5);
        assert_relative_eq!(
            note_payoff_pv(&zero_coupon, &rows, 0.03).unwrap(),
            50.0 * (-0.12f64).exp(),
            max_relative = 1e-12
        );
        // No coupons, no call, protection held: notional discounted from maturity.
        let rows = rows_with_constant_ratio(&zero_coupon, 0.73);
        assert_relative_eq!(
            note_payoff_pv(&zero_coupon, &rows, 0.03).unwrap(),
            100.0 * (-0.12f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn barriers_at_minus_infinity_call_at_first_opportunity() {
        let mut spec = table_note();
        spec.coupon_barrier = f64::NEG_INFINITY;
        spec.call_barrier = f64::NEG_INFINITY;
        spec.protection_barrier = f64::NEG_INFINITY;
        let rows = rows_with_constant_ratio(&spec, 0.4);
        let life = note_cashflows(&spec, &rows).unwrap();
        assert!(life.called);
        assert_eq!(life.call_time, Some(0.25));
        let pv = note_payoff_pv(&spec, &rows, 0.03).unwrap();
        let df = (-0.03f64 * 0.25).exp();
        assert_relative_eq!(pv, (100.0 + 2.275) * df, max_relative = 1e-12);
    }

    #[test]
    fn misaligned_path_is_rejected() {
        let spec = table_note();
        let rows = rows_with_constant_ratio(&spec, 1.0);
        assert!(note_cashflows(&spec, &rows[..rows.len() - 1]).is_err());
        assert!(note_cashflows_from(&spec, 16, &[]).is_err());
    }

    #[test]
    fn earlier_call_can_reduce_total_cashflows() {
        // Raising every spot is NOT monotone for a coupon-bearing note: a
        // path just below the call barrier collects the full coupon stream,
        // while a slightly higher path autocalls immediately and forfeits
        // the later coupons.
        let spec = table_note();
        let below = rows_with_constant_ratio(&spec, 0.999);
        let above = rows_with_constant_ratio(&spec, 1.001);
        let low = note_cashflows(&spec, &below).unwrap();
        let high = note_cashflows(&spec, &above).unwrap();
        assert!(!low.called);
        assert!(high.called);
        assert!(high.total_undiscounted() < low.total_undiscounted());
        assert_relative_eq!(
            low.total_undiscounted(),
            100.0 + 16.0 * 2.275,
            max_relative = 1e-12
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut bad = table_note();
        bad.coupon_barrier = 0.1; // above call barrier
        assert!(bad.validate().is_err());
        let mut bad = table_note();
        bad.protection_barrier = -0.2; // above coupon barrier
        assert!(bad.validate().is_err());
        let mut bad = table_note();
        bad.maturity = 4.1;
        assert!(bad.validate().is_err());
        let mut bad = table_note();
        bad.call_freq = 3; // does not divide coupon_freq
        assert!(bad.validate().is_err());
    }

    proptest! {
        /// For a zero-coupon note the payoff is monotone in spots: raising
        /// every price never decreases total undiscounted cashflows.
        #[test]
        fn zero_coupon_payoff_monotone(
            ratios in proptest::collection::vec(0.3f64..1.8, 16),
            bump in 1.001f64..1.5,
        ) {
            let spec = NoteSpec { coupon_rate: 0.0, ..table_note() };
            let mut rows = Vec::new();
            let mut bumped = Vec::new();
            for r in &ratios {
                for p0 in &spec.initial_prices {
                    rows.push(p0 * r);
                    bumped.push(p0 * r * bump);
                }
            }
            let base = note_cashflows(&spec, &rows).unwrap();
            let up = note_cashflows(&spec, &bumped).unwrap();
            prop_assert!(up.total_undiscounted() >= base.total_undiscounted() - 1e-9);
        }

        /// A called note produces no cashflows after its call time.
        #[test]
        fn no_cashflows_after_call(
            ratios in proptest::collection::vec(0.3f64..1.8, 16),
        ) {
            let spec = table_note();
            let mut rows = Vec::new();
            for r in &ratios {
                for p0 in &spec.initial_prices {
                    rows.push(p0 * r);
                }
            }
            let life = note_cashflows(&spec, &rows).unwrap();
            if let Some(ct) = life.call_time {
                prop_assert!(life.called);
                prop_assert!(life.cashflows.iter().all(|(t, _)| *t <= ct + 1e-12));
            }
            // At most one redemption-sized flow, and flows only on schedule.
            let dates = spec.observation_dates();
            for (t, _) in &life.cashflows {
                prop_assert!(dates.iter().any(|d| (d - t).abs() < 1e-12));
            }
        }
    }
}
