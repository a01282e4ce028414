//! Reference pricing: Monte Carlo valuation of the note, binomial-tree
//! valuation of the vanilla hedge options, and finite-difference Greeks.
//!
//! The Monte Carlo pricer uses antithetic variates and blocked ChaCha12
//! substreams, so a given `(inputs, seed)` pair always produces the same
//! answer regardless of thread count. Reusing one seed across bumped
//! evaluations gives common random numbers for Greeks.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instruments::{note_cashflows_from, ExerciseStyle, NoteSpec, OptionKind, VanillaOptionSpec};
use crate::market::{correlate, MarketModel};
use crate::util::TIME_EPS;

/// Antithetic pairs per RNG substream block.
const PAIR_BLOCK: usize = 512;

/// A Monte Carlo (or degenerate deterministic) price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceResult {
    pub price: f64,
    /// Standard error of the estimate; zero for deterministic values.
    pub std_error: f64,
    /// Simulated paths actually used (zero for deterministic values).
    pub n_paths: usize,
}

/// Central-difference sensitivities per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct GreekReport {
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub bump_rel: f64,
}

impl GreekReport {
    /// Sum of per-asset cash gammas `S_i^2 * gamma_i`.
    pub fn cash_gamma(&self, spots: &[f64]) -> f64 {
        self.gamma
            .iter()
            .zip(spots)
            .map(|(g, s)| g * s * s)
            .sum()
    }
}

fn validate_note_pricing_inputs(
    spec: &NoteSpec,
    model: &MarketModel,
    t: f64,
    spots: &[f64],
) -> Result<()> {
    spec.validate()?;
    model.validate()?;
    if model.n_assets() != spec.n_assets() {
        return Err(Error::invalid("model/note asset count mismatch"));
    }
    if !(t >= 0.0) || t >= spec.maturity - TIME_EPS {
        return Err(Error::invalid(format!(
            "valuation date {t} must lie in [0, maturity); terminal values come from the cashflow logic"
        )));
    }
    if spots.len() != spec.n_assets() || spots.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("spots must be strictly positive per asset"));
    }
    Ok(())
}

/// Risk-neutral value at `t` of the note cashflows paid strictly after `t`,
/// conditional on the note being alive at `t`. The observation at `t`
/// itself (if `t` is an observation date) is deliberately excluded; this is
/// the smooth continuation value the per-day interpolants store.
pub fn price_note_continuation(
    spec: &NoteSpec,
    model: &MarketModel,
    t: f64,
    spots: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PriceResult> {
    validate_note_pricing_inputs(spec, model, t, spots)?;
    if n_paths < 2 {
        return Err(Error::invalid("need at least 2 paths (one antithetic pair)"));
    }
    let dates = spec.observation_dates();
    let first_obs = dates
        .iter()
        .position(|&d| d > t + TIME_EPS)
        .expect("t < maturity implies a future observation");
    mc_future_flows(spec, model, t, spots, first_obs, n_paths, seed)
}

/// Risk-neutral note price at `(t, spots)` conditional on no prior call.
///
/// If `t` is an observation date the date-`t` cashflows are resolved
/// deterministically from `spots`: a triggered call returns coupon plus
/// notional exactly, with zero dispersion; otherwise any date-`t` coupon is
/// added to the simulated continuation value.
pub fn price_note_mc(
    spec: &NoteSpec,
    model: &MarketModel,
    t: f64,
    spots: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PriceResult> {
    validate_note_pricing_inputs(spec, model, t, spots)?;
    let dates = spec.observation_dates();
    let mut deterministic_now = 0.0;
    if let Some(obs_now) = dates.iter().position(|&d| (d - t).abs() <= TIME_EPS) {
        let reference = spec.reference_return(spots)?;
        if reference >= spec.coupon_barrier {
            deterministic_now += spec.coupon_amount();
        }
        if spec.is_call_observation(obs_now) && reference >= spec.call_barrier {
            return Ok(PriceResult {
                price: deterministic_now + spec.notional,
                std_error: 0.0,
                n_paths: 0,
            });
        }
    }
    let continuation = price_note_continuation(spec, model, t, spots, n_paths, seed)?;
    Ok(PriceResult {
        price: deterministic_now + continuation.price,
        std_error: continuation.std_error,
        n_paths: continuation.n_paths,
    })
}

fn mc_future_flows(
    spec: &NoteSpec,
    model: &MarketModel,
    t: f64,
    spots: &[f64],
    first_obs: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PriceResult> {
    let dates = spec.observation_dates();
    let remaining = &dates[first_obs..];
    let n_assets = spec.n_assets();
    let chol = model.cholesky()?;
    let vol = &model.vol;
    let rate = model.rate;
    // Step sizes from t to the first remaining date, then date to date.
    let mut steps = Vec::with_capacity(remaining.len());
    let mut prev = t;
    for &d in remaining {
        steps.push(d - prev);
        prev = d;
    }

    let n_pairs = (n_paths / 2).max(1);
    let n_blocks = n_pairs.div_ceil(PAIR_BLOCK);
    let pair_means: Vec<f64> = (0..n_blocks)
        .into_par_iter()
        .flat_map_iter(|block| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(block as u64);
            let pairs_here = PAIR_BLOCK.min(n_pairs - block * PAIR_BLOCK);
            let mut out = Vec::with_capacity(pairs_here);
            let mut z = vec![0.0; n_assets];
            let mut eps = vec![0.0; n_assets];
            let mut pos = vec![0.0; remaining.len() * n_assets];
            let mut neg = vec![0.0; remaining.len() * n_assets];
            for _ in 0..pairs_here {
                let mut s_pos = spots.to_vec();
                let mut s_neg = spots.to_vec();
                for (k, &dt) in steps.iter().enumerate() {
                    let sqrt_dt = dt.sqrt();
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(&mut rng);
                    }
                    correlate(&chol, &z, &mut eps);
                    for a in 0..n_assets {
                        let sig = vol[a];
                        let det = (rate - 0.5 * sig * sig) * dt;
                        let diff = sig * sqrt_dt * eps[a];
                        s_pos[a] *= (det + diff).exp();
                        s_neg[a] *= (det - diff).exp();
                        pos[k * n_assets + a] = s_pos[a];
                        neg[k * n_assets + a] = s_neg[a];
                    }
                }
                let pv_pos = discounted_flows(spec, first_obs, &pos, t, rate);
                let pv_neg = discounted_flows(spec, first_obs, &neg, t, rate);
                out.push(0.5 * (pv_pos + pv_neg));
            }
            out
        })
        .collect();

    let n = pair_means.len() as f64;
    let mean = pair_means.iter().sum::<f64>() / n;
    let std_error = if pair_means.len() > 1 {
        let var = pair_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(PriceResult {
        price: mean,
        std_error,
        n_paths: 2 * pair_means.len(),
    })
}

fn discounted_flows(spec: &NoteSpec, first_obs: usize, rows: &[f64], t: f64, rate: f64) -> f64 {
    let life = note_cashflows_from(spec, first_obs, rows)
        .expect("simulated rows are aligned by construction");
    life.cashflows
        .iter()
        .map(|(time, amount)| amount * (-rate * (time - t)).exp())
        .sum()
}

/// Cox-Ross-Rubinstein binomial price of a vanilla option.
///
/// `t` is the valuation date; volatility and rate come from the model and
/// the option's underlying index. Zero volatility degenerates to the
/// deterministic forward, priced exactly.
pub fn price_vanilla(
    opt: &VanillaOptionSpec,
    model: &MarketModel,
    t: f64,
    spot: f64,
    n_steps: usize,
) -> Result<f64> {
    opt.validate()?;
    if opt.underlying >= model.n_assets() {
        return Err(Error::invalid("option underlying index out of range"));
    }
    if !(spot > 0.0) {
        return Err(Error::invalid("spot must be strictly positive"));
    }
    if t >= opt.expiry {
        return Err(Error::invalid("valuation date must precede expiry"));
    }
    if n_steps < 1 {
        return Err(Error::invalid("tree needs at least one step"));
    }
    let sigma = model.vol[opt.underlying];
    let tau = opt.expiry - t;
    Ok(crr_tree(
        opt.kind,
        opt.exercise,
        opt.strike,
        spot,
        sigma,
        model.rate,
        tau,
        n_steps,
    ))
}

#[allow(clippy::too_many_arguments)]
fn crr_tree(
    kind: OptionKind,
    exercise: ExerciseStyle,
    strike: f64,
    spot: f64,
    sigma: f64,
    rate: f64,
    tau: f64,
    n_steps: usize,
) -> f64 {
    let intrinsic = |s: f64| match kind {
        OptionKind::Call => (s - strike).max(0.0),
        OptionKind::Put => (strike - s).max(0.0),
    };
    let dt = tau / n_steps as f64;
    let up = (sigma * dt.sqrt()).exp();
    let down = 1.0 / up;
    if up - down < 1e-14 {
        // Degenerate zero-volatility tree: price off the deterministic forward.
        return match exercise {
            ExerciseStyle::European => (-rate * tau).exp() * intrinsic(spot * (rate * tau).exp()),
            ExerciseStyle::American => (0..=n_steps)
                .map(|k| {
                    let tk = k as f64 * dt;
                    (-rate * tk).exp() * intrinsic(spot * (rate * tk).exp())
                })
                .fold(0.0, f64::max),
        };
    }
    let disc = (-rate * dt).exp();
    let p = (((rate * dt).exp() - down) / (up - down)).clamp(0.0, 1.0);
    let q = 1.0 - p;

    // Terminal layer, spot * up^(2j - n) for j = 0..=n.
    let u2 = up * up;
    let mut s = spot * down.powi(n_steps as i32);
    let mut values: Vec<f64> = Vec::with_capacity(n_steps + 1);
    for _ in 0..=n_steps {
        values.push(intrinsic(s));
        s *= u2;
    }
    for level in (0..n_steps).rev() {
        let mut s = spot * down.powi(level as i32);
        for j in 0..=level {
            let cont = disc * (q * values[j] + p * values[j + 1]);
            values[j] = match exercise {
                ExerciseStyle::European => cont,
                ExerciseStyle::American => cont.max(intrinsic(s)),
            };
            s *= u2;
        }
    }
    values[0]
}

/// Central-difference delta and gamma of an arbitrary price function.
///
/// `price` must be deterministic across calls (for Monte Carlo pricers,
/// fix the seed so every bumped evaluation shares random numbers).
pub fn greeks_fd<F>(price: F, spots: &[f64], bump_rel: f64) -> Result<GreekReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(bump_rel > 0.0) {
        return Err(Error::invalid("bump size must be strictly positive"));
    }
    let base = price(spots)?;
    let mut delta = Vec::with_capacity(spots.len());
    let mut gamma = Vec::with_capacity(spots.len());
    let mut work = spots.to_vec();
    for i in 0..spots.len() {
        let h = bump_rel * spots[i];
        work[i] = spots[i] + h;
        let up = price(&work)?;
        work[i] = spots[i] - h;
        let down = price(&work)?;
        work[i] = spots[i];
        delta.push((up - down) / (2.0 * h));
        gamma.push((up - 2.0 * base + down) / (h * h));
    }
    Ok(GreekReport {
        delta,
        gamma,
        bump_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn table_note() -> NoteSpec {
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

    fn black_scholes(kind: OptionKind, s: f64, k: f64, r: f64, sigma: f64, tau: f64) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * tau) / (sigma * tau.sqrt());
        let d2 = d1 - sigma * tau.sqrt();
        match kind {
            OptionKind::Call => s * n.cdf(d1) - k * (-r * tau).exp() * n.cdf(d2),
            OptionKind::Put => k * (-r * tau).exp() * n.cdf(-d2) - s * n.cdf(-d1),
        }
    }

    #[test]
    fn zero_vol_note_price_is_the_discounted_call_amount() {
        let spec = table_note();
        let mut m = model();
        m.vol = vec![0.0; 3];
        // Just before the first call date, spots frozen at initial prices:
        // the worst-of return stays >= 0 so the note deterministically calls.
        let t = 0.25 - 1.0 / 365.0;
        let res = price_note_mc(&spec, &m, t, &m.spot0.clone(), 64, 1).unwrap();
        let expected = (spec.coupon_amount() + spec.notional) * (-m.rate * (0.25 - t)).exp();
        assert!(
            (res.price - expected).abs() <= (3.0 * res.std_error).max(1e-6 * expected),
            "{} vs {expected} (se {})",
            res.price,
            res.std_error
        );
    }

    #[test]
    fn called_observation_is_deterministic() {
        let spec = table_note();
        let m = model();
        let res = price_note_mc(&spec, &m, 0.25, &[382.0, 494.0, 142.0], 2000, 9).unwrap();
        assert_eq!(res.std_error, 0.0);
        assert_eq!(res.n_paths, 0);
        assert_relative_eq!(res.price, 102.275, max_relative = 1e-12);
    }

    #[test]
    fn same_seed_same_price() {
        let spec = table_note();
        let m = model();
        let spots = [390.0, 470.0, 150.0];
        let a = price_note_mc(&spec, &m, 1.0 / 12.0, &spots, 4000, 77).unwrap();
        let b = price_note_mc(&spec, &m, 1.0 / 12.0, &spots, 4000, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn std_error_scales_with_path_count() {
        let spec = table_note();
        let m = model();
        let spots = m.spot0.clone();
        let se3 = price_note_mc(&spec, &m, 0.1, &spots, 1_000, 5).unwrap().std_error;
        let se5 = price_note_mc(&spec, &m, 0.1, &spots, 100_000, 5)
            .unwrap()
            .std_error;
        let ratio = se3 / se5;
        assert!(
            ratio > 5.0 && ratio < 20.0,
            "std error ratio {ratio} not within factor 2 of 10"
        );
    }

    #[test]
    fn valuation_at_or_after_maturity_is_rejected() {
        let spec = table_note();
        let m = model();
        assert!(price_note_mc(&spec, &m, 4.0, &m.spot0.clone(), 100, 1).is_err());
        assert!(price_note_mc(&spec, &m, 4.5, &m.spot0.clone(), 100, 1).is_err());
        assert!(price_note_mc(&spec, &m, -0.1, &m.spot0.clone(), 100, 1).is_err());
    }

    #[test]
    fn american_call_without_dividends_matches_european_black_scholes() {
        let m = MarketModel {
            spot0: vec![100.0],
            drift: vec![0.0],
            vol: vec![0.25],
            corr: vec![vec![1.0]],
            rate: 0.04,
        };
        let opt = VanillaOptionSpec {
            underlying: 0,
            strike: 100.0,
            expiry: 1.0,
            kind: OptionKind::Call,
            exercise: ExerciseStyle::American,
        };
        let tree = price_vanilla(&opt, &m, 0.0, 100.0, 2000).unwrap();
        let bs = black_scholes(OptionKind::Call, 100.0, 100.0, 0.04, 0.25, 1.0);
        assert!(
            (tree - bs).abs() / bs < 1e-3,
            "tree {tree} vs black-scholes {bs}"
        );
    }

    #[test]
    fn deep_itm_american_put_with_vanishing_vol_is_immediate_exercise() {
        let m = MarketModel {
            spot0: vec![100.0],
            drift: vec![0.0],
            vol: vec![1e-6],
            corr: vec![vec![1.0]],
            rate: 0.03,
        };
        let opt = VanillaOptionSpec {
            underlying: 0,
            strike: 150.0,
            expiry: 1.0,
            kind: OptionKind::Put,
            exercise: ExerciseStyle::American,
        };
        let v = price_vanilla(&opt, &m, 0.0, 100.0, 500).unwrap();
        assert_relative_eq!(v, 50.0, max_relative = 1e-6);
        // Exactly zero volatility uses the degenerate-forward branch.
        let mut m0 = m.clone();
        m0.vol = vec![0.0];
        let v0 = price_vanilla(&opt, &m0, 0.0, 100.0, 500).unwrap();
        assert_relative_eq!(v0, 50.0, max_relative = 1e-12);
    }

    #[test]
    fn european_put_call_parity_holds_in_the_tree() {
        let m = MarketModel {
            spot0: vec![120.0],
            drift: vec![0.0],
            vol: vec![0.3],
            corr: vec![vec![1.0]],
            rate: 0.02,
        };
        let mk = |kind| VanillaOptionSpec {
            underlying: 0,
            strike: 120.0,
            expiry: 2.0,
            kind,
            exercise: ExerciseStyle::European,
        };
        let call = price_vanilla(&mk(OptionKind::Call), &m, 0.0, 120.0, 512).unwrap();
        let put = price_vanilla(&mk(OptionKind::Put), &m, 0.0, 120.0, 512).unwrap();
        let forward = 120.0 - 120.0 * (-0.02f64 * 2.0).exp();
        assert_relative_eq!(call - put, forward, epsilon = 1e-9);
    }

    #[test]
    fn american_dominates_european_dominates_discounted_intrinsic() {
        let strikes = [80.0, 90.0, 100.0, 110.0, 120.0];
        let vols = [0.1, 0.2, 0.3, 0.4, 0.5];
        for &k in &strikes {
            for &sigma in &vols {
                let m = MarketModel {
                    spot0: vec![100.0],
                    drift: vec![0.0],
                    vol: vec![sigma],
                    corr: vec![vec![1.0]],
                    rate: 0.05,
                };
                for kind in [OptionKind::Call, OptionKind::Put] {
                    let mk = |exercise| VanillaOptionSpec {
                        underlying: 0,
                        strike: k,
                        expiry: 1.5,
                        kind,
                        exercise,
                    };
                    let amer =
                        price_vanilla(&mk(ExerciseStyle::American), &m, 0.0, 100.0, 400).unwrap();
                    let euro =
                        price_vanilla(&mk(ExerciseStyle::European), &m, 0.0, 100.0, 400).unwrap();
                    let df = (-0.05f64 * 1.5).exp();
                    let bound = match kind {
                        OptionKind::Call => (100.0 - k * df).max(0.0),
                        OptionKind::Put => (k * df - 100.0).max(0.0),
                    };
                    assert!(amer >= euro - 1e-10, "american {amer} < european {euro}");
                    assert!(euro >= bound - 1e-10, "european {euro} < bound {bound}");
                }
            }
        }
    }

    #[test]
    fn tree_input_validation() {
        let m = model();
        let opt = VanillaOptionSpec {
            underlying: 0,
            strike: 100.0,
            expiry: 1.0,
            kind: OptionKind::Call,
            exercise: ExerciseStyle::American,
        };
        assert!(price_vanilla(&opt, &m, 0.0, 100.0, 0).is_err());
        assert!(price_vanilla(&opt, &m, 1.0, 100.0, 10).is_err());
        assert!(price_vanilla(&opt, &m, 0.0, -5.0, 10).is_err());
    }

    #[test]
    fn fd_greeks_are_exact_for_linear_and_quadratic_payoffs() {
        let coeffs = [2.0, -1.5, 0.75];
        let linear = |s: &[f64]| Ok(s.iter().zip(&coeffs).map(|(x, a)| a * x).sum());
        let spots = [382.0, 494.0, 142.0];
        let rep = greeks_fd(linear, &spots, 0.01).unwrap();
        for i in 0..3 {
            assert_relative_eq!(rep.delta[i], coeffs[i], max_relative = 1e-9);
            assert!(rep.gamma[i].abs() < 1e-9);
        }
        let quad = |s: &[f64]| Ok(s[0] * s[0]);
        let rep = greeks_fd(quad, &[50.0], 0.01).unwrap();
        assert_relative_eq!(rep.delta[0], 100.0, max_relative = 1e-10);
        assert_relative_eq!(rep.gamma[0], 2.0, max_relative = 1e-8);
        assert!(greeks_fd(quad, &[50.0], 0.0).is_err());
    }

    #[test]
    fn note_delta_spikes_near_the_call_barrier_before_an_observation() {
        let spec = table_note();
        let m = model();
        let t = 0.25 - 2.0 / 365.0;
        let n_paths = 40_000;
        let price_at = |spots: &[f64]| Ok(price_note_mc(&spec, &m, t, spots, n_paths, 33)?.price);
        let near: Vec<f64> = spec.initial_prices.clone(); // worst-of right at the barrier
        let far: Vec<f64> = spec.initial_prices.iter().map(|p| p * 1.3).collect();
        let g_near = greeks_fd(&price_at, &near, 0.01).unwrap();
        let g_far = greeks_fd(&price_at, &far, 0.01).unwrap();
        let mag = |g: &GreekReport, s: &[f64]| -> f64 {
            g.delta.iter().zip(s).map(|(d, s)| (d * s).abs()).sum()
        };
        assert!(
            mag(&g_near, &near) > mag(&g_far, &far),
            "near-barrier delta {} should exceed far-from-barrier delta {}",
            mag(&g_near, &near),
            mag(&g_far, &far)
        );
    }

    #[test]
    fn greeks_with_fresh_seed_stay_within_combined_noise() {
        let spec = table_note();
        let m = model();
        let spots = [400.0, 500.0, 150.0];
        let n_paths = 30_000;
        let g = |seed: u64| {
            greeks_fd(
                |s: &[f64]| Ok(price_note_mc(&spec, &m, 0.5, s, n_paths, seed)?.price),
                &spots,
                0.01,
            )
            .unwrap()
        };
        let a = g(101);
        let b = g(202);
        // Common random numbers make each delta stable; across seeds the
        // difference stays within a few standard errors of the bump spread.
        let se = price_note_mc(&spec, &m, 0.5, &spots, n_paths, 101)
            .unwrap()
            .std_error;
        for i in 0..3 {
            let h = 0.01 * spots[i];
            let delta_se = se * std::f64::consts::SQRT_2 / (2.0 * h) * 2.0;
            assert!(
                (a.delta[i] - b.delta[i]).abs() <= 3.0 * delta_se,
                "delta[{i}] {} vs {} exceeds 3x combined noise {delta_se}",
                a.delta[i],
                b.delta[i]
            );
        }
    }
}
