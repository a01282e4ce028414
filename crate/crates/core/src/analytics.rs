//! PnL distribution statistics, strategy comparisons and runtime reports.
//!
//! VaR convention: levels are quoted on the PnL itself, so the 99% VaR is
//! the 1st percentile of PnL (the unfavorable left tail) and the 5% VaR is
//! the 95th percentile (the favorable right tail). Quantiles interpolate
//! linearly between order statistics. CVaR at left-tail levels (>= 50%) is
//! the mean of samples at or below the VaR; at right-tail levels it is the
//! mean of samples at or above it. Every report header restates this.

use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;

use crate::cheb::SpeedupReport;
use crate::env::HedgeEnv;
use crate::error::{Error, Result};
use crate::strategies::{run_episode, EpisodeSummary, HedgePolicy};
use crate::util::mix_seed;

/// Linear-interpolation quantile of the PnL sample at confidence `c`:
/// the `(1 - c)` quantile, so `c = 0.99` is the 1st percentile.
pub fn var_pnl(samples: &[f64], c: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("VaR of an empty sample"));
    }
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::invalid("confidence level must lie in (0, 1)"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite PnL samples"));
    let q = 1.0 - c;
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

/// Tail mean beyond the VaR. Left tail for `c >= 0.5` (mean of samples at
/// or below the quantile), right tail otherwise.
pub fn cvar_pnl(samples: &[f64], c: f64) -> Result<f64> {
    let var = var_pnl(samples, c)?;
    let tail: Vec<f64> = if c >= 0.5 {
        samples.iter().copied().filter(|&x| x <= var).collect()
    } else {
        samples.iter().copied().filter(|&x| x >= var).collect()
    };
    // The interpolated quantile always lies within [min, max], so the tail
    // holds at least one sample.
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// The reported confidence levels, left tail first.
pub const REPORT_LEVELS: [f64; 4] = [0.99, 0.95, 0.05, 0.01];

/// Distribution summary of per-episode terminal PnL for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct PnLReport {
    pub strategy: String,
    pub n_episodes: usize,
    pub mean: f64,
    pub std: f64,
    /// `(level, var, cvar)` per [`REPORT_LEVELS`].
    pub stats: Vec<(f64, f64, f64)>,
    pub samples: Vec<f64>,
}

impl PnLReport {
    pub fn from_samples(strategy: impl Into<String>, samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("PnL report needs at least one episode"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = if samples.len() > 1 {
            (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let stats = REPORT_LEVELS
            .iter()
            .map(|&c| Ok((c, var_pnl(&samples, c)?, cvar_pnl(&samples, c)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(PnLReport {
            strategy: strategy.into(),
            n_episodes: samples.len(),
            mean,
            std,
            stats,
            samples,
        })
    }

    pub fn var(&self, c: f64) -> Option<f64> {
        self.stats
            .iter()
            .find(|(l, _, _)| (l - c).abs() < 1e-12)
            .map(|(_, v, _)| *v)
    }

    pub fn cvar(&self, c: f64) -> Option<f64> {
        self.stats
            .iter()
            .find(|(l, _, _)| (l - c).abs() < 1e-12)
            .map(|(_, _, v)| *v)
    }
}

/// One histogram bin shared by every strategy of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistBin {
    pub strategy: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Side-by-side strategy comparison under common random numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<PnLReport>,
    pub histogram: Vec<HistBin>,
    pub episodes: usize,
    pub seed: u64,
}

pub const HISTOGRAM_BINS: usize = 60;

/// Plays every strategy over the same `n_episodes` episode seeds (common
/// random numbers) and summarizes the PnL distributions. Episodes run in
/// parallel; results are ordered by episode index, so output is
/// deterministic.
pub fn compare_strategies(
    env: &HedgeEnv,
    strategies: &[(String, &dyn HedgePolicy)],
    n_episodes: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if strategies.is_empty() {
        return Err(Error::invalid("no strategies selected"));
    }
    let mut rows = Vec::with_capacity(strategies.len());
    for (name, policy) in strategies {
        let summaries: Vec<Result<EpisodeSummary>> = (0..n_episodes)
            .into_par_iter()
            .map(|i| {
                let mut local = env.clone();
                run_episode(&mut local, *policy, mix_seed(seed, i as u64), false)
            })
            .collect();
        let mut samples = Vec::with_capacity(n_episodes);
        for s in summaries {
            samples.push(s?.pnl);
        }
        if samples.is_empty() {
            // Zero-episode comparisons produce an empty report.
            continue;
        }
        rows.push(PnLReport::from_samples(name.clone(), samples)?);
    }
    let histogram = build_histogram(&rows);
    Ok(ComparisonReport {
        rows,
        histogram,
        episodes: n_episodes,
        seed,
    })
}

fn build_histogram(rows: &[PnLReport]) -> Vec<HistBin> {
    let all: Vec<f64> = rows.iter().flat_map(|r| r.samples.iter().copied()).collect();
    if all.is_empty() {
        return Vec::new();
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / HISTOGRAM_BINS as f64).max(1e-12);
    let mut bins = Vec::new();
    for row in rows {
        let mut counts = vec![0usize; HISTOGRAM_BINS];
        for &x in &row.samples {
            let k = (((x - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[k] += 1;
        }
        for (k, &count) in counts.iter().enumerate() {
            bins.push(HistBin {
                strategy: row.strategy.clone(),
                bin_lo: lo + k as f64 * width,
                bin_hi: lo + (k + 1) as f64 * width,
                count,
            });
        }
    }
    bins
}

const CONVENTION_NOTE: &str = "VaR levels quote PnL quantiles (99% = 1st percentile); \
CVaR is the tail mean at/beyond the VaR (left tail for 95%/99%, right tail for 1%/5%)";

impl ComparisonReport {
    /// CSV columns: `strategy,episodes,mean,std,var_99,cvar_99,var_95,cvar_95,var_5,cvar_5,var_1,cvar_1`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# {CONVENTION_NOTE}")?;
        writeln!(
            w,
            "strategy,episodes,mean,std,var_99,cvar_99,var_95,cvar_95,var_5,cvar_5,var_1,cvar_1"
        )?;
        for row in &self.rows {
            write!(w, "{},{},{},{}", row.strategy, row.n_episodes, row.mean, row.std)?;
            for (_, var, cvar) in &row.stats {
                write!(w, ",{var},{cvar}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// One JSON object per histogram bin, for external plotting.
    pub fn write_histogram_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for bin in &self.histogram {
            let line = serde_json::to_string(bin).map_err(|e| Error::Format(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {CONVENTION_NOTE}\n"));
        out.push_str(&format!(
            "{:<14} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}\n",
            "strategy", "mean", "99%VaR", "99%CVaR", "95%VaR", "95%CVaR", "5%VaR", "5%CVaR", "1%VaR"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<14} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}\n",
                row.strategy,
                row.mean,
                row.stats[0].1,
                row.stats[0].2,
                row.stats[1].1,
                row.stats[1].2,
                row.stats[2].1,
                row.stats[2].2,
                row.stats[3].1,
            ));
        }
        out
    }
}

/// Text + CSV rendering of a pricing speed comparison.
pub fn bench_report_text(instrument: &str, report: &SpeedupReport) -> String {
    format!(
        "instrument: {instrument}\nqueries: {}\nmc paths per query: {}\nmc median: {:.6} s\ntensor median: {:.3e} s\nefficiency gain: {:.0}x\n",
        report.n_queries, report.mc_paths, report.mc_median_s, report.tensor_median_s, report.speedup
    )
}

pub fn bench_report_csv<W: Write>(
    w: &mut W,
    instrument: &str,
    report: &SpeedupReport,
) -> Result<()> {
    writeln!(w, "instrument,mc_paths,mc_median_s,tensor_median_s,speedup")?;
    writeln!(
        w,
        "{instrument},{},{},{},{}",
        report.mc_paths, report.mc_median_s, report.tensor_median_s, report.speedup
    )?;
    Ok(())
}
