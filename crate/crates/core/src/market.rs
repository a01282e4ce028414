//! Correlated geometric Brownian motion simulation and discounting.
//!
//! Paths use the exact log-space scheme, so there is no discretization
//! bias: `S_{t+dt} = S_t * exp((mu - sigma^2/2) dt + sigma sqrt(dt) eps)`
//! with `eps` a correlated standard normal vector obtained from the
//! Cholesky factor of the correlation matrix.
//!
//! Generation is blocked: each block of paths draws from its own ChaCha12
//! stream derived from `(seed, block index)`, so results are bit-identical
//! regardless of how many threads participate.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};

/// Paths per RNG substream block.
pub(crate) const PATH_BLOCK: usize = 1024;

/// Drift convention for path generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    /// Every asset drifts at the risk-free rate.
    RiskNeutral,
    /// Assets drift at their configured real-world rates.
    RealWorld,
}

/// Correlated lognormal market: initial prices, drifts, volatilities,
/// a correlation matrix and a flat continuously-compounded rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub spot0: Vec<f64>,
    pub drift: Vec<f64>,
    pub vol: Vec<f64>,
    pub corr: Vec<Vec<f64>>,
    pub rate: f64,
}

impl MarketModel {
    pub fn n_assets(&self) -> usize {
        self.spot0.len()
    }

    /// Checks shape, positivity and that the correlation matrix admits a
    /// Cholesky factorization. Zero volatility is accepted (degenerate
    /// deterministic dynamics); negative volatility is not.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_assets();
        if n == 0 {
            return Err(Error::invalid("market model needs at least one asset"));
        }
        if self.drift.len() != n || self.vol.len() != n {
            return Err(Error::invalid(format!(
                "drift/vol length must match {n} assets"
            )));
        }
        if self.spot0.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("initial prices must be strictly positive"));
        }
        if self.vol.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("volatilities must be non-negative"));
        }
        if !self.rate.is_finite() {
            return Err(Error::invalid("rate must be finite"));
        }
        if self.corr.len() != n || self.corr.iter().any(|row| row.len() != n) {
            return Err(Error::invalid(format!("correlation must be {n}x{n}")));
        }
        for i in 0..n {
            if (self.corr[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("correlation diagonal must be 1"));
            }
            for j in 0..i {
                if (self.corr[i][j] - self.corr[j][i]).abs() > 1e-12 {
                    return Err(Error::invalid("correlation must be symmetric"));
                }
            }
        }
        self.cholesky()?;
        Ok(())
    }

    /// Lower-triangular factor `L` with `L L^T = corr`.
    pub fn cholesky(&self) -> Result<Vec<Vec<f64>>> {
        cholesky(&self.corr)
    }

    /// `exp(-rate * t)`; rejects negative horizons.
    pub fn discount_factor(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("discount horizon {t} is negative")));
        }
        Ok((-self.rate * t).exp())
    }

    fn drift_for(&self, measure: Measure) -> Vec<f64> {
        match measure {
            Measure::RiskNeutral => vec![self.rate; self.n_assets()],
            Measure::RealWorld => self.drift.clone(),
        }
    }
}

fn cholesky(m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                // Tolerance covers exactly-singular but valid matrices
                // (e.g. perfectly correlated assets).
                if sum < -1e-12 {
                    return Err(Error::NotPositiveSemiDefinite);
                }
                l[i][j] = sum.max(0.0).sqrt();
            } else if l[j][j] > 0.0 {
                l[i][j] = sum / l[j][j];
            } else if sum.abs() > 1e-12 {
                return Err(Error::NotPositiveSemiDefinite);
            }
        }
    }
    Ok(l)
}

/// A bundle of simulated paths on a fixed time grid.
///
/// Layout is path-major: `data[(path * n_steps + step) * n_assets + asset]`.
/// Immutable after construction; concurrent reads are safe.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub times: Vec<f64>,
    pub n_paths: usize,
    pub n_assets: usize,
    pub seed: u64,
    data: Vec<f64>,
}

impl PathSet {
    pub fn n_steps(&self) -> usize {
        self.times.len()
    }

    pub fn spot(&self, path: usize, step: usize, asset: usize) -> f64 {
        self.data[(path * self.times.len() + step) * self.n_assets + asset]
    }

    /// All asset prices of one path at one time step.
    pub fn step_slice(&self, path: usize, step: usize) -> &[f64] {
        let base = (path * self.times.len() + step) * self.n_assets;
        &self.data[base..base + self.n_assets]
    }

    /// One row per (path, step, asset): `path,step,time,asset,price`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "path,step,time,asset,price")?;
        for p in 0..self.n_paths {
            for (s, &t) in self.times.iter().enumerate() {
                for a in 0..self.n_assets {
                    writeln!(w, "{p},{s},{t},{a},{}", self.spot(p, s, a))?;
                }
            }
        }
        Ok(())
    }
}

fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::invalid("time grid is empty"));
    }
    if times[0] != 0.0 {
        return Err(Error::invalid("time grid must start at 0"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("time grid must be strictly increasing"));
    }
    Ok(())
}

/// Simulates `n_paths` exact-scheme GBM paths on `times`.
///
/// Deterministic given `(seed, inputs)` and independent of thread count.
pub fn simulate_paths(
    model: &MarketModel,
    times: &[f64],
    n_paths: usize,
    seed: u64,
    measure: Measure,
) -> Result<PathSet> {
    model.validate()?;
    validate_times(times)?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be at least 1"));
    }
    let n_assets = model.n_assets();
    let n_steps = times.len();
    let chol = model.cholesky()?;
    let mu = model.drift_for(measure);

    let mut data = vec![0.0; n_paths * n_steps * n_assets];
    let block_len = PATH_BLOCK * n_steps * n_assets;
    data.par_chunks_mut(block_len)
        .enumerate()
        .for_each(|(block, chunk)| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(block as u64);
            let paths_in_block = chunk.len() / (n_steps * n_assets);
            let mut z = vec![0.0; n_assets];
            let mut eps = vec![0.0; n_assets];
            for p in 0..paths_in_block {
                let row = &mut chunk[p * n_steps * n_assets..(p + 1) * n_steps * n_assets];
                row[..n_assets].copy_from_slice(&model.spot0);
                for s in 1..n_steps {
                    let dt = times[s] - times[s - 1];
                    let sqrt_dt = dt.sqrt();
                    for zi in z.iter_mut() {
                        *zi = StandardNormal.sample(&mut rng);
                    }
                    correlate(&chol, &z, &mut eps);
                    for a in 0..n_assets {
                        let prev = row[(s - 1) * n_assets + a];
                        let sig = model.vol[a];
                        let growth = (mu[a] - 0.5 * sig * sig) * dt + sig * sqrt_dt * eps[a];
                        row[s * n_assets + a] = prev * growth.exp();
                    }
                }
            }
        });

    Ok(PathSet {
        times: times.to_vec(),
        n_paths,
        n_assets,
        seed,
        data,
    })
}

pub(crate) fn correlate(chol: &[Vec<f64>], z: &[f64], out: &mut [f64]) {
    for (i, row) in chol.iter().enumerate() {
        out[i] = row[..=i].iter().zip(z).map(|(l, zj)| l * zj).sum();
    }
}
