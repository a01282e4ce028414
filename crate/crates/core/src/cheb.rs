//! Per-day tensor-product Chebyshev interpolants of the note price over
//! spot space, built from the Monte Carlo oracle and evaluated with the
//! barycentric formula.
//!
//! Nodes are Chebyshev points of the first kind, `cos((2i-1)pi/(2n))`,
//! mapped affinely onto each asset's domain and stored in ascending order.
//! Two barycentric weightings are available:
//!
//! * [`WeightScheme::TrigFirstKind`] (default): `(-1)^i sin((2i-1)pi/(2n))`,
//!   the weights that make first-kind nodes reproduce polynomials exactly.
//! * [`WeightScheme::AlternatingHalfEnds`]: alternating signs with halved
//!   end weights. These belong to second-kind (extrema) grids; combined
//!   with first-kind nodes they are kept only for side-by-side comparison
//!   and are not polynomial-exact.
//!
//! Banks hold one tensor per valuation day. Time is never interpolated:
//! the note price is not differentiable across observation dates, so
//! querying a day that was not built is an error. Stored values are the
//! continuation value (cashflows strictly after the day); any same-day
//! observation cashflow is deterministic in the spots and is reconstructed
//! analytically by [`ChebTensorBank::price`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::instruments::NoteSpec;
use crate::market::MarketModel;
use crate::pricing::{price_note_continuation, price_note_mc};
use crate::util::{fnv1a64, TIME_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    #[default]
    TrigFirstKind,
    AlternatingHalfEnds,
}

/// First-kind Chebyshev points mapped onto `[lo, hi]`, ascending.
/// Endpoints are excluded by construction.
pub fn cheb_points(n: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("node count must be at least 1"));
    }
    if !(lo < hi) {
        return Err(Error::invalid("domain must satisfy lo < hi"));
    }
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut nodes: Vec<f64> = (1..=n)
        .map(|i| {
            let theta = (2 * i - 1) as f64 / (2 * n) as f64 * std::f64::consts::PI;
            mid + half * theta.cos()
        })
        .collect();
    nodes.reverse();
    Ok(nodes)
}

/// Barycentric weights matching [`cheb_points`] storage order.
pub fn bary_weights(n: usize, scheme: WeightScheme) -> Vec<f64> {
    match scheme {
        WeightScheme::TrigFirstKind => {
            let mut w: Vec<f64> = (1..=n)
                .map(|i| {
                    let theta = (2 * i - 1) as f64 / (2 * n) as f64 * std::f64::consts::PI;
                    let sign = if (i - 1) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * theta.sin()
                })
                .collect();
            w.reverse();
            w
        }
        WeightScheme::AlternatingHalfEnds => (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let half = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
                sign * half
            })
            .collect(),
    }
}

/// Evaluates the barycentric interpolant at `x`. A query exactly on a node
/// short-circuits to the stored value.
pub fn barycentric_eval_1d(nodes: &[f64], values: &[f64], weights: &[f64], x: f64) -> f64 {
    debug_assert_eq!(nodes.len(), values.len());
    debug_assert_eq!(nodes.len(), weights.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&xi, &fi), &wi) in nodes.iter().zip(values).zip(weights) {
        let dx = x - xi;
        if dx == 0.0 {
            return fi;
        }
        let c = wi / dx;
        num += c * fi;
        den += c;
    }
    num / den
}

/// One interpolation axis: domain, nodes and matching weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebGrid1D {
    pub lo: f64,
    pub hi: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ChebGrid1D {
    pub fn new(n: usize, lo: f64, hi: f64, scheme: WeightScheme) -> Result<Self> {
        Ok(ChebGrid1D {
            lo,
            hi,
            nodes: cheb_points(n, lo, hi)?,
            weights: bary_weights(n, scheme),
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Tensor-product interpolant for one valuation day.
///
/// `values` is row-major over the per-asset grids: the last axis varies
/// fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebTensorDay {
    pub day: f64,
    pub grids: Vec<ChebGrid1D>,
    pub values: Vec<f64>,
}

impl ChebTensorDay {
    /// Builds the value tensor by evaluating `f` at every node tuple,
    /// in parallel over nodes.
    pub fn build<F>(day: f64, grids: Vec<ChebGrid1D>, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let dims: Vec<usize> = grids.iter().map(|g| g.n()).collect();
        let total: usize = dims.iter().product();
        let values: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let spots = unravel(&dims, flat)
                    .iter()
                    .enumerate()
                    .map(|(axis, &idx)| grids[axis].nodes[idx])
                    .collect::<Vec<f64>>();
                f(&spots)
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor build produced non-finite values"));
        }
        Ok(ChebTensorDay { day, grids, values })
    }

    pub fn dims(&self) -> Vec<usize> {
        self.grids.iter().map(|g| g.n()).collect()
    }

    /// Barycentric contraction along the last axis, then the next, down to
    /// the first. Out-of-domain spots are an explicit error; there is no
    /// clamping.
    pub fn eval(&self, spots: &[f64]) -> Result<f64> {
        if spots.len() != self.grids.len() {
            return Err(Error::invalid(format!(
                "expected {} spots, got {}",
                self.grids.len(),
                spots.len()
            )));
        }
        for (axis, (grid, &x)) in self.grids.iter().zip(spots).enumerate() {
            if !grid.contains(x) {
                return Err(Error::Extrapolation {
                    axis,
                    value: x,
                    lo: grid.lo,
                    hi: grid.hi,
                });
            }
        }
        let mut buf = self.values.clone();
        let mut len = buf.len();
        for (axis, grid) in self.grids.iter().enumerate().rev() {
            let n = grid.n();
            let rows = len / n;
            for r in 0..rows {
                let row = &buf[r * n..(r + 1) * n];
                let v = barycentric_eval_1d(&grid.nodes, row, &grid.weights, spots[axis]);
                buf[r] = v;
            }
            len = rows;
        }
        Ok(buf[0])
    }

    /// Stored value at a full node multi-index.
    pub fn node_value(&self, idx: &[usize]) -> f64 {
        let dims = self.dims();
        let mut flat = 0;
        for (axis, &i) in idx.iter().enumerate() {
            flat = flat * dims[axis] + i;
        }
        self.values[flat]
    }
}

fn unravel(dims: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for axis in (0..dims.len()).rev() {
        idx[axis] = flat % dims[axis];
        flat /= dims[axis];
    }
    idx
}

/// Grid construction parameters shared by every day of a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Nodes per asset axis.
    pub nodes_per_axis: usize,
    /// Domain lower bound as a fraction of the initial price.
    pub domain_lo_rel: f64,
    /// Domain upper bound as a fraction of the initial price.
    pub domain_hi_rel: f64,
    pub weight_scheme: WeightScheme,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nodes_per_axis: 8,
            domain_lo_rel: 0.4,
            domain_hi_rel: 2.0,
            weight_scheme: WeightScheme::TrigFirstKind,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_axis == 0 {
            return Err(Error::invalid("nodes_per_axis must be at least 1"));
        }
        if !(self.domain_lo_rel > 0.0 && self.domain_lo_rel < self.domain_hi_rel) {
            return Err(Error::invalid("grid domain must satisfy 0 < lo < hi"));
        }
        Ok(())
    }

    pub fn grids_for(&self, initial_prices: &[f64]) -> Result<Vec<ChebGrid1D>> {
        self.validate()?;
        initial_prices
            .iter()
            .map(|&p0| {
                ChebGrid1D::new(
                    self.nodes_per_axis,
                    self.domain_lo_rel * p0,
                    self.domain_hi_rel * p0,
                    self.weight_scheme,
                )
            })
            .collect()
    }
}

/// Provenance recorded alongside a bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub n_paths: usize,
    pub seed: u64,
    /// Fingerprint of the (note, model) pair the bank was built for.
    pub model_hash: u64,
    pub grid: GridConfig,
}

/// Ordered collection of per-day tensors plus build provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebTensorBank {
    pub days: Vec<ChebTensorDay>,
    pub meta: BuildMeta,
}

pub fn model_fingerprint(spec: &NoteSpec, model: &MarketModel) -> u64 {
    let blob = serde_json::to_vec(&(spec, model)).expect("serializable inputs");
    fnv1a64(&blob)
}

impl ChebTensorBank {
    /// Tensor for an exact stored day. Days match within [`TIME_EPS`];
    /// anything else is an error, never an interpolation.
    pub fn day_tensor(&self, day: f64) -> Result<&ChebTensorDay> {
        self.days
            .iter()
            .find(|d| (d.day - day).abs() <= TIME_EPS)
            .ok_or(Error::DayNotInBank { day })
    }

    pub fn day_list(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.day).collect()
    }

    /// Continuation value at `(day, spots)` via the stored interpolant.
    pub fn continuation(&self, day: f64, spots: &[f64]) -> Result<f64> {
        self.day_tensor(day)?.eval(spots)
    }

    /// Full fast price, matching the Monte Carlo pricer's convention: any
    /// cashflow on `day` itself is deterministic given the spots and is
    /// added analytically on top of the interpolated continuation value.
    pub fn price(&self, spec: &NoteSpec, day: f64, spots: &[f64]) -> Result<f64> {
        let dates = spec.observation_dates();
        let mut deterministic_now = 0.0;
        if let Some(obs) = dates.iter().position(|&d| (d - day).abs() <= TIME_EPS) {
            let reference = spec.reference_return(spots)?;
            if reference >= spec.coupon_barrier {
                deterministic_now += spec.coupon_amount();
            }
            if spec.is_call_observation(obs) && reference >= spec.call_barrier {
                return Ok(deterministic_now + spec.notional);
            }
        }
        Ok(deterministic_now + self.continuation(day, spots)?)
    }
}

/// Builds a bank by pricing every node of every day with the Monte Carlo
/// oracle. All node evaluations share `seed` (common random numbers keep
/// the sampled surface smooth); the build is deterministic and parallel
/// over days and nodes.
pub fn build_bank(
    spec: &NoteSpec,
    model: &MarketModel,
    days: &[f64],
    grid: &GridConfig,
    n_paths: usize,
    seed: u64,
) -> Result<ChebTensorBank> {
    spec.validate()?;
    model.validate()?;
    grid.validate()?;
    if days.is_empty() {
        return Err(Error::invalid("bank needs at least one day"));
    }
    if days.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("bank days must be strictly increasing"));
    }
    if days[0] < 0.0 || *days.last().unwrap() >= spec.maturity - TIME_EPS {
        return Err(Error::invalid(
            "bank days must lie within [0, maturity)",
        ));
    }
    let tensors: Vec<ChebTensorDay> = days
        .par_iter()
        .map(|&day| {
            let grids = grid.grids_for(&spec.initial_prices)?;
            ChebTensorDay::build(day, grids, |spots| {
                Ok(price_note_continuation(spec, model, day, spots, n_paths, seed)?.price)
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChebTensorBank {
        days: tensors,
        meta: BuildMeta {
            n_paths,
            seed,
            model_hash: model_fingerprint(spec, model),
            grid: grid.clone(),
        },
    })
}

/// Wall-clock comparison of the oracle and the tensor on random in-domain
/// queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub n_queries: usize,
    pub mc_paths: usize,
    pub mc_median_s: f64,
    pub tensor_median_s: f64,
    /// `mc_median_s / tensor_median_s`.
    pub speedup: f64,
}

/// Times `n_queries` random in-domain evaluations of the full Monte Carlo
/// pricer (at `mc_paths` paths) against the tensor and reports medians.
pub fn bench_speedup(
    bank: &ChebTensorBank,
    spec: &NoteSpec,
    model: &MarketModel,
    n_queries: usize,
    mc_paths: usize,
    seed: u64,
) -> Result<SpeedupReport> {
    if n_queries == 0 {
        return Err(Error::invalid("need at least one query"));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let queries: Vec<(f64, Vec<f64>)> = (0..n_queries)
        .map(|_| {
            let day = bank.days[rng.random_range(0..bank.days.len())].day;
            let tensor = bank.day_tensor(day).expect("listed day");
            let spots = tensor
                .grids
                .iter()
                .map(|g| rng.random_range(g.lo..g.hi))
                .collect();
            (day, spots)
        })
        .collect();

    let mut mc_times = Vec::with_capacity(n_queries);
    for (day, spots) in &queries {
        let start = Instant::now();
        let price = price_note_mc(spec, model, *day, spots, mc_paths, seed)?;
        mc_times.push(start.elapsed().as_secs_f64());
        std::hint::black_box(price);
    }

    let mut tensor_times = Vec::with_capacity(n_queries);
    for (day, spots) in &queries {
        // Tensor evaluation is sub-microsecond; repeat to stay well above
        // timer resolution.
        let reps = 256;
        let start = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(bank.price(spec, *day, spots)?);
        }
        tensor_times.push(start.elapsed().as_secs_f64() / reps as f64);
    }

    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let mc_median_s = median(mc_times);
    let tensor_median_s = median(tensor_times);
    Ok(SpeedupReport {
        n_queries,
        mc_paths,
        mc_median_s,
        tensor_median_s,
        speedup: mc_median_s / tensor_median_s,
    })
}

// ---------------------------------------------------------------------------
// Bank persistence: magic + version + JSON header + raw little-endian f64s.
// ---------------------------------------------------------------------------

const BANK_MAGIC: &[u8; 4] = b"CTBK";
const BANK_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct AxisHeader {
    lo: f64,
    hi: f64,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct DayHeader {
    day: f64,
    axes: Vec<AxisHeader>,
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    meta: BuildMeta,
    days: Vec<DayHeader>,
}

impl ChebTensorBank {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = BankHeader {
            meta: self.meta.clone(),
            days: self
                .days
                .iter()
                .map(|d| DayHeader {
                    day: d.day,
                    axes: d
                        .grids
                        .iter()
                        .map(|g| AxisHeader {
                            lo: g.lo,
                            hi: g.hi,
                            n: g.n(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let header_bytes =
            serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        w.write_all(BANK_MAGIC)?;
        w.write_all(&BANK_VERSION.to_le_bytes())?;
        w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
        w.write_all(&header_bytes)?;
        for day in &self.days {
            for v in &day.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BANK_MAGIC {
            return Err(Error::Format("not a tensor bank file".into()));
        }
        let mut ver = [0u8; 2];
        r.read_exact(&mut ver)?;
        let version = u16::from_le_bytes(ver);
        if version != BANK_VERSION {
            return Err(Error::Format(format!(
                "unsupported bank version {version} (expected {BANK_VERSION})"
            )));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header_bytes = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header_bytes)?;
        let header: BankHeader =
            serde_json::from_slice(&header_bytes).map_err(|e| Error::Format(e.to_string()))?;
        let scheme = header.meta.grid.weight_scheme;
        let mut days = Vec::with_capacity(header.days.len());
        for dh in &header.days {
            let grids = dh
                .axes
                .iter()
                .map(|a| ChebGrid1D::new(a.n, a.lo, a.hi, scheme))
                .collect::<Result<Vec<_>>>()?;
            let total: usize = dh.axes.iter().map(|a| a.n).product();
            let mut values = vec![0.0; total];
            let mut buf = [0u8; 8];
            for v in values.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            days.push(ChebTensorDay {
                day: dh.day,
                grids,
                values,
            });
        }
        Ok(ChebTensorBank {
            days,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut file)
    }
}
