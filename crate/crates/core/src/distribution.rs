//! Price-series ingestion and the stationary next-price distribution `h(k)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::RelativeIndex;

/// Tolerance on `Σ h(k) = 1` accepted by [`NextPriceDistribution::new`].
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Histogram default: 129 bins spanning [-3%, 3%].
pub const DEFAULT_K_MAX: usize = 64;
pub const DEFAULT_BIN_WIDTH_PCT: f64 = 6.0 / 128.0;

/// Time-ordered observations of the volatile asset's price.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    timestamps: Vec<i64>,
    prices: Vec<f64>,
}

impl PriceSeries {
    /// `timestamps` are epoch seconds and must be strictly increasing.
    pub fn new(timestamps: Vec<i64>, prices: Vec<f64>) -> Result<Self> {
        if timestamps.len() != prices.len() {
            return Err(Error::shape(format!(
                "{} timestamps but {} prices",
                timestamps.len(),
                prices.len()
            )));
        }
        if prices.len() < 2 {
            return Err(Error::invalid("need at least 2 rows"));
        }
        if let Some(w) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "timestamps not strictly increasing at row {}",
                w + 1
            )));
        }
        if let Some(i) = prices.iter().position(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::invalid(format!(
                "price at row {i} is not strictly positive"
            )));
        }
        Ok(Self { timestamps, prices })
    }

    /// Series with synthetic timestamps `0, spacing, 2·spacing, ...`.
    pub fn from_prices(prices: Vec<f64>, spacing_secs: i64) -> Result<Self> {
        let ts = (0..prices.len() as i64).map(|i| i * spacing_secs).collect();
        Self::new(ts, prices)
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.prices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(p), hi.max(p))
            })
    }
}

/// Step-to-step percent changes `100·(P[n+1] − P[n]) / P[n]`.
pub fn percent_changes(series: &PriceSeries) -> Vec<f64> {
    series
        .prices
        .windows(2)
        .map(|w| 100.0 * (w[1] - w[0]) / w[0])
        .collect()
}

/// Probability `h(k)` of moving `k` bins in one step, `k ∈ [-k_max, k_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextPriceDistribution {
    k_max: usize,
    bin_width_pct: f64,
    probs: Vec<f64>,
}

impl NextPriceDistribution {
    /// `probs` are listed from `k = -k_max` to `k = +k_max` and must already sum to one.
    pub fn new(k_max: usize, bin_width_pct: f64, probs: Vec<f64>) -> Result<Self> {
        let d = Self {
            k_max,
            bin_width_pct,
            probs,
        };
        d.validate()?;
        Ok(d)
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(k_max: usize, bin_width_pct: f64, weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyDistribution { samples: 0 });
        }
        Self::new(
            k_max,
            bin_width_pct,
            weights.iter().map(|w| w / total).collect(),
        )
    }

    /// Re-checks the invariants; useful after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != 2 * self.k_max + 1 {
            return Err(Error::shape(format!(
                "k_max={} needs {} probabilities, got {}",
                self.k_max,
                2 * self.k_max + 1,
                self.probs.len()
            )));
        }
        if !(self.bin_width_pct.is_finite() && self.bin_width_pct > 0.0) {
            return Err(Error::invalid("bin_width_pct must be positive"));
        }
        if self.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid(
                "probabilities must be finite and non-negative",
            ));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, expected 1 within {NORMALIZATION_TOL:e}"
            )));
        }
        Ok(())
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn bin_width_pct(&self) -> f64 {
        self.bin_width_pct
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `h(k)`, zero outside the support.
    pub fn h(&self, k: RelativeIndex) -> f64 {
        let m = self.k_max as i64;
        if k < -m || k > m {
            0.0
        } else {
            self.probs[(k + m) as usize]
        }
    }

    pub fn center_mass(&self) -> f64 {
        self.h(0)
    }

    /// Multiplicative grid step implied by the percent bin width.
    pub fn grid_step(&self) -> f64 {
        self.bin_width_pct / 100.0
    }

    /// Moves `-k_max..=k_max` paired with their probabilities.
    pub fn support(&self) -> impl Iterator<Item = (RelativeIndex, f64)> + '_ {
        let m = self.k_max as i64;
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (i as i64 - m, p))
    }
}

/// Raw histogram of percent changes; see [`fit_distribution`].
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub dropped: usize,
}

/// Bin offset of a percent change: bin `k` covers `[(k-½)w, (k+½)w)`.
///
/// Computed on `|x|` so mirrored samples land in mirrored bins; only a sample
/// exactly on a negative edge needs the half-open correction.
pub fn offset_of_change(change_pct: f64, bin_width_pct: f64) -> i64 {
    let shifted = libm::fabs(change_pct) / bin_width_pct + 0.5;
    let mag = libm::floor(shifted);
    if change_pct >= 0.0 {
        mag as i64
    } else if shifted == mag {
        -(mag as i64 - 1)
    } else {
        -(mag as i64)
    }
}

pub fn histogram(
    changes: &[f64],
    k_max: usize,
    bin_width_pct: f64,
    clamp_tails: bool,
) -> Histogram {
    let m = k_max as i64;
    let mut counts = vec![0u64; 2 * k_max + 1];
    let mut dropped = 0;
    for &x in changes {
        let k = offset_of_change(x, bin_width_pct);
        if (-m..=m).contains(&k) {
            counts[(k + m) as usize] += 1;
        } else if clamp_tails {
            counts[(k.clamp(-m, m) + m) as usize] += 1;
        } else {
            dropped += 1;
        }
    }
    Histogram { counts, dropped }
}

/// Fits `h` as a normalized histogram of `2·k_max+1` bins centered on zero.
///
/// With `clamp_tails`, changes beyond the outer bins are folded into them;
/// otherwise they are discarded before normalizing.
pub fn fit_distribution(
    changes: &[f64],
    k_max: usize,
    bin_width_pct: f64,
    clamp_tails: bool,
) -> Result<NextPriceDistribution> {
    if k_max < 1 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    if !(bin_width_pct.is_finite() && bin_width_pct > 0.0) {
        return Err(Error::invalid("bin width must be positive"));
    }
    if changes.is_empty() {
        return Err(Error::invalid("no percent changes to fit"));
    }
    if changes.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("percent changes must be finite"));
    }
    let hist = histogram(changes, k_max, bin_width_pct, clamp_tails);
    let kept: u64 = hist.counts.iter().sum();
    if kept == 0 {
        return Err(Error::EmptyDistribution {
            samples: changes.len(),
        });
    }
    let probs = hist
        .counts
        .iter()
        .map(|&c| c as f64 / kept as f64)
        .collect();
    NextPriceDistribution::new(k_max, bin_width_pct, probs)
}

/// Pearson correlation of two probability vectors on the same bins.
///
/// Squaring it gives the r² stability diagnostic. A constant vector has no
/// defined correlation and is rejected.
pub fn stability_correlation(
    d1: &NextPriceDistribution,
    d2: &NextPriceDistribution,
) -> Result<f64> {
    if d1.k_max != d2.k_max || d1.bin_width_pct != d2.bin_width_pct {
        return Err(Error::shape(format!(
            "cannot correlate k_max={}/width={} with k_max={}/width={}",
            d1.k_max, d1.bin_width_pct, d2.k_max, d2.bin_width_pct
        )));
    }
    let n = d1.probs.len() as f64;
    let mean1 = d1.probs.iter().sum::<f64>() / n;
    let mean2 = d2.probs.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in d1.probs.iter().zip(&d2.probs) {
        let (dx, dy) = (x - mean1, y - mean2);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid(
            "correlation undefined for a flat distribution",
        ));
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}
