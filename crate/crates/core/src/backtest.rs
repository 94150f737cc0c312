//! Historical replay of a tau-reset strategy and the v2 uniform baseline.
//!
//! The baseline ignores impermanent loss and pool-share dilution: it is the
//! fee-only comparison floor of spreading liquidity over every grid bin.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bins::BinGrid;
use crate::distribution::PriceSeries;
use crate::error::{Error, Result};
use crate::simulate::{batch_std_error, StepOutcome, StrategyRunner};
use crate::strategies::StrategySpec;
use crate::utility::{EvalMode, UtilityParams};
use crate::RelativeIndex;

/// Price bands in force during one step, before any reset it triggers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub step: usize,
    pub price: f64,
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub tau_low: f64,
    pub tau_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub steps: usize,
    pub resets: usize,
    pub total_reward: f64,
    pub mean_utility_per_step: f64,
    pub std_error: f64,
    pub rewards: Vec<f64>,
    pub grid_bins: usize,
    pub v2_mean_utility_per_step: f64,
    /// `None` when the baseline is not positive.
    pub ratio: Option<f64>,
    pub v2_shifted_utility_per_step: f64,
    pub shifted_ratio: Option<f64>,
    pub band_trace: Vec<BandRow>,
}

/// Bin index of every price, rejecting the first row outside the grid.
pub fn series_bins(series: &PriceSeries, grid: &BinGrid) -> Result<Vec<i64>> {
    series
        .prices()
        .iter()
        .enumerate()
        .map(|(row, &price)| {
            grid.price_to_bin(price).map_err(|e| match e {
                Error::PriceOutOfRange { price, low, high } => Error::RowOutOfRange {
                    row,
                    price,
                    low,
                    high,
                },
                other => other,
            })
        })
        .collect()
}

/// Per-step utility `u(κℓ/N)` of uniform liquidity over `bins` bins.
///
/// A v2 position never leaves the grid, so it earns the same fee every step,
/// never pays a reset and is compared without the reward shift.
pub fn v2_utility(bins: usize, params: &UtilityParams) -> Result<f64> {
    if bins == 0 {
        return Err(Error::invalid("v2 baseline needs at least one bin"));
    }
    params.utility(params.yield_scale() / bins as f64)
}

/// [`v2_utility`] with the same `+shift` the strategy utilities carry.
pub fn v2_shifted_utility(bins: usize, params: &UtilityParams) -> Result<f64> {
    v2_utility(bins, params)?;
    params.shifted_utility(params.yield_scale() / bins as f64)
}

/// v2 baseline over every bin of `grid`.
pub fn v2_baseline(grid: &BinGrid, params: &UtilityParams) -> Result<f64> {
    v2_utility(grid.bin_count(), params)
}

/// Price path visiting the geometric midpoints of the bins reached by
/// applying `moves` from `start_bin`, one observation per `spacing_secs`.
pub fn prices_from_moves(
    grid: &BinGrid,
    start_bin: i64,
    moves: &[RelativeIndex],
    spacing_secs: i64,
) -> Result<PriceSeries> {
    let mut bin = start_bin;
    let mut prices = Vec::with_capacity(moves.len() + 1);
    prices.push(grid.midpoint(bin));
    for &mv in moves {
        bin += mv;
        prices.push(grid.midpoint(bin));
    }
    PriceSeries::from_prices(prices, spacing_secs)
}

/// Strategy-to-baseline ratio of mean per-step utility.
pub fn compare(report: &BacktestReport) -> Result<f64> {
    ratio_of(
        report.mean_utility_per_step,
        report.v2_mean_utility_per_step,
    )
}

fn ratio_of(strategy: f64, baseline: f64) -> Result<f64> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::NonPositiveBaseline(baseline));
    }
    Ok(strategy / baseline)
}

/// Replays a price series, centering the first window on the first price.
///
/// A realized jump of several bins past the reset window costs a single reset.
pub fn replay(
    series: &PriceSeries,
    spec: &StrategySpec,
    grid: &BinGrid,
    mode: EvalMode,
) -> Result<BacktestReport> {
    let bins = series_bins(series, grid)?;
    let mut runner = StrategyRunner::new(spec, mode)?;
    let n_tau = spec.n_tau as i64;
    let n_alpha = spec.n_alpha as i64;
    let mut center = bins[0];
    let mut outcomes: Vec<StepOutcome> = Vec::with_capacity(bins.len() - 1);
    let mut band_trace = Vec::with_capacity(bins.len() - 1);
    for (t, pair) in bins.windows(2).enumerate() {
        let outcome = runner.step(pair[1] - pair[0])?;
        band_trace.push(BandRow {
            step: t + 1,
            price: series.prices()[t + 1],
            alpha_low: grid.edge(center - n_alpha),
            alpha_high: grid.edge(center + n_alpha + 1),
            tau_low: grid.edge(center - n_tau),
            tau_high: grid.edge(center + n_tau + 1),
        });
        if outcome.reset {
            center = pair[1];
        }
        outcomes.push(outcome);
    }
    let utilities: Vec<f64> = outcomes.iter().map(|o| o.utility).collect();
    let steps = outcomes.len();
    let mean = utilities.iter().sum::<f64>() / steps as f64;
    let v2 = v2_baseline(grid, &spec.params)?;
    let v2_shifted = v2_shifted_utility(grid.bin_count(), &spec.params)?;
    Ok(BacktestReport {
        steps,
        resets: outcomes.iter().filter(|o| o.reset).count(),
        total_reward: outcomes.iter().map(|o| o.reward).sum(),
        mean_utility_per_step: mean,
        std_error: batch_std_error(&utilities),
        rewards: outcomes.iter().map(|o| o.reward).collect(),
        grid_bins: grid.bin_count(),
        v2_mean_utility_per_step: v2,
        ratio: ratio_of(mean, v2).ok(),
        v2_shifted_utility_per_step: v2_shifted,
        shifted_ratio: ratio_of(mean, v2_shifted).ok(),
        band_trace,
    })
}
