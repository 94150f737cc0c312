//! Analytic model of tau-reset liquidity provision on a concentrated-liquidity AMM.
//!
//! Prices live on a geometric bin grid. A provider allocates liquidity over a
//! window of bins centered on the price at the last reset and re-centers once
//! the price leaves a second window. Folding every exit back into the center
//! bin turns price motion into a small Markov chain whose stationary law gives
//! the probability of landing in each allocated bin. Combined with exponential
//! (CARA) utility this yields the exact expected utility of any allocation and
//! a closed-form optimum on the probability simplex.
//!
//! The crate is `no_std` (with `alloc`); file formats, CSV/JSON IO and the
//! command line live in the `resetlp` companion crate.
//!
//! ```
//! use resetlp_core::{distribution::NextPriceDistribution, utility::*};
//!
//! let h = NextPriceDistribution::new(1, 1.0, vec![1.0 / 3.0; 3]).unwrap();
//! let alloc = Allocation::uniform(1);
//! let params = UtilityParams::new(0.0, 1.0, 1.0).unwrap();
//! let eu = expected_utility(&h, 1, &alloc, &params, EvalMode::StrictPaper).unwrap();
//! assert!((eu - 5.0 / 18.0).abs() < 1e-12);
//! ```
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod backtest;
pub mod bins;
pub mod distribution;
pub mod error;
pub mod markov;
pub mod optimizer;
pub mod simulate;
pub mod strategies;
pub mod utility;

pub use error::{Error, Result};

/// Signed offset of a bin from the strategy's center bin.
pub type RelativeIndex = i64;

/// Index range `-half_width..=half_width` of a centered window.
pub(crate) fn window(half_width: usize) -> core::ops::RangeInclusive<i64> {
    let n = half_width as i64;
    -n..=n
}
