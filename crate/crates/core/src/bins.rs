//! Geometric price-bin grid.
//!
//! Bin `i` covers `[ref·(1+step)^i, ref·(1+step)^(i+1))`. Equal widths in log
//! price make a percent-change law translate into a fixed law over bin offsets.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    reference_price: f64,
    step: f64,
    lowest: i64,
    highest: i64,
}

impl BinGrid {
    pub fn new(reference_price: f64, step: f64, lowest: i64, highest: i64) -> Result<Self> {
        if !(reference_price.is_finite() && reference_price > 0.0) {
            return Err(Error::invalid(
                "reference price must be positive and finite",
            ));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::invalid("bin step must be positive and finite"));
        }
        if lowest > highest {
            return Err(Error::invalid(
                "grid index range is empty (lowest > highest)",
            ));
        }
        Ok(Self {
            reference_price,
            step,
            lowest,
            highest,
        })
    }

    /// Smallest grid anchored at `reference_price` whose bins cover every price
    /// in `[min_price, max_price]`.
    pub fn covering(
        reference_price: f64,
        step: f64,
        min_price: f64,
        max_price: f64,
    ) -> Result<Self> {
        if !(min_price > 0.0 && max_price >= min_price && max_price.is_finite()) {
            return Err(Error::invalid("covering range must satisfy 0 < min <= max"));
        }
        let probe = Self::new(reference_price, step, i64::MIN / 4, i64::MAX / 4)?;
        let lowest = probe.locate(min_price);
        let highest = probe.locate(max_price);
        Self::new(reference_price, step, lowest, highest)
    }

    /// Same grid extended on both sides to exactly `count` bins; an odd
    /// surplus goes to the top.
    pub fn widened_to(&self, count: usize) -> Result<Self> {
        let have = self.bin_count();
        if count < have {
            return Err(Error::invalid(format!(
                "grid already holds {have} bins, cannot shrink to {count}"
            )));
        }
        let extra = (count - have) as i64;
        Self::new(
            self.reference_price,
            self.step,
            self.lowest - extra / 2,
            self.highest + extra - extra / 2,
        )
    }

    pub fn reference_price(&self) -> f64 {
        self.reference_price
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn index_range(&self) -> (i64, i64) {
        (self.lowest, self.highest)
    }

    /// Number of bins in the grid.
    pub fn bin_count(&self) -> usize {
        (self.highest - self.lowest + 1) as usize
    }

    /// Lower edge of bin `index`, without a range check.
    pub fn edge(&self, index: i64) -> f64 {
        self.reference_price * libm::pow(1.0 + self.step, index as f64)
    }

    /// Covered price span `[low, high)`.
    pub fn span(&self) -> (f64, f64) {
        (self.edge(self.lowest), self.edge(self.highest + 1))
    }

    pub fn bin_bounds(&self, index: i64) -> Result<(f64, f64)> {
        if index < self.lowest || index > self.highest {
            return Err(Error::IndexOutOfRange {
                index,
                lowest: self.lowest,
                highest: self.highest,
            });
        }
        Ok((self.edge(index), self.edge(index + 1)))
    }

    pub fn price_to_bin(&self, price: f64) -> Result<i64> {
        let (low, high) = self.span();
        if !(price >= low && price < high) {
            return Err(Error::PriceOutOfRange { price, low, high });
        }
        Ok(self.locate(price).clamp(self.lowest, self.highest))
    }

    /// Geometric midpoint of bin `index`.
    pub fn midpoint(&self, index: i64) -> f64 {
        self.reference_price * libm::pow(1.0 + self.step, index as f64 + 0.5)
    }

    // Log estimate, corrected against the two neighbouring edges so the result
    // agrees with `edge` under the half-open convention.
    fn locate(&self, price: f64) -> i64 {
        let raw = libm::floor(libm::log(price / self.reference_price) / libm::log1p(self.step));
        let mut i = raw as i64;
        if price < self.edge(i) {
            i -= 1;
        } else if price >= self.edge(i + 1) {
            i += 1;
        }
        i
    }
}
