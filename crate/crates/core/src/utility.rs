//! Rewards, exponential (CARA) utility and exact expected utility of an allocation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::distribution::NextPriceDistribution;
use crate::error::{Error, Result};
use crate::markov::{build_reset_chain, ResetChain};
use crate::{window, RelativeIndex};

/// Largest exponent accepted by `exp` before the utility is reported as overflowing.
const EXP_LIMIT: f64 = 700.0;

/// Simplex tolerance on allocation sums.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// `u(c) = (1 − e^{−ac}) / a`, or `c` when `a = 0`.
pub fn exp_utility(c: f64, a: f64) -> Result<f64> {
    if a == 0.0 {
        return Ok(c);
    }
    let x = -a * c;
    if x > EXP_LIMIT || !x.is_finite() {
        return Err(Error::UtilityOverflow { a, c });
    }
    Ok(-libm::expm1(x) / a)
}

/// `u'(c) = e^{−ac}`.
pub fn marginal_utility(c: f64, a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        libm::exp(-a * c)
    }
}

/// Constant added to every reward before applying `u`.
///
/// Zero for risk-neutral providers, where it would only offset the expected
/// utility by one, and one otherwise.
pub fn reward_shift(a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        1.0
    }
}

/// Risk aversion `a`, fee yield `kappa` per step and total liquidity `ell` in
/// units of the fixed reset cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct UtilityParams {
    pub a: f64,
    pub kappa: f64,
    pub ell: f64,
}

#[derive(Deserialize)]
struct RawParams {
    a: f64,
    kappa: f64,
    ell: f64,
}

impl TryFrom<RawParams> for UtilityParams {
    type Error = Error;
    fn try_from(r: RawParams) -> Result<Self> {
        Self::new(r.a, r.kappa, r.ell)
    }
}

impl Default for UtilityParams {
    fn default() -> Self {
        Self {
            a: 0.0,
            kappa: 1.0,
            ell: 100.0,
        }
    }
}

impl UtilityParams {
    pub fn new(a: f64, kappa: f64, ell: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::invalid("risk aversion a must be finite"));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::invalid("kappa must be positive"));
        }
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::invalid("ell must be positive"));
        }
        Ok(Self { a, kappa, ell })
    }

    pub fn with_a(self, a: f64) -> Self {
        Self { a, ..self }
    }

    /// Fee income per unit of allocated fraction, `κ·ℓ`.
    pub fn yield_scale(&self) -> f64 {
        self.kappa * self.ell
    }

    pub fn shift(&self) -> f64 {
        reward_shift(self.a)
    }

    pub fn utility(&self, c: f64) -> Result<f64> {
        exp_utility(c, self.a)
    }

    /// Utility of a reward after applying the shift.
    pub fn shifted_utility(&self, reward: f64) -> Result<f64> {
        exp_utility(reward + self.shift(), self.a)
    }
}

/// Fractions `A(j)` of liquidity placed in relative bins `-n_alpha..=n_alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAllocation")]
pub struct Allocation {
    n_alpha: usize,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct RawAllocation {
    n_alpha: usize,
    weights: Vec<f64>,
}

impl TryFrom<RawAllocation> for Allocation {
    type Error = Error;
    fn try_from(r: RawAllocation) -> Result<Self> {
        Self::new(r.n_alpha, r.weights)
    }
}

impl Allocation {
    pub fn new(n_alpha: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != 2 * n_alpha + 1 {
            return Err(Error::shape(format!(
                "n_alpha={n_alpha} needs {} weights, got {}",
                2 * n_alpha + 1,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(
                "allocation weights must be finite and non-negative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if total > 1.0 + SIMPLEX_TOL {
            return Err(Error::invalid(format!(
                "allocation weights sum to {total} > 1"
            )));
        }
        Ok(Self { n_alpha, weights })
    }

    pub fn zeros(n_alpha: usize) -> Self {
        Self {
            n_alpha,
            weights: vec![0.0; 2 * n_alpha + 1],
        }
    }

    pub fn uniform(n_alpha: usize) -> Self {
        let w = 1.0 / (2 * n_alpha + 1) as f64;
        Self {
            n_alpha,
            weights: vec![w; 2 * n_alpha + 1],
        }
    }

    /// Everything in relative bin `j`.
    pub fn one_hot(n_alpha: usize, j: RelativeIndex) -> Result<Self> {
        if j.unsigned_abs() as usize > n_alpha {
            return Err(Error::OffsetOutOfWindow {
                offset: j,
                half_width: n_alpha,
            });
        }
        let mut a = Self::zeros(n_alpha);
        a.weights[(j + n_alpha as i64) as usize] = 1.0;
        Ok(a)
    }

    pub fn n_alpha(&self) -> usize {
        self.n_alpha
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `A(j)`, zero outside the window.
    pub fn weight(&self, j: RelativeIndex) -> f64 {
        let n = self.n_alpha as i64;
        if j.abs() > n {
            0.0
        } else {
            self.weights[(j + n) as usize]
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_on_simplex(&self) -> bool {
        (self.total() - 1.0).abs() <= SIMPLEX_TOL
    }

    /// Smallest window still holding every positive weight.
    pub fn trimmed(&self) -> Self {
        let n = self.n_alpha as i64;
        let reach = window(self.n_alpha)
            .filter(|&j| self.weight(j) > 0.0)
            .map(|j| j.abs())
            .max()
            .unwrap_or(0);
        let start = (n - reach) as usize;
        Self {
            n_alpha: reach as usize,
            weights: self.weights[start..start + 2 * reach as usize + 1].to_vec(),
        }
    }

    /// Zero-padded copy over a wider window.
    pub fn widened(&self, n_alpha: usize) -> Self {
        let n_alpha = n_alpha.max(self.n_alpha);
        let weights = window(n_alpha).map(|j| self.weight(j)).collect();
        Self { n_alpha, weights }
    }
}

/// Reward `κ·ℓ·A(j)`, less the unit reset cost when `j` is outside the reset window.
pub fn reward(
    alloc: &Allocation,
    j: RelativeIndex,
    n_tau: usize,
    params: &UtilityParams,
) -> Result<f64> {
    if j.unsigned_abs() as usize > alloc.n_alpha {
        return Err(Error::OffsetOutOfWindow {
            offset: j,
            half_width: alloc.n_alpha,
        });
    }
    Ok(reward_unchecked(alloc, j, n_tau, params))
}

pub(crate) fn reward_unchecked(
    alloc: &Allocation,
    j: RelativeIndex,
    n_tau: usize,
    params: &UtilityParams,
) -> f64 {
    let fee = params.yield_scale() * alloc.weight(j);
    if j.unsigned_abs() as usize > n_tau {
        fee - 1.0
    } else {
        fee
    }
}

/// How probability mass landing outside the allocation window is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Sum over the allocation window only; outside mass contributes nothing.
    #[default]
    StrictPaper,
    /// Sum over every reachable bin; bins without liquidity earn zero and
    /// still pay the reset cost when outside the reset window.
    FullCoverage,
}

impl EvalMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMode::StrictPaper => "strict-paper",
            EvalMode::FullCoverage => "full-coverage",
        }
    }
}

impl core::str::FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict-paper" => Ok(EvalMode::StrictPaper),
            "full-coverage" => Ok(EvalMode::FullCoverage),
            other => Err(Error::invalid(format!(
                "unknown mode '{other}' (expected strict-paper or full-coverage)"
            ))),
        }
    }
}

/// Stationary landing law over every bin reachable from the reset window.
///
/// `q(j) = Σ_i p(i)·h(j − i)` for `|j| ≤ n_tau + k_max`. Built once per
/// `(dist, n_tau)` and shared by every allocation evaluated against it.
#[derive(Debug, Clone, PartialEq)]
pub struct LandingProfile {
    n_tau: usize,
    reach: usize,
    q: Vec<f64>,
    chain: ResetChain,
}

impl LandingProfile {
    pub fn new(dist: &NextPriceDistribution, n_tau: usize) -> Result<Self> {
        let chain = build_reset_chain(dist, n_tau)?;
        let reach = n_tau + dist.k_max();
        let q = window(reach)
            .map(|j| {
                window(n_tau)
                    .map(|i| chain.occupancy(i) * dist.h(j - i))
                    .sum()
            })
            .collect();
        Ok(Self {
            n_tau,
            reach,
            q,
            chain,
        })
    }

    pub fn n_tau(&self) -> usize {
        self.n_tau
    }

    /// Half-width of the reachable window, `n_tau + k_max`.
    pub fn reach(&self) -> usize {
        self.reach
    }

    pub fn chain(&self) -> &ResetChain {
        &self.chain
    }

    /// `q(j)`, zero beyond the reachable window.
    pub fn q(&self, j: RelativeIndex) -> f64 {
        let r = self.reach as i64;
        if j.abs() > r {
            0.0
        } else {
            self.q[(j + r) as usize]
        }
    }

    /// Landing probabilities restricted to `-n_alpha..=n_alpha`.
    pub fn landing(&self, n_alpha: usize) -> Vec<f64> {
        window(n_alpha).map(|j| self.q(j)).collect()
    }

    /// Probability of landing outside `-n_alpha..=n_alpha`.
    pub fn deficit(&self, n_alpha: usize) -> f64 {
        window(self.reach)
            .filter(|j| j.unsigned_abs() as usize > n_alpha)
            .map(|j| self.q(j))
            .sum()
    }

    /// Relative bins contributing to the expected utility under `mode`.
    pub fn eval_window(&self, n_alpha: usize, mode: EvalMode) -> core::ops::RangeInclusive<i64> {
        match mode {
            EvalMode::StrictPaper => window(n_alpha),
            EvalMode::FullCoverage => window(self.reach.max(n_alpha)),
        }
    }

    pub fn expected_utility(
        &self,
        alloc: &Allocation,
        params: &UtilityParams,
        mode: EvalMode,
    ) -> Result<f64> {
        let mut total = 0.0;
        for j in self.eval_window(alloc.n_alpha, mode) {
            let q = self.q(j);
            if q > 0.0 {
                total +=
                    q * params.shifted_utility(reward_unchecked(alloc, j, self.n_tau, params))?;
            }
        }
        Ok(total)
    }
}

/// Expected per-step utility `Σ_j q(j)·u(R_A(j) + shift)` of an allocation.
pub fn expected_utility(
    dist: &NextPriceDistribution,
    n_tau: usize,
    alloc: &Allocation,
    params: &UtilityParams,
    mode: EvalMode,
) -> Result<f64> {
    LandingProfile::new(dist, n_tau)?.expected_utility(alloc, params, mode)
}
