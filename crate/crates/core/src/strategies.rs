//! Uniform, proportional and optimal tau-reset strategies.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::distribution::NextPriceDistribution;
use crate::error::{Error, Result};
use crate::optimizer::{solve, OptimizationProblem, Solution};
use crate::utility::{Allocation, EvalMode, LandingProfile, UtilityParams};
use crate::window;

/// KKT residual an optimal allocation must certify.
pub const OPTIMAL_KKT_TOL: f64 = 1e-8;

// Cumulative mass is compared with this slack so that mass = 1 is reachable
// despite rounding in Σ h.
const MASS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Uniform,
    Proportional,
    Optimal,
    Custom,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Uniform => "uniform",
            StrategyKind::Proportional => "proportional",
            StrategyKind::Optimal => "optimal",
            StrategyKind::Custom => "custom",
        }
    }
}

/// A fully specified tau-reset strategy: reset window, allocation window,
/// allocation and utility parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub n_tau: usize,
    pub n_alpha: usize,
    pub allocation: Allocation,
    pub params: UtilityParams,
}

impl StrategySpec {
    pub fn new(
        kind: StrategyKind,
        n_tau: usize,
        allocation: Allocation,
        params: UtilityParams,
    ) -> Result<Self> {
        if kind == StrategyKind::Optimal && !allocation.is_on_simplex() {
            return Err(Error::invalid("optimal allocation must sum to one"));
        }
        Ok(Self {
            kind,
            n_tau,
            n_alpha: allocation.n_alpha(),
            allocation,
            params,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.allocation.n_alpha() != self.n_alpha {
            return Err(Error::shape(format!(
                "strategy n_alpha={} but allocation covers n_alpha={}",
                self.n_alpha,
                self.allocation.n_alpha()
            )));
        }
        Ok(())
    }

    pub fn expected_utility(&self, dist: &NextPriceDistribution, mode: EvalMode) -> Result<f64> {
        LandingProfile::new(dist, self.n_tau)?.expected_utility(
            &self.allocation,
            &self.params,
            mode,
        )
    }
}

/// Smallest half-width `n` with `Σ_{|k| ≤ n} h(k) ≥ mass`.
pub fn window_for_mass(dist: &NextPriceDistribution, mass: f64) -> Result<usize> {
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::invalid(format!("window mass {mass} outside (0, 1]")));
    }
    let mut covered = 0.0;
    for n in 0..=dist.k_max() {
        let m = n as i64;
        covered += if n == 0 {
            dist.h(0)
        } else {
            dist.h(-m) + dist.h(m)
        };
        if covered >= mass - MASS_SLACK {
            return Ok(n);
        }
    }
    Err(Error::invalid(format!(
        "distribution only holds mass {covered} < {mass}"
    )))
}

/// `A(j) = 1 / (2·n_alpha + 1)` over the allocation window.
pub fn uniform_strategy(n_tau: usize, n_alpha: usize, params: UtilityParams) -> StrategySpec {
    StrategySpec {
        kind: StrategyKind::Uniform,
        n_tau,
        n_alpha,
        allocation: Allocation::uniform(n_alpha),
        params,
    }
}

/// `A(j) ∝ h(j)` over explicit windows, renormalized to deploy the full budget.
pub fn proportional_with_windows(
    dist: &NextPriceDistribution,
    n_tau: usize,
    n_alpha: usize,
    params: UtilityParams,
) -> Result<StrategySpec> {
    let raw: Vec<f64> = window(n_alpha).map(|j| dist.h(j)).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid(format!(
            "no next-price mass inside the allocation window of half-width {n_alpha}"
        )));
    }
    let allocation = Allocation::new(n_alpha, raw.iter().map(|h| h / total).collect())?;
    Ok(StrategySpec {
        kind: StrategyKind::Proportional,
        n_tau,
        n_alpha,
        allocation,
        params,
    })
}

/// Proportional strategy with both windows chosen by probability mass.
pub fn proportional_strategy(
    dist: &NextPriceDistribution,
    tau_mass: f64,
    alpha_mass: f64,
    params: UtilityParams,
) -> Result<StrategySpec> {
    let n_tau = window_for_mass(dist, tau_mass)?;
    let n_alpha = window_for_mass(dist, alpha_mass)?;
    proportional_with_windows(dist, n_tau, n_alpha, params)
}

/// Proportional strategy whose allocation window maximizes expected utility
/// for a fixed reset window, searching `n_alpha ∈ 0..=k_max`.
pub fn best_proportional(
    dist: &NextPriceDistribution,
    n_tau: usize,
    params: UtilityParams,
    mode: EvalMode,
) -> Result<(StrategySpec, f64)> {
    let profile = LandingProfile::new(dist, n_tau)?;
    let mut best: Option<(StrategySpec, f64)> = None;
    for n_alpha in 0..=dist.k_max() {
        let Ok(spec) = proportional_with_windows(dist, n_tau, n_alpha, params) else {
            continue;
        };
        let eu = profile.expected_utility(&spec.allocation, &params, mode)?;
        if best.as_ref().is_none_or(|(_, b)| eu > *b) {
            best = Some((spec, eu));
        }
    }
    best.ok_or_else(|| Error::invalid("distribution has no mass"))
}

/// Optimal tau-reset strategy for a given reset window.
///
/// The allocation window spans every bin reachable in one step from the reset
/// window, `n_alpha = n_tau + k_max`.
pub fn optimal_strategy(
    dist: &NextPriceDistribution,
    n_tau: usize,
    params: UtilityParams,
    mode: EvalMode,
) -> Result<(StrategySpec, Solution)> {
    let profile = LandingProfile::new(dist, n_tau)?;
    optimal_on_profile(&profile, params, mode)
}

pub fn optimal_on_profile(
    profile: &LandingProfile,
    params: UtilityParams,
    mode: EvalMode,
) -> Result<(StrategySpec, Solution)> {
    let problem = OptimizationProblem::from_profile(profile, profile.reach(), params, mode)?;
    let solution = solve(&problem, OPTIMAL_KKT_TOL)?;
    let spec = StrategySpec::new(
        StrategyKind::Optimal,
        profile.n_tau(),
        solution.allocation.clone(),
        params,
    )?;
    Ok((spec, solution))
}
