//! Monte Carlo execution of a tau-reset strategy on the binned price process.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::NextPriceDistribution;
use crate::error::Result;
use crate::strategies::StrategySpec;
use crate::utility::{reward_unchecked, EvalMode};
use crate::RelativeIndex;

/// Generator behind [`sample_path`], recorded in every report.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Inverse-CDF sampler over `-k_max..=k_max`.
#[derive(Debug, Clone)]
pub struct MoveSampler {
    cumulative: Vec<f64>,
    k_max: i64,
    last_positive: usize,
}

impl MoveSampler {
    pub fn new(dist: &NextPriceDistribution) -> Self {
        let mut acc = 0.0;
        let cumulative = dist
            .probs()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let last_positive = dist.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0);
        Self {
            cumulative,
            k_max: dist.k_max() as i64,
            last_positive,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RelativeIndex {
        let u: f64 = rng.random();
        // first bin whose cumulative mass exceeds u; rounding in the running
        // sum can leave u above the last entry
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.last_positive);
        idx as i64 - self.k_max
    }
}

/// `steps` i.i.d. moves drawn from `h`, reproducible for a given seed.
pub fn sample_path(dist: &NextPriceDistribution, steps: usize, seed: u64) -> Vec<RelativeIndex> {
    let sampler = MoveSampler::new(dist);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..steps).map(|_| sampler.sample(&mut rng)).collect()
}

/// What happened on one step of a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Landing bin relative to the center in force during the step.
    pub landing: RelativeIndex,
    pub reward: f64,
    pub reset: bool,
    /// Whether the step enters the expected-utility sum under the mode.
    pub counted: bool,
    pub utility: f64,
}

/// State machine tracking the offset of the price from the current center.
///
/// A landing outside the reset window earns the fee of the allocation still
/// in place, pays the unit reset cost and re-centers. In strict-paper mode a
/// landing outside the allocation window contributes no utility, mirroring
/// the analytic sum over the allocation window only.
#[derive(Debug, Clone)]
pub struct StrategyRunner<'a> {
    spec: &'a StrategySpec,
    mode: EvalMode,
    offset: RelativeIndex,
}

impl<'a> StrategyRunner<'a> {
    pub fn new(spec: &'a StrategySpec, mode: EvalMode) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            mode,
            offset: 0,
        })
    }

    pub fn offset(&self) -> RelativeIndex {
        self.offset
    }

    pub fn step(&mut self, mv: RelativeIndex) -> Result<StepOutcome> {
        let landing = self.offset + mv;
        let reset = landing.unsigned_abs() as usize > self.spec.n_tau;
        let reward = reward_unchecked(
            &self.spec.allocation,
            landing,
            self.spec.n_tau,
            &self.spec.params,
        );
        let counted = self.mode == EvalMode::FullCoverage
            || landing.unsigned_abs() as usize <= self.spec.n_alpha;
        let utility = if counted {
            self.spec.params.shifted_utility(reward)?
        } else {
            0.0
        };
        self.offset = if reset { 0 } else { landing };
        Ok(StepOutcome {
            landing,
            reward,
            reset,
            counted,
            utility,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub steps: usize,
    pub resets: usize,
    pub total_reward: f64,
    pub mean_utility_per_step: f64,
    /// Batch-means standard error of the mean utility.
    pub std_error: f64,
    pub seed: Option<u64>,
    pub rng: String,
}

/// Batch-means standard error using `⌊√n⌋` batches, which absorbs the serial
/// correlation introduced by the chain state.
pub fn batch_std_error(values: &[f64]) -> f64 {
    let n = values.len();
    let batches = libm::floor(libm::sqrt(n as f64)) as usize;
    if batches < 2 {
        return 0.0;
    }
    let size = n / batches;
    let means: Vec<f64> = values
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (batches - 1) as f64;
    libm::sqrt(var / batches as f64)
}

/// Runs a strategy over a path of moves, starting freshly reset.
pub fn run_strategy(
    path: &[RelativeIndex],
    spec: &StrategySpec,
    mode: EvalMode,
) -> Result<SimReport> {
    let outcomes = run_trace(path, spec, mode)?;
    Ok(summarize_outcomes(&outcomes, None))
}

pub fn run_trace(
    path: &[RelativeIndex],
    spec: &StrategySpec,
    mode: EvalMode,
) -> Result<Vec<StepOutcome>> {
    let mut runner = StrategyRunner::new(spec, mode)?;
    path.iter().map(|&mv| runner.step(mv)).collect()
}

/// Samples a path and runs the strategy on it.
pub fn simulate(
    dist: &NextPriceDistribution,
    spec: &StrategySpec,
    steps: usize,
    seed: u64,
    mode: EvalMode,
) -> Result<SimReport> {
    let path = sample_path(dist, steps, seed);
    let outcomes = run_trace(&path, spec, mode)?;
    Ok(summarize_outcomes(&outcomes, Some(seed)))
}

pub fn summarize_outcomes(outcomes: &[StepOutcome], seed: Option<u64>) -> SimReport {
    let steps = outcomes.len();
    let utilities: Vec<f64> = outcomes.iter().map(|o| o.utility).collect();
    let mean = if steps == 0 {
        0.0
    } else {
        utilities.iter().sum::<f64>() / steps as f64
    };
    SimReport {
        steps,
        resets: outcomes.iter().filter(|o| o.reset).count(),
        total_reward: outcomes.iter().map(|o| o.reward).sum(),
        mean_utility_per_step: mean,
        std_error: batch_std_error(&utilities),
        seed,
        rng: String::from(RNG_ALGORITHM),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategies::uniform_strategy;
    use crate::utility::UtilityParams;
    use alloc::vec;

    fn toy() -> NextPriceDistribution {
        NextPriceDistribution::new(1, 1.0, vec![1.0 / 3.0; 3]).unwrap()
    }

    #[test]
    fn still_law_never_moves() {
        let still = NextPriceDistribution::new(2, 1.0, vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(sample_path(&still, 500, 7).iter().all(|&m| m == 0));
        let spec = uniform_strategy(0, 1, UtilityParams::default());
        let r = run_strategy(&sample_path(&still, 100, 7), &spec, EvalMode::StrictPaper).unwrap();
        assert_eq!(r.resets, 0);
        assert!((r.total_reward - 100.0 * 100.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn frequencies_match_h() {
        let path = sample_path(&toy(), 30_000, 11);
        for k in -1..=1 {
            let f = path.iter().filter(|&&m| m == k).count() as f64 / 30_000.0;
            assert!((f - 1.0 / 3.0).abs() < 0.01, "move {k}: {f}");
        }
    }

    #[test]
    fn same_seed_same_path() {
        assert_eq!(sample_path(&toy(), 1000, 3), sample_path(&toy(), 1000, 3));
        assert_ne!(sample_path(&toy(), 1000, 3), sample_path(&toy(), 1000, 4));
    }

    #[test]
    fn hand_stepped_trace() {
        let spec = uniform_strategy(1, 1, UtilityParams::new(0.0, 1.0, 1.0).unwrap());
        let t = run_trace(&[1, 1, -1, 0, -1, -1], &spec, EvalMode::StrictPaper).unwrap();
        let landings: Vec<i64> = t.iter().map(|o| o.landing).collect();
        assert_eq!(landings, vec![1, 2, -1, -1, -2, -1]);
        let resets: Vec<bool> = t.iter().map(|o| o.reset).collect();
        assert_eq!(resets, vec![false, true, false, false, true, false]);
        // landing at ±2 is outside the allocation window: no utility in strict mode
        assert!(!t[1].counted && t[1].utility == 0.0 && t[1].reward == -1.0);
        let full = run_trace(&[1, 1], &spec, EvalMode::FullCoverage).unwrap();
        assert_eq!(full[1].utility, -1.0);
    }

    #[test]
    fn batch_error_of_constant_is_zero() {
        assert_eq!(batch_std_error(&[2.0; 400]), 0.0);
        assert_eq!(batch_std_error(&[1.0, 2.0, 3.0]), 0.0);
        assert!(batch_std_error(&(0..400).map(|i| (i % 3) as f64).collect::<Vec<_>>()) >= 0.0);
    }
}
