//! Expected-utility maximization over the probability simplex.
//!
//! For bin `j` of the allocation window the provider receives
//! `c_j = κℓ·A_j + s_j`, where `s_j` is the reward shift less the reset cost
//! when `j` lies outside the reset window. The objective `Σ q_j·u(c_j)` is
//! separable, so:
//!
//! * `a > 0`: concave. Stationarity `q_j·κℓ·e^{−a·c_j} = λ` inverts to
//!   `A_j = max(0, (t_j − ln λ) / (a·κℓ))` with `t_j = ln(q_j·κℓ) − a·s_j`.
//!   The sum is piecewise linear in `ln λ`, so the multiplier is found exactly
//!   by walking the sorted breakpoints.
//! * `a = 0`: linear; all weight goes to the largest `q_j`.
//! * `a < 0`: convex; the maximum sits at a vertex of the simplex.
//!
//! [`projected_gradient_verify`] solves the same problem iteratively and is
//! kept independent of the closed forms for cross-checking.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::{
    exp_utility, marginal_utility, Allocation, EvalMode, LandingProfile, UtilityParams,
};
use crate::window;

/// Relative tolerance under which two landing probabilities count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationProblem {
    q: Vec<f64>,
    in_tau: Vec<bool>,
    params: UtilityParams,
    mode: EvalMode,
    baseline: f64,
}

impl OptimizationProblem {
    /// Problem over an explicit landing vector for bins `-n..=n`, where
    /// `q.len() = 2n + 1`. Mass outside the window is ignored.
    pub fn new(
        q: Vec<f64>,
        in_tau: Vec<bool>,
        params: UtilityParams,
        mode: EvalMode,
    ) -> Result<Self> {
        if q.len().is_multiple_of(2) || q.len() != in_tau.len() {
            return Err(Error::shape(format!(
                "landing vector of length {} and membership of length {} must share an odd length",
                q.len(),
                in_tau.len()
            )));
        }
        if q.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid(
                "landing probabilities must be finite and non-negative",
            ));
        }
        if q.iter().all(|&x| x == 0.0) {
            return Err(Error::invalid("landing probabilities are identically zero"));
        }
        Ok(Self {
            q,
            in_tau,
            params,
            mode,
            baseline: 0.0,
        })
    }

    /// Problem over `-n_alpha..=n_alpha` of a landing profile.
    ///
    /// In full-coverage mode the fixed contribution of reachable bins outside
    /// the window is folded into the objective so that it matches
    /// [`LandingProfile::expected_utility`].
    pub fn from_profile(
        profile: &LandingProfile,
        n_alpha: usize,
        params: UtilityParams,
        mode: EvalMode,
    ) -> Result<Self> {
        let n_tau = profile.n_tau();
        let q = profile.landing(n_alpha);
        let in_tau = window(n_alpha)
            .map(|j| j.unsigned_abs() as usize <= n_tau)
            .collect();
        let mut problem = Self::new(q, in_tau, params, mode)?;
        if mode == EvalMode::FullCoverage {
            for j in profile.eval_window(n_alpha, mode) {
                let q = profile.q(j);
                if j.unsigned_abs() as usize > n_alpha && q > 0.0 {
                    let r = if j.unsigned_abs() as usize > n_tau {
                        -1.0
                    } else {
                        0.0
                    };
                    problem.baseline += q * params.shifted_utility(r)?;
                }
            }
        }
        Ok(problem)
    }

    pub fn n_alpha(&self) -> usize {
        (self.q.len() - 1) / 2
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn params(&self) -> &UtilityParams {
        &self.params
    }

    pub fn mode(&self) -> EvalMode {
        self.mode
    }

    fn offset(&self, idx: usize) -> f64 {
        let reset = if self.in_tau[idx] { 0.0 } else { 1.0 };
        self.params.shift() - reset
    }

    fn payoff(&self, idx: usize, weight: f64) -> f64 {
        self.params.yield_scale() * weight + self.offset(idx)
    }

    pub fn objective(&self, weights: &[f64]) -> Result<f64> {
        let mut total = self.baseline;
        for (idx, (&q, &w)) in self.q.iter().zip(weights).enumerate() {
            if q > 0.0 {
                total += q * exp_utility(self.payoff(idx, w), self.params.a)?;
            }
        }
        Ok(total)
    }

    /// `∂E/∂A_j = q_j·κℓ·u'(c_j)`.
    pub fn gradient(&self, weights: &[f64]) -> Vec<f64> {
        let scale = self.params.yield_scale();
        self.q
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(idx, (&q, &w))| q * scale * marginal_utility(self.payoff(idx, w), self.params.a))
            .collect()
    }

    // Indices ordered by |j|, negative before positive: the tie-break order.
    fn preference_order(&self) -> impl Iterator<Item = usize> {
        let n = self.n_alpha() as i64;
        (0..=n).flat_map(move |m| {
            let neg = (n - m) as usize;
            let pos = (n + m) as usize;
            if m == 0 {
                [Some(neg), None]
            } else {
                [Some(neg), Some(pos)]
            }
            .into_iter()
            .flatten()
        })
    }

    fn allocation(&self, weights: Vec<f64>) -> Result<Allocation> {
        Allocation::new(self.n_alpha(), weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    WaterFilling,
    VertexEnumeration,
    ProjectedGradient,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::WaterFilling => "water-filling",
            Method::VertexEnumeration => "vertex-enumeration",
            Method::ProjectedGradient => "projected-gradient",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub allocation: Allocation,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub method: Method,
    pub converged: bool,
}

impl Solution {
    /// Largest minus smallest weight.
    pub fn spread(&self) -> f64 {
        let w = self.allocation.weights();
        let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

/// Exact maximizer of the expected utility on the simplex.
///
/// `tol` is the KKT residual a concave solution must certify; exceeding it
/// marks the solution as not converged rather than failing.
pub fn solve(problem: &OptimizationProblem, tol: f64) -> Result<Solution> {
    let a = problem.params.a;
    let (weights, iterations, method) = if a > 0.0 {
        let (w, it) = water_fill(problem)?;
        (w, it, Method::WaterFilling)
    } else if a == 0.0 {
        let best = best_by(problem, |idx| Ok(problem.q[idx]))?;
        (one_hot(problem.q.len(), best), 1, Method::VertexEnumeration)
    } else {
        let n = problem.q.len();
        let best = best_by(problem, |idx| problem.objective(&one_hot(n, idx)))?;
        (one_hot(n, best), n, Method::VertexEnumeration)
    };
    let objective = problem.objective(&weights)?;
    let kkt = kkt_residual(problem, &weights);
    Ok(Solution {
        allocation: problem.allocation(weights)?,
        objective,
        kkt_residual: kkt,
        iterations,
        method,
        converged: kkt <= tol,
    })
}

fn one_hot(len: usize, idx: usize) -> Vec<f64> {
    let mut w = vec![0.0; len];
    w[idx] = 1.0;
    w
}

// Highest score in preference order; later candidates must win by more than
// the tie tolerance.
fn best_by(problem: &OptimizationProblem, score: impl Fn(usize) -> Result<f64>) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for idx in problem.preference_order() {
        let s = score(idx)?;
        match best {
            Some((_, b)) if s <= b + TIE_TOL * b.abs() => {}
            _ => best = Some((idx, s)),
        }
    }
    best.map(|(idx, _)| idx)
        .ok_or_else(|| Error::invalid("empty allocation window"))
}

fn water_fill(problem: &OptimizationProblem) -> Result<(Vec<f64>, usize)> {
    let a = problem.params.a;
    let scale = problem.params.yield_scale();
    let budget = a * scale;
    // t_j = ln(q_j κℓ) − a s_j; bins with q_j = 0 never receive weight.
    let levels: Vec<Option<f64>> = (0..problem.q.len())
        .map(|idx| {
            let q = problem.q[idx];
            (q > 0.0).then(|| libm::log(q * scale) - a * problem.offset(idx))
        })
        .collect();
    let mut sorted: Vec<f64> = levels.iter().flatten().copied().collect();
    sorted.sort_by(|x, y| y.total_cmp(x));

    // Σ_{top m} (t − μ) = a κℓ; keep the largest m whose m-th level stays above μ.
    let mut prefix = 0.0;
    let mut mu = None;
    for (m, &t) in sorted.iter().enumerate() {
        prefix += t;
        let candidate = (prefix - budget) / (m + 1) as f64;
        if t > candidate {
            mu = Some((candidate, m + 1));
        } else {
            break;
        }
    }
    let (mu, active) = mu.ok_or(Error::Bracket {
        low: sorted.last().copied().unwrap_or(f64::NAN),
        high: sorted.first().copied().unwrap_or(f64::NAN),
        sum: 0.0,
    })?;
    let mut weights: Vec<f64> = levels
        .iter()
        .map(|t| t.map_or(0.0, |t| ((t - mu) / budget).max(0.0)))
        .collect();
    let sum: f64 = weights.iter().sum();
    if !(sum.is_finite() && (sum - 1.0).abs() < 1e-9) {
        return Err(Error::Bracket {
            low: mu,
            high: sorted[0],
            sum,
        });
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    Ok((weights, active))
}

/// Violation of the equalization condition `q_j·U'(j) = q_k·U'(k)` over active
/// bins, plus violation of `q_j·U'(j) ≤ λ` over empty bins.
pub fn kkt_residual(problem: &OptimizationProblem, weights: &[f64]) -> f64 {
    let grad = problem.gradient(weights);
    let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
    for (g, &w) in grad.iter().zip(weights) {
        if w > 0.0 {
            hi = hi.max(*g);
            lo = lo.min(*g);
        }
    }
    if hi == f64::NEG_INFINITY {
        return f64::INFINITY;
    }
    let inactive = grad
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w <= 0.0)
        .map(|(g, _)| (g - hi).max(0.0))
        .fold(0.0, f64::max);
    (hi - lo) + inactive
}

/// Euclidean projection onto `{x ≥ 0, Σx = 1}`.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|x, y| y.total_cmp(x));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut x: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    let sum: f64 = x.iter().sum();
    for xi in x.iter_mut() {
        *xi /= sum;
    }
    x
}

/// Projected gradient ascent from the uniform allocation.
///
/// Barzilai–Borwein trial steps with Armijo backtracking. Stops once an
/// accepted step gains less than `tol` and moves less than `√tol`; hitting
/// `max_iters` returns the best iterate flagged as not converged.
pub fn projected_gradient_verify(
    problem: &OptimizationProblem,
    tol: f64,
    max_iters: usize,
) -> Result<Solution> {
    if problem.params.a < 0.0 {
        return Err(Error::invalid("projected-gradient verifier needs a >= 0"));
    }
    let n = problem.q.len();
    let mut x = vec![1.0 / n as f64; n];
    let mut fx = problem.objective(&x)?;
    let mut g = problem.gradient(&x);
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = if gmax > 0.0 { 1.0 / gmax } else { 1.0 };
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let (x_new, f_new) = loop {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + step * gi).collect();
            let candidate = project_to_simplex(&trial);
            let ascent: f64 = candidate
                .iter()
                .zip(&x)
                .zip(&g)
                .map(|((c, xi), gi)| gi * (c - xi))
                .sum();
            let f_c = problem.objective(&candidate)?;
            if f_c >= fx + 1e-4 * ascent || step < 1e-30 {
                break (candidate, f_c);
            }
            step *= 0.5;
        };
        let gain = f_new - fx;
        let moved = x_new
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let g_new = problem.gradient(&x_new);

        // BB1 step for ascent on a concave objective: s·s / (−s·y).
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = x_new[i] - x[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        step = if sy < 0.0 {
            (ss / -sy).clamp(1e-20, 1e20)
        } else {
            (step * 2.0).min(1e20)
        };

        x = x_new;
        g = g_new;
        let improved = f_new > fx;
        if improved {
            fx = f_new;
        }
        if gain.abs() < tol && moved < libm::sqrt(tol) {
            converged = true;
            break;
        }
    }
    Ok(Solution {
        kkt_residual: kkt_residual(problem, &x),
        allocation: problem.allocation(x)?,
        objective: fx,
        iterations,
        method: Method::ProjectedGradient,
        converged,
    })
}
