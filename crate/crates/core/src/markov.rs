//! Reset Markov chain over the reset window and the landing law over the
//! allocation window.
//!
//! States are relative indices `-n_tau..=n_tau` around the last reset price.
//! A move leaving the window is folded into column 0: the strategy re-centers
//! on the new price, which is by definition relative bin 0.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::distribution::NextPriceDistribution;
use crate::error::{Error, Result};
use crate::{window, RelativeIndex};

/// Required fixed-point residual `‖pM − p‖∞` of a stationary vector.
pub const STATIONARY_TOL: f64 = 1e-10;

const POWER_ITERATION_CAP: usize = 1_000_000;

/// `f(i, j) = h(j − i)`; zero beyond the support.
pub fn transition_prob(dist: &NextPriceDistribution, i: RelativeIndex, j: RelativeIndex) -> f64 {
    dist.h(j - i)
}

/// Probability `g(i)` that a move from state `i` leaves the reset window.
///
/// Summed directly over the escaping moves rather than as `1 − Σ f`, which
/// keeps it non-negative and avoids cancellation.
pub fn reset_prob(dist: &NextPriceDistribution, n_tau: usize, i: RelativeIndex) -> Result<f64> {
    let n = n_tau as i64;
    if i.abs() > n {
        return Err(Error::OffsetOutOfWindow {
            offset: i,
            half_width: n_tau,
        });
    }
    Ok(dist
        .support()
        .filter(|&(k, _)| (i + k).abs() > n)
        .map(|(_, p)| p)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetChain {
    n_tau: usize,
    matrix: Vec<Vec<f64>>,
    stationary: Vec<f64>,
}

impl ResetChain {
    pub fn n_tau(&self) -> usize {
        self.n_tau
    }

    /// Row `i + n_tau` holds the transitions out of relative state `i`.
    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Stationary occupancy of relative state `i`.
    pub fn occupancy(&self, i: RelativeIndex) -> f64 {
        let n = self.n_tau as i64;
        if i.abs() > n {
            0.0
        } else {
            self.stationary[(i + n) as usize]
        }
    }

    /// Long-run fraction of steps that trigger a reset, `Σ p(i)·g(i)`.
    pub fn reset_rate(&self, dist: &NextPriceDistribution) -> f64 {
        window(self.n_tau)
            .map(|i| self.occupancy(i) * reset_prob(dist, self.n_tau, i).unwrap_or(0.0))
            .sum()
    }
}

pub fn build_reset_chain(dist: &NextPriceDistribution, n_tau: usize) -> Result<ResetChain> {
    dist.validate()?;
    let size = 2 * n_tau + 1;
    let mut matrix = vec![vec![0.0; size]; size];
    for (r, i) in window(n_tau).enumerate() {
        for (c, j) in window(n_tau).enumerate() {
            matrix[r][c] = transition_prob(dist, i, j);
        }
        matrix[r][n_tau] += reset_prob(dist, n_tau, i)?;
    }
    let stationary = stationary_distribution(&matrix)?;
    Ok(ResetChain {
        n_tau,
        matrix,
        stationary,
    })
}

fn residual(m: &[Vec<f64>], p: &[f64]) -> f64 {
    (0..p.len())
        .map(|j| {
            let pm: f64 = p.iter().zip(m).map(|(pi, row)| pi * row[j]).sum();
            (pm - p[j]).abs()
        })
        .fold(0.0, f64::max)
}

/// Left fixed point `pM = p` of a row-stochastic matrix, normalized to one.
///
/// The chain is taken to start in the center state (a fresh reset). Only the
/// states reachable from it carry stationary mass, which pins down a unique
/// answer even for degenerate laws such as `h(0) = 1` where the full matrix
/// is reducible. On that class the system `(Mᵀ − I)p = 0, Σp = 1` is solved
/// directly, with lazy power iteration as a fallback.
pub fn stationary_distribution(m: &[Vec<f64>]) -> Result<Vec<f64>> {
    let size = m.len();
    if size == 0 || m.iter().any(|row| row.len() != size) {
        return Err(Error::shape(
            "stationary distribution needs a non-empty square matrix",
        ));
    }
    for (r, row) in m.iter().enumerate() {
        if row.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid(format!(
                "row {r} has a negative or non-finite entry"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("row {r} sums to {s}, not 1")));
        }
    }

    let class = reachable_from(m, (size - 1) / 2);
    let sub: Vec<Vec<f64>> = class
        .iter()
        .map(|&r| class.iter().map(|&c| m[r][c]).collect())
        .collect();

    let p_sub = match solve_direct(&sub) {
        Some(p) if residual(&sub, &p) < STATIONARY_TOL => p,
        _ => power_iteration(&sub)?,
    };
    let mut p = vec![0.0; size];
    for (&s, v) in class.iter().zip(p_sub) {
        p[s] = v;
    }
    Ok(p)
}

fn reachable_from(m: &[Vec<f64>], start: usize) -> Vec<usize> {
    let mut seen = vec![false; m.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(s) = stack.pop() {
        for (t, &w) in m[s].iter().enumerate() {
            if w > 0.0 && !seen[t] {
                seen[t] = true;
                stack.push(t);
            }
        }
    }
    (0..m.len()).filter(|&s| seen[s]).collect()
}

// Gaussian elimination with partial pivoting on (Mᵀ − I) with its last
// equation replaced by Σp = 1.
fn solve_direct(m: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|r| {
            let mut row: Vec<f64> = (0..n)
                .map(|c| m[c][r] - if r == c { 1.0 } else { 0.0 })
                .collect();
            row.push(0.0);
            row
        })
        .collect();
    a[n - 1] = vec![1.0; n + 1];

    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        let (top, bottom) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in bottom {
            let factor = row[col] / pivot_row[col];
            if factor != 0.0 {
                for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= factor * p;
                }
            }
        }
    }
    let mut p = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| a[r][c] * p[c]).sum();
        p[r] = (a[r][n] - tail) / a[r][r];
    }
    if p.iter().any(|x| !x.is_finite() || *x < -1e-12) {
        return None;
    }
    for x in p.iter_mut() {
        *x = x.max(0.0);
    }
    let total: f64 = p.iter().sum();
    if total <= 0.0 {
        return None;
    }
    for x in p.iter_mut() {
        *x /= total;
    }
    Some(p)
}

// p ← ½(p + pM); the lazy chain shares M's fixed points and is aperiodic.
fn power_iteration(m: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = m.len();
    let mut p = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut res = f64::INFINITY;
    for iter in 0..POWER_ITERATION_CAP {
        for (j, out) in next.iter_mut().enumerate() {
            let pm: f64 = p.iter().zip(m).map(|(pi, row)| pi * row[j]).sum();
            *out = 0.5 * (p[j] + pm);
        }
        let total: f64 = next.iter().sum();
        for x in next.iter_mut() {
            *x /= total;
        }
        core::mem::swap(&mut p, &mut next);
        if iter % 64 == 63 {
            res = residual(m, &p);
            if res < STATIONARY_TOL * 1e-2 {
                return Ok(p);
            }
        }
    }
    if res < STATIONARY_TOL {
        Ok(p)
    } else {
        Err(Error::NonConvergence {
            iterations: POWER_ITERATION_CAP,
            residual: res,
        })
    }
}

/// `O(i, j) = f(i, j)` for `i` in the reset window, `j` in the allocation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMatrix {
    n_tau: usize,
    n_alpha: usize,
    matrix: Vec<Vec<f64>>,
}

impl OutcomeMatrix {
    pub fn n_tau(&self) -> usize {
        self.n_tau
    }

    pub fn n_alpha(&self) -> usize {
        self.n_alpha
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }
}

pub fn outcome_matrix(dist: &NextPriceDistribution, n_tau: usize, n_alpha: usize) -> OutcomeMatrix {
    let matrix = window(n_tau)
        .map(|i| {
            window(n_alpha)
                .map(|j| transition_prob(dist, i, j))
                .collect()
        })
        .collect();
    OutcomeMatrix {
        n_tau,
        n_alpha,
        matrix,
    }
}

/// Stationary probability `q(j) = Σ_i p(i)·f(i, j)` of landing in each
/// allocation bin. Mass landing outside the window is the deficit `1 − Σ q`.
pub fn landing_distribution(chain: &ResetChain, outcome: &OutcomeMatrix) -> Result<Vec<f64>> {
    if chain.n_tau != outcome.n_tau {
        return Err(Error::shape(format!(
            "chain has n_tau={} but outcome matrix has n_tau={}",
            chain.n_tau, outcome.n_tau
        )));
    }
    let cols = 2 * outcome.n_alpha + 1;
    Ok((0..cols)
        .map(|c| {
            chain
                .stationary
                .iter()
                .zip(&outcome.matrix)
                .map(|(p, row)| p * row[c])
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> NextPriceDistribution {
        NextPriceDistribution::new(1, 1.0, vec![1.0 / 3.0; 3]).unwrap()
    }

    fn five() -> NextPriceDistribution {
        NextPriceDistribution::new(2, 1.0, vec![0.1, 0.2, 0.4, 0.2, 0.1]).unwrap()
    }

    fn assert_matrix(actual: &[Vec<f64>], expected: &[&[f64]], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert_eq!(a.len(), e.len());
            for (x, y) in a.iter().zip(e.iter()) {
                assert_abs_diff_eq!(*x, *y, epsilon = tol);
            }
        }
    }

    #[test]
    fn transition_examples() {
        assert_abs_diff_eq!(transition_prob(&toy(), 0, 1), 1.0 / 3.0);
        assert_eq!(transition_prob(&toy(), 0, 2), 0.0);
        assert_eq!(transition_prob(&toy(), -1, 1), 0.0);
    }

    #[test]
    fn reset_examples() {
        assert_eq!(reset_prob(&toy(), 1, 0).unwrap(), 0.0);
        assert_abs_diff_eq!(
            reset_prob(&toy(), 1, 1).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            reset_prob(&toy(), 0, 0).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            reset_prob(&toy(), 1, 2),
            Err(Error::OffsetOutOfWindow {
                offset: 2,
                half_width: 1
            })
        ));
    }

    #[test]
    fn chain_examples() {
        let c = build_reset_chain(&toy(), 1).unwrap();
        let t = 1.0 / 3.0;
        assert_matrix(
            c.matrix(),
            &[&[t, 2.0 * t, 0.0], &[t, t, t], &[0.0, 2.0 * t, t]],
            1e-15,
        );
        assert_eq!(
            build_reset_chain(&five(), 0).unwrap().matrix(),
            &[vec![1.0]]
        );
        let c = build_reset_chain(&five(), 1).unwrap();
        assert_matrix(
            c.matrix(),
            &[&[0.4, 0.5, 0.1], &[0.2, 0.6, 0.2], &[0.1, 0.5, 0.4]],
            1e-15,
        );
    }

    #[test]
    fn stationary_examples() {
        let c = build_reset_chain(&toy(), 1).unwrap();
        let p = c.stationary();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.25, epsilon = 1e-12);
        assert_eq!(stationary_distribution(&[vec![1.0]]).unwrap(), vec![1.0]);
    }

    #[test]
    fn degenerate_law_gives_center_point_mass() {
        let still = NextPriceDistribution::new(1, 1.0, vec![0.0, 1.0, 0.0]).unwrap();
        let c = build_reset_chain(&still, 3).unwrap();
        let mut expected = vec![0.0; 7];
        expected[3] = 1.0;
        assert_eq!(c.stationary(), expected.as_slice());
    }

    #[test]
    fn periodic_chain_is_solved() {
        // Pure drift +1: the chain cycles 0 → 1 → 2 → reset → 0.
        let drift = NextPriceDistribution::new(1, 1.0, vec![0.0, 0.0, 1.0]).unwrap();
        let c = build_reset_chain(&drift, 2).unwrap();
        for (x, y) in c
            .stationary()
            .iter()
            .zip([0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])
        {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_stochastic() {
        assert!(stationary_distribution(&[vec![0.5, 0.4], vec![0.5, 0.5]]).is_err());
        assert!(stationary_distribution(&[vec![1.0, 0.0]]).is_err());
        assert!(stationary_distribution(&[]).is_err());
    }

    #[test]
    fn outcome_examples() {
        let t = 1.0 / 3.0;
        let o = outcome_matrix(&toy(), 1, 1);
        assert_matrix(o.matrix(), &[&[t, t, 0.0], &[t, t, t], &[0.0, t, t]], 0.0);
        // single column f(i, 0) = h(-i)
        let o = outcome_matrix(&five(), 2, 0);
        assert_eq!(
            o.matrix().iter().map(|r| r[0]).collect::<Vec<_>>(),
            vec![0.1, 0.2, 0.4, 0.2, 0.1]
        );
        let o = outcome_matrix(&toy(), 0, 1);
        assert_matrix(o.matrix(), &[&[t, t, t]], 0.0);
    }

    #[test]
    fn landing_examples() {
        let c = build_reset_chain(&toy(), 1).unwrap();
        let q = landing_distribution(&c, &outcome_matrix(&toy(), 1, 1)).unwrap();
        for (x, y) in q.iter().zip([0.25, 1.0 / 3.0, 0.25]) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(1.0 - q.iter().sum::<f64>(), 1.0 / 6.0, epsilon = 1e-12);

        let c0 = build_reset_chain(&five(), 0).unwrap();
        let q = landing_distribution(&c0, &outcome_matrix(&five(), 0, 2)).unwrap();
        assert_eq!(q, five().probs());

        let mismatched = outcome_matrix(&toy(), 2, 1);
        assert!(landing_distribution(&c, &mismatched).is_err());
    }
}
