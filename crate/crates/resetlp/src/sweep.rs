//! Parallel expected-utility sweeps over window sizes and risk aversion.

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use resetlp_core::distribution::NextPriceDistribution;
use resetlp_core::strategies::{
    best_proportional, optimal_on_profile, proportional_with_windows, uniform_strategy,
    window_for_mass,
};
use resetlp_core::utility::{EvalMode, LandingProfile, UtilityParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepStrategy {
    Uniform,
    Proportional,
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TauAxis {
    Counts(Vec<usize>),
    Masses(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub strategy: SweepStrategy,
    pub a_values: Vec<f64>,
    pub tau: TauAxis,
    /// Empty means the best window for proportional strategies; ignored by
    /// optimal strategies, which span every reachable bin.
    pub n_alpha: Vec<usize>,
    pub params: UtilityParams,
    pub mode: EvalMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub tau_mass: Option<f64>,
    pub n_tau: usize,
    pub n_alpha: usize,
    pub expected_utility: f64,
}

/// `"0,2,5"`, `"0:8"` (inclusive) or `"0:8:2"`.
pub fn parse_usize_grid(raw: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = raw.split(':').map(str::trim).collect();
    let num = |s: &str| {
        s.parse::<usize>()
            .with_context(|| format!("bad grid value {s:?} in {raw:?}"))
    };
    let grid: Vec<usize> = match parts.as_slice() {
        [list] => list
            .split(',')
            .map(|s| num(s.trim()))
            .collect::<Result<_>>()?,
        [lo, hi] => (num(lo)?..=num(hi)?).collect(),
        [lo, hi, step] => {
            let step = num(step)?;
            if step == 0 {
                bail!("grid step must be positive in {raw:?}");
            }
            (num(lo)?..=num(hi)?).step_by(step).collect()
        }
        _ => bail!("bad grid {raw:?}: use a,b,c or lo:hi[:step]"),
    };
    if grid.is_empty() {
        bail!("grid {raw:?} is empty");
    }
    Ok(grid)
}

/// Comma-separated reals.
pub fn parse_f64_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .with_context(|| format!("bad number {s:?} in {raw:?}"))
        })
        .collect()
}

struct Cell {
    a: f64,
    tau_mass: Option<f64>,
    n_tau: usize,
}

fn run_cell(dist: &NextPriceDistribution, cfg: &SweepConfig, cell: &Cell) -> Result<Vec<SweepRow>> {
    let params = cfg.params.with_a(cell.a);
    let profile = LandingProfile::new(dist, cell.n_tau)?;
    let row = |n_alpha, expected_utility| SweepRow {
        a: cell.a,
        tau_mass: cell.tau_mass,
        n_tau: cell.n_tau,
        n_alpha,
        expected_utility,
    };
    match cfg.strategy {
        SweepStrategy::Optimal => {
            let (spec, sol) = optimal_on_profile(&profile, params, cfg.mode)?;
            Ok(vec![row(spec.n_alpha, sol.objective)])
        }
        SweepStrategy::Proportional if cfg.n_alpha.is_empty() => {
            let (spec, eu) = best_proportional(dist, cell.n_tau, params, cfg.mode)?;
            Ok(vec![row(spec.n_alpha, eu)])
        }
        SweepStrategy::Uniform if cfg.n_alpha.is_empty() => {
            bail!("uniform sweep needs an n_alpha grid")
        }
        kind => cfg
            .n_alpha
            .iter()
            .map(|&n_alpha| {
                let spec = match kind {
                    SweepStrategy::Uniform => uniform_strategy(cell.n_tau, n_alpha, params),
                    _ => proportional_with_windows(dist, cell.n_tau, n_alpha, params)?,
                };
                Ok(row(
                    n_alpha,
                    profile.expected_utility(&spec.allocation, &params, cfg.mode)?,
                ))
            })
            .collect(),
    }
}

/// Evaluates every cell in parallel; rows come back in grid order
/// (a, then tau, then n_alpha).
pub fn sweep(dist: &NextPriceDistribution, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if cfg.a_values.is_empty() {
        bail!("sweep needs at least one value of a");
    }
    let taus: Vec<(Option<f64>, usize)> = match &cfg.tau {
        TauAxis::Counts(ns) => ns.iter().map(|&n| (None, n)).collect(),
        TauAxis::Masses(ms) => ms
            .iter()
            .map(|&m| Ok((Some(m), window_for_mass(dist, m)?)))
            .collect::<Result<_>>()?,
    };
    let cells: Vec<Cell> = cfg
        .a_values
        .iter()
        .flat_map(|&a| {
            taus.iter()
                .map(move |&(tau_mass, n_tau)| Cell { a, tau_mass, n_tau })
        })
        .collect();
    let rows: Vec<Vec<SweepRow>> = cells
        .par_iter()
        .map(|c| run_cell(dist, cfg, c))
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_sweep_csv<W: std::io::Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["a", "tau_mass", "n_tau", "n_alpha", "expected_utility"])?;
    for r in rows {
        w.write_record([
            r.a.to_string(),
            r.tau_mass.map(|m| m.to_string()).unwrap_or_default(),
            r.n_tau.to_string(),
            r.n_alpha.to_string(),
            r.expected_utility.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NextPriceDistribution {
        NextPriceDistribution::new(1, 1.0, vec![1.0 / 3.0; 3]).unwrap()
    }

    #[test]
    fn grids() {
        assert_eq!(parse_usize_grid("0,2,5").unwrap(), vec![0, 2, 5]);
        assert_eq!(parse_usize_grid("1:3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_usize_grid("0:6:3").unwrap(), vec![0, 3, 6]);
        assert!(parse_usize_grid("3:1").is_err());
        assert!(parse_usize_grid("0:4:0").is_err());
        assert!(parse_usize_grid("x").is_err());
        assert_eq!(parse_f64_list("0, 0.5").unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn single_cell_matches_direct_evaluation() {
        let params = UtilityParams::new(0.0, 1.0, 1.0).unwrap();
        let cfg = SweepConfig {
            strategy: SweepStrategy::Uniform,
            a_values: vec![0.0],
            tau: TauAxis::Counts(vec![1]),
            n_alpha: vec![1],
            params,
            mode: EvalMode::StrictPaper,
        };
        let rows = sweep(&toy(), &cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].expected_utility - 5.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn rows_follow_grid_order() {
        let cfg = SweepConfig {
            strategy: SweepStrategy::Proportional,
            a_values: vec![0.0, 1.0],
            tau: TauAxis::Counts(vec![0, 1, 2]),
            n_alpha: vec![0, 1],
            params: UtilityParams::default(),
            mode: EvalMode::FullCoverage,
        };
        let rows = sweep(&toy(), &cfg).unwrap();
        let keys: Vec<(f64, usize, usize)> =
            rows.iter().map(|r| (r.a, r.n_tau, r.n_alpha)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(keys, sorted);
        assert_eq!(rows.len(), 12);
    }
}
