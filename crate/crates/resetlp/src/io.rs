//! Price CSV ingestion and the JSON/CSV documents exchanged by the CLI.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, NaiveDateTime};
use resetlp_core::distribution::{NextPriceDistribution, PriceSeries};
use resetlp_core::strategies::{
    best_proportional, optimal_strategy, proportional_with_windows, uniform_strategy,
    window_for_mass, StrategyKind, StrategySpec,
};
use resetlp_core::utility::{Allocation, EvalMode, UtilityParams};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Parses epoch seconds, RFC 3339, or `YYYY-MM-DD HH:MM:SS` (UTC).
pub fn parse_timestamp(raw: &str) -> Result<i64> {
    let s = raw.trim();
    if let Ok(secs) = s.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc().timestamp());
        }
    }
    bail!("unrecognized timestamp {raw:?}")
}

#[derive(Debug, Deserialize)]
struct PriceRow {
    timestamp: String,
    price: f64,
}

/// Reads a `timestamp,price` CSV with a header row.
pub fn read_prices<R: Read>(reader: R) -> Result<PriceSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut timestamps = Vec::new();
    let mut prices = Vec::new();
    for (i, row) in rdr.deserialize::<PriceRow>().enumerate() {
        let row = row.with_context(|| format!("price csv row {i}"))?;
        timestamps
            .push(parse_timestamp(&row.timestamp).with_context(|| format!("price csv row {i}"))?);
        prices.push(row.price);
    }
    Ok(PriceSeries::new(timestamps, prices)?)
}

pub fn read_prices_file(path: &Path) -> Result<PriceSeries> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_prices(f).with_context(|| format!("reading {}", path.display()))
}

/// Writes prices with RFC 3339 UTC timestamps.
pub fn write_prices<W: Write>(writer: W, series: &PriceSeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "price"])?;
    for (&t, &p) in series.timestamps().iter().zip(series.prices()) {
        let ts = DateTime::from_timestamp(t, 0)
            .with_context(|| format!("timestamp {t} out of range"))?;
        w.write_record([ts.format("%Y-%m-%dT%H:%M:%SZ").to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(f))
        .with_context(|| format!("parsing {}", path.display()))
}

/// Serialized form of a fitted next-price distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionDoc {
    pub k_max: usize,
    pub bin_width_pct: f64,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_rows: Option<usize>,
}

impl DistributionDoc {
    pub fn new(dist: &NextPriceDistribution, source_rows: Option<usize>) -> Self {
        Self {
            k_max: dist.k_max(),
            bin_width_pct: dist.bin_width_pct(),
            probs: dist.probs().to_vec(),
            source_rows,
        }
    }

    pub fn to_distribution(&self) -> Result<NextPriceDistribution> {
        Ok(NextPriceDistribution::new(
            self.k_max,
            self.bin_width_pct,
            self.probs.clone(),
        )?)
    }
}

pub fn read_distribution(path: &Path) -> Result<NextPriceDistribution> {
    read_json::<DistributionDoc>(path)?
        .to_distribution()
        .with_context(|| format!("validating {}", path.display()))
}

/// Strategy file: explicit `weights`, or a constructor `kind` whose windows
/// are given as half-widths (`n_tau`, `n_alpha`) or probability masses
/// (`tau_mass`, `alpha_mass`).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<StrategyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tau: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_alpha: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
}

impl StrategyDoc {
    /// Accepts a bare strategy document or a command report that embeds one
    /// under `strategy`, so `optimize` output feeds straight into `eval`.
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        let inner = match value {
            serde_json::Value::Object(mut map)
                if map.contains_key("command") && map.contains_key("strategy") =>
            {
                map.remove("strategy").unwrap_or_default()
            }
            other => other,
        };
        Ok(serde_json::from_value(inner)?)
    }
}

pub fn read_strategy(path: &Path) -> Result<StrategyDoc> {
    let value: serde_json::Value = read_json(path)?;
    StrategyDoc::from_value(value).with_context(|| format!("parsing {}", path.display()))
}

/// Command-line overrides of the utility parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ParamOverrides {
    pub a: Option<f64>,
    pub kappa: Option<f64>,
    pub ell: Option<f64>,
}

impl ParamOverrides {
    pub fn resolve(&self, doc: &StrategyDoc) -> Result<UtilityParams> {
        let d = UtilityParams::default();
        Ok(UtilityParams::new(
            self.a.or(doc.a).unwrap_or(d.a),
            self.kappa.or(doc.kappa).unwrap_or(d.kappa),
            self.ell.or(doc.ell).unwrap_or(d.ell),
        )?)
    }
}

fn half_width(
    dist: Option<&NextPriceDistribution>,
    count: Option<usize>,
    mass: Option<f64>,
    name: &str,
) -> Result<Option<usize>> {
    match (count, mass) {
        (Some(_), Some(_)) => bail!("give either n_{name} or {name}_mass, not both"),
        (Some(n), None) => Ok(Some(n)),
        (None, Some(m)) => {
            let dist = dist.with_context(|| format!("{name}_mass needs a distribution"))?;
            Ok(Some(window_for_mass(dist, m)?))
        }
        (None, None) => Ok(None),
    }
}

impl StrategyDoc {
    /// Resolves the document into a concrete strategy. `dist` is required by
    /// window masses and by the proportional and optimal constructors.
    pub fn resolve(
        &self,
        dist: Option<&NextPriceDistribution>,
        overrides: ParamOverrides,
        mode: EvalMode,
    ) -> Result<StrategySpec> {
        let params = overrides.resolve(self)?;
        let n_tau = half_width(dist, self.n_tau, self.tau_mass, "tau")?
            .context("strategy needs n_tau or tau_mass")?;
        let n_alpha = half_width(dist, self.n_alpha, self.alpha_mass, "alpha")?;
        let need_dist =
            |what: &str| dist.with_context(|| format!("{what} strategy needs a distribution"));
        if let Some(weights) = &self.weights {
            if !matches!(self.kind, None | Some(StrategyKind::Custom)) {
                bail!("explicit weights require kind \"custom\"");
            }
            if weights.len().is_multiple_of(2) {
                bail!(
                    "weights must cover an odd number of bins, got {}",
                    weights.len()
                );
            }
            let implied = (weights.len() - 1) / 2;
            if let Some(n) = n_alpha.filter(|&n| n != implied) {
                bail!(
                    "n_alpha={n} but {} weights imply n_alpha={implied}",
                    weights.len()
                );
            }
            let allocation = Allocation::new(implied, weights.clone())?;
            return Ok(StrategySpec::new(
                StrategyKind::Custom,
                n_tau,
                allocation,
                params,
            )?);
        }
        match self.kind {
            None | Some(StrategyKind::Custom) => bail!("custom strategy needs explicit weights"),
            Some(StrategyKind::Uniform) => {
                let n_alpha = n_alpha.context("uniform strategy needs n_alpha or alpha_mass")?;
                Ok(uniform_strategy(n_tau, n_alpha, params))
            }
            Some(StrategyKind::Proportional) => {
                let dist = need_dist("proportional")?;
                match n_alpha {
                    Some(n) => Ok(proportional_with_windows(dist, n_tau, n, params)?),
                    None => Ok(best_proportional(dist, n_tau, params, mode)?.0),
                }
            }
            Some(StrategyKind::Optimal) => {
                if n_alpha.is_some() {
                    bail!("optimal strategy spans every reachable bin; drop n_alpha/alpha_mass");
                }
                Ok(optimal_strategy(need_dist("optimal")?, n_tau, params, mode)?.0)
            }
        }
    }

    /// Explicit form of a resolved strategy.
    pub fn explicit(spec: &StrategySpec) -> Self {
        Self {
            kind: Some(StrategyKind::Custom),
            n_tau: Some(spec.n_tau),
            n_alpha: Some(spec.n_alpha),
            weights: Some(spec.allocation.weights().to_vec()),
            a: Some(spec.params.a),
            kappa: Some(spec.params.kappa),
            ell: Some(spec.params.ell),
            ..Self::default()
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, contents).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn create_csv(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NextPriceDistribution {
        NextPriceDistribution::new(1, 1.0, vec![1.0 / 3.0; 3]).unwrap()
    }

    #[test]
    fn timestamps_in_all_formats() {
        assert_eq!(parse_timestamp("1577836800").unwrap(), 1_577_836_800);
        assert_eq!(
            parse_timestamp("2020-01-01T00:00:00Z").unwrap(),
            1_577_836_800
        );
        assert_eq!(
            parse_timestamp("2020-01-01 00:10:00").unwrap(),
            1_577_837_400
        );
        assert_eq!(
            parse_timestamp("2020-01-01T01:00:00+01:00").unwrap(),
            1_577_836_800
        );
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn price_csv_round_trip() {
        let series = PriceSeries::new(vec![0, 600, 1200], vec![100.0, 100.5, 99.25]).unwrap();
        let mut buf = Vec::new();
        write_prices(&mut buf, &series).unwrap();
        assert!(String::from_utf8_lossy(&buf)
            .starts_with("timestamp,price\n1970-01-01T00:00:00Z,100\n"));
        assert_eq!(read_prices(buf.as_slice()).unwrap(), series);
    }

    #[test]
    fn short_csv_is_rejected() {
        let err = read_prices("timestamp,price\n".as_bytes()).unwrap_err();
        assert!(format!("{err:#}").contains("need at least 2 rows"));
        assert!(read_prices("timestamp,price\n0,1\n0,2\n".as_bytes()).is_err());
    }

    #[test]
    fn strategy_forms() {
        let pick = |json: &str| -> Result<StrategySpec> {
            let doc: StrategyDoc = serde_json::from_str(json)?;
            doc.resolve(
                Some(&toy()),
                ParamOverrides::default(),
                EvalMode::StrictPaper,
            )
        };
        let s = pick(r#"{"n_tau": 1, "weights": [0.25, 0.5, 0.25], "a": 0.1}"#).unwrap();
        assert_eq!(
            (s.kind, s.n_alpha, s.params.a),
            (StrategyKind::Custom, 1, 0.1)
        );
        let s = pick(r#"{"kind": "uniform", "tau_mass": 1.0, "n_alpha": 1}"#).unwrap();
        assert_eq!((s.n_tau, s.n_alpha), (1, 1));
        assert!(pick(r#"{"kind": "optimal", "n_tau": 1}"#)
            .unwrap()
            .allocation
            .is_on_simplex());
        assert!(pick(r#"{"n_tau": 1, "weights": [0.5, 0.5]}"#).is_err());
        assert!(pick(r#"{"n_tau": 1, "tau_mass": 0.5, "kind": "uniform", "n_alpha": 0}"#).is_err());
        assert!(pick(r#"{"kind": "uniform", "n_tau": 1}"#).is_err());
        assert!(pick(r#"{"kind": "uniform", "n_tau": 1, "n_alpha": 1, "bogus": 1}"#).is_err());
    }

    #[test]
    fn explicit_form_resolves_to_itself() {
        let spec = uniform_strategy(2, 1, UtilityParams::default());
        let back = StrategyDoc::explicit(&spec)
            .resolve(None, ParamOverrides::default(), EvalMode::StrictPaper)
            .unwrap();
        assert_eq!(back.allocation, spec.allocation);
        assert_eq!((back.n_tau, back.params), (2, spec.params));
    }

    #[test]
    fn embedded_strategy_is_unwrapped() {
        let bare = r#"{"kind": "uniform", "n_tau": 1, "n_alpha": 1}"#;
        let report = format!(r#"{{"command": "optimize", "objective": 1.0, "strategy": {bare}}}"#);
        let doc = StrategyDoc::from_value(serde_json::from_str(&report).unwrap()).unwrap();
        assert_eq!(doc, serde_json::from_str::<StrategyDoc>(bare).unwrap());
        let stray = r#"{"objective": 1.0, "strategy": {}}"#;
        assert!(StrategyDoc::from_value(serde_json::from_str(stray).unwrap()).is_err());
    }
}
