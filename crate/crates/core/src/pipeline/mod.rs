//! Daily observation store, data-quality gating, baseline windows and the
//! validation packs participants confirm before any model runs.

mod baseline;
pub(crate) mod chart;
mod quality;
mod validation;

pub use baseline::{
    baseline_window, exclude_days, BaselineCriteria, BaselineWindow, ExcludeOutcome, MIN_BASELINE_DAYS,
};
pub use chart::{render_chart_svg, ChartBand, ChartDay, ChartSpec};
pub use quality::{quality_report, DayQuality, QualityReport, DEFAULT_QUALITY_THRESHOLD};
pub use validation::{validation_pack, BandShares, MetricSummary, ValidationPack};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::registry;

/// Column order of the long observation CSV.
pub const CSV_HEADER: [&str; 7] = ["participant_id", "date", "metric_id", "value", "unit", "source", "coverage_pct"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("insufficient-baseline: {complete} complete days, at least {required} required")]
    InsufficientBaseline { complete: usize, required: usize },
    #[error("no baseline data for metric `{0}`")]
    NoBaselineData(String),
    #[error("empty period")]
    EmptyPeriod,
    #[error("invalid date range `{0}`, expected YYYY-MM-DD/YYYY-MM-DD")]
    InvalidRange(String),
}

/// One (participant, date, metric, source) fact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub participant_id: String,
    pub date: NaiveDate,
    pub metric_id: String,
    pub value: f64,
    pub source: String,
    pub coverage_pct: f64,
}

impl Observation {
    fn key(&self) -> ObsKey {
        (self.participant_id.clone(), self.date, self.metric_id.clone(), self.source.clone())
    }
}

type ObsKey = (String, NaiveDate, String, String);

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DateRange {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

impl DateRange {
    pub fn new(from: NaiveDate, to: NaiveDate) -> Result<Self, PipelineError> {
        if to < from {
            return Err(PipelineError::EmptyPeriod);
        }
        Ok(DateRange { from, to })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.from <= date && date <= self.to
    }

    pub fn len(&self) -> usize {
        (self.to - self.from).num_days() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.from.iter_days().take_while(move |d| *d <= self.to)
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.from, self.to)
    }
}

impl core::str::FromStr for DateRange {
    type Err = PipelineError;

    /// Parses `YYYY-MM-DD/YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PipelineError::InvalidRange(s.into());
        let (a, b) = s.split_once('/').ok_or_else(bad)?;
        let from = NaiveDate::parse_from_str(a.trim(), "%Y-%m-%d").map_err(|_| bad())?;
        let to = NaiveDate::parse_from_str(b.trim(), "%Y-%m-%d").map_err(|_| bad())?;
        DateRange::new(from, to)
    }
}

/// Serde adapter writing a [`DateRange`] as its `from/to` string.
pub mod range_str {
    use super::DateRange;
    use alloc::string::{String, ToString};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &DateRange, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateRange, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

/// One raw CSV row, before parsing. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RowInput {
    pub line: usize,
    pub participant_id: String,
    pub date: String,
    pub metric_id: String,
    pub value: String,
    pub unit: String,
    pub source: String,
    pub coverage_pct: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub accepted: Vec<Observation>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub participant_id: String,
    pub date: NaiveDate,
    pub reason: String,
}

/// All accepted observations plus soft-deleted (excluded) days.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    observations: BTreeMap<ObsKey, Observation>,
    excluded: BTreeMap<(String, NaiveDate), String>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    observations: Vec<Observation>,
    excluded: Vec<Exclusion>,
}

impl From<DatasetRepr> for Dataset {
    fn from(repr: DatasetRepr) -> Self {
        let mut ds = Dataset::default();
        for obs in repr.observations {
            ds.insert(obs);
        }
        for ex in repr.excluded {
            ds.excluded.insert((ex.participant_id, ex.date), ex.reason);
        }
        ds
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(ds: Dataset) -> Self {
        DatasetRepr {
            observations: ds.observations.into_values().collect(),
            excluded: ds
                .excluded
                .into_iter()
                .map(|((participant_id, date), reason)| Exclusion { participant_id, date, reason })
                .collect(),
        }
    }
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates a batch against the registry and the stored keys without
    /// mutating anything.
    pub fn check_batch(&self, rows: &[RowInput]) -> IngestOutcome {
        let mut outcome = IngestOutcome::default();
        let mut seen = BTreeSet::new();
        for row in rows {
            match parse_row(row) {
                Ok(obs) => {
                    let key = obs.key();
                    if self.observations.contains_key(&key) || !seen.insert(key) {
                        outcome.rejected.push(Rejection { line: row.line, reason: "duplicate".into() });
                    } else {
                        outcome.accepted.push(obs);
                    }
                }
                Err(reason) => outcome.rejected.push(Rejection { line: row.line, reason }),
            }
        }
        outcome
    }

    pub fn ingest(&mut self, rows: &[RowInput]) -> IngestOutcome {
        let outcome = self.check_batch(rows);
        for obs in &outcome.accepted {
            self.insert(obs.clone());
        }
        outcome
    }

    /// Inserts a pre-validated observation. Returns false on a duplicate key.
    pub fn insert(&mut self, obs: Observation) -> bool {
        let key = obs.key();
        if self.observations.contains_key(&key) {
            return false;
        }
        self.observations.insert(key, obs);
        true
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.observations.values()
    }

    pub fn participants(&self) -> BTreeSet<&str> {
        self.observations.keys().map(|k| k.0.as_str()).collect()
    }

    fn participant_obs<'a>(&'a self, participant: &'a str) -> impl Iterator<Item = &'a Observation> + 'a {
        let start = (participant.to_string(), NaiveDate::MIN, String::new(), String::new());
        self.observations.range(start..).take_while(move |(k, _)| k.0 == participant).map(|(_, v)| v)
    }

    fn day_obs<'a>(&'a self, participant: &'a str, date: NaiveDate) -> impl Iterator<Item = &'a Observation> + 'a {
        let start = (participant.to_string(), date, String::new(), String::new());
        self.observations.range(start..).take_while(move |(k, _)| k.0 == participant && k.1 == date).map(|(_, v)| v)
    }

    /// Every date with at least one observation, excluded days included.
    pub fn dates(&self, participant: &str) -> BTreeSet<NaiveDate> {
        self.participant_obs(participant).map(|o| o.date).collect()
    }

    pub fn span(&self, participant: &str) -> Option<DateRange> {
        let dates = self.dates(participant);
        Some(DateRange { from: *dates.first()?, to: *dates.last()? })
    }

    pub fn sources(&self, participant: &str, period: &DateRange) -> BTreeSet<String> {
        self.participant_obs(participant)
            .filter(|o| period.contains(o.date) && !self.is_excluded(participant, o.date))
            .map(|o| o.source.clone())
            .collect()
    }

    pub fn metrics(&self, participant: &str) -> BTreeSet<String> {
        self.participant_obs(participant).map(|o| o.metric_id.clone()).collect()
    }

    /// Mean coverage of one source's observations on one day.
    pub fn source_coverage(&self, participant: &str, date: NaiveDate, source: &str) -> Option<f64> {
        let cov: Vec<f64> =
            self.day_obs(participant, date).filter(|o| o.source == source).map(|o| o.coverage_pct).collect();
        crate::num::mean(&cov)
    }

    /// A metric's daily value (mean across sources). Excluded days yield `None`.
    pub fn daily_value(&self, participant: &str, date: NaiveDate, metric: &str) -> Option<f64> {
        if self.is_excluded(participant, date) {
            return None;
        }
        let vals: Vec<f64> =
            self.day_obs(participant, date).filter(|o| o.metric_id == metric).map(|o| o.value).collect();
        crate::num::mean(&vals)
    }

    /// Daily values on the given days, skipping days without data.
    pub fn series(&self, participant: &str, metric: &str, days: &[NaiveDate]) -> Vec<(NaiveDate, f64)> {
        days.iter().filter_map(|&d| self.daily_value(participant, d, metric).map(|v| (d, v))).collect()
    }

    /// Daily values of a metric over every non-excluded day on or after `from`.
    pub fn series_from(&self, participant: &str, metric: &str, from: NaiveDate) -> Vec<(NaiveDate, f64)> {
        let days: Vec<NaiveDate> = self.dates(participant).into_iter().filter(|d| *d >= from).collect();
        self.series(participant, metric, &days)
    }

    pub fn is_excluded(&self, participant: &str, date: NaiveDate) -> bool {
        self.excluded.contains_key(&(participant.to_string(), date))
    }

    pub fn exclusions(&self, participant: &str) -> Vec<Exclusion> {
        self.excluded
            .iter()
            .filter(|((p, _), _)| p == participant)
            .map(|((p, d), r)| Exclusion { participant_id: p.clone(), date: *d, reason: r.clone() })
            .collect()
    }

    pub(crate) fn mark_excluded(&mut self, participant: &str, date: NaiveDate, reason: &str) -> bool {
        self.excluded.insert((participant.to_string(), date), reason.to_string()).is_none()
    }
}

fn parse_row(row: &RowInput) -> Result<Observation, String> {
    let participant_id = row.participant_id.trim();
    if participant_id.is_empty() {
        return Err("empty participant_id".into());
    }
    let date =
        NaiveDate::parse_from_str(row.date.trim(), "%Y-%m-%d").map_err(|_| format!("invalid date `{}`", row.date))?;
    let metric_id = row.metric_id.trim();
    let def = registry::lookup(metric_id).ok_or_else(|| format!("unknown metric_id `{metric_id}`"))?;
    let unit = row.unit.trim();
    if unit != def.unit {
        return Err(format!("unit mismatch for {metric_id}: expected `{}`, got `{unit}`", def.unit));
    }
    let value: f64 = row.value.trim().parse().map_err(|_| format!("invalid value `{}`", row.value))?;
    if !def.accepts(value) {
        return Err(format!("value {value} out of bounds for {metric_id}"));
    }
    let source = row.source.trim();
    if source.is_empty() {
        return Err("empty source".into());
    }
    let coverage_pct: f64 =
        row.coverage_pct.trim().parse().map_err(|_| format!("invalid coverage_pct `{}`", row.coverage_pct))?;
    if !(0.0..=100.0).contains(&coverage_pct) {
        return Err(format!("coverage_pct {coverage_pct} outside [0,100]"));
    }
    Ok(Observation {
        participant_id: participant_id.into(),
        date,
        metric_id: metric_id.into(),
        value,
        source: source.into(),
        coverage_pct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn row(line: usize, csv: &str) -> RowInput {
        let f: Vec<&str> = csv.split(',').collect();
        RowInput {
            line,
            participant_id: f[0].into(),
            date: f[1].into(),
            metric_id: f[2].into(),
            value: f[3].into(),
            unit: f[4].into(),
            source: f[5].into(),
            coverage_pct: f[6].into(),
        }
    }

    #[test]
    fn accepts_caffeine_row() {
        let mut ds = Dataset::new();
        let out = ds.ingest(&[row(2, "P01,2024-01-05,caffeine_mg,152,mg,diary,100")]);
        assert_eq!(out.accepted.len(), 1);
        assert!(out.rejected.is_empty());
        let d = NaiveDate::from_ymd_opt(2024, 1, 5).unwrap();
        assert_eq!(ds.daily_value("P01", d, "caffeine_mg"), Some(152.0));
    }

    #[test]
    fn empty_batch() {
        let mut ds = Dataset::new();
        assert_eq!(ds.ingest(&[]), IngestOutcome::default());
    }

    #[test]
    fn duplicates_rejected_in_batch_and_across_batches() {
        let mut ds = Dataset::new();
        let r = row(2, "P01,2024-01-05,caffeine_mg,152,mg,diary,100");
        let out = ds.ingest(&[r.clone(), r.clone()]);
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.rejected[0].reason, "duplicate");
        let before = ds.clone();
        let again = ds.ingest(&[r]);
        assert!(again.accepted.is_empty());
        assert_eq!(ds, before);
    }

    #[test]
    fn row_level_rejections() {
        let mut ds = Dataset::new();
        let out = ds.ingest(&[
            row(2, "P01,2024-01-05,coffee_mg,152,mg,diary,100"),
            row(3, "P01,2024-01-05,caffeine_mg,152,g,diary,100"),
            row(4, "P01,2024-13-05,caffeine_mg,152,mg,diary,100"),
            row(5, "P01,2024-01-05,se_pct,120,%,ring,100"),
            row(6, "P01,2024-01-05,tst_min,400,min,ring,101"),
            row(7, "P01,2024-01-05,tst_min,NaN,min,ring,100"),
        ]);
        assert!(out.accepted.is_empty());
        let reasons: Vec<&str> = out.rejected.iter().map(|r| r.reason.as_str()).collect();
        assert!(reasons[0].starts_with("unknown metric_id"));
        assert!(reasons[1].starts_with("unit mismatch"));
        assert!(reasons[2].starts_with("invalid date"));
        assert!(reasons[3].contains("out of bounds"));
        assert!(reasons[4].contains("coverage_pct"));
        assert!(reasons[5].contains("out of bounds"));
    }

    #[test]
    fn daily_value_averages_sources() {
        let mut ds = Dataset::new();
        ds.ingest(&[
            row(2, "P01,2024-01-05,bedroom_temp_c,18,C,sensor_a,100"),
            row(3, "P01,2024-01-05,bedroom_temp_c,20,C,sensor_b,90"),
        ]);
        let d = NaiveDate::from_ymd_opt(2024, 1, 5).unwrap();
        assert_eq!(ds.daily_value("P01", d, "bedroom_temp_c"), Some(19.0));
    }

    #[test]
    fn dataset_serde_round_trip() {
        let mut ds = Dataset::new();
        ds.ingest(&[row(2, "P01,2024-01-05,caffeine_mg,152,mg,diary,100")]);
        ds.mark_excluded("P01", NaiveDate::from_ymd_opt(2024, 1, 5).unwrap(), "sensor fault");
        let json = serde_json::to_string(&ds).unwrap();
        let back: Dataset = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ds);
    }
}
