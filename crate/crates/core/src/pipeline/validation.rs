use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::chart::{ChartBand, ChartDay, ChartSpec};
use super::{Dataset, PipelineError};
use crate::num::{fmt_num, pct};
use crate::registry;
use crate::rules::{Band, Rule, Ruleset};

/// Percent of days per band (rounded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandShares {
    pub good: u32,
    pub warn: u32,
    pub violate: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric_id: String,
    pub unit: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub series: Vec<(NaiveDate, f64)>,
    /// Per-day band; absent when the ruleset has no rule for the metric.
    pub banding: Option<Vec<Band>>,
    pub band_shares: Option<BandShares>,
    pub narrative: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPack {
    pub summary: MetricSummary,
    pub chart: ChartSpec,
}

/// Summary, narrative and chart for one metric over the baseline days, banded
/// by the metric's rule when the ruleset has one.
pub fn validation_pack(
    data: &Dataset,
    participant: &str,
    metric_id: &str,
    ruleset: &Ruleset,
    days: &[NaiveDate],
) -> Result<ValidationPack, PipelineError> {
    let series = data.series(participant, metric_id, days);
    if series.is_empty() {
        return Err(PipelineError::NoBaselineData(metric_id.into()));
    }
    let rule = ruleset.rule(metric_id);
    let unit = rule
        .and_then(|r| r.unit.clone())
        .or_else(|| registry::lookup(metric_id).map(|m| m.unit.to_string()))
        .unwrap_or_default();
    let values: Vec<f64> = series.iter().map(|(_, v)| *v).collect();
    let mean = crate::num::mean(&values).unwrap_or(0.0);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let banding: Option<Vec<Band>> = rule.map(|r| values.iter().map(|&v| r.band(v)).collect());
    let band_shares = banding.as_ref().map(|b| {
        let count = |band| b.iter().filter(|x| **x == band).count();
        BandShares {
            good: pct(count(Band::Good), b.len()),
            warn: pct(count(Band::Warn), b.len()),
            violate: pct(count(Band::Violate), b.len()),
        }
    });

    let mut narrative = format!(
        "{metric_id}: mean {} {unit}/day (range {}-{} {unit}) over {} days.",
        fmt_num(mean),
        fmt_num(min),
        fmt_num(max),
        values.len()
    );
    if let (Some(r), Some(b), Some(shares)) = (rule, banding.as_ref(), band_shares) {
        narrative.push_str(&rule_sentence(r, b, &unit));
        narrative
            .push_str(&format!(" Bands: good {}%, warn {}%, violate {}%.", shares.good, shares.warn, shares.violate));
    }

    let chart = ChartSpec {
        metric: metric_id.into(),
        unit: unit.clone(),
        days: series
            .iter()
            .enumerate()
            .map(|(i, (date, value))| ChartDay { date: *date, value: *value, band: banding.as_ref().map(|b| b[i]) })
            .collect(),
        bands: rule.map(rule_bands).unwrap_or_default(),
        mean: Some(mean),
    };

    Ok(ValidationPack {
        summary: MetricSummary {
            metric_id: metric_id.into(),
            unit,
            mean,
            min,
            max,
            series,
            banding,
            band_shares,
            narrative,
        },
        chart,
    })
}

pub(crate) fn rule_bands(rule: &Rule) -> Vec<ChartBand> {
    rule.band_edges()
        .into_iter()
        .map(|(name, min, max)| ChartBand { name, min, max, color: name.color().into() })
        .collect()
}

fn rule_sentence(rule: &Rule, bands: &[Band], unit: &str) -> String {
    let outside_bp = bands.iter().filter(|b| **b != Band::Good).count();
    let mut s =
        format!(" Outside best practice ({} {unit}) on {}% of days", rule.best_practice, pct(outside_bp, bands.len()));
    if let Some(hl) = rule.hard_limit {
        let outside_hl = bands.iter().filter(|b| **b == Band::Violate).count();
        s.push_str(&format!("; outside the hard limit ({hl} {unit}) on {}% of days", pct(outside_hl, bands.len())));
    }
    s.push('.');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::tests::row;
    use crate::rules::default_ruleset;
    use chrono::Days;

    fn caffeine_days(values: &[f64]) -> (Dataset, Vec<NaiveDate>) {
        let start = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let mut ds = Dataset::new();
        let mut days = Vec::new();
        let rows: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = start.checked_add_days(Days::new(i as u64)).unwrap();
                days.push(d);
                row(i + 2, &format!("P01,{d},caffeine_mg,{v},mg,diary,100"))
            })
            .collect();
        ds.ingest(&rows);
        (ds, days)
    }

    #[test]
    fn caffeine_narrative_reports_shares() {
        // 28 days: 5 compliant, 20 between the bounds, 3 over the hard limit.
        let mut values = alloc::vec![150.0; 5];
        values.extend([330.0; 20]);
        values.extend([450.0; 3]);
        let (ds, days) = caffeine_days(&values);
        let pack = validation_pack(&ds, "P01", "caffeine_mg", &default_ruleset(), &days).unwrap();
        let n = &pack.summary.narrative;
        assert!(n.contains("82%"), "{n}");
        assert!(n.contains("11%"), "{n}");
        assert!(n.contains("range 150-450 mg"), "{n}");
        assert_eq!(pack.summary.band_shares, Some(BandShares { good: 18, warn: 71, violate: 11 }));
        assert_eq!(pack.chart.days.len(), 28);
        assert_eq!(pack.chart.bands.len(), 3);
    }

    #[test]
    fn all_zero_is_all_good() {
        let (ds, days) = caffeine_days(&[0.0; 10]);
        let pack = validation_pack(&ds, "P01", "caffeine_mg", &default_ruleset(), &days).unwrap();
        assert_eq!(pack.summary.band_shares.unwrap().good, 100);
    }

    #[test]
    fn boundary_day_is_good() {
        let (ds, days) = caffeine_days(&[229.0, 230.0, 231.0]);
        let pack = validation_pack(&ds, "P01", "caffeine_mg", &default_ruleset(), &days).unwrap();
        assert_eq!(pack.summary.banding.unwrap(), [Band::Good, Band::Good, Band::Warn]);
    }

    #[test]
    fn metric_without_rule_has_no_banding() {
        let (ds, days) = caffeine_days(&[100.0, 200.0]);
        let empty = Ruleset { name: "e".into(), version: "1".into(), rules: Vec::new() };
        let pack = validation_pack(&ds, "P01", "caffeine_mg", &empty, &days).unwrap();
        assert!(pack.summary.banding.is_none());
        assert!(pack.chart.bands.is_empty());
        assert!(pack.chart.days.iter().all(|d| d.band.is_none()));
    }

    #[test]
    fn missing_metric_is_an_error() {
        let (ds, days) = caffeine_days(&[100.0]);
        assert!(validation_pack(&ds, "P01", "tst_min", &default_ruleset(), &days).is_err());
    }
}
