use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ComplianceRecord, Ratio, SelectionRecord, TrustError, SLEEP_OPPORTUNITY_METRIC};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Also score the mandatory sleep-opportunity item.
    pub include_mandatory: bool,
}

/// Mean ML bucket, mean rule stars, and ML over rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustIndex {
    pub ml_mean: f64,
    pub rules_mean: f64,
    pub ratio: Ratio,
    pub items: usize,
}

pub fn index_from_scores(ml: &[f64], rules: &[f64]) -> TrustIndex {
    let ml_mean = crate::num::mean(ml).unwrap_or(0.0);
    let rules_mean = crate::num::mean(rules).unwrap_or(0.0);
    TrustIndex { ml_mean, rules_mean, ratio: Ratio::of(ml_mean, rules_mean), items: ml.len() }
}

fn items(sel: &SelectionRecord, opts: ScoreOptions) -> Result<Vec<(String, f64, f64)>, TrustError> {
    if sel.chosen.is_empty() {
        return Err(TrustError::NoSelection);
    }
    let mut v: Vec<(String, f64, f64)> =
        sel.chosen.iter().map(|c| (c.metric_id.clone(), f64::from(c.bucket), f64::from(c.stars))).collect();
    if opts.include_mandatory {
        let so = &sel.mandatory_sleep_opportunity;
        v.push((SLEEP_OPPORTUNITY_METRIC.into(), f64::from(so.bucket), f64::from(so.stars)));
    }
    Ok(v)
}

/// Intention-stage index over the chosen interventions.
pub fn dirti(sel: &SelectionRecord, opts: ScoreOptions) -> Result<TrustIndex, TrustError> {
    let v = items(sel, opts)?;
    let ml: Vec<f64> = v.iter().map(|x| x.1).collect();
    let rules: Vec<f64> = v.iter().map(|x| x.2).collect();
    Ok(index_from_scores(&ml, &rules))
}

/// Follow-through index: interventions without improvement score 0 on both
/// axes but still count toward the divisor.
pub fn dafti(
    sel: &SelectionRecord,
    compliance: &ComplianceRecord,
    opts: ScoreOptions,
) -> Result<TrustIndex, TrustError> {
    sel.check_compliance(compliance)?;
    let v = items(sel, opts)?;
    let mut ml = Vec::with_capacity(v.len());
    let mut rules = Vec::with_capacity(v.len());
    for (metric, b, s) in v {
        let e = compliance.entry(&metric).ok_or(TrustError::MissingCompliance(metric))?;
        let keep = if e.followed_through { 1.0 } else { 0.0 };
        ml.push(b * keep);
        rules.push(s * keep);
    }
    Ok(index_from_scores(&ml, &rules))
}

#[cfg(test)]
mod tests {
    use super::super::{Choice, ComplianceEntry, SleepOpportunity};
    use super::*;
    use crate::pipeline::DateRange;
    use crate::rules::Direction;
    use alloc::string::ToString;
    use chrono::{NaiveDate, TimeZone, Utc};

    fn sel(items: &[(&str, u8, u8)]) -> SelectionRecord {
        SelectionRecord {
            participant_id: "P".into(),
            mandatory_sleep_opportunity: SleepOpportunity { se_pct: 90.0, time_in_bed_min: 466.7, stars: 2, bucket: 2 },
            chosen: items.iter().map(|(m, s, b)| Choice { metric_id: m.to_string(), stars: *s, bucket: *b }).collect(),
            timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    fn comp(followed: &[(&str, bool)]) -> ComplianceRecord {
        ComplianceRecord {
            participant_id: "P".into(),
            intervention_period: DateRange::new(
                NaiveDate::from_ymd_opt(2024, 2, 1).unwrap(),
                NaiveDate::from_ymd_opt(2024, 2, 28).unwrap(),
            )
            .unwrap(),
            entries: followed
                .iter()
                .map(|(m, f)| ComplianceEntry {
                    metric_id: m.to_string(),
                    baseline_mean: 1.0,
                    last7_mean: 1.0,
                    direction: Direction::LowerIsBetter,
                    improvement_pct: if *f { 10.0 } else { -1.0 },
                    followed_through: *f,
                    fallback: false,
                })
                .collect(),
        }
    }

    #[test]
    fn identical_axes_give_one() {
        let d = dirti(&sel(&[("a", 2, 2), ("b", 3, 3)]), ScoreOptions::default()).unwrap();
        assert_eq!(d.ratio, Ratio::Defined(1.0));
    }

    #[test]
    fn undefined_when_rules_zero() {
        let d = dirti(&sel(&[("a", 0, 2)]), ScoreOptions::default()).unwrap();
        assert_eq!(d.ratio, Ratio::Undefined);
    }

    #[test]
    fn empty_selection() {
        assert_eq!(dirti(&sel(&[]), ScoreOptions::default()), Err(TrustError::NoSelection));
    }

    #[test]
    fn mandatory_flag_adds_an_item() {
        let s = sel(&[("a", 3, 1)]);
        let d = dirti(&s, ScoreOptions { include_mandatory: true }).unwrap();
        assert_eq!(d.items, 2);
        assert_eq!((d.ml_mean, d.rules_mean), (1.5, 2.5));
    }

    #[test]
    fn dafti_zeroes_but_counts() {
        let s = sel(&[("a", 3, 3), ("b", 2, 0), ("c", 1, 3)]);
        let c = comp(&[("a", false), ("b", true), ("c", true)]);
        let d = dafti(&s, &c, ScoreOptions::default()).unwrap();
        assert_eq!(d.items, 3);
        assert_eq!(d.ml_mean, 1.0);
        assert_eq!(d.rules_mean, 1.0);
    }

    #[test]
    fn dafti_full_follow_through_equals_dirti() {
        let s = sel(&[("a", 3, 1), ("b", 2, 3)]);
        let c = comp(&[("a", true), ("b", true)]);
        assert_eq!(dafti(&s, &c, ScoreOptions::default()).unwrap(), dirti(&s, ScoreOptions::default()).unwrap());
    }

    #[test]
    fn dafti_zero_ml_is_zero_ratio() {
        let s = sel(&[("a", 3, 0), ("b", 2, 2)]);
        let c = comp(&[("a", true), ("b", false)]);
        assert_eq!(dafti(&s, &c, ScoreOptions::default()).unwrap().ratio, Ratio::Defined(0.0));
        let c = comp(&[("a", false), ("b", false)]);
        assert_eq!(dafti(&s, &c, ScoreOptions::default()).unwrap().ratio, Ratio::Undefined);
    }

    #[test]
    fn dafti_missing_entry() {
        let s = sel(&[("a", 3, 0), ("b", 2, 2)]);
        let err = dafti(&s, &comp(&[("a", true)]), ScoreOptions::default()).unwrap_err();
        assert_eq!(err, TrustError::MissingCompliance("b".into()));
        let err = dafti(&s, &comp(&[("a", true), ("b", true)]), ScoreOptions { include_mandatory: true }).unwrap_err();
        assert_eq!(err, TrustError::MissingCompliance("time_in_bed_min".into()));
    }
}
