use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Dataset, DateRange};

/// Minimum mean coverage (percent) a source needs to pass; inclusive.
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 70.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayQuality {
    pub date: NaiveDate,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub participant_id: String,
    pub period: DateRange,
    pub threshold: f64,
    pub per_source_coverage: BTreeMap<String, f64>,
    pub days: Vec<DayQuality>,
    pub complete_days: usize,
    pub passed: bool,
}

/// Coverage gate over a period. Each required source's coverage on a day is
/// the mean coverage of its observations that day (0 when absent); the
/// period passes when every required source's mean is at or above the
/// threshold. Excluded days are left out. With no `required_sources`, every
/// source seen in the period is required.
pub fn quality_report(
    data: &Dataset,
    participant: &str,
    period: DateRange,
    required_sources: &[String],
    threshold: f64,
) -> QualityReport {
    let sources: Vec<String> = if required_sources.is_empty() {
        data.sources(participant, &period).into_iter().collect()
    } else {
        required_sources.to_vec()
    };

    let mut totals: BTreeMap<String, f64> = sources.iter().map(|s| (s.clone(), 0.0)).collect();
    let mut days = Vec::new();
    for date in period.days() {
        if data.is_excluded(participant, date) {
            continue;
        }
        let mut complete = !sources.is_empty();
        for source in &sources {
            let cov = data.source_coverage(participant, date, source).unwrap_or(0.0);
            *totals.get_mut(source).expect("seeded above") += cov;
            if cov < threshold {
                complete = false;
            }
        }
        days.push(DayQuality { date, complete });
    }

    let n = days.len();
    let per_source_coverage: BTreeMap<String, f64> =
        totals.into_iter().map(|(s, total)| (s, if n == 0 { 0.0 } else { total / n as f64 })).collect();
    let has_data = !data.sources(participant, &period).is_empty();
    let passed = has_data && !per_source_coverage.is_empty() && per_source_coverage.values().all(|&c| c >= threshold);

    QualityReport {
        participant_id: participant.into(),
        period,
        threshold,
        complete_days: days.iter().filter(|d| d.complete).count(),
        per_source_coverage,
        days,
        passed,
    }
}
