use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::quality::{quality_report, DEFAULT_QUALITY_THRESHOLD};
use super::{Dataset, DateRange, PipelineError};

/// A baseline needs at least four weeks of complete days.
pub const MIN_BASELINE_DAYS: usize = 28;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCriteria {
    pub required_sources: Vec<String>,
    pub threshold: f64,
    /// Defaults to the participant's full observed span.
    pub period: Option<DateRange>,
}

impl Default for BaselineCriteria {
    fn default() -> Self {
        BaselineCriteria { required_sources: Vec::new(), threshold: DEFAULT_QUALITY_THRESHOLD, period: None }
    }
}

/// Confirmed baseline: the span of the complete days and the days themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineWindow {
    pub window: DateRange,
    pub days: Vec<NaiveDate>,
}

impl BaselineWindow {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        if self.days.len() < MIN_BASELINE_DAYS {
            return Err(PipelineError::InsufficientBaseline { complete: self.days.len(), required: MIN_BASELINE_DAYS });
        }
        Ok(())
    }
}

/// Collects complete, non-excluded days; fails with `insufficient-baseline`
/// below [`MIN_BASELINE_DAYS`].
pub fn baseline_window(
    data: &Dataset,
    participant: &str,
    criteria: &BaselineCriteria,
) -> Result<BaselineWindow, PipelineError> {
    let insufficient = |complete| PipelineError::InsufficientBaseline { complete, required: MIN_BASELINE_DAYS };
    let period = match criteria.period.or_else(|| data.span(participant)) {
        Some(p) => p,
        None => return Err(insufficient(0)),
    };
    let report = quality_report(data, participant, period, &criteria.required_sources, criteria.threshold);
    let days: Vec<NaiveDate> = report.days.iter().filter(|d| d.complete).map(|d| d.date).collect();
    if days.len() < MIN_BASELINE_DAYS {
        return Err(insufficient(days.len()));
    }
    Ok(BaselineWindow { window: DateRange { from: days[0], to: days[days.len() - 1] }, days })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludeOutcome {
    pub excluded: Vec<NaiveDate>,
    pub warnings: Vec<String>,
    pub baseline: BaselineWindow,
}

/// Soft-deletes baseline days. Dates outside the window (or already
/// excluded) are skipped with a warning.
pub fn exclude_days(
    data: &mut Dataset,
    participant: &str,
    baseline: &BaselineWindow,
    dates: &[NaiveDate],
    reason: &str,
) -> ExcludeOutcome {
    let mut excluded = Vec::new();
    let mut warnings = Vec::new();
    for &date in dates {
        if !baseline.window.contains(date) {
            warnings.push(format!("{date} is outside the baseline window {}", baseline.window));
        } else if !data.mark_excluded(participant, date, reason) {
            warnings.push(format!("{date} already excluded"));
        } else {
            excluded.push(date);
        }
    }
    let days = baseline.days.iter().copied().filter(|d| !data.is_excluded(participant, *d)).collect();
    ExcludeOutcome { excluded, warnings, baseline: BaselineWindow { window: baseline.window, days } }
}
