use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::{improvement, Goal, TrustError};
use crate::matrix::LofmMatrix;
use crate::pipeline::{BaselineWindow, Dataset, DateRange};
use crate::rules::Direction;
use crate::tracker::Plan;

pub const MAX_FREE_CHOICES: usize = 3;
pub const SLEEP_OPPORTUNITY_METRIC: &str = "time_in_bed_min";
/// Sleep opportunity must allow this much sleep at the baseline efficiency.
pub const SLEEP_TARGET_MIN: f64 = 420.0;

/// The mandatory protocol item: time in bed long enough for seven hours of
/// sleep at the participant's baseline sleep efficiency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepOpportunity {
    pub se_pct: f64,
    pub time_in_bed_min: f64,
    /// Matrix scores when the matrix places `time_in_bed_min`, else 0.
    pub stars: u8,
    pub bucket: u8,
}

impl SleepOpportunity {
    pub fn from_se(se_pct: f64, matrix: &LofmMatrix) -> Result<Self, TrustError> {
        if !(se_pct > 0.0 && se_pct <= 100.0) {
            return Err(TrustError::InvalidSleepEfficiency(se_pct));
        }
        let (stars, bucket) = matrix.placement(SLEEP_OPPORTUNITY_METRIC).map_or((0, 0), |p| (p.stars, p.bucket));
        Ok(SleepOpportunity { se_pct, time_in_bed_min: SLEEP_TARGET_MIN / (se_pct / 100.0), stars, bucket })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub metric_id: String,
    pub stars: u8,
    pub bucket: u8,
}

/// Scores are copied from the matrix when the choice is made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub participant_id: String,
    pub mandatory_sleep_opportunity: SleepOpportunity,
    pub chosen: Vec<Choice>,
    pub timestamp: DateTime<Utc>,
}

pub fn record_selection(
    matrix: &LofmMatrix,
    choices: &[String],
    mandatory: Option<SleepOpportunity>,
    timestamp: DateTime<Utc>,
) -> Result<SelectionRecord, TrustError> {
    let mandatory = mandatory.ok_or(TrustError::MissingMandatory)?;
    if choices.len() > MAX_FREE_CHOICES {
        return Err(TrustError::TooManyChoices(choices.len()));
    }
    let mut seen = BTreeSet::new();
    let mut chosen = Vec::with_capacity(choices.len());
    for m in choices {
        if !seen.insert(m.as_str()) {
            return Err(TrustError::DuplicateChoice(m.clone()));
        }
        let p = matrix.placement(m).ok_or_else(|| TrustError::UnknownIntervention(m.clone()))?;
        chosen.push(Choice { metric_id: p.metric_id, stars: p.stars, bucket: p.bucket });
    }
    Ok(SelectionRecord {
        participant_id: matrix.participant.clone(),
        mandatory_sleep_opportunity: mandatory,
        chosen,
        timestamp,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceEntry {
    pub metric_id: String,
    pub baseline_mean: f64,
    pub last7_mean: f64,
    pub direction: Direction,
    pub improvement_pct: f64,
    pub followed_through: bool,
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRecord {
    pub participant_id: String,
    #[serde(with = "crate::pipeline::range_str")]
    pub intervention_period: DateRange,
    pub entries: Vec<ComplianceEntry>,
}

impl ComplianceRecord {
    pub fn entry(&self, metric: &str) -> Option<&ComplianceEntry> {
        self.entries.iter().find(|e| e.metric_id == metric)
    }
}

/// Compliance for every planned target over `period`, measured on the final
/// seven observed days against the baseline.
pub fn assess_compliance(
    data: &Dataset,
    plan: &Plan,
    baseline: &BaselineWindow,
    period: DateRange,
) -> Result<ComplianceRecord, TrustError> {
    let participant = plan.participant_id.as_str();
    let days: Vec<NaiveDate> = period.days().filter(|d| !data.is_excluded(participant, *d)).collect();
    let mut entries = Vec::new();
    for t in &plan.targets {
        let base: Vec<f64> =
            data.series(participant, &t.metric_id, &baseline.days).into_iter().map(|(_, v)| v).collect();
        let during: Vec<f64> = data.series(participant, &t.metric_id, &days).into_iter().map(|(_, v)| v).collect();
        let goal: Goal = t.goal();
        let imp = improvement(&base, &during, goal, &t.metric_id)?;
        entries.push(ComplianceEntry {
            metric_id: t.metric_id.clone(),
            baseline_mean: imp.baseline_mean,
            last7_mean: imp.last7_mean,
            direction: goal.direction(),
            improvement_pct: imp.improvement_pct,
            followed_through: imp.followed_through(),
            fallback: imp.fallback,
        });
    }
    Ok(ComplianceRecord { participant_id: participant.to_string(), intervention_period: period, entries })
}

impl SelectionRecord {
    /// Checks a compliance record covers every chosen intervention.
    pub fn check_compliance(&self, c: &ComplianceRecord) -> Result<(), TrustError> {
        if c.participant_id != self.participant_id {
            return Err(TrustError::ParticipantMismatch(format!(
                "selection {} vs compliance {}",
                self.participant_id, c.participant_id
            )));
        }
        for ch in &self.chosen {
            if c.entry(&ch.metric_id).is_none() {
                return Err(TrustError::MissingCompliance(ch.metric_id.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{build, AxisSource, Demarcations, MlAxis, RulesAxis};
    use crate::ml::ImportanceMap;
    use crate::registry::Endpoint;
    use crate::rules::RuleAssessment;
    use alloc::vec;
    use chrono::TimeZone;

    pub(crate) fn matrix() -> LofmMatrix {
        let src = AxisSource {
            participant: "P01".into(),
            data_window: DateRange::new(
                NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(2024, 1, 31).unwrap(),
            )
            .unwrap(),
            objective: Endpoint::Tst,
        };
        let a: Vec<RuleAssessment> = ["caffeine_mg", "nap_min", "screen_time_min", "relaxation_min", "bedroom_temp_c"]
            .iter()
            .enumerate()
            .map(|(i, m)| RuleAssessment {
                metric_id: m.to_string(),
                violation_rate: 0.5,
                stars: (i % 4) as u8,
                mean: 0.0,
                rationale: String::new(),
                bands: vec![],
            })
            .collect();
        let (imp, _) = ImportanceMap::from_entries([("caffeine_mg".to_string(), 9.0), ("nap_min".to_string(), 2.0)]);
        build(
            RulesAxis { source: &src, ruleset_version: "1.0.0", assessments: &a },
            MlAxis { source: &src, model_id: "gbdt-1", importances: &imp },
            &Demarcations::new(1.0, 3.0, 6.0).unwrap(),
        )
        .unwrap()
    }

    fn ts() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 2, 1, 9, 0, 0).unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_choices_plus_mandatory() {
        let m = matrix();
        let so = SleepOpportunity::from_se(84.0, &m).unwrap();
        assert!((so.time_in_bed_min - 500.0).abs() < 1e-9);
        let r = record_selection(&m, &names(&["caffeine_mg", "nap_min", "screen_time_min"]), Some(so), ts()).unwrap();
        assert_eq!(r.chosen.len(), 3);
        assert_eq!(r.chosen[0], Choice { metric_id: "caffeine_mg".into(), stars: 0, bucket: 3 });
        assert_eq!(r.chosen[1].bucket, 1);
    }

    #[test]
    fn four_free_choices_rejected() {
        let m = matrix();
        let so = SleepOpportunity::from_se(90.0, &m).unwrap();
        let err = record_selection(
            &m,
            &names(&["caffeine_mg", "nap_min", "screen_time_min", "relaxation_min"]),
            Some(so),
            ts(),
        )
        .unwrap_err();
        assert_eq!(err, TrustError::TooManyChoices(4));
    }

    #[test]
    fn unknown_and_missing_mandatory() {
        let m = matrix();
        let so = SleepOpportunity::from_se(90.0, &m).unwrap();
        let err = record_selection(&m, &names(&["alcohol_units"]), Some(so.clone()), ts()).unwrap_err();
        assert_eq!(err, TrustError::UnknownIntervention("alcohol_units".into()));
        assert_eq!(err.to_string(), "unknown intervention `alcohol_units`");
        assert_eq!(record_selection(&m, &names(&["nap_min"]), None, ts()), Err(TrustError::MissingMandatory));
        assert!(record_selection(&m, &names(&["nap_min", "nap_min"]), Some(so), ts()).is_err());
        assert!(SleepOpportunity::from_se(0.0, &m).is_err());
    }
}
