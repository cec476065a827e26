//! Demonstrated trust: what participants chose (intention), what they kept
//! doing (follow-through), and whether either tracked their outcomes.

mod doti;
mod index;
mod selection;

pub use doti::{doti, CohortEntry, DotiCell, DotiTable, Model, RelativeDoti, Stage};
pub use index::{dafti, dirti, index_from_scores, ScoreOptions, TrustIndex};
pub use selection::{
    assess_compliance, record_selection, Choice, ComplianceEntry, ComplianceRecord, SelectionRecord, SleepOpportunity,
    MAX_FREE_CHOICES, SLEEP_OPPORTUNITY_METRIC,
};

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rules::{Bound, Direction};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrustError {
    #[error("no-selection: no free-choice interventions")]
    NoSelection,
    #[error("too many free choices: {0}, at most 3")]
    TooManyChoices(usize),
    #[error("missing mandatory sleep opportunity")]
    MissingMandatory,
    #[error("unknown intervention `{0}`")]
    UnknownIntervention(String),
    #[error("intervention `{0}` chosen twice")]
    DuplicateChoice(String),
    #[error("participant mismatch: {0}")]
    ParticipantMismatch(String),
    #[error("insufficient intervention days for `{metric}`: {days}, at least 7 required")]
    InsufficientInterventionDays { metric: String, days: usize },
    #[error("empty baseline for `{0}`")]
    EmptyBaseline(String),
    #[error("missing compliance entry for `{0}`")]
    MissingCompliance(String),
    #[error("cohort-too-small: {0} participants, at least 3 required")]
    CohortTooSmall(usize),
    #[error("invalid sleep efficiency {0}")]
    InvalidSleepEfficiency(f64),
}

/// A quotient that may have no value. Serialized as a number or `"undefined"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Defined(f64),
    Undefined,
}

impl Ratio {
    /// `num / den`, undefined when the denominator is zero.
    pub fn of(num: f64, den: f64) -> Ratio {
        if den == 0.0 || !num.is_finite() || !den.is_finite() {
            Ratio::Undefined
        } else {
            Ratio::Defined(num / den)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Defined(v) => Some(v),
            Ratio::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Ratio::Defined(_))
    }
}

impl From<Option<f64>> for Ratio {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Ratio::Undefined, Ratio::Defined)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Defined(v) => write!(f, "{v}"),
            Ratio::Undefined => f.write_str("undefined"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Ratio::Defined(v) => s.serialize_f64(*v),
            Ratio::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Ratio::Defined(v)),
            Repr::Str(s) if s == "undefined" => Ok(Ratio::Undefined),
            Repr::Str(s) => {
                Err(serde::de::Error::custom(alloc::format!("expected a number or \"undefined\", got {s:?}")))
            }
        }
    }
}

/// Which way counts as better for a behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "direction", rename_all = "snake_case")]
pub enum Goal {
    LowerIsBetter,
    HigherIsBetter,
    Range { min: f64, max: f64 },
}

impl Goal {
    pub fn direction(self) -> Direction {
        match self {
            Goal::LowerIsBetter => Direction::LowerIsBetter,
            Goal::HigherIsBetter => Direction::HigherIsBetter,
            Goal::Range { .. } => Direction::Range,
        }
    }
}

impl From<Bound> for Goal {
    fn from(b: Bound) -> Self {
        match b {
            Bound::AtMost(_) => Goal::LowerIsBetter,
            Bound::AtLeast(_) => Goal::HigherIsBetter,
            Bound::Between(min, max) => Goal::Range { min, max },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub baseline_mean: f64,
    pub last7_mean: f64,
    /// Signed: positive is a move toward the goal.
    pub improvement_pct: f64,
    /// Set when the baseline was zero and an absolute difference was used.
    pub fallback: bool,
}

impl Improvement {
    pub fn followed_through(&self) -> bool {
        self.improvement_pct > 0.0
    }
}

pub const LAST_DAYS: usize = 7;

/// Compares the final seven intervention days against the baseline.
pub fn improvement(
    baseline: &[f64],
    intervention: &[f64],
    goal: Goal,
    metric: &str,
) -> Result<Improvement, TrustError> {
    if intervention.len() < LAST_DAYS {
        return Err(TrustError::InsufficientInterventionDays { metric: metric.into(), days: intervention.len() });
    }
    improvement_over(baseline, &intervention[intervention.len() - LAST_DAYS..], goal)
        .ok_or_else(|| TrustError::EmptyBaseline(metric.into()))
}

/// Shared kernel: baseline against an arbitrary window of recent values.
pub fn improvement_over(baseline: &[f64], window: &[f64], goal: Goal) -> Option<Improvement> {
    let b = crate::num::mean(baseline)?;
    let w = crate::num::mean(window)?;
    let (num, den) = match goal {
        Goal::LowerIsBetter => (b - w, b.abs()),
        Goal::HigherIsBetter => (w - b, b.abs()),
        Goal::Range { min, max } => {
            let dist = |vals: &[f64]| {
                crate::num::mean(
                    &vals.iter().map(|v| Bound::Between(min, max).distance(*v)).collect::<alloc::vec::Vec<_>>(),
                )
            };
            let d0 = dist(baseline)?;
            let d1 = dist(window)?;
            (d0 - d1, d0)
        }
    };
    let (pct, fallback) = if den == 0.0 { (num, true) } else { (num / den * 100.0, false) };
    Some(Improvement { baseline_mean: b, last7_mean: w, improvement_pct: pct, fallback })
}
