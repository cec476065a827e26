//! Expert reference standard: a small rule DSL, per-value banding and the
//! star-rated opportunity assessment of a participant's baseline.

mod parse;
mod print;

pub use parse::{parse_ruleset, ParseError};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::num::{self, fmt_num};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
    Range,
}

impl Direction {
    pub fn keyword(self) -> &'static str {
        match self {
            Direction::LowerIsBetter => "lower_is_better",
            Direction::HigherIsBetter => "higher_is_better",
            Direction::Range => "range",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Threshold in metric units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Between(f64, f64),
}

impl Bound {
    pub fn contains(&self, value: f64) -> bool {
        match *self {
            Bound::AtMost(b) => value <= b,
            Bound::AtLeast(b) => value >= b,
            Bound::Between(lo, hi) => lo <= value && value <= hi,
        }
    }

    fn matches(&self, direction: Direction) -> bool {
        matches!(
            (self, direction),
            (Bound::AtMost(_), Direction::LowerIsBetter)
                | (Bound::AtLeast(_), Direction::HigherIsBetter)
                | (Bound::Between(..), Direction::Range)
        )
    }

    /// Distance from the bound; 0 when inside.
    pub fn distance(&self, value: f64) -> f64 {
        match *self {
            Bound::AtMost(b) => (value - b).max(0.0),
            Bound::AtLeast(b) => (b - value).max(0.0),
            Bound::Between(lo, hi) => (lo - value).max(value - hi).max(0.0),
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b}"),
            Bound::AtLeast(b) => write!(f, ">= {b}"),
            Bound::Between(lo, hi) => write!(f, "between {lo} {hi}"),
        }
    }
}

/// Violation-rate band edges: `rate <= angel` is an angel, `<= one` one star,
/// `<= two` two stars, anything above three stars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarPolicy {
    pub angel: f64,
    pub one: f64,
    pub two: f64,
}

impl Default for StarPolicy {
    fn default() -> Self {
        StarPolicy { angel: 0.05, one: 1.0 / 3.0, two: 2.0 / 3.0 }
    }
}

impl StarPolicy {
    pub fn is_valid(&self) -> bool {
        0.0 < self.angel && self.angel < self.one && self.one < self.two && self.two < 1.0
    }

    pub fn stars(&self, violation_rate: f64) -> u8 {
        if violation_rate <= self.angel {
            0
        } else if violation_rate <= self.one {
            1
        } else if violation_rate <= self.two {
            2
        } else {
            3
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub metric_id: String,
    pub direction: Direction,
    pub best_practice: Bound,
    pub hard_limit: Option<Bound>,
    pub unit: Option<String>,
    pub stars: StarPolicy,
    /// Expert text; `{mean}`, `{min}`, `{max}`, `{unit}` and
    /// `{violation_pct}` are filled with the participant's numbers.
    pub rationale: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Good,
    Warn,
    Violate,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Good, Band::Warn, Band::Violate];

    pub fn name(self) -> &'static str {
        match self {
            Band::Good => "good",
            Band::Warn => "warn",
            Band::Violate => "violate",
        }
    }

    /// Blue rather than green keeps the palette readable for colour-blind users.
    pub fn color(self) -> &'static str {
        match self {
            Band::Good => "#2b6cb0",
            Band::Warn => "#d69e2e",
            Band::Violate => "#c53030",
        }
    }
}

impl Rule {
    pub(crate) fn check(&self) -> Result<(), String> {
        if !self.best_practice.matches(self.direction) {
            return Err(alloc::format!(
                "best_practice `{}` does not match direction {}",
                self.best_practice,
                self.direction
            ));
        }
        if let Bound::Between(lo, hi) = self.best_practice {
            if lo > hi {
                return Err("best_practice range is inverted".into());
            }
        }
        if let Some(hl) = self.hard_limit {
            if !hl.matches(self.direction) {
                return Err(alloc::format!("hard_limit `{hl}` does not match direction {}", self.direction));
            }
            match (self.best_practice, hl) {
                (Bound::AtMost(bp), Bound::AtMost(h)) if bp > h => {
                    return Err("best_practice exceeds hard_limit".into())
                }
                (Bound::AtLeast(bp), Bound::AtLeast(h)) if bp < h => {
                    return Err("best_practice below hard_limit".into())
                }
                (Bound::Between(lo, hi), Bound::Between(hlo, hhi)) if hlo > hhi || lo < hlo || hi > hhi => {
                    return Err("best_practice range outside hard_limit range".into())
                }
                _ => {}
            }
        }
        if !self.stars.is_valid() {
            return Err("star band edges must be strictly increasing in (0,1)".into());
        }
        Ok(())
    }

    /// Classifies one value: good inside best practice (inclusive), violate
    /// strictly beyond the hard limit, warn in between.
    pub fn band(&self, value: f64) -> Band {
        if self.best_practice.contains(value) {
            Band::Good
        } else if self.hard_limit.is_some_and(|h| !h.contains(value)) {
            Band::Violate
        } else {
            Band::Warn
        }
    }

    /// Band descriptions in metric units, for charts.
    pub fn band_edges(&self) -> Vec<(Band, Option<f64>, Option<f64>)> {
        let mut out = Vec::new();
        match (self.best_practice, self.hard_limit) {
            (Bound::AtMost(bp), hl) => {
                out.push((Band::Good, None, Some(bp)));
                match hl {
                    Some(Bound::AtMost(h)) => {
                        out.push((Band::Warn, Some(bp), Some(h)));
                        out.push((Band::Violate, Some(h), None));
                    }
                    _ => out.push((Band::Warn, Some(bp), None)),
                }
            }
            (Bound::AtLeast(bp), hl) => {
                match hl {
                    Some(Bound::AtLeast(h)) => {
                        out.push((Band::Violate, None, Some(h)));
                        out.push((Band::Warn, Some(h), Some(bp)));
                    }
                    _ => out.push((Band::Warn, None, Some(bp))),
                }
                out.push((Band::Good, Some(bp), None));
            }
            (Bound::Between(lo, hi), hl) => match hl {
                Some(Bound::Between(hlo, hhi)) => {
                    out.push((Band::Violate, None, Some(hlo)));
                    out.push((Band::Warn, Some(hlo), Some(lo)));
                    out.push((Band::Good, Some(lo), Some(hi)));
                    out.push((Band::Warn, Some(hi), Some(hhi)));
                    out.push((Band::Violate, Some(hhi), None));
                }
                _ => {
                    out.push((Band::Warn, None, Some(lo)));
                    out.push((Band::Good, Some(lo), Some(hi)));
                    out.push((Band::Warn, Some(hi), None));
                }
            },
        }
        out
    }

    /// Star-rated opportunity from a baseline series.
    pub fn assess(&self, series: &[f64]) -> Result<RuleAssessment, RuleError> {
        if series.is_empty() {
            return Err(RuleError::NoData(self.metric_id.clone()));
        }
        let bands: Vec<Band> = series.iter().map(|&v| self.band(v)).collect();
        let violations = bands.iter().filter(|b| **b != Band::Good).count();
        let violation_rate = violations as f64 / series.len() as f64;
        let mean = num::mean(series).unwrap_or(0.0);
        let min = series.iter().copied().fold(f64::INFINITY, f64::min);
        let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let unit = self.unit.clone().unwrap_or_default();
        let rationale = self
            .rationale
            .replace("{mean}", &fmt_num(mean))
            .replace("{min}", &fmt_num(min))
            .replace("{max}", &fmt_num(max))
            .replace("{unit}", &unit)
            .replace("{violation_pct}", &num::pct(violations, series.len()).to_string());
        Ok(RuleAssessment {
            metric_id: self.metric_id.clone(),
            violation_rate,
            stars: self.stars.stars(violation_rate),
            mean,
            rationale,
            bands,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuleError {
    #[error("no-data: no baseline values for `{0}`")]
    NoData(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAssessment {
    pub metric_id: String,
    pub violation_rate: f64,
    /// 0 is an angel (best practice achieved), 1..=3 are opportunity levels.
    pub stars: u8,
    pub mean: f64,
    pub rationale: String,
    pub bands: Vec<Band>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ruleset {
    pub name: String,
    pub version: String,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssessAll {
    pub assessments: BTreeMap<String, RuleAssessment>,
    pub warnings: Vec<String>,
}

impl Ruleset {
    pub fn rule(&self, metric_id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.metric_id == metric_id)
    }

    pub fn metric_ids(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.metric_id.as_str())
    }

    /// Assesses every rule against its series. Rules without data are left
    /// out with a warning.
    pub fn assess_all(&self, baseline: &BTreeMap<String, Vec<f64>>) -> AssessAll {
        let mut out = AssessAll::default();
        for rule in &self.rules {
            let series = baseline.get(&rule.metric_id).map(Vec::as_slice).unwrap_or(&[]);
            match rule.assess(series) {
                Ok(a) => {
                    out.assessments.insert(rule.metric_id.clone(), a);
                }
                Err(e) => out.warnings.push(e.to_string()),
            }
        }
        out
    }
}

/// Sleep-hygiene reference standard used when no ruleset is supplied.
pub const DEFAULT_RULESET: &str = include_str!("default.rules");

pub fn default_ruleset() -> Ruleset {
    parse_ruleset(DEFAULT_RULESET).expect("bundled ruleset parses")
}
