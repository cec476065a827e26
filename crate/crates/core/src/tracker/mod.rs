//! Intervention-phase targets, the daily status message and dashboard, and
//! rolling progress against the baseline.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::num::fmt_num;
use crate::pipeline::{BaselineWindow, ChartBand, ChartDay, ChartSpec, Dataset};
use crate::registry;
use crate::rules::{Band, Direction};
use crate::trust::{improvement_over, Goal, SelectionRecord, LAST_DAYS, SLEEP_OPPORTUNITY_METRIC};

pub const DEFAULT_TOLERANCE: f64 = 0.10;
pub const SE_FLOOR_PCT: f64 = 85.0;
pub const MAX_MESSAGE_CHARS: usize = 320;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackerError {
    #[error("target for `{0}`, which was not chosen")]
    UnchosenTarget(String),
    #[error("missing target for chosen intervention `{0}`")]
    MissingTarget(String),
    #[error("two targets for `{0}`")]
    DuplicateTarget(String),
    #[error("invalid target `{0}`: {1}")]
    InvalidTarget(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    Threshold {
        op: Op,
        value: f64,
    },
    /// Time-of-day window in minutes after midnight.
    Window {
        start: f64,
        end: f64,
    },
    Range {
        min: f64,
        max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TargetRepr", into = "TargetRepr")]
pub struct TargetSpec {
    pub metric_id: String,
    pub kind: TargetKind,
}

#[derive(Serialize, Deserialize)]
struct TargetRepr {
    metric_id: String,
    #[serde(flatten)]
    kind: TargetKind,
    #[serde(default)]
    direction: Option<Direction>,
}

impl TryFrom<TargetRepr> for TargetSpec {
    type Error = TrackerError;

    fn try_from(r: TargetRepr) -> Result<Self, Self::Error> {
        let t = TargetSpec::new(&r.metric_id, r.kind)?;
        if r.direction.is_some_and(|d| d != t.direction()) {
            return Err(TrackerError::InvalidTarget(r.metric_id, "direction does not match kind".into()));
        }
        Ok(t)
    }
}

impl From<TargetSpec> for TargetRepr {
    fn from(t: TargetSpec) -> Self {
        let direction = Some(t.direction());
        TargetRepr { metric_id: t.metric_id, kind: t.kind, direction }
    }
}

impl TargetSpec {
    pub fn new(metric_id: &str, kind: TargetKind) -> Result<Self, TrackerError> {
        let bad = |m: &str| Err(TrackerError::InvalidTarget(metric_id.into(), m.into()));
        let Some(def) = registry::lookup(metric_id) else {
            return bad("unknown metric");
        };
        let finite = match kind {
            TargetKind::Threshold { value, .. } => value.is_finite(),
            TargetKind::Window { start, end } => start.is_finite() && end.is_finite(),
            TargetKind::Range { min, max } => min.is_finite() && max.is_finite(),
        };
        if !finite {
            return bad("non-finite parameter");
        }
        match kind {
            TargetKind::Window { start, end } if start >= end => return bad("window start must be before end"),
            TargetKind::Range { min, max } if min >= max => return bad("range min must be below max"),
            TargetKind::Window { start, end } if def.unit != "min" || start < 0.0 || end > 1440.0 => {
                return bad("windows are minutes of the day")
            }
            _ => {}
        }
        Ok(TargetSpec { metric_id: metric_id.into(), kind })
    }

    pub fn direction(&self) -> Direction {
        self.goal().direction()
    }

    pub fn goal(&self) -> Goal {
        match self.kind {
            TargetKind::Threshold { op: Op::Le, .. } => Goal::LowerIsBetter,
            TargetKind::Threshold { op: Op::Ge, .. } => Goal::HigherIsBetter,
            TargetKind::Window { start, end } => Goal::Range { min: start, max: end },
            TargetKind::Range { min, max } => Goal::Range { min, max },
        }
    }

    pub fn evaluate(&self, value: f64, tolerance: f64) -> Status {
        match self.kind {
            TargetKind::Threshold { op, value: t } => {
                let slack = tolerance * t.abs();
                let (met, near) = match op {
                    Op::Le => (value <= t, value <= t + slack),
                    Op::Ge => (value >= t, value >= t - slack),
                };
                if met {
                    Status::Met
                } else if near {
                    Status::Partial
                } else {
                    Status::Missed
                }
            }
            TargetKind::Window { start: lo, end: hi } | TargetKind::Range { min: lo, max: hi } => {
                let outside = (lo - value).max(value - hi);
                if outside <= 0.0 {
                    Status::Met
                } else if outside <= (hi - lo) / 2.0 {
                    Status::Partial
                } else {
                    Status::Missed
                }
            }
        }
    }

    /// Dashboard bands: met, partial and missed regions.
    pub fn bands(&self, tolerance: f64) -> Vec<ChartBand> {
        let band =
            |name: Band, min: Option<f64>, max: Option<f64>| ChartBand { name, min, max, color: name.color().into() };
        match self.kind {
            TargetKind::Threshold { op: Op::Le, value } => {
                let edge = value + tolerance * value.abs();
                alloc::vec![
                    band(Band::Good, None, Some(value)),
                    band(Band::Warn, Some(value), Some(edge)),
                    band(Band::Violate, Some(edge), None),
                ]
            }
            TargetKind::Threshold { op: Op::Ge, value } => {
                let edge = value - tolerance * value.abs();
                alloc::vec![
                    band(Band::Violate, None, Some(edge)),
                    band(Band::Warn, Some(edge), Some(value)),
                    band(Band::Good, Some(value), None),
                ]
            }
            TargetKind::Window { start: lo, end: hi } | TargetKind::Range { min: lo, max: hi } => {
                let h = (hi - lo) / 2.0;
                alloc::vec![
                    band(Band::Violate, None, Some(lo - h)),
                    band(Band::Warn, Some(lo - h), Some(lo)),
                    band(Band::Good, Some(lo), Some(hi)),
                    band(Band::Warn, Some(hi), Some(hi + h)),
                    band(Band::Violate, Some(hi + h), None),
                ]
            }
        }
    }
}

fn hhmm(min: f64) -> String {
    let m = libm::round(min) as i64;
    format!("{:02}:{:02}", m / 60, m % 60)
}

fn parse_time(s: &str) -> Option<f64> {
    match s.split_once(':') {
        Some((h, m)) => {
            let h: u32 = h.parse().ok()?;
            let m: u32 = m.parse().ok()?;
            (h < 24 && m < 60).then(|| f64::from(h * 60 + m))
        }
        None => s.parse().ok(),
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TargetKind::Threshold { op: Op::Le, value } => write!(f, "{} <= {}", self.metric_id, fmt_num(value)),
            TargetKind::Threshold { op: Op::Ge, value } => write!(f, "{} >= {}", self.metric_id, fmt_num(value)),
            TargetKind::Window { start, end } => write!(f, "{} window {}-{}", self.metric_id, hhmm(start), hhmm(end)),
            TargetKind::Range { min, max } => write!(f, "{} range {}-{}", self.metric_id, fmt_num(min), fmt_num(max)),
        }
    }
}

impl FromStr for TargetSpec {
    type Err = TrackerError;

    /// `metric <= 230`, `metric >= 5000`, `metric window 06:45-07:15`,
    /// `metric range 16-19`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = |m: &str| TrackerError::InvalidTarget(s.into(), m.into());
        for (tok, op) in [("<=", Op::Le), (">=", Op::Ge)] {
            if let Some((m, v)) = s.split_once(tok) {
                let value: f64 = v.trim().parse().map_err(|_| bad("threshold is not a number"))?;
                return TargetSpec::new(m.trim(), TargetKind::Threshold { op, value });
            }
        }
        let mut parts = s.split_whitespace();
        let (Some(metric), Some(kind), Some(args), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad("expected `metric <= v`, `metric >= v`, `metric window a-b` or `metric range a-b`"));
        };
        let (a, b) = args.split_once('-').ok_or_else(|| bad("expected a-b"))?;
        match kind {
            "window" => {
                let start = parse_time(a).ok_or_else(|| bad("invalid start time"))?;
                let end = parse_time(b).ok_or_else(|| bad("invalid end time"))?;
                TargetSpec::new(metric, TargetKind::Window { start, end })
            }
            "range" => {
                let min = a.parse().map_err(|_| bad("invalid range minimum"))?;
                let max = b.parse().map_err(|_| bad("invalid range maximum"))?;
                TargetSpec::new(metric, TargetKind::Range { min, max })
            }
            other => Err(bad(&format!("unknown target kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Met,
    Partial,
    Missed,
    NoData,
}

/// Stored targets for one participant's intervention phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub participant_id: String,
    pub targets: Vec<TargetSpec>,
    pub tolerance: f64,
    /// First day the tracker reports on.
    pub start: NaiveDate,
}

/// One target per chosen intervention, plus the mandatory sleep-opportunity
/// target unless one is supplied. Tracking starts the day after `set_on`.
pub fn set_targets(sel: &SelectionRecord, specs: &[TargetSpec], set_on: NaiveDate) -> Result<Plan, TrackerError> {
    let chosen: BTreeSet<&str> = sel.chosen.iter().map(|c| c.metric_id.as_str()).collect();
    let mut seen = BTreeSet::new();
    for s in specs {
        if !chosen.contains(s.metric_id.as_str()) && s.metric_id != SLEEP_OPPORTUNITY_METRIC {
            return Err(TrackerError::UnchosenTarget(s.metric_id.clone()));
        }
        if !seen.insert(s.metric_id.as_str()) {
            return Err(TrackerError::DuplicateTarget(s.metric_id.clone()));
        }
    }
    let mut targets = Vec::with_capacity(sel.chosen.len() + 1);
    for c in &sel.chosen {
        let spec = specs
            .iter()
            .find(|s| s.metric_id == c.metric_id)
            .ok_or_else(|| TrackerError::MissingTarget(c.metric_id.clone()))?;
        targets.push(spec.clone());
    }
    let sleep = match specs.iter().find(|s| s.metric_id == SLEEP_OPPORTUNITY_METRIC) {
        Some(s) => s.clone(),
        None => TargetSpec::new(
            SLEEP_OPPORTUNITY_METRIC,
            TargetKind::Threshold { op: Op::Ge, value: sel.mandatory_sleep_opportunity.time_in_bed_min },
        )?,
    };
    targets.push(sleep);
    Ok(Plan {
        participant_id: sel.participant_id.clone(),
        targets,
        tolerance: DEFAULT_TOLERANCE,
        start: set_on.checked_add_days(Days::new(1)).unwrap_or(set_on),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStatus {
    pub metric_id: String,
    pub target: String,
    pub value: Option<f64>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyStatus {
    pub participant_id: String,
    pub date: NaiveDate,
    pub items: Vec<TargetStatus>,
    pub message: String,
    pub se_alert: bool,
    pub rolling_se_pct: Option<f64>,
}

/// Mean sleep efficiency over the seven days ending at `date`.
pub fn rolling_se(data: &Dataset, participant: &str, date: NaiveDate) -> Option<f64> {
    let days: Vec<NaiveDate> = (0..LAST_DAYS as u64).filter_map(|k| date.checked_sub_days(Days::new(k))).collect();
    let vals: Vec<f64> = data.series(participant, "se_pct", &days).into_iter().map(|(_, v)| v).collect();
    crate::num::mean(&vals)
}

fn list(label: &str, items: &[&str]) -> Option<String> {
    (!items.is_empty()).then(|| format!("{label}: {}.", items.join(", ")))
}

fn truncate(mut s: String) -> String {
    if s.chars().count() > MAX_MESSAGE_CHARS {
        s = s.chars().take(MAX_MESSAGE_CHARS - 3).collect();
        s.push_str("...");
    }
    s
}

pub fn daily_status(plan: &Plan, data: &Dataset, date: NaiveDate) -> DailyStatus {
    let p = plan.participant_id.as_str();
    let items: Vec<TargetStatus> = plan
        .targets
        .iter()
        .map(|t| {
            let value = data.daily_value(p, date, &t.metric_id);
            let status = value.map_or(Status::NoData, |v| t.evaluate(v, plan.tolerance));
            TargetStatus { metric_id: t.metric_id.clone(), target: t.to_string(), value, status }
        })
        .collect();
    let of =
        |s: Status| -> Vec<&str> { items.iter().filter(|i| i.status == s).map(|i| i.metric_id.as_str()).collect() };
    let mut message = if items.iter().all(|i| i.status == Status::Met) {
        format!("All {} targets met.", items.len())
    } else {
        [
            list("Met", &of(Status::Met)),
            list("Partial", &of(Status::Partial)),
            list("Missed", &of(Status::Missed)),
            list("No data", &of(Status::NoData)),
        ]
        .into_iter()
        .flatten()
        .collect::<Vec<_>>()
        .join(" ")
    };
    let se = rolling_se(data, p, date);
    let se_alert = se.is_some_and(|v| v < SE_FLOOR_PCT);
    if let (true, Some(v)) = (se_alert, se) {
        message.push_str(&format!(
            " Alert: 7-day sleep efficiency {}% is below {}%.",
            fmt_num(v),
            fmt_num(SE_FLOOR_PCT)
        ));
    }
    DailyStatus { participant_id: p.into(), date, items, message: truncate(message), se_alert, rolling_se_pct: se }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Improvement,
    Flat,
    Deterioration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressPoint {
    pub date: NaiveDate,
    pub improvement_pct: f64,
    pub trend: Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressSeries {
    pub metric_id: String,
    pub direction: Direction,
    pub points: Vec<ProgressPoint>,
}

/// Rolling improvement against baseline over the trailing seven observed
/// days (fewer at the start of the phase), through `through`.
pub fn progress(plan: &Plan, data: &Dataset, baseline: &BaselineWindow, through: NaiveDate) -> Vec<ProgressSeries> {
    let p = plan.participant_id.as_str();
    let days: Vec<NaiveDate> =
        plan.start.iter_days().take_while(|d| *d <= through).filter(|d| !data.is_excluded(p, *d)).collect();
    plan.targets
        .iter()
        .map(|t| {
            let base: Vec<f64> = data.series(p, &t.metric_id, &baseline.days).into_iter().map(|(_, v)| v).collect();
            let during = data.series(p, &t.metric_id, &days);
            let values: Vec<f64> = during.iter().map(|(_, v)| *v).collect();
            let points = during
                .iter()
                .enumerate()
                .filter_map(|(i, (date, _))| {
                    let window = &values[(i + 1).saturating_sub(LAST_DAYS)..=i];
                    let imp = improvement_over(&base, window, t.goal())?;
                    let trend = if imp.improvement_pct > 0.0 {
                        Trend::Improvement
                    } else if imp.improvement_pct < 0.0 {
                        Trend::Deterioration
                    } else {
                        Trend::Flat
                    };
                    Some(ProgressPoint { date: *date, improvement_pct: imp.improvement_pct, trend })
                })
                .collect();
            ProgressSeries { metric_id: t.metric_id.clone(), direction: t.direction(), points }
        })
        .collect()
}

/// Chart of one target's metric over the phase, banded by the target.
pub fn dashboard(plan: &Plan, data: &Dataset, metric: &str, through: NaiveDate) -> Option<ChartSpec> {
    let t = plan.targets.iter().find(|t| t.metric_id == metric)?;
    let p = plan.participant_id.as_str();
    let days: Vec<NaiveDate> = plan.start.iter_days().take_while(|d| *d <= through).collect();
    let chart_days: Vec<ChartDay> = data
        .series(p, metric, &days)
        .into_iter()
        .map(|(date, value)| {
            let band = match t.evaluate(value, plan.tolerance) {
                Status::Met => Band::Good,
                Status::Partial => Band::Warn,
                _ => Band::Violate,
            };
            ChartDay { date, value, band: Some(band) }
        })
        .collect();
    let values: Vec<f64> = chart_days.iter().map(|d| d.value).collect();
    Some(ChartSpec {
        metric: metric.into(),
        unit: registry::lookup(metric).map_or("", |m| m.unit).into(),
        mean: crate::num::mean(&values),
        days: chart_days,
        bands: t.bands(plan.tolerance),
    })
}
