//! Materialised view of the event log. Every change to it goes through
//! [`State::apply`], so replaying the log rebuilds it exactly.

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use lofm_core::matrix::LofmMatrix;
use lofm_core::ml::{AccuracyReport, DroppedDay, ImportanceMap, TrainedModel};
use lofm_core::pipeline::{
    exclude_days, BaselineWindow, Dataset, ExcludeOutcome, Observation, QualityReport, Rejection,
    DEFAULT_QUALITY_THRESHOLD,
};
use lofm_core::rules::RuleAssessment;
use lofm_core::tracker::Plan;
use lofm_core::trust::SelectionRecord;
use lofm_core::Endpoint;
use serde::{Deserialize, Serialize};

use crate::store::{Event, EventKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    /// Sources that must reach the threshold for a day to count as complete.
    /// Empty means every source seen in the period.
    pub required_sources: Vec<String>,
    pub quality_threshold: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { required_sources: Vec::new(), quality_threshold: DEFAULT_QUALITY_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Trial,
    Baseline,
    Validated,
    Selected,
    Tracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model: TrainedModel,
    pub importances: ImportanceMap,
    pub accuracy: Option<AccuracyReport>,
    pub dropped: Vec<DroppedDay>,
    /// Baseline days the model was trained on.
    #[serde(default)]
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub matrix: LofmMatrix,
    pub assessments: Vec<RuleAssessment>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: String,
    pub registered_at: DateTime<Utc>,
    pub settings: Settings,
    pub objective: Option<Endpoint>,
    pub last_quality: Option<QualityReport>,
    pub baseline: Option<BaselineWindow>,
    pub model: Option<ModelRecord>,
    pub matrix: Option<MatrixRecord>,
    pub selection: Option<SelectionRecord>,
    pub plan: Option<Plan>,
}

impl Participant {
    pub fn phase(&self) -> Phase {
        if self.plan.is_some() {
            Phase::Tracking
        } else if self.selection.is_some() {
            Phase::Selected
        } else if self.matrix.is_some() {
            Phase::Validated
        } else if self.baseline.is_some() {
            Phase::Baseline
        } else {
            Phase::Trial
        }
    }

    fn reset_model(&mut self) {
        self.model = None;
        self.matrix = None;
    }
}

// Event payloads.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registered {
    pub settings: Settings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub accepted: Vec<Observation>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSet {
    pub objective: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayExcluded {
    pub dates: Vec<NaiveDate>,
    pub reason: String,
    pub outcome: ExcludeOutcome,
}

#[derive(Debug, thiserror::Error)]
#[error("{kind:?} event {seq}: {message}")]
pub struct ApplyError {
    pub seq: u64,
    pub kind: EventKind,
    pub message: String,
}

/// A decoded event, ready to be committed.
pub(crate) enum Change {
    Registered(Registered),
    Ingested(Ingested),
    Quality(QualityReport),
    ObjectiveSet(ObjectiveSet),
    BaselineConfirmed(BaselineWindow),
    DayExcluded(DayExcluded),
    ModelTrained(Box<ModelRecord>),
    MatrixBuilt(Box<MatrixRecord>),
    Selection(SelectionRecord),
    TargetsSet(Plan),
    Audit,
}

impl Change {
    pub(crate) fn decode(ev: &Event) -> Result<Change, ApplyError> {
        fn de<T: serde::de::DeserializeOwned>(ev: &Event) -> Result<T, ApplyError> {
            serde_json::from_value(ev.payload.clone()).map_err(|e| ApplyError {
                seq: ev.seq,
                kind: ev.kind,
                message: e.to_string(),
            })
        }
        Ok(match ev.kind {
            EventKind::Registered => Change::Registered(de(ev)?),
            EventKind::Ingested => Change::Ingested(de(ev)?),
            EventKind::Quality => Change::Quality(de(ev)?),
            EventKind::ObjectiveSet => Change::ObjectiveSet(de(ev)?),
            EventKind::BaselineConfirmed => Change::BaselineConfirmed(de(ev)?),
            EventKind::DayExcluded => Change::DayExcluded(de(ev)?),
            EventKind::ModelTrained => Change::ModelTrained(Box::new(de(ev)?)),
            EventKind::MatrixBuilt => Change::MatrixBuilt(Box::new(de(ev)?)),
            EventKind::Selection => Change::Selection(de(ev)?),
            EventKind::TargetsSet => Change::TargetsSet(de(ev)?),
            EventKind::DailyStatus | EventKind::MetricsComputed => Change::Audit,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub last_seq: u64,
    pub data: Dataset,
    pub participants: BTreeMap<String, Participant>,
    /// Idempotency key → seq of the event it produced.
    pub idempotency: BTreeMap<String, u64>,
}

impl State {
    pub fn participant(&self, id: &str) -> Option<&Participant> {
        self.participants.get(id)
    }

    /// Applies one event. Nothing is mutated if the payload fails to decode.
    pub fn apply(&mut self, ev: &Event) -> Result<(), ApplyError> {
        let change = Change::decode(ev)?;
        self.commit(ev, change)
    }

    pub(crate) fn commit(&mut self, ev: &Event, change: Change) -> Result<(), ApplyError> {
        let fail = |message: String| ApplyError { seq: ev.seq, kind: ev.kind, message };
        if ev.seq <= self.last_seq {
            return Err(fail(format!("seq not increasing after {}", self.last_seq)));
        }
        let pid = ev.participant_id.clone().unwrap_or_default();
        if let Change::Registered(r) = &change {
            if self.participants.contains_key(&pid) {
                return Err(fail(format!("participant {pid} registered twice")));
            }
            self.participants.insert(
                pid.clone(),
                Participant {
                    participant_id: pid.clone(),
                    registered_at: ev.timestamp,
                    settings: r.settings.clone(),
                    objective: None,
                    last_quality: None,
                    baseline: None,
                    model: None,
                    matrix: None,
                    selection: None,
                    plan: None,
                },
            );
        } else if !matches!(change, Change::Audit) {
            let Some(p) = self.participants.get_mut(&pid) else {
                return Err(fail(format!("unknown participant `{pid}`")));
            };
            match change {
                Change::Registered(_) | Change::Audit => {}
                Change::Ingested(i) => {
                    for obs in i.accepted {
                        self.data.insert(obs);
                    }
                }
                Change::Quality(q) => p.last_quality = Some(q),
                Change::ObjectiveSet(o) => {
                    p.objective = Some(o.objective);
                    p.reset_model();
                }
                Change::BaselineConfirmed(b) => {
                    p.baseline = Some(b);
                    p.reset_model();
                }
                Change::DayExcluded(d) => {
                    let base = p.baseline.as_ref().ok_or_else(|| fail("exclusion without a baseline".into()))?;
                    let outcome = exclude_days(&mut self.data, &pid, base, &d.dates, &d.reason);
                    p.baseline = Some(outcome.baseline);
                    p.reset_model();
                }
                Change::ModelTrained(m) => {
                    p.model = Some(*m);
                    p.matrix = None;
                }
                Change::MatrixBuilt(m) => p.matrix = Some(*m),
                Change::Selection(s) => {
                    p.selection = Some(s);
                    p.plan = None;
                }
                Change::TargetsSet(plan) => p.plan = Some(plan),
            }
        }
        if let Some(key) = &ev.idempotency_key {
            self.idempotency.insert(key.clone(), ev.seq);
        }
        self.last_seq = ev.seq;
        Ok(())
    }
}
