//! Pipeline commands over the event store. Both the CLI and the HTTP service
//! go through here, so they share guards, events and responses.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use lofm_core::matrix::{self, AxisSource, MlAxis, RulesAxis};
use lofm_core::ml::{self, Hyperparams};
use lofm_core::num::mean;
use lofm_core::pipeline::ChartSpec;
use lofm_core::pipeline::{
    baseline_window, quality_report, validation_pack, BaselineCriteria, BaselineWindow, DateRange, ExcludeOutcome,
    QualityReport, Rejection, RowInput, ValidationPack,
};
use lofm_core::registry;
use lofm_core::rules::{default_ruleset, Ruleset};
use lofm_core::tracker::{self, DailyStatus, Plan, ProgressSeries, TargetSpec};
use lofm_core::trust::{
    self, assess_compliance, dafti, dirti, record_selection, CohortEntry, ComplianceRecord, DotiTable, Goal, Ratio,
    ScoreOptions, SelectionRecord, SleepOpportunity, Stage, TrustIndex, SLEEP_OPPORTUNITY_METRIC,
};
use lofm_core::Endpoint;
use serde::{Deserialize, Serialize};

use crate::error::AppError;
use crate::state::{
    DayExcluded, Ingested, MatrixRecord, ModelRecord, ObjectiveSet, Participant, Phase, Registered, Settings,
};
use crate::store::{Event, EventKind, Store, StoreError};

/// Folds used for the accuracy report recorded with every model.
pub const ACCURACY_FOLDS: usize = 5;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    pub participant_id: String,
    pub registered_at: DateTime<Utc>,
    pub settings: Settings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub participant_id: String,
    pub phase: Phase,
    pub registered_at: DateTime<Utc>,
    pub settings: Settings,
    pub objective: Option<Endpoint>,
    #[serde(with = "opt_range", default)]
    pub baseline_window: Option<DateRange>,
    pub baseline_days: usize,
    pub model_id: Option<String>,
    pub chosen: Vec<String>,
    pub tracking_from: Option<NaiveDate>,
}

mod opt_range {
    use lofm_core::pipeline::DateRange;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &Option<DateRange>, s: S) -> Result<S::Ok, S::Error> {
        r.map(|r| r.to_string()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DateRange>, D::Error> {
        Option::<String>::deserialize(d)?.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
    /// Accepted rows per participant.
    pub participants: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveView {
    pub participant_id: String,
    pub objective: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub participant_id: String,
    pub model_id: String,
    pub objective: Endpoint,
    pub seed: u64,
    pub rows: usize,
    pub features: Vec<String>,
    pub importances: ml::ImportanceMap,
    pub accuracy: Option<ml::AccuracyReport>,
    pub dropped: Vec<ml::DroppedDay>,
    pub demarcations: lofm_core::Demarcations,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionView {
    pub selection: SelectionRecord,
    pub dirti: TrustIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerView {
    pub status: DailyStatus,
    pub dashboards: Vec<ChartSpec>,
    pub progress: Vec<ProgressSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub participant: String,
    pub stage: Stage,
    pub ml_mean: f64,
    pub rules_mean: f64,
    pub ratio: Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub participant: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub stage: Stage,
    pub include_mandatory: bool,
    pub rows: Vec<MetricsRow>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotiReport {
    pub include_mandatory: bool,
    pub table: DotiTable,
    pub cohort: Vec<CohortEntry>,
    pub skipped: Vec<Skipped>,
}

pub fn parse_stage(s: &str) -> Result<Stage, AppError> {
    match s.replace(['-', '_'], "").to_ascii_lowercase().as_str() {
        "intention" | "dirti" => Ok(Stage::Intention),
        "followthrough" | "dafti" => Ok(Stage::FollowThrough),
        _ => Err(AppError::bad_request(
            "invalid-stage",
            format!("unknown stage `{s}`, expected intention or followthrough"),
        )),
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub struct Lofm {
    store: Store,
    ruleset: Ruleset,
}

impl Lofm {
    pub fn open(dir: impl AsRef<Path>) -> Result<Lofm, StoreError> {
        Ok(Lofm { store: Store::open(dir)?, ruleset: default_ruleset() })
    }

    pub fn with_ruleset(mut self, ruleset: Ruleset) -> Self {
        self.ruleset = ruleset;
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn ruleset(&self) -> &Ruleset {
        &self.ruleset
    }

    fn participant(&self, id: &str) -> Result<&Participant, AppError> {
        self.store
            .state()
            .participant(id)
            .ok_or_else(|| AppError::not_found("participant-not-found", format!("no participant `{id}`")))
    }

    /// The event an idempotency key already produced, if any. A key reused
    /// for a different participant or action is a conflict.
    fn prior(&self, key: Option<&str>, pid: &str, kind: EventKind) -> Result<Option<&Event>, AppError> {
        let Some(ev) = key.and_then(|k| self.store.by_key(k)) else { return Ok(None) };
        if ev.kind != kind || ev.participant_id.as_deref() != Some(pid) {
            return Err(AppError::denied(
                "idempotency-key-reused",
                format!("key already used for {:?} on {}", ev.kind, ev.participant_id.as_deref().unwrap_or("cohort")),
            ));
        }
        Ok(Some(ev))
    }

    fn payload<T: serde::de::DeserializeOwned>(ev: &Event) -> Result<T, AppError> {
        serde_json::from_value(ev.payload.clone())
            .map_err(|e| AppError::new(crate::error::ErrorKind::Internal, "storage", e.to_string()))
    }

    fn not_after_selection(p: &Participant, action: &str) -> Result<(), AppError> {
        if p.selection.is_some() {
            return Err(AppError::denied(
                "selection-recorded",
                format!("cannot {action} after interventions were selected"),
            ));
        }
        Ok(())
    }

    pub fn view(&self, id: &str) -> Result<ParticipantView, AppError> {
        let p = self.participant(id)?;
        Ok(ParticipantView {
            participant_id: p.participant_id.clone(),
            phase: p.phase(),
            registered_at: p.registered_at,
            settings: p.settings.clone(),
            objective: p.objective,
            baseline_window: p.baseline.as_ref().map(|b| b.window),
            baseline_days: p.baseline.as_ref().map_or(0, |b| b.days.len()),
            model_id: p.model.as_ref().map(|m| m.model.model_id()),
            chosen: p
                .selection
                .as_ref()
                .map_or_else(Vec::new, |s| s.chosen.iter().map(|c| c.metric_id.clone()).collect()),
            tracking_from: p.plan.as_ref().map(|pl| pl.start),
        })
    }

    pub fn participants(&self) -> Vec<String> {
        self.store.state().participants.keys().cloned().collect()
    }

    pub fn register(
        &mut self,
        id: &str,
        settings: Settings,
        at: DateTime<Utc>,
        key: Option<&str>,
    ) -> Result<Registration, AppError> {
        if let Some(ev) = self.prior(key, id, EventKind::Registered)? {
            let r: Registered = Self::payload(ev)?;
            return Ok(Registration { participant_id: id.into(), registered_at: ev.timestamp, settings: r.settings });
        }
        if !valid_id(id) {
            return Err(AppError::bad_request(
                "invalid-participant-id",
                format!("`{id}` must be 1-64 of [A-Za-z0-9_-]"),
            ));
        }
        if !(0.0..=100.0).contains(&settings.quality_threshold) {
            return Err(AppError::bad_request("invalid-threshold", "quality threshold must be within 0-100"));
        }
        if self.store.state().participant(id).is_some() {
            return Err(AppError::denied("participant-exists", format!("participant `{id}` is already registered")));
        }
        let ev = self.store.append(
            Some(id),
            EventKind::Registered,
            &Registered { settings: settings.clone() },
            at,
            key.map(Into::into),
        )?;
        Ok(Registration { participant_id: id.into(), registered_at: ev.timestamp, settings })
    }

    /// Ingests raw rows. With `scope`, every row must belong to that
    /// participant. Otherwise unknown participants are registered with
    /// default settings when `auto_register` is set and rejected if not.
    pub fn ingest(
        &mut self,
        rows: Vec<RowInput>,
        scope: Option<&str>,
        auto_register: bool,
        at: DateTime<Utc>,
        key: Option<&str>,
    ) -> Result<IngestReport, AppError> {
        if let Some(pid) = scope {
            self.participant(pid)?;
            if let Some(ev) = self.prior(key, pid, EventKind::Ingested)? {
                let i: Ingested = Self::payload(ev)?;
                return Ok(IngestReport {
                    accepted: i.accepted.len(),
                    rejected: i.rejected,
                    participants: BTreeMap::from([(pid.to_string(), i.accepted.len())]),
                });
            }
        }
        let mut rejected: BTreeMap<String, Vec<Rejection>> = BTreeMap::new();
        let mut orphans = Vec::new();
        let mut keep = Vec::with_capacity(rows.len());
        let mut to_register = BTreeSet::new();
        for row in rows {
            let pid = row.participant_id.trim().to_string();
            if let Some(s) = scope {
                if pid != s {
                    let reason = format!("participant mismatch: row is for `{pid}`, request is for `{s}`");
                    rejected.entry(s.to_string()).or_default().push(Rejection { line: row.line, reason });
                    continue;
                }
            } else if self.store.state().participant(&pid).is_none() {
                if auto_register && valid_id(&pid) {
                    to_register.insert(pid.clone());
                } else {
                    orphans.push(Rejection { line: row.line, reason: format!("unknown participant `{pid}`") });
                    continue;
                }
            }
            keep.push(row);
        }
        let outcome = self.store.state().data.check_batch(&keep);
        let line_owner: BTreeMap<usize, String> =
            keep.iter().map(|r| (r.line, r.participant_id.trim().to_string())).collect();
        for r in outcome.rejected {
            let owner = line_owner.get(&r.line).cloned().unwrap_or_default();
            rejected.entry(owner).or_default().push(r);
        }
        let mut accepted: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for obs in outcome.accepted {
            accepted.entry(obs.participant_id.clone()).or_default().push(obs);
        }
        for pid in &to_register {
            if accepted.contains_key(pid) {
                self.store.append(
                    Some(pid),
                    EventKind::Registered,
                    &Registered { settings: Settings::default() },
                    at,
                    None,
                )?;
            }
        }
        let mut report = IngestReport::default();
        for (pid, obs) in accepted {
            let rej = rejected.remove(&pid).unwrap_or_default();
            report.accepted += obs.len();
            report.participants.insert(pid.clone(), obs.len());
            report.rejected.extend(rej.iter().cloned());
            let key = if scope.is_some() { key.map(Into::into) } else { None };
            self.store.append(Some(&pid), EventKind::Ingested, &Ingested { accepted: obs, rejected: rej }, at, key)?;
        }
        report.rejected.extend(rejected.into_values().flatten());
        report.rejected.extend(orphans);
        report.rejected.sort_by_key(|r| r.line);
        Ok(report)
    }

    fn default_period(
        &self,
        p: &Participant,
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
    ) -> Result<DateRange, AppError> {
        let span = self.store.state().data.span(&p.participant_id);
        let from = from.or(span.map(|s| s.from));
        let to = to.or(span.map(|s| s.to));
        match (from, to) {
            (Some(f), Some(t)) => Ok(DateRange::new(f, t)?),
            _ => Err(AppError::domain("no-data", format!("no observations for `{}`", p.participant_id))),
        }
    }

    pub fn quality(
        &self,
        id: &str,
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
        threshold: Option<f64>,
    ) -> Result<QualityReport, AppError> {
        let p = self.participant(id)?;
        let period = self.default_period(p, from, to)?;
        let threshold = threshold.unwrap_or(p.settings.quality_threshold);
        Ok(quality_report(&self.store.state().data, id, period, &p.settings.required_sources, threshold))
    }

    pub fn set_objective(
        &mut self,
        id: &str,
        objective: Endpoint,
        at: DateTime<Utc>,
        key: Option<&str>,
    ) -> Result<ObjectiveView, AppError> {
        let p = self.participant(id)?;
        if let Some(ev) = self.prior(key, id, EventKind::ObjectiveSet)? {
            let o: ObjectiveSet = Self::payload(ev)?;
            return Ok(ObjectiveView { participant_id: id.into(), objective: o.objective });
        }
        Self::not_after_selection(p, "change the objective")?;
        self.store.append(Some(id), EventKind::ObjectiveSet, &ObjectiveSet { objective }, at, key.map(Into::into))?;
        Ok(ObjectiveView { participant_id: id.into(), objective })
    }

    /// Gates on data quality (records the report either way), then fixes the
    /// baseline window from the complete days.
    pub fn confirm_baseline(
        &mut self,
        id: &str,
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
        at: DateTime<Utc>,
        key: Option<&str>,
    ) -> Result<BaselineWindow, AppError> {
        let p = self.participant(id)?;
        if let Some(ev) = self.prior(key, id, EventKind::BaselineConfirmed)? {
            return Self::payload(ev);
        }
        Self::not_after_selection(p, "confirm a new baseline")?;
        let period = match self.default_period(p, from, to) {
            Ok(period) => period,
            Err(_) => {
                return Err(AppError::denied(
                    &format!("quality-below-{}", lofm_core::num::fmt_num(p.settings.quality_threshold)),
                    "no observations to assess",
                ))
            }
        };
        let settings = p.settings.clone();
        let report = quality_report(
            &self.store.state().data,
            id,
            period,
            &settings.required_sources,
            settings.quality_threshold,
        );
        self.store.append(Some(id), EventKind::Quality, &report, at, None)?;
        if !report.passed {
            let worst = report
                .per_source_coverage
                .iter()
                .map(|(s, c)| format!("{s} {}%", lofm_core::num::fmt_num(*c)))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(AppError::denied(
                &format!("quality-below-{}", lofm_core::num::fmt_num(settings.quality_threshold)),
                format!(
                    "mean coverage must reach {}% for every required source over {period}; got {}",
                    lofm_core::num::fmt_num(settings.quality_threshold),
                    if worst.is_empty() { "no sources".to_string() } else { worst }
                ),
            ));
        }
        let criteria = BaselineCriteria {
            required_sources: settings.required_sources,
            threshold: settings.quality_threshold,
            period: Some(period),
        };
        let window = baseline_window(&self.store.state().data, id, &criteria)?;
        self.store.append(Some(id), EventKind::BaselineConfirmed, &window, at, key.map(Into::into))?;
        Ok(window)
    }

    pub fn exclude_days(
        &mut self,
        id: &str,
        dates: &[NaiveDate],
        reason: &str,
        at: DateTime<Utc>,
        key: Option<&str>,
    ) -> Result<ExcludeOutcome, AppError> {
        let p = self.participant(id)?;
        if let Some(ev) = self.prior(key, id, EventKind::DayExcluded)? {
            let d: DayExcluded = Self::payload(ev)?;
            return Ok(d.outcome);
        }
        Self::not_after_selection(p, "exclude days")?;
        let Some(baseline) = p.baseline.clone() else {
            return Err(AppError::denied("baseline-not-confirmed", "confirm the baseline before excluding days"));
        };
        let mut scratch = self.store.state().data.clone();
        let outcome = lofm_core::pipeline::exclude_days(&mut scratch, id, &baseline, dates, reason);
        if outcome.excluded.is_empty() {
            return Ok(outcome);
        }
        let payload = DayExcluded { dates: dates.to_vec(), reason: reason.into(), outcome: outcome.clone() };
        self.store.append(Some(id), EventKind::DayExcluded, &payload, at, key.map(Into::into))?;
        Ok(outcome)
    }

    fn assess_baseline(&self, id: &str, baseline: &BaselineWindow) -> lofm_core::rules::AssessAll {
        let data = &self.store.state().data;
        let series: BTreeMap<String, Vec<f64>> = self
            .ruleset
            .metric_ids()
            .map(|m| (m.to_string(), data.series(id, m, &baseline.days).into_iter().map(|(_, v)| v).collect()))
            .collect();
        self.ruleset.assess_all(&series)
    }

    fn train_report(id: &str, m: &ModelRecord, mx: &MatrixRecord, objective: Endpoint) -> TrainReport {
        TrainReport {
            participant_id: id.into(),
            model_id: m.model.model_id(),
            objective,
            seed: m.model.seed,
            rows: m.rows,
            features: m.model.features.clone(),
            importances: m.importances.clone(),
            accuracy: m.accuracy.clone(),
            dropped: m.dropped.clone(),
            demarcations: mx.matrix.demarcations,
            warnings: mx.warnings.clone(),
        }
    }

    /// Trains the participant's model on the confirmed baseline, assesses the
    /// rules over the same days and fuses both into the matrix.
    pub fn train(
        &mut self,
        id: &str,
        seed: u64,
        hp: &Hyperparams,
        at: DateTime<Utc>,
        key: Option<&str>,
    ) -> Result<TrainReport, AppError> {
        let p = self.participant(id)?;
        if let Some(ev) = self.prior(key, id, EventKind::ModelTrained)? {
            let m: ModelRecord = Self::payload(ev)?;
            let next = self
                .store
                .event(ev.seq + 1)
                .ok_or_else(|| AppError::new(crate::error::ErrorKind::Internal, "storage", "matrix event missing"))?;
            let mx: MatrixRecord = Self::payload(next)?;
            return Ok(Self::train_report(id, &m, &mx, mx.matrix.objective));
        }
        Self::not_after_selection(p, "retrain")?;
        let Some(baseline) = p.baseline.clone() else {
            return Err(AppError::denied(
                "baseline-not-confirmed",
                "confirm a baseline of at least 28 complete days first",
            ));
        };
        let Some(objective) = p.objective else {
            return Err(AppError::denied("objective-not-set", "set the objective (tst_min or sws_min) first"));
        };
        baseline.check()?;
        let data = &self.store.state().data;
        let have = data.metrics(id);
        let features: Vec<String> =
            registry::features().map(|m| m.id.to_string()).filter(|m| have.contains(m)).collect();
        let table = ml::build_table(data, id, &baseline, objective, &features)?;
        let model = ml::train(&table, hp, seed)?;
        let importances = ml::importance(&model);
        let mut warnings = Vec::new();
        let accuracy = match ml::accuracy(&table, hp, ACCURACY_FOLDS, seed) {
            Ok(a) => Some(a),
            Err(e) => {
                warnings.push(e.to_string());
                None
            }
        };
        let assessed = self.assess_baseline(id, &baseline);
        warnings.extend(assessed.warnings);
        let assessments: Vec<_> = assessed.assessments.into_values().collect();
        let source = AxisSource { participant: id.into(), data_window: baseline.window, objective };
        let model_id = model.model_id();
        let (m, w) = matrix::assemble(
            RulesAxis { source: &source, ruleset_version: &self.ruleset.version, assessments: &assessments },
            MlAxis { source: &source, model_id: &model_id, importances: &importances },
        )?;
        warnings.extend(w);
        let model_rec = ModelRecord { model, importances, accuracy, dropped: table.dropped.clone(), rows: table.len() };
        let matrix_rec = MatrixRecord { matrix: m, assessments, warnings };
        let report = Self::train_report(id, &model_rec, &matrix_rec, objective);
        self.store.append(Some(id), EventKind::ModelTrained, &model_rec, at, key.map(Into::into))?;
        self.store.append(Some(id), EventKind::MatrixBuilt, &matrix_rec, at, None)?;
        Ok(report)
    }

    /// A matrix from externally computed importances over the participant's
    /// baseline. Nothing is recorded.
    pub fn matrix_from_importances(
        &self,
        id: &str,
        importances: &ml::ImportanceMap,
    ) -> Result<(lofm_core::LofmMatrix, Vec<String>), AppError> {
        let p = self.participant(id)?;
        let Some(baseline) = &p.baseline else {
            return Err(AppError::denied("baseline-not-confirmed", "confirm the baseline first"));
        };
        let Some(objective) = p.objective else {
            return Err(AppError::denied("objective-not-set", "set the objective first"));
        };
        let assessed = self.assess_baseline(id, baseline);
        let assessments: Vec<_> = assessed.assessments.into_values().collect();
        let source = AxisSource { participant: id.into(), data_window: baseline.window, objective };
        let (m, mut w) = matrix::assemble(
            RulesAxis { source: &source, ruleset_version: &self.ruleset.version, assessments: &assessments },
            MlAxis { source: &source, model_id: "imported", importances },
        )?;
        w.splice(0..0, assessed.warnings);
        Ok((m, w))
    }

    pub fn matrix(&self, id: &str) -> Result<&MatrixRecord, AppError> {
        let p = self.participant(id)?;
        match (&p.model, &p.matrix) {
            (None, _) => Err(AppError::denied("model-not-trained", "train the participant's model first")),
            (Some(_), None) => Err(AppError::denied("matrix-not-built", "the matrix has not been built")),
            (Some(_), Some(m)) => Ok(m),
        }
    }

    fn baseline_se(&self, p: &Participant) -> Option<f64> {
        let b = p.baseline.as_ref()?;
        let v: Vec<f64> =
            self.store.state().data.series(&p.participant_id, "se_pct", &b.days).into_iter().map(|(_, v)| v).collect();
        mean(&v)
    }

    pub fn select(
        &mut self,
        id: &str,
        choices: &[String],
        at: DateTime<Utc>,
        key: Option<&str>,
    ) -> Result<SelectionView, AppError> {
        if let Some(ev) = self.prior(key, id, EventKind::Selection)? {
            let selection: SelectionRecord = Self::payload(ev)?;
            let d = dirti(&selection, ScoreOptions::default())?;
            return Ok(SelectionView { selection, dirti: d });
        }
        let p = self.participant(id)?;
        let mx = self.matrix(id)?;
        if choices.is_empty() {
            return Err(trust::TrustError::NoSelection.into());
        }
        let se = self.baseline_se(p).ok_or_else(|| {
            AppError::domain("no-sleep-efficiency", "no se_pct in the baseline to size the sleep opportunity")
        })?;
        let mandatory = SleepOpportunity::from_se(se, &mx.matrix)?;
        let selection = record_selection(&mx.matrix, choices, Some(mandatory), at)?;
        let d = dirti(&selection, ScoreOptions::default())?;
        self.store.append(Some(id), EventKind::Selection, &selection, at, key.map(Into::into))?;
        Ok(SelectionView { selection, dirti: d })
    }

    pub fn set_targets(
        &mut self,
        id: &str,
        specs: &[TargetSpec],
        set_on: Option<NaiveDate>,
        at: DateTime<Utc>,
        key: Option<&str>,
    ) -> Result<Plan, AppError> {
        let p = self.participant(id)?;
        if let Some(ev) = self.prior(key, id, EventKind::TargetsSet)? {
            return Self::payload(ev);
        }
        let Some(sel) = &p.selection else {
            return Err(AppError::denied("no-selection-recorded", "select interventions before setting targets"));
        };
        let plan = tracker::set_targets(sel, specs, set_on.unwrap_or_else(|| at.date_naive()))?;
        self.store.append(Some(id), EventKind::TargetsSet, &plan, at, key.map(Into::into))?;
        Ok(plan)
    }

    fn plan(&self, p: &Participant) -> Result<Plan, AppError> {
        p.plan.clone().ok_or_else(|| AppError::denied("targets-not-set", "set targets before tracking"))
    }

    pub fn track(&self, id: &str, date: NaiveDate) -> Result<TrackerView, AppError> {
        let p = self.participant(id)?;
        let plan = self.plan(p)?;
        let data = &self.store.state().data;
        let status = tracker::daily_status(&plan, data, date);
        let dashboards =
            plan.targets.iter().filter_map(|t| tracker::dashboard(&plan, data, &t.metric_id, date)).collect();
        let progress = match &p.baseline {
            Some(b) => tracker::progress(&plan, data, b, date),
            None => Vec::new(),
        };
        Ok(TrackerView { status, dashboards, progress })
    }

    pub fn record_status(&mut self, status: &DailyStatus, at: DateTime<Utc>) -> Result<(), AppError> {
        self.store.append(Some(&status.participant_id), EventKind::DailyStatus, status, at, None)?;
        Ok(())
    }

    pub fn record_metrics<T: Serialize>(&mut self, report: &T, at: DateTime<Utc>) -> Result<(), AppError> {
        self.store.append(None, EventKind::MetricsComputed, report, at, None)?;
        Ok(())
    }

    pub fn validation(&self, id: &str, metric: &str) -> Result<ValidationPack, AppError> {
        let p = self.participant(id)?;
        let days: Vec<NaiveDate> = match &p.baseline {
            Some(b) => b.days.clone(),
            None => self.default_period(p, None, None)?.days().collect(),
        };
        Ok(validation_pack(&self.store.state().data, id, metric, &self.ruleset, &days)?)
    }

    /// Compliance over the intervention phase so far: from the tracking start
    /// to the participant's last observed day.
    fn compliance(&self, p: &Participant, opts: ScoreOptions) -> Result<(ComplianceRecord, DateRange), AppError> {
        let plan = self.plan(p)?;
        let baseline = p.baseline.as_ref().ok_or_else(|| AppError::denied("baseline-not-confirmed", "no baseline"))?;
        let data = &self.store.state().data;
        let last = data
            .dates(&p.participant_id)
            .into_iter()
            .next_back()
            .filter(|d| *d >= plan.start)
            .ok_or_else(|| AppError::domain("no-intervention-data", "no observations since tracking started"))?;
        let period = DateRange::new(plan.start, last)?;
        let mut scored = plan.clone();
        if !opts.include_mandatory {
            scored.targets.retain(|t| t.metric_id != SLEEP_OPPORTUNITY_METRIC);
        }
        Ok((assess_compliance(data, &scored, baseline, period)?, period))
    }

    pub fn cohort_metrics(&self, stage: Stage, opts: ScoreOptions) -> MetricsTable {
        let mut rows = Vec::new();
        let mut skipped = Vec::new();
        for p in self.store.state().participants.values() {
            let Some(sel) = &p.selection else { continue };
            let idx = match stage {
                Stage::Intention => dirti(sel, opts).map_err(AppError::from),
                Stage::FollowThrough => {
                    self.compliance(p, opts).and_then(|(c, _)| dafti(sel, &c, opts).map_err(AppError::from))
                }
            };
            match idx {
                Ok(i) => rows.push(MetricsRow {
                    participant: p.participant_id.clone(),
                    stage,
                    ml_mean: i.ml_mean,
                    rules_mean: i.rules_mean,
                    ratio: i.ratio,
                }),
                Err(e) => skipped.push(Skipped { participant: p.participant_id.clone(), reason: e.to_string() }),
            }
        }
        MetricsTable { stage, include_mandatory: opts.include_mandatory, rows, skipped }
    }

    pub fn cohort_doti(&self, opts: ScoreOptions) -> Result<DotiReport, AppError> {
        let data = &self.store.state().data;
        let mut cohort = Vec::new();
        let mut skipped = Vec::new();
        for p in self.store.state().participants.values() {
            let Some(sel) = &p.selection else { continue };
            let entry = (|| -> Result<CohortEntry, AppError> {
                let (c, period) = self.compliance(p, opts)?;
                let baseline =
                    p.baseline.as_ref().ok_or_else(|| AppError::denied("baseline-not-confirmed", "no baseline"))?;
                let days: Vec<NaiveDate> = period.days().filter(|d| !data.is_excluded(&p.participant_id, *d)).collect();
                let mut improvements = BTreeMap::new();
                for e in Endpoint::ALL {
                    let base: Vec<f64> = data
                        .series(&p.participant_id, e.metric_id(), &baseline.days)
                        .into_iter()
                        .map(|(_, v)| v)
                        .collect();
                    let during: Vec<f64> =
                        data.series(&p.participant_id, e.metric_id(), &days).into_iter().map(|(_, v)| v).collect();
                    if let Ok(imp) = trust::improvement(&base, &during, Goal::HigherIsBetter, e.metric_id()) {
                        improvements.insert(e, imp.improvement_pct);
                    }
                }
                if improvements.is_empty() {
                    return Err(AppError::domain("no-endpoint-data", "no endpoint improvement could be computed"));
                }
                Ok(CohortEntry {
                    participant: p.participant_id.clone(),
                    intention: dirti(sel, opts)?,
                    follow_through: dafti(sel, &c, opts)?,
                    improvements,
                })
            })();
            match entry {
                Ok(e) => cohort.push(e),
                Err(e) => skipped.push(Skipped { participant: p.participant_id.clone(), reason: e.to_string() }),
            }
        }
        let table = trust::doti(&cohort)?;
        Ok(DotiReport { include_mandatory: opts.include_mandatory, table, cohort, skipped })
    }
}
