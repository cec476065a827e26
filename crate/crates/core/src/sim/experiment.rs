use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Days, NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    gen_baseline, gen_truth, simulate_intervention, stream, GroundTruth, MlSignal, SimConfig, SimError, SALT_ML,
    SALT_SELECT, SIM_SOURCE,
};
use crate::matrix::{self, AxisSource, LofmMatrix, MlAxis, RulesAxis};
use crate::ml::{self, Hyperparams, ImportanceMap};
use crate::pipeline::{baseline_window, BaselineCriteria, Dataset, DateRange};
use crate::registry::Endpoint;
use crate::rules::{default_ruleset, Bound, RuleAssessment};
use crate::tracker::{set_targets, Op, TargetKind, TargetSpec};
use crate::trust::{
    self, assess_compliance, dafti, dirti, record_selection, CohortEntry, ComplianceRecord, DotiTable, Goal,
    ScoreOptions, SelectionRecord, SleepOpportunity, TrustIndex, MAX_FREE_CHOICES,
};

/// Picks up to three interventions. Each candidate scores
/// `lambda * bucket + (1 - lambda) * stars`; picks are drawn without
/// replacement with probability proportional to `exp(score / temperature)`.
/// A zero temperature takes the top scores, breaking ties at random.
pub fn simulate_selection(
    matrix: &LofmMatrix,
    lambda: f64,
    temperature: f64,
    mandatory: SleepOpportunity,
    rng: &mut ChaCha8Rng,
    at: chrono::DateTime<chrono::Utc>,
) -> Result<SelectionRecord, SimError> {
    let mut pool: Vec<(String, f64)> = matrix
        .placements()
        .filter(|p| p.metric_id != trust::SLEEP_OPPORTUNITY_METRIC)
        .map(|p| {
            let s = lambda * f64::from(p.bucket) + (1.0 - lambda) * f64::from(p.stars);
            (p.metric_id, s)
        })
        .collect();
    if pool.is_empty() {
        return Err(SimError::EmptyMatrix);
    }
    pool.shuffle(rng);
    let take = MAX_FREE_CHOICES.min(pool.len());
    let mut picks = Vec::with_capacity(take);
    if temperature == 0.0 {
        // Stable sort keeps the shuffled order among equal scores.
        pool.sort_by(|a, b| b.1.total_cmp(&a.1));
        picks.extend(pool.into_iter().take(take).map(|p| p.0));
    } else {
        for _ in 0..take {
            let top = pool.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = pool.iter().map(|p| libm::exp((p.1 - top) / temperature)).collect();
            let mut r = rng.random::<f64>() * w.iter().sum::<f64>();
            let mut k = w.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                if r < *wi {
                    k = i;
                    break;
                }
                r -= wi;
            }
            picks.push(pool.remove(k).0);
        }
    }
    Ok(record_selection(matrix, &picks, Some(mandatory), at)?)
}

/// Target for a chosen intervention: its best-practice bound.
fn target_for(metric: &str, bound: Bound) -> Result<TargetSpec, SimError> {
    let kind = match bound {
        Bound::AtMost(v) => TargetKind::Threshold { op: Op::Le, value: v },
        Bound::AtLeast(v) => TargetKind::Threshold { op: Op::Ge, value: v },
        Bound::Between(min, max) => TargetKind::Range { min, max },
    };
    Ok(TargetSpec::new(metric, kind)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantOutcome {
    pub participant_id: String,
    pub matrix: LofmMatrix,
    pub selection: SelectionRecord,
    pub followed: Vec<String>,
    pub compliance: ComplianceRecord,
    pub dirti: TrustIndex,
    pub dafti: TrustIndex,
    pub improvements: BTreeMap<Endpoint, f64>,
    /// Rank agreement between trained importances and true effect sizes.
    pub importance_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: SimConfig,
    pub participants: Vec<ParticipantOutcome>,
    /// Absent when the cohort is too small to correlate.
    pub doti: Option<DotiTable>,
    pub mean_importance_spearman: Option<f64>,
    pub truths: Vec<GroundTruth>,
    pub data: Dataset,
}

impl ExperimentReport {
    pub fn cohort(&self) -> Vec<CohortEntry> {
        self.participants
            .iter()
            .map(|p| CohortEntry {
                participant: p.participant_id.clone(),
                intention: p.dirti,
                follow_through: p.dafti,
                improvements: p.improvements.clone(),
            })
            .collect()
    }
}

fn values(data: &Dataset, pid: &str, metric: &str, days: &[NaiveDate]) -> Vec<f64> {
    data.series(pid, metric, days).into_iter().map(|(_, v)| v).collect()
}

fn run_participant(
    cfg: &SimConfig,
    truth: &GroundTruth,
    i: usize,
    data: &mut Dataset,
) -> Result<ParticipantOutcome, SimError> {
    let ruleset = default_ruleset();
    let pid = truth.participant_id.clone();
    let criteria =
        BaselineCriteria { required_sources: alloc::vec![SIM_SOURCE.to_string()], ..BaselineCriteria::default() };
    let baseline = baseline_window(data, &pid, &criteria)?;

    let series: BTreeMap<String, Vec<f64>> =
        ruleset.metric_ids().map(|m| (m.to_string(), values(data, &pid, m, &baseline.days))).collect();
    let assessed = ruleset.assess_all(&series);
    let assessments: Vec<RuleAssessment> = assessed.assessments.into_values().collect();

    let features: Vec<String> = truth.features.iter().map(|f| f.metric_id.clone()).collect();
    let table = ml::build_table(data, &pid, &baseline, cfg.objective, &features)?;
    let model = ml::train(&table, &Hyperparams::default(), cfg.seed ^ i as u64)?;
    let trained = ml::importance(&model);

    let mut ml_rng = stream(cfg.seed, i, SALT_ML);
    let raw: Vec<f64> = match cfg.ml_signal {
        MlSignal::Truth => features.iter().map(|f| truth.feature(f).map_or(0.0, |t| t.sensitivity)).collect(),
        MlSignal::Trained => features.iter().map(|f| trained.get(f)).collect(),
    };
    let top = raw.iter().copied().fold(0.0, f64::max);
    let mixed = features.iter().zip(&raw).map(|(f, r)| {
        let u: f64 = ml_rng.random();
        let signal = if top > 0.0 { r / top } else { u };
        (f.clone(), cfg.ml_fidelity * signal + (1.0 - cfg.ml_fidelity) * u)
    });
    let (effective, _) = ImportanceMap::from_entries(mixed);

    let source = AxisSource { participant: pid.clone(), data_window: baseline.window, objective: cfg.objective };
    let model_id = model.model_id();
    let (matrix, _) = matrix::assemble(
        RulesAxis { source: &source, ruleset_version: &ruleset.version, assessments: &assessments },
        MlAxis { source: &source, model_id: &model_id, importances: &effective },
    )?;

    let se = crate::num::mean(&values(data, &pid, "se_pct", &baseline.days)).unwrap_or(85.0);
    let mandatory = SleepOpportunity::from_se(se, &matrix)?;
    let decided = baseline.window.to;
    let at = decided.and_time(NaiveTime::from_hms_opt(9, 0, 0).unwrap_or_default()).and_utc();
    let mut sel_rng = stream(cfg.seed, i, SALT_SELECT);
    let selection = simulate_selection(&matrix, cfg.lambda, cfg.temperature, mandatory, &mut sel_rng, at)?;

    let mut specs = Vec::new();
    for c in &selection.chosen {
        if let Some(rule) = ruleset.rule(&c.metric_id) {
            specs.push(target_for(&c.metric_id, rule.best_practice)?);
        }
    }
    let plan = set_targets(&selection, &specs, decided)?;

    let followed = simulate_intervention(cfg, truth, i, &selection, data);
    let first = plan.start;
    let last = first.checked_add_days(Days::new(cfg.intervention_days as u64 - 1)).unwrap_or(first);
    let period = DateRange::new(first, last)?;
    let compliance = assess_compliance(data, &plan, &baseline, period)?;
    let opts = ScoreOptions { include_mandatory: cfg.include_mandatory };
    let intention = dirti(&selection, opts)?;
    let follow = dafti(&selection, &compliance, opts)?;

    let days: Vec<NaiveDate> = period.days().collect();
    let mut improvements = BTreeMap::new();
    for e in Endpoint::ALL {
        let base = values(data, &pid, e.metric_id(), &baseline.days);
        let during = values(data, &pid, e.metric_id(), &days);
        let imp = trust::improvement(&base, &during, Goal::HigherIsBetter, e.metric_id())?;
        improvements.insert(e, imp.improvement_pct);
    }

    let truth_effect: Vec<f64> = features.iter().map(|f| truth.feature(f).map_or(0.0, |t| t.sensitivity)).collect();
    let got: Vec<f64> = features.iter().map(|f| trained.get(f)).collect();
    Ok(ParticipantOutcome {
        participant_id: pid,
        matrix,
        selection,
        followed,
        compliance,
        dirti: intention,
        dafti: follow,
        improvements,
        importance_spearman: crate::num::spearman(&got, &truth_effect),
    })
}

/// Generates a cohort, runs every participant through baseline, matrix,
/// selection and intervention, then scores trust against outcomes.
pub fn run_experiment(cfg: &SimConfig) -> Result<ExperimentReport, SimError> {
    cfg.validate()?;
    let ruleset = default_ruleset();
    let mut data = Dataset::new();
    let mut truths = Vec::with_capacity(cfg.participants);
    let mut participants = Vec::with_capacity(cfg.participants);
    for i in 0..cfg.participants {
        let truth = gen_truth(cfg, &ruleset, i)?;
        gen_baseline(cfg, &truth, i, &mut data);
        participants.push(run_participant(cfg, &truth, i, &mut data)?);
        truths.push(truth);
    }
    let mut report = ExperimentReport {
        config: cfg.clone(),
        participants,
        doti: None,
        mean_importance_spearman: None,
        truths,
        data,
    };
    let rho: Vec<f64> = report.participants.iter().filter_map(|p| p.importance_spearman).collect();
    report.mean_importance_spearman = crate::num::mean(&rho);
    let cohort = report.cohort();
    report.doti = match trust::doti(&cohort) {
        Ok(t) => Some(t),
        Err(trust::TrustError::CohortTooSmall(_)) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(report)
}
