//! The LoFM matrix: expert rule stars on the vertical axis, ML importance
//! buckets on the horizontal axis, one cell per (stars, bucket) pair.

mod render;

pub use render::{render, Format};

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ml::ImportanceMap;
use crate::pipeline::{range_str, DateRange};
use crate::registry::Endpoint;
use crate::rules::RuleAssessment;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatrixError {
    #[error("no-signal: every importance is zero")]
    NoSignal,
    #[error("empty assessments: nothing to place")]
    EmptyAssessments,
    #[error("provenance mismatch: {0}")]
    ProvenanceMismatch(String),
    #[error("duplicate intervention `{0}`")]
    DuplicateIntervention(String),
    #[error("unknown format `{0}`, expected text, json or svg")]
    UnknownFormat(String),
    #[error("invalid demarcations: {0}")]
    InvalidDemarcations(String),
    #[error("invalid matrix: {0}")]
    Invalid(String),
}

/// Importance thresholds separating the four ML buckets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Demarcations {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl Demarcations {
    pub fn new(t1: f64, t2: f64, t3: f64) -> Result<Self, MatrixError> {
        if !(t1.is_finite() && t2.is_finite() && t3.is_finite()) || !(0.0 < t1 && t1 < t2 && t2 < t3) {
            return Err(MatrixError::InvalidDemarcations(format!("need 0 < t1 < t2 < t3, got {t1}, {t2}, {t3}")));
        }
        Ok(Demarcations { t1, t2, t3 })
    }
}

impl TryFrom<[f64; 3]> for Demarcations {
    type Error = MatrixError;

    fn try_from([t1, t2, t3]: [f64; 3]) -> Result<Self, Self::Error> {
        Demarcations::new(t1, t2, t3)
    }
}

impl From<Demarcations> for [f64; 3] {
    fn from(d: Demarcations) -> Self {
        [d.t1, d.t2, d.t3]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub demarcations: Demarcations,
    pub warnings: Vec<String>,
}

/// Places t2 so that at least four features reach the top two columns.
pub fn calibrate(importances: &ImportanceMap) -> Result<Calibration, MatrixError> {
    let mut pos = importances.positive();
    if pos.is_empty() {
        return Err(MatrixError::NoSignal);
    }
    pos.sort_by(|a, b| b.total_cmp(a));
    let max = pos[0];
    let mut warnings = Vec::new();
    if pos.len() < 4 {
        warnings.push(format!("sparse signal: only {} positive importances", pos.len()));
    }
    let mut t2 = pos[pos.len().min(4) - 1];
    let mut t3 = t2 + (max - t2) / 2.0;
    if t3 <= t2 {
        // Everything at the top is tied: keep the tied group in bucket 3.
        t2 = max * (1.0 - 1e-9);
        t3 = max;
    }
    let mut t1 = crate::num::quantile(&pos, 0.25).unwrap_or(t2).max(1e-12);
    if t1 >= t2 {
        t1 = t2 / 2.0;
    }
    let demarcations = Demarcations::new(t1, t2, t3)?;
    Ok(Calibration { demarcations, warnings })
}

/// 0 below t1, 1 below t2, 2 below t3, otherwise 3. Lower edges are inclusive.
pub fn bucket(importance: f64, d: &Demarcations) -> u8 {
    if importance < d.t1 {
        0
    } else if importance < d.t2 {
        1
    } else if importance < d.t3 {
        2
    } else {
        3
    }
}

/// Where an axis's inputs came from; both axes must agree before fusing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSource {
    pub participant: String,
    #[serde(with = "range_str")]
    pub data_window: DateRange,
    pub objective: Endpoint,
}

#[derive(Debug, Clone, Copy)]
pub struct RulesAxis<'a> {
    pub source: &'a AxisSource,
    pub ruleset_version: &'a str,
    pub assessments: &'a [RuleAssessment],
}

#[derive(Debug, Clone, Copy)]
pub struct MlAxis<'a> {
    pub source: &'a AxisSource,
    pub model_id: &'a str,
    pub importances: &'a ImportanceMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LofmCell {
    pub stars: u8,
    pub bucket: u8,
    pub interventions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(with = "range_str")]
    pub data_window: DateRange,
    pub ruleset_version: String,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofmMatrix {
    pub participant: String,
    pub objective: Endpoint,
    pub demarcations: Demarcations,
    /// All sixteen cells, ordered by stars then bucket.
    pub cells: Vec<LofmCell>,
    pub provenance: Provenance,
}

/// One intervention's coordinates, used downstream for selection and trust.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub metric_id: String,
    pub stars: u8,
    pub bucket: u8,
}

fn check_sources(rules: &AxisSource, ml: &AxisSource) -> Result<(), MatrixError> {
    let mismatch = |what: &str, a: &dyn core::fmt::Display, b: &dyn core::fmt::Display| {
        Err(MatrixError::ProvenanceMismatch(format!("{what} differs: rules {a}, ml {b}")))
    };
    if rules.participant != ml.participant {
        return mismatch("participant", &rules.participant, &ml.participant);
    }
    if rules.data_window != ml.data_window {
        return mismatch("data window", &rules.data_window, &ml.data_window);
    }
    if rules.objective != ml.objective {
        return mismatch("objective", &rules.objective, &ml.objective);
    }
    Ok(())
}

/// Fuses the two axes. Features without an importance sit in bucket 0.
pub fn build(rules: RulesAxis<'_>, ml: MlAxis<'_>, demarcations: &Demarcations) -> Result<LofmMatrix, MatrixError> {
    check_sources(rules.source, ml.source)?;
    if rules.assessments.is_empty() {
        return Err(MatrixError::EmptyAssessments);
    }
    if rules.ruleset_version.is_empty() || ml.model_id.is_empty() {
        return Err(MatrixError::ProvenanceMismatch("empty ruleset version or model id".into()));
    }
    let mut cells: Vec<LofmCell> =
        (0..16u8).map(|i| LofmCell { stars: i / 4, bucket: i % 4, interventions: Vec::new() }).collect();
    let mut seen = BTreeSet::new();
    for a in rules.assessments {
        if !seen.insert(a.metric_id.as_str()) {
            return Err(MatrixError::DuplicateIntervention(a.metric_id.clone()));
        }
        let stars = a.stars.min(3);
        let b = bucket(ml.importances.get(&a.metric_id), demarcations);
        cells[usize::from(stars * 4 + b)].interventions.push(a.metric_id.clone());
    }
    for c in &mut cells {
        c.interventions.sort();
    }
    Ok(LofmMatrix {
        participant: rules.source.participant.clone(),
        objective: rules.source.objective,
        demarcations: *demarcations,
        cells,
        provenance: Provenance {
            data_window: rules.source.data_window,
            ruleset_version: rules.ruleset_version.to_string(),
            model_id: ml.model_id.to_string(),
        },
    })
}

/// Calibrates on the assessed interventions only, then builds.
pub fn assemble(rules: RulesAxis<'_>, ml: MlAxis<'_>) -> Result<(LofmMatrix, Vec<String>), MatrixError> {
    check_sources(rules.source, ml.source)?;
    let scoped = ml.importances.restrict(rules.assessments.iter().map(|a| a.metric_id.as_str()));
    let cal = calibrate(&scoped)?;
    let m = build(rules, ml, &cal.demarcations)?;
    Ok((m, cal.warnings))
}

impl LofmMatrix {
    pub fn cell(&self, stars: u8, bucket: u8) -> &LofmCell {
        &self.cells[usize::from(stars * 4 + bucket)]
    }

    pub fn placements(&self) -> impl Iterator<Item = Placement> + '_ {
        self.cells.iter().flat_map(|c| {
            c.interventions.iter().map(move |m| Placement { metric_id: m.clone(), stars: c.stars, bucket: c.bucket })
        })
    }

    pub fn placement(&self, metric_id: &str) -> Option<Placement> {
        self.placements().find(|p| p.metric_id == metric_id)
    }

    pub fn len(&self) -> usize {
        self.cells.iter().map(|c| c.interventions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Interventions where the two axes disagree.
    pub fn leap_of_faith(&self) -> Vec<&str> {
        self.cells
            .iter()
            .filter(|c| c.stars != c.bucket)
            .flat_map(|c| c.interventions.iter().map(String::as_str))
            .collect()
    }

    pub fn rules_angels(&self) -> usize {
        self.cells.iter().filter(|c| c.stars == 0).map(|c| c.interventions.len()).sum()
    }

    pub fn ml_angels(&self) -> usize {
        self.cells.iter().filter(|c| c.bucket == 0).map(|c| c.interventions.len()).sum()
    }

    /// Structural checks for matrices read from outside.
    pub fn validate(&self) -> Result<(), MatrixError> {
        if self.cells.len() != 16 {
            return Err(MatrixError::Invalid(format!("{} cells, expected 16", self.cells.len())));
        }
        let mut seen = BTreeSet::new();
        for (i, c) in self.cells.iter().enumerate() {
            if usize::from(c.stars) * 4 + usize::from(c.bucket) != i || c.stars > 3 || c.bucket > 3 {
                return Err(MatrixError::Invalid(format!("cell {i} out of order")));
            }
            for m in &c.interventions {
                if !seen.insert(m.as_str()) {
                    return Err(MatrixError::DuplicateIntervention(m.clone()));
                }
            }
        }
        if self.provenance.ruleset_version.is_empty() || self.provenance.model_id.is_empty() {
            return Err(MatrixError::Invalid("empty provenance".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, MatrixError> {
        let m: LofmMatrix = serde_json::from_str(s).map_err(|e| MatrixError::Invalid(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}
