use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::{Ratio, TrustError, TrustIndex};
use crate::registry::Endpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Ml,
    Rules,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Intention,
    FollowThrough,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Ml => "ml",
            Model::Rules => "rules",
        })
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Intention => "intention",
            Stage::FollowThrough => "follow_through",
        })
    }
}

/// One participant's scores at both stages and their endpoint outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub participant: String,
    pub intention: TrustIndex,
    pub follow_through: TrustIndex,
    /// Last-seven-days improvement per endpoint, in percent.
    pub improvements: BTreeMap<Endpoint, f64>,
}

impl CohortEntry {
    fn score(&self, model: Model, stage: Stage) -> f64 {
        let idx = match stage {
            Stage::Intention => &self.intention,
            Stage::FollowThrough => &self.follow_through,
        };
        match model {
            Model::Ml => idx.ml_mean,
            Model::Rules => idx.rules_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotiCell {
    pub endpoint: Endpoint,
    pub model: Model,
    pub stage: Stage,
    pub r2: Ratio,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDoti {
    pub endpoint: Endpoint,
    pub stage: Stage,
    pub ratio: Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotiTable {
    pub participants: usize,
    pub cells: Vec<DotiCell>,
    pub relative: Vec<RelativeDoti>,
}

impl DotiTable {
    pub fn r2(&self, endpoint: Endpoint, model: Model, stage: Stage) -> Ratio {
        self.cells
            .iter()
            .find(|c| c.endpoint == endpoint && c.model == model && c.stage == stage)
            .map_or(Ratio::Undefined, |c| c.r2)
    }

    pub fn relative(&self, endpoint: Endpoint, stage: Stage) -> Ratio {
        self.relative.iter().find(|r| r.endpoint == endpoint && r.stage == stage).map_or(Ratio::Undefined, |r| r.ratio)
    }
}

pub const MIN_COHORT: usize = 3;

/// Squared Pearson correlation between each model's mean scores and endpoint
/// improvement, per stage, plus ML relative to rules.
pub fn doti(cohort: &[CohortEntry]) -> Result<DotiTable, TrustError> {
    if cohort.len() < MIN_COHORT {
        return Err(TrustError::CohortTooSmall(cohort.len()));
    }
    let mut cells = Vec::new();
    let mut relative = Vec::new();
    for endpoint in [Endpoint::Tst, Endpoint::Sws] {
        let rows: Vec<&CohortEntry> = cohort.iter().filter(|e| e.improvements.contains_key(&endpoint)).collect();
        let y: Vec<f64> = rows.iter().map(|e| e.improvements[&endpoint]).collect();
        for stage in [Stage::Intention, Stage::FollowThrough] {
            let mut per_model = [Ratio::Undefined; 2];
            for (slot, model) in [Model::Ml, Model::Rules].into_iter().enumerate() {
                let x: Vec<f64> = rows.iter().map(|e| e.score(model, stage)).collect();
                let r2 = if rows.len() < MIN_COHORT { None } else { crate::num::pearson_r2(&x, &y) };
                per_model[slot] = r2.into();
                cells.push(DotiCell { endpoint, model, stage, r2: per_model[slot], n: rows.len() });
            }
            let ratio = match (per_model[0], per_model[1]) {
                (Ratio::Defined(ml), Ratio::Defined(rules)) => Ratio::of(ml, rules),
                _ => Ratio::Undefined,
            };
            relative.push(RelativeDoti { endpoint, stage, ratio });
        }
    }
    Ok(DotiTable { participants: cohort.len(), cells, relative })
}
