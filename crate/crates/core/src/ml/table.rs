use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::MlError;
use crate::pipeline::{BaselineWindow, Dataset, MIN_BASELINE_DAYS};
use crate::registry::Endpoint;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedDay {
    pub date: NaiveDate,
    pub reason: String,
}

/// Complete baseline days as rows, behaviour metrics as columns, the
/// objective endpoint as target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTable {
    pub features: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub objective: Option<Endpoint>,
    pub dropped: Vec<DroppedDay>,
}

impl TrainingTable {
    /// In-memory table without dates (fixtures, simulations, interop).
    pub fn from_rows(features: Vec<String>, rows: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self, MlError> {
        if rows.len() != target.len() {
            return Err(MlError::InvalidTable(format!("{} rows but {} targets", rows.len(), target.len())));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != features.len()) {
            return Err(MlError::InvalidTable(format!(
                "row {bad} has {} cells, expected {}",
                rows[bad].len(),
                features.len()
            )));
        }
        if rows.iter().flatten().chain(&target).any(|v| !v.is_finite()) {
            return Err(MlError::InvalidTable("non-finite cell".into()));
        }
        Ok(TrainingTable { features, dates: Vec::new(), rows, target, objective: None, dropped: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> TrainingTable {
        TrainingTable {
            features: self.features.clone(),
            dates: if self.dates.is_empty() { Vec::new() } else { idx.iter().map(|&i| self.dates[i]).collect() },
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            objective: self.objective,
            dropped: Vec::new(),
        }
    }
}

/// Builds the training table from validated baseline days. Days missing the
/// target or any feature are dropped and reported, never imputed.
pub fn build_table(
    data: &Dataset,
    participant: &str,
    baseline: &BaselineWindow,
    objective: Endpoint,
    features: &[String],
) -> Result<TrainingTable, MlError> {
    let mut table = TrainingTable {
        features: features.to_vec(),
        dates: Vec::new(),
        rows: Vec::new(),
        target: Vec::new(),
        objective: Some(objective),
        dropped: Vec::new(),
    };
    'days: for &date in &baseline.days {
        if data.is_excluded(participant, date) {
            table.dropped.push(DroppedDay { date, reason: "excluded".into() });
            continue;
        }
        let Some(target) = data.daily_value(participant, date, objective.metric_id()) else {
            table.dropped.push(DroppedDay { date, reason: format!("missing {objective}") });
            continue;
        };
        let mut row = Vec::with_capacity(features.len());
        for f in features {
            match data.daily_value(participant, date, f) {
                Some(v) => row.push(v),
                None => {
                    table.dropped.push(DroppedDay { date, reason: format!("missing {f}") });
                    continue 'days;
                }
            }
        }
        table.dates.push(date);
        table.rows.push(row);
        table.target.push(target);
    }
    if table.rows.len() < MIN_BASELINE_DAYS {
        return Err(MlError::InsufficientTrainingData { rows: table.rows.len(), required: MIN_BASELINE_DAYS });
    }
    Ok(table)
}
