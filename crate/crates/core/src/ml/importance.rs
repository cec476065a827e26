use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TrainedModel;

/// Feature → mean split gain. Features that were never split on are 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImportanceMap(BTreeMap<String, f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRejection {
    pub feature: String,
    pub reason: String,
}

impl ImportanceMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validated construction: negative, non-finite and duplicate entries are
    /// rejected individually.
    pub fn from_entries<I>(entries: I) -> (ImportanceMap, Vec<ImportanceRejection>)
    where
        I: IntoIterator<Item = (String, f64)>,
    {
        let mut map = BTreeMap::new();
        let mut rejected = Vec::new();
        for (feature, value) in entries {
            let reason = if !value.is_finite() {
                Some(format!("non-finite importance {value}"))
            } else if value < 0.0 {
                Some(format!("negative importance {value}"))
            } else if map.contains_key(&feature) {
                Some("duplicate feature".into())
            } else {
                None
            };
            match reason {
                Some(reason) => rejected.push(ImportanceRejection { feature, reason }),
                None => {
                    map.insert(feature, value);
                }
            }
        }
        (ImportanceMap(map), rejected)
    }

    pub fn get(&self, feature: &str) -> f64 {
        self.0.get(feature).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn positive(&self) -> Vec<f64> {
        self.0.values().copied().filter(|v| *v > 0.0).collect()
    }

    /// Restricted to the given features; missing ones read as 0.
    pub fn restrict<'a>(&self, features: impl IntoIterator<Item = &'a str>) -> ImportanceMap {
        ImportanceMap(features.into_iter().map(|f| (f.into(), self.get(f))).collect())
    }

    /// Features by descending importance, ties by name.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.iter().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        v
    }
}

/// Mean gain over every split that used each feature.
pub fn importance(model: &TrainedModel) -> ImportanceMap {
    let p = model.features.len();
    let mut sum = vec![0.0; p];
    let mut count = vec![0usize; p];
    for (f, gain) in model.trees.iter().flat_map(|t| t.splits()) {
        sum[f] += gain;
        count[f] += 1;
    }
    ImportanceMap(
        model
            .features
            .iter()
            .enumerate()
            .map(|(i, name)| (name.clone(), if count[i] == 0 { 0.0 } else { sum[i] / count[i] as f64 }))
            .collect(),
    )
}
