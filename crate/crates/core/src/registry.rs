//! Known metrics, their units and value bounds.

use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricRole {
    /// Behavioural or environmental input a participant can change.
    Feature,
    /// Sleep outcome an objective can be set on.
    Endpoint,
    /// Tracked but neither a model input nor an objective.
    Auxiliary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricDef {
    pub id: &'static str,
    pub unit: &'static str,
    pub role: MetricRole,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl MetricDef {
    pub fn accepts(&self, value: f64) -> bool {
        value.is_finite() && self.min.is_none_or(|lo| value >= lo) && self.max.is_none_or(|hi| value <= hi)
    }
}

const fn def(id: &'static str, unit: &'static str, role: MetricRole, min: Option<f64>, max: Option<f64>) -> MetricDef {
    MetricDef { id, unit, role, min, max }
}

use MetricRole::*;

const NONNEG: Option<f64> = Some(0.0);
const DAY_MIN: Option<f64> = Some(1440.0);
const PCT: Option<f64> = Some(100.0);

/// Registry of every metric the pipeline accepts, sorted by id.
pub const METRICS: &[MetricDef] = &[
    def("alcohol_units", "units", Feature, NONNEG, None),
    def("bedroom_lux", "lux", Feature, NONNEG, None),
    def("bedroom_noise_db", "dB", Feature, NONNEG, None),
    def("bedroom_temp_c", "C", Feature, Some(-10.0), Some(45.0)),
    def("bedtime_var_min", "min", Feature, NONNEG, DAY_MIN),
    def("caffeine_after_14_mg", "mg", Feature, NONNEG, None),
    def("caffeine_mg", "mg", Feature, NONNEG, None),
    def("evening_fluid_ml", "ml", Feature, NONNEG, None),
    def("evening_light_luxh", "lux_h", Feature, NONNEG, None),
    def("exercise_min", "min", Feature, NONNEG, DAY_MIN),
    def("last_meal_gap_min", "min", Feature, NONNEG, DAY_MIN),
    def("nap_min", "min", Feature, NONNEG, DAY_MIN),
    def("natural_light_luxh", "lux_h", Feature, NONNEG, None),
    def("relaxation_min", "min", Feature, NONNEG, DAY_MIN),
    def("screen_time_min", "min", Feature, NONNEG, DAY_MIN),
    def("se_pct", "%", Auxiliary, NONNEG, PCT),
    def("sws_min", "min", Endpoint, NONNEG, DAY_MIN),
    def("time_in_bed_min", "min", Auxiliary, NONNEG, DAY_MIN),
    def("tst_min", "min", Endpoint, NONNEG, DAY_MIN),
    def("wake_time_min", "min", Feature, NONNEG, DAY_MIN),
];

pub fn lookup(id: &str) -> Option<&'static MetricDef> {
    METRICS.binary_search_by(|m| m.id.cmp(id)).ok().map(|i| &METRICS[i])
}

pub fn features() -> impl Iterator<Item = &'static MetricDef> {
    METRICS.iter().filter(|m| m.role == Feature)
}

/// Sleep endpoint that a model objective is set on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    #[serde(rename = "tst_min")]
    Tst,
    #[serde(rename = "sws_min")]
    Sws,
}

impl Endpoint {
    pub const ALL: [Endpoint; 2] = [Endpoint::Tst, Endpoint::Sws];

    pub fn metric_id(self) -> &'static str {
        match self {
            Endpoint::Tst => "tst_min",
            Endpoint::Sws => "sws_min",
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.metric_id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown endpoint `{0}` (expected tst_min or sws_min)")]
pub struct UnknownEndpoint(pub alloc::string::String);

impl FromStr for Endpoint {
    type Err = UnknownEndpoint;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tst_min" | "tst" => Ok(Endpoint::Tst),
            "sws_min" | "sws" => Ok(Endpoint::Sws),
            other => Err(UnknownEndpoint(other.into())),
        }
    }
}
