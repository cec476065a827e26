//! Synthetic cohorts with known ground truth, used to check that the trust
//! metrics reward the model that actually tracks outcomes.

mod experiment;

pub use experiment::{run_experiment, simulate_selection, ExperimentReport, ParticipantOutcome};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::pipeline::{Dataset, Observation};
use crate::registry::{self, Endpoint};
use crate::rules::{Bound, Ruleset};
use crate::trust::SelectionRecord;

pub const SIM_SOURCE: &str = "sim";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("empty matrix")]
    EmptyMatrix,
    #[error("infeasible bounds for `{0}`")]
    InfeasibleBounds(String),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error(transparent)]
    Ml(#[from] crate::ml::MlError),
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
    #[error(transparent)]
    Trust(#[from] crate::trust::TrustError),
    #[error(transparent)]
    Tracker(#[from] crate::tracker::TrackerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub participants: usize,
    pub baseline_days: usize,
    pub intervention_days: usize,
    /// Weight on the ML bucket (vs rule stars) when choosing.
    pub lambda: f64,
    /// Softmax temperature for choosing; 0 picks greedily.
    pub temperature: f64,
    pub follow_prob: f64,
    pub seed: u64,
    /// 1: importances come straight from the trained model; 0: pure noise.
    pub ml_fidelity: f64,
    /// 1: baseline violation rates rank with true sensitivity; 0: random.
    pub rules_fidelity: f64,
    pub noise_sd: f64,
    /// Endpoint minutes gained per attempted intervention, independent of
    /// what was attempted.
    pub placebo: f64,
    /// Multiplies every true sensitivity; 0 leaves only the placebo effect.
    pub sensitivity_scale: f64,
    pub strong_features: usize,
    pub objective: Endpoint,
    pub include_mandatory: bool,
    pub start: NaiveDate,
    pub ml_signal: MlSignal,
}

/// What the ML axis blends with noise at `ml_fidelity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlSignal {
    /// True per-sd effect sizes, mirroring how rule violations are placed.
    #[default]
    Truth,
    /// Gain importances of the participant's trained model.
    Trained,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            participants: 10,
            baseline_days: 31,
            intervention_days: 28,
            lambda: 0.3,
            temperature: 1.0,
            follow_prob: 0.8,
            seed: 42,
            ml_fidelity: 1.0,
            rules_fidelity: 1.0,
            noise_sd: 10.0,
            placebo: 0.0,
            sensitivity_scale: 1.0,
            strong_features: 4,
            objective: Endpoint::Tst,
            include_mandatory: false,
            start: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap_or_default(),
            ml_signal: MlSignal::Truth,
        }
    }
}

impl SimConfig {
    /// Placebo-only cohort: attempting anything helps, nothing specific does.
    pub fn placebo_null() -> Self {
        SimConfig { participants: 20, sensitivity_scale: 0.0, placebo: 5.0, ..SimConfig::default() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let unit = |name: &str, v: f64| {
            (0.0..=1.0).contains(&v).then_some(()).ok_or(format!("{name} must be in [0,1], got {v}"))
        };
        for (n, v) in [
            ("lambda", self.lambda),
            ("follow_prob", self.follow_prob),
            ("ml_fidelity", self.ml_fidelity),
            ("rules_fidelity", self.rules_fidelity),
        ] {
            if let Err(m) = unit(n, v) {
                return bad(m);
            }
        }
        if self.participants == 0 {
            return bad("participants must be >= 1".into());
        }
        if self.baseline_days < crate::pipeline::MIN_BASELINE_DAYS {
            return bad(format!("baseline_days must be >= 28, got {}", self.baseline_days));
        }
        if self.intervention_days < crate::trust::LAST_DAYS {
            return bad(format!("intervention_days must be >= 7, got {}", self.intervention_days));
        }
        if !(self.temperature >= 0.0 && self.noise_sd >= 0.0 && self.placebo >= 0.0 && self.sensitivity_scale >= 0.0) {
            return bad("temperature, noise_sd, placebo and sensitivity_scale must be >= 0".into());
        }
        if self.strong_features > NOMINAL_SD.len() {
            return bad(format!("strong_features must be <= {}", NOMINAL_SD.len()));
        }
        Ok(())
    }
}

/// Typical day-to-day spread of each behaviour, in metric units.
const NOMINAL_SD: [(&str, f64); 16] = [
    ("alcohol_units", 1.0),
    ("bedroom_lux", 3.0),
    ("bedroom_noise_db", 5.0),
    ("bedroom_temp_c", 1.5),
    ("bedtime_var_min", 25.0),
    ("caffeine_after_14_mg", 40.0),
    ("caffeine_mg", 80.0),
    ("evening_fluid_ml", 150.0),
    ("evening_light_luxh", 120.0),
    ("exercise_min", 15.0),
    ("last_meal_gap_min", 50.0),
    ("nap_min", 20.0),
    ("natural_light_luxh", 1500.0),
    ("relaxation_min", 10.0),
    ("screen_time_min", 25.0),
    ("wake_time_min", 40.0),
];

/// Shift of a followed behaviour, in sd, once fully adopted.
pub const FOLLOW_SHIFT_SD: f64 = 1.5;
/// Slide of a chosen-but-abandoned behaviour, in sd, away from the goal.
pub const LAPSE_SHIFT_SD: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTruth {
    pub metric_id: String,
    pub mean: f64,
    pub sd: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Endpoint minutes per sd moved in the better direction.
    pub sensitivity: f64,
    /// +1 when increasing the behaviour is better, −1 otherwise.
    pub sign: f64,
    /// For range goals, the point a followed behaviour moves toward.
    pub center: Option<f64>,
    /// Endpoint units per behaviour unit.
    pub w_tst: f64,
    pub w_sws: f64,
}

impl FeatureTruth {
    fn clamp(&self, v: f64) -> f64 {
        let v = self.min.map_or(v, |m| v.max(m));
        self.max.map_or(v, |m| v.min(m))
    }

    /// Largest move toward the goal for a followed intervention.
    fn follow_shift(&self) -> f64 {
        let full = FOLLOW_SHIFT_SD * self.sd;
        match self.center {
            Some(c) => self.sign * full.min((self.mean - c).abs()),
            None => self.sign * full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub participant_id: String,
    pub features: Vec<FeatureTruth>,
    pub tst_base: f64,
    pub sws_base: f64,
    pub noise_sd: f64,
    pub sws_noise_sd: f64,
    pub placebo: f64,
}

impl GroundTruth {
    pub fn feature(&self, metric: &str) -> Option<&FeatureTruth> {
        self.features.iter().find(|f| f.metric_id == metric)
    }

    /// Noise-free endpoint for one day's behaviour values (same order as
    /// `features`) and number of attempted interventions.
    pub fn endpoint(&self, endpoint: Endpoint, behaviour: &[f64], attempted: f64) -> f64 {
        let (base, w): (f64, fn(&FeatureTruth) -> f64) = match endpoint {
            Endpoint::Tst => (self.tst_base, |f| f.w_tst),
            Endpoint::Sws => (self.sws_base, |f| f.w_sws),
        };
        base + self.features.iter().zip(behaviour).map(|(f, x)| w(f) * (x - f.mean)).sum::<f64>()
            + self.placebo * attempted
    }
}

/// Normal quantile via the logistic approximation Φ⁻¹(p) ≈ logit(p)/1.702.
fn probit(p: f64) -> f64 {
    libm::log(p / (1.0 - p)) / 1.702
}

fn stream(seed: u64, participant: usize, salt: u64) -> ChaCha8Rng {
    let mixed = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((participant as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(salt.wrapping_mul(0x94D0_49BB_1331_11EB));
    ChaCha8Rng::seed_from_u64(mixed)
}

pub(crate) const SALT_TRUTH: u64 = 1;
pub(crate) const SALT_BASELINE: u64 = 2;
pub(crate) const SALT_ML: u64 = 3;
pub(crate) const SALT_SELECT: u64 = 4;
pub(crate) const SALT_FOLLOW: u64 = 5;

pub fn participant_id(i: usize) -> String {
    format!("S{:02}", i + 1)
}

/// Draws one participant's ground truth. Baseline means are placed so each
/// behaviour's chance of breaking best practice blends true sensitivity
/// (weight `rules_fidelity`) with noise.
pub fn gen_truth(cfg: &SimConfig, ruleset: &Ruleset, i: usize) -> Result<GroundTruth, SimError> {
    let mut rng = stream(cfg.seed, i, SALT_TRUTH);
    let n = NOMINAL_SD.len();
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let mut sens = alloc::vec![0.0; n];
    for (rank, &k) in order.iter().enumerate() {
        sens[k] = if rank < cfg.strong_features { rng.random_range(8.0..20.0) } else { rng.random_range(0.0..1.0) };
        sens[k] *= cfg.sensitivity_scale;
    }
    let max_s = sens.iter().copied().fold(0.0, f64::max);
    let mut features = Vec::with_capacity(n);
    for (k, (metric, sd)) in NOMINAL_SD.iter().enumerate() {
        let def = registry::lookup(metric).ok_or_else(|| SimError::InfeasibleBounds(metric.to_string()))?;
        let rule = ruleset
            .rule(metric)
            .ok_or_else(|| SimError::InvalidConfig(format!("ruleset has no rule for `{metric}`")))?;
        let s_hat = if max_s > 0.0 { sens[k] / max_s } else { 0.0 };
        let u: f64 = rng.random();
        let o = (cfg.rules_fidelity * s_hat + (1.0 - cfg.rules_fidelity) * u).clamp(0.02, 0.98);
        let z = probit(o);
        let (mean, sign, center) = match rule.best_practice {
            Bound::AtMost(b) => (b + sd * z, -1.0, None),
            Bound::AtLeast(b) => (b - sd * z, 1.0, None),
            Bound::Between(lo, hi) => {
                let c = (lo + hi) / 2.0;
                (f64::max(hi + sd * z, c), -1.0, Some(c))
            }
        };
        let mean = match (def.min, def.max) {
            (Some(lo), Some(hi)) if lo >= hi => return Err(SimError::InfeasibleBounds(metric.to_string())),
            (lo, hi) => {
                let m = lo.map_or(mean, |l| mean.max(l));
                hi.map_or(m, |h| m.min(h))
            }
        };
        let sws_s = 0.25 * sens[k] * rng.random_range(0.5..1.5);
        features.push(FeatureTruth {
            metric_id: metric.to_string(),
            mean,
            sd: *sd,
            min: def.min,
            max: def.max,
            sensitivity: sens[k],
            sign,
            center,
            w_tst: sens[k] * sign / sd,
            w_sws: sws_s * sign / sd,
        });
    }
    Ok(GroundTruth {
        participant_id: participant_id(i),
        features,
        tst_base: rng.random_range(380.0..430.0),
        sws_base: rng.random_range(70.0..100.0),
        noise_sd: cfg.noise_sd,
        sws_noise_sd: cfg.noise_sd / 2.0,
        placebo: cfg.placebo,
    })
}

fn push_day(data: &mut Dataset, pid: &str, date: NaiveDate, metric: &str, value: f64) {
    data.insert(Observation {
        participant_id: pid.into(),
        date,
        metric_id: metric.into(),
        value,
        source: SIM_SOURCE.into(),
        coverage_pct: 100.0,
    });
}

/// Writes one day of behaviour, endpoints and sleep efficiency.
fn emit_day(
    data: &mut Dataset,
    truth: &GroundTruth,
    date: NaiveDate,
    behaviour: &[f64],
    attempted: f64,
    rng: &mut ChaCha8Rng,
) {
    let pid = truth.participant_id.as_str();
    for (f, x) in truth.features.iter().zip(behaviour) {
        push_day(data, pid, date, &f.metric_id, *x);
    }
    let e1: f64 = rng.sample(StandardNormal);
    let e2: f64 = rng.sample(StandardNormal);
    let e3: f64 = rng.sample(StandardNormal);
    let tst = (truth.endpoint(Endpoint::Tst, behaviour, attempted) + truth.noise_sd * e1).clamp(0.0, 1440.0);
    let sws = (truth.endpoint(Endpoint::Sws, behaviour, attempted) + truth.sws_noise_sd * e2).clamp(0.0, 1440.0);
    let se = (88.0 + 3.0 * e3).clamp(50.0, 99.0);
    push_day(data, pid, date, "tst_min", tst);
    push_day(data, pid, date, "sws_min", sws);
    push_day(data, pid, date, "se_pct", se);
    push_day(data, pid, date, "time_in_bed_min", (tst / (se / 100.0)).min(1440.0));
}

fn day(start: NaiveDate, k: usize) -> NaiveDate {
    start.checked_add_days(Days::new(k as u64)).unwrap_or(start)
}

/// Baseline phase for one participant.
pub fn gen_baseline(cfg: &SimConfig, truth: &GroundTruth, i: usize, data: &mut Dataset) {
    let mut rng = stream(cfg.seed, i, SALT_BASELINE);
    for k in 0..cfg.baseline_days {
        let behaviour: Vec<f64> = truth
            .features
            .iter()
            .map(|f| {
                let z: f64 = rng.sample(StandardNormal);
                f.clamp(f.mean + f.sd * z)
            })
            .collect();
        emit_day(data, truth, day(cfg.start, k), &behaviour, 0.0, &mut rng);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub truths: Vec<GroundTruth>,
    pub data: Dataset,
}

/// Ground truth plus baseline observations for every participant.
pub fn gen_cohort(cfg: &SimConfig, ruleset: &Ruleset) -> Result<Cohort, SimError> {
    cfg.validate()?;
    let mut data = Dataset::new();
    let mut truths = Vec::with_capacity(cfg.participants);
    for i in 0..cfg.participants {
        let t = gen_truth(cfg, ruleset, i)?;
        gen_baseline(cfg, &t, i, &mut data);
        truths.push(t);
    }
    Ok(Cohort { truths, data })
}

/// Intervention phase: followed choices ramp to their full shift by the
/// start of the final week; lapsed ones slide the other way. Returns the
/// interventions actually followed.
pub fn simulate_intervention(
    cfg: &SimConfig,
    truth: &GroundTruth,
    i: usize,
    selection: &SelectionRecord,
    data: &mut Dataset,
) -> Vec<String> {
    let mut follow_rng = stream(cfg.seed, i, SALT_FOLLOW);
    let mut shift = alloc::vec![0.0; truth.features.len()];
    let mut followed = Vec::new();
    for c in &selection.chosen {
        let Some(k) = truth.features.iter().position(|f| f.metric_id == c.metric_id) else { continue };
        let f = &truth.features[k];
        if follow_rng.random::<f64>() < cfg.follow_prob {
            shift[k] = f.follow_shift();
            followed.push(c.metric_id.clone());
        } else {
            shift[k] = -f.sign * LAPSE_SHIFT_SD * f.sd;
        }
    }
    let attempted = selection.chosen.len() as f64;
    let ramp_days = (cfg.intervention_days - crate::trust::LAST_DAYS).max(1) as f64;
    let first = day(cfg.start, cfg.baseline_days);
    let mut rng = stream(cfg.seed, i, SALT_BASELINE ^ 0xFF);
    for k in 0..cfg.intervention_days {
        let ramp = ((k + 1) as f64 / ramp_days).min(1.0);
        let behaviour: Vec<f64> = truth
            .features
            .iter()
            .zip(&shift)
            .map(|(f, s)| {
                let z: f64 = rng.sample(StandardNormal);
                f.clamp(f.mean + s * ramp + f.sd * z)
            })
            .collect();
        emit_day(data, truth, day(first, k), &behaviour, attempted * ramp, &mut rng);
    }
    followed
}
