#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use axum::body::Body;
use axum::http::Request;
use chrono::{Days, NaiveDate};
use http_body_util::BodyExt;
use lofm::service::{router, AppState};
use tower::ServiceExt;

pub const BASELINE_DAYS: u64 = 31;
pub const INTERVENTION_DAYS: u64 = 28;
pub const AT: &str = "2024-04-01T09:00:00Z";

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 3, 1).unwrap()
}

pub fn day(k: u64) -> NaiveDate {
    start() + Days::new(k)
}

pub fn baseline_end() -> NaiveDate {
    day(BASELINE_DAYS - 1)
}

/// (metric, good value, bad value, baseline violating days out of 31).
/// The good value meets the metric's best practice, the bad one breaks it.
pub const BEHAVIOURS: &[(&str, f64, f64, u64)] = &[
    ("alcohol_units", 0.0, 2.0, 6),
    ("bedroom_lux", 0.0, 4.0, 3),
    ("bedroom_noise_db", 30.0, 40.0, 12),
    ("bedroom_temp_c", 17.5, 21.0, 9),
    ("bedtime_var_min", 15.0, 60.0, 20),
    ("caffeine_after_14_mg", 0.0, 60.0, 14),
    ("caffeine_mg", 150.0, 320.0, 25),
    ("evening_fluid_ml", 150.0, 500.0, 18),
    ("evening_light_luxh", 40.0, 300.0, 4),
    ("exercise_min", 45.0, 10.0, 16),
    ("last_meal_gap_min", 200.0, 90.0, 2),
    ("nap_min", 0.0, 45.0, 0),
    ("natural_light_luxh", 8000.0, 2000.0, 22),
    ("relaxation_min", 30.0, 5.0, 11),
    ("screen_time_min", 5.0, 60.0, 27),
    ("wake_time_min", 420.0, 540.0, 7),
];

/// Minutes of sleep lost on a violating day, by behaviour index.
fn tst_effect(j: usize) -> f64 {
    match BEHAVIOURS[j].0 {
        "caffeine_mg" => 30.0,
        "evening_fluid_ml" => 22.0,
        "screen_time_min" => 8.0,
        "exercise_min" => 16.0,
        "bedtime_var_min" => 12.0,
        _ => 0.0,
    }
}

fn sws_effect(j: usize) -> f64 {
    match BEHAVIOURS[j].0 {
        "alcohol_units" => 14.0,
        "exercise_min" => 9.0,
        "bedroom_temp_c" => 6.0,
        _ => 0.0,
    }
}

/// Whether behaviour `j` is broken on day `k` for participant `p`. In the
/// baseline exactly `n` of 31 days violate (the stride is coprime with 31).
/// During the intervention, behaviours only lapse now and then in the first
/// week and are clean afterwards, except that the third participant gives up
/// on relaxation altogether.
pub fn violates(p: usize, j: usize, k: u64) -> bool {
    let n = BEHAVIOURS[j].3;
    if p == 2 && BEHAVIOURS[j].0 == "relaxation_min" && k >= BASELINE_DAYS {
        return true;
    }
    if k < BASELINE_DAYS {
        let stride = 3 + 2 * p as u64 + j as u64;
        let stride = if stride.is_multiple_of(31) { 1 } else { stride };
        (k * stride + 5 * j as u64 + 7 * p as u64) % 31 < n
    } else {
        n > 0 && k < BASELINE_DAYS + 7 && (k + j as u64 + p as u64).is_multiple_of(3)
    }
}

/// A small deterministic wobble in -5..=5.
fn wobble(p: usize, k: u64, salt: u64) -> f64 {
    (((k + 1) * 37 + salt * 11 + p as u64 * 13) % 11) as f64 - 5.0
}

pub struct Fixture {
    pub participants: Vec<String>,
    /// Participant whose intervention sleep efficiency drops below 85%.
    pub low_se: Option<usize>,
    /// Coverage on every row.
    pub coverage: f64,
    pub days: u64,
}

impl Default for Fixture {
    fn default() -> Self {
        Fixture {
            participants: vec!["P01".into(), "P02".into(), "P03".into()],
            low_se: Some(2),
            coverage: 95.0,
            days: BASELINE_DAYS + INTERVENTION_DAYS,
        }
    }
}

impl Fixture {
    pub fn csv(&self) -> String {
        let mut s = String::from("participant_id,date,metric_id,value,unit,source,coverage_pct\n");
        for (p, pid) in self.participants.iter().enumerate() {
            for k in 0..self.days {
                let date = day(k);
                let mut tst = 440.0 + 2.0 * wobble(p, k, 1);
                let mut sws = 95.0 + wobble(p, k, 2);
                for (j, (metric, good, bad, _)) in BEHAVIOURS.iter().enumerate() {
                    let v = violates(p, j, k);
                    if v {
                        tst -= tst_effect(j);
                        sws -= sws_effect(j);
                    }
                    let base = if v { *bad } else { *good };
                    let value = base + (k % 3) as f64 * 0.5;
                    let unit = lofm_core::registry::lookup(metric).unwrap().unit;
                    let _ = writeln!(s, "{pid},{date},{metric},{value},{unit},phone,{}", self.coverage);
                }
                let se = if Some(p) == self.low_se && k >= BASELINE_DAYS { 80.0 } else { 88.0 + (k % 4) as f64 };
                let tib = tst / (se / 100.0);
                for (metric, value, unit) in [
                    ("tst_min", tst, "min"),
                    ("sws_min", sws, "min"),
                    ("se_pct", se, "%"),
                    ("time_in_bed_min", tib, "min"),
                ] {
                    let _ = writeln!(s, "{pid},{date},{metric},{value},{unit},ring,{}", self.coverage);
                }
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> PathBuf {
        let path = dir.join("observations.csv");
        std::fs::write(&path, self.csv()).unwrap();
        path
    }
}

pub struct Out {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `lofm` binary against `data` with a fixed event timestamp.
pub fn lofm(data: &Path, args: &[&str]) -> Out {
    let out = Command::new(env!("CARGO_BIN_EXE_lofm"))
        .arg("--data")
        .arg(data)
        .arg("--at")
        .arg(AT)
        .args(args)
        .env_remove("LOFM_DATA")
        .env_remove("LOFM_AT")
        .output()
        .expect("run lofm");
    Out {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Like [`lofm`] but panics unless the command exits 0.
pub fn ok(data: &Path, args: &[&str]) -> String {
    let o = lofm(data, args);
    assert_eq!(o.code, 0, "lofm {args:?} failed: {}", o.stderr);
    o.stdout
}

pub const CHOICES: [[&str; 3]; 3] = [
    ["caffeine_mg", "evening_fluid_ml", "exercise_min"],
    ["screen_time_min", "bedtime_var_min", "natural_light_luxh"],
    ["alcohol_units", "bedroom_temp_c", "relaxation_min"],
];

pub fn targets_for(metric: &str) -> &'static str {
    match metric {
        "caffeine_mg" => "caffeine_mg <= 230",
        "evening_fluid_ml" => "evening_fluid_ml <= 250",
        "exercise_min" => "exercise_min >= 30",
        "screen_time_min" => "screen_time_min <= 15",
        "bedtime_var_min" => "bedtime_var_min <= 30",
        "natural_light_luxh" => "natural_light_luxh >= 5000",
        "alcohol_units" => "alcohol_units <= 1",
        "bedroom_temp_c" => "bedroom_temp_c range 16-19",
        "relaxation_min" => "relaxation_min >= 20",
        other => panic!("no target for {other}"),
    }
}

/// Runs the whole pipeline for every fixture participant through the CLI.
pub fn full_pipeline(data: &Path, csv: &Path) {
    let from = start().to_string();
    let to = baseline_end().to_string();
    ok(data, &["ingest", csv.to_str().unwrap()]);
    for (i, pid) in ["P01", "P02", "P03"].iter().enumerate() {
        ok(data, &["objective", "-p", pid, "tst_min"]);
        ok(data, &["baseline", "confirm", "-p", pid, "--from", &from, "--to", &to]);
        ok(data, &["train", "-p", pid, "--seed", "7"]);
        let mut args = vec!["select", "-p", pid];
        for c in CHOICES[i] {
            args.extend(["--choice", c]);
        }
        ok(data, &args);
        let mut args = vec!["targets", "-p", pid, "--set-on", &to];
        for c in CHOICES[i] {
            args.extend(["--target", targets_for(c)]);
        }
        ok(data, &args);
    }
}

const READS: &[&[&str]] = &[
    &["matrix", "-p", "P01", "--format", "text"],
    &["matrix", "-p", "P02", "--format", "json"],
    &["matrix", "-p", "P03", "--format", "svg"],
    &["quality", "-p", "P02", "--format", "json"],
    &["validate", "-p", "P01", "--metric", "caffeine_mg", "--format", "json"],
    &["importances", "-p", "P03"],
    &["track", "-p", "P03", "--date", "2024-04-20", "--format", "json"],
    &["metrics", "--stage", "intention"],
    &["metrics", "--stage", "followthrough", "--format", "json"],
    &["doti", "--format", "json"],
];

const GETS: &[&str] = &[
    "/v1/participants",
    "/v1/participants/P01",
    "/v1/participants/P02/matrix",
    "/v1/participants/P01/assessments",
    "/v1/participants/P03/tracker/2024-04-27",
    "/v1/cohort/metrics?stage=followthrough",
    "/v1/cohort/doti?format=csv",
];

/// Every read command and a set of endpoint GETs, in a fixed order.
pub fn read_outputs(data: &Path) -> Vec<String> {
    let mut out: Vec<String> = READS.iter().map(|args| ok(data, args)).collect();
    let app = router(AppState::new(lofm::Lofm::open(data).unwrap(), None));
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    for uri in GETS {
        let res = rt.block_on(app.clone().oneshot(Request::get(*uri).body(Body::empty()).unwrap())).unwrap();
        assert!(res.status().is_success(), "{uri}: {}", res.status());
        let bytes = rt.block_on(res.into_body().collect()).unwrap().to_bytes();
        out.push(String::from_utf8(bytes.to_vec()).unwrap());
    }
    out
}
