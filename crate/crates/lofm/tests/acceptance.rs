//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; the process exits non-zero if any fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use common::*;
use lofm_core::matrix::{assemble, AxisSource, MlAxis, RulesAxis};
use lofm_core::ml::{importance, train, Hyperparams, Node, TrainingTable, Tree};
use lofm_core::num::pearson_r2;
use lofm_core::registry;
use lofm_core::rules::{default_ruleset, parse_ruleset, Bound, Ruleset, StarPolicy};
use lofm_core::sim::{run_experiment, SimConfig};
use lofm_core::trust::{
    dafti, dirti, Choice, ComplianceEntry, ComplianceRecord, Model, ScoreOptions, SelectionRecord, SleepOpportunity,
    Stage,
};
use lofm_core::{DateRange, Direction, Endpoint, ImportanceMap, RuleAssessment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

const CRITERIA: &[Criterion] = &[
    Criterion { name: "metric formula fidelity", limit: Some(Duration::from_secs(1)), run: metric_formulas },
    Criterion { name: "pearson r2 oracle", limit: Some(Duration::from_secs(1)), run: pearson_oracle },
    Criterion { name: "matrix calibration", limit: Some(Duration::from_secs(5)), run: calibration },
    Criterion { name: "rules and stars", limit: Some(Duration::from_secs(1)), run: rules_and_stars },
    Criterion { name: "ml engine sanity", limit: Some(Duration::from_secs(30)), run: ml_sanity },
    Criterion { name: "deserved-trust discrimination", limit: Some(Duration::from_secs(120)), run: deserved_trust },
    Criterion { name: "placebo null", limit: Some(Duration::from_secs(60)), run: placebo_null },
    Criterion { name: "pipeline gates", limit: Some(Duration::from_secs(5)), run: pipeline_gates },
    Criterion { name: "event-sourcing replay", limit: None, run: event_replay },
];

fn main() {
    let mut failed = 0;
    for c in CRITERIA {
        let t = Instant::now();
        let outcome = (c.run)();
        let took = t.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if took > limit => Err(format!("took {took:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS {} ({took:.2?}): {detail}", c.name),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} ({took:.2?}): {detail}", c.name);
            }
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Worked trust examples. Three free choices plus the mandatory item, which
// is scored here, give the four items the example means need.

fn selection(pid: &str, mandatory: (u8, u8), items: &[(&str, u8, u8)]) -> SelectionRecord {
    SelectionRecord {
        participant_id: pid.into(),
        mandatory_sleep_opportunity: SleepOpportunity {
            se_pct: 90.0,
            time_in_bed_min: 420.0 / 0.9,
            stars: mandatory.0,
            bucket: mandatory.1,
        },
        chosen: items.iter().map(|(m, s, b)| Choice { metric_id: m.to_string(), stars: *s, bucket: *b }).collect(),
        timestamp: Utc.with_ymd_and_hms(2024, 4, 1, 0, 0, 0).unwrap(),
    }
}

fn compliance(pid: &str, followed: &[(&str, bool)]) -> ComplianceRecord {
    ComplianceRecord {
        participant_id: pid.into(),
        intervention_period: DateRange::new(day(31), day(58)).unwrap(),
        entries: followed
            .iter()
            .map(|(m, f)| ComplianceEntry {
                metric_id: m.to_string(),
                baseline_mean: 10.0,
                last7_mean: if *f { 5.0 } else { 12.0 },
                direction: Direction::LowerIsBetter,
                improvement_pct: if *f { 50.0 } else { -20.0 },
                followed_through: *f,
                fallback: false,
            })
            .collect(),
    }
}

fn metric_formulas() -> Check {
    let opts = ScoreOptions { include_mandatory: true };
    // B: ML (3,3,3,1) = 10/4, rules (3,2,1,3) = 9/4; one (3,3) item lapses.
    let b = selection("B", (3, 3), &[("evening_light_luxh", 2, 3), ("screen_time_min", 1, 3), ("caffeine_mg", 3, 1)]);
    let b_comp = compliance(
        "B",
        &[("evening_light_luxh", true), ("screen_time_min", true), ("caffeine_mg", true), ("time_in_bed_min", false)],
    );
    // D: one ML-scored choice (bucket 2), rules summing to 8; the ML item and
    // natural light both lapse.
    let d = selection("D", (2, 0), &[("natural_light_luxh", 3, 0), ("caffeine_mg", 2, 0), ("bedroom_temp_c", 1, 2)]);
    let d_comp = compliance(
        "D",
        &[("natural_light_luxh", false), ("caffeine_mg", true), ("bedroom_temp_c", false), ("time_in_bed_min", true)],
    );
    let di = |s: &SelectionRecord| dirti(s, opts).map_err(|e| e.to_string());
    let da = |s: &SelectionRecord, c: &ComplianceRecord| dafti(s, c, opts).map_err(|e| e.to_string());

    let dirti_b = di(&b)?;
    let r = dirti_b.ratio.value().ok_or("DIRTI(B) undefined")?;
    ensure(dirti_b.ml_mean == 2.5 && dirti_b.rules_mean == 2.25, || format!("B means {dirti_b:?}"))?;
    ensure((r - 2.5 / 2.25).abs() < 1e-12 && format!("{r:.1}") == "1.1", || format!("DIRTI(B) = {r}"))?;

    let dirti_d = di(&d)?;
    ensure(dirti_d.ratio.value() == Some(0.25), || format!("DIRTI(D) = {:?}", dirti_d.ratio))?;

    let dafti_d = da(&d, &d_comp)?;
    let mut problems = Vec::new();
    if dafti_d.ratio.value() != Some(0.0) {
        problems.push(format!("DAFTI(D) = {:?}", dafti_d.ratio));
    }
    if (dafti_d.rules_mean - 1.1).abs() > 0.05 {
        problems.push(format!("D adjusted rules mean {} not within 1.1 +/- 0.05", dafti_d.rules_mean));
    }
    let dafti_b = da(&b, &b_comp)?.ratio.value().ok_or("DAFTI(B) undefined")?;
    if (dafti_b - 1.2).abs() > 0.05 {
        problems.push(format!("DAFTI(B) = {dafti_b}"));
    }
    if problems.is_empty() {
        Ok(format!("DIRTI(B) {r:.4}, DIRTI(D) 0.25, DAFTI(D) 0, DAFTI(B) {dafti_b:.4}"))
    } else {
        Err(problems.join("; "))
    }
}

/// Centred covariance over the product of centred variances.
fn oracle_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy * sxy / (sxx * syy)
}

fn pearson_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = rng.random_range(5..=20);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let got = pearson_r2(&x, &y).ok_or_else(|| format!("set {i}: undefined"))?;
        let diff = (got - oracle_r2(&x, &y)).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-12, || format!("set {i}: off by {diff:e}"))?;

        let slope = rng.random_range(0.1..10.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let icept = rng.random_range(-20.0..20.0);
        let line: Vec<f64> = x.iter().map(|v| slope * v + icept).collect();
        let one = pearson_r2(&x, &line).ok_or_else(|| format!("collinear set {i}: undefined"))?;
        ensure((one - 1.0).abs() <= 1e-12, || format!("collinear set {i}: r2 = {one}"))?;
    }
    Ok(format!("100 sets, worst deviation {worst:.1e}; collinear sets give 1"))
}

fn calibration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let feats: Vec<&str> = registry::features().map(|m| m.id).collect();
    let source = AxisSource {
        participant: "P".into(),
        data_window: DateRange::new(day(0), day(30)).unwrap(),
        objective: Endpoint::Tst,
    };
    let mut fewest = usize::MAX;
    for i in 0..1000 {
        let values: Vec<f64> = loop {
            let v: Vec<f64> = feats
                .iter()
                .map(|_| if rng.random_bool(0.35) { 0.0 } else { 10f64.powf(rng.random_range(-6.0..4.0)) })
                .collect();
            if v.iter().filter(|x| **x > 0.0).count() >= 4 {
                break v;
            }
        };
        let (map, _) = ImportanceMap::from_entries(feats.iter().zip(&values).map(|(f, v)| (f.to_string(), *v)));
        let assessments: Vec<RuleAssessment> = feats
            .iter()
            .map(|f| {
                let stars = rng.random_range(0..4u8);
                RuleAssessment {
                    metric_id: f.to_string(),
                    violation_rate: f64::from(stars) / 3.0,
                    stars,
                    mean: 0.0,
                    rationale: String::new(),
                    bands: Vec::new(),
                }
            })
            .collect();
        let (m, _) = assemble(
            RulesAxis { source: &source, ruleset_version: "1", assessments: &assessments },
            MlAxis { source: &source, model_id: "m", importances: &map },
        )
        .map_err(|e| format!("map {i}: {e}"))?;
        let top = m.placements().filter(|p| p.bucket >= 2).count();
        fewest = fewest.min(top);
        ensure(top >= 4, || format!("map {i}: only {top} in the top two columns"))?;
    }
    Ok(format!("1000 maps, fewest in top two columns {fewest}"))
}

fn variant(base: &Ruleset, rng: &mut ChaCha8Rng) -> Ruleset {
    let mut rs = base.clone();
    rs.version = format!("{}.{}", rng.random_range(1..9), rng.random_range(0..99));
    let scale = |b: Bound, k: f64| match b {
        Bound::AtMost(v) => Bound::AtMost(v * k),
        Bound::AtLeast(v) => Bound::AtLeast(v * k),
        Bound::Between(lo, hi) => Bound::Between(lo * k, hi * k),
    };
    for r in &mut rs.rules {
        let k = rng.random_range(0.5..2.0);
        r.best_practice = scale(r.best_practice, k);
        r.hard_limit = r.hard_limit.map(|h| scale(h, k));
        let angel = rng.random_range(0.01..0.2);
        let one = rng.random_range(angel + 0.01..0.5);
        let two = rng.random_range(one + 0.01..0.95);
        r.stars = StarPolicy { angel, one, two };
        r.rationale.push_str(" \"quoted\" and \\ kept");
    }
    rs
}

fn rules_and_stars() -> Check {
    let rs = default_ruleset();
    let caffeine = rs.rule("caffeine_mg").ok_or("no caffeine rule")?;
    // 82 of 100 days above the limit.
    let series: Vec<f64> = (0..100).map(|i| if i % 50 < 41 { 320.0 } else { 150.0 }).collect();
    let a = caffeine.assess(&series).map_err(|e| e.to_string())?;
    ensure(a.stars == 3, || format!("82% violation gave {} stars", a.stars))?;
    ensure(a.rationale.contains("82%"), || format!("narrative: {}", a.rationale))?;
    let clean = caffeine.assess(&[150.0; 31]).map_err(|e| e.to_string())?;
    ensure(clean.stars == 0, || format!("0% violation gave {} stars", clean.stars))?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut sets = vec![rs.clone()];
    sets.extend((0..50).map(|_| variant(&rs, &mut rng)));
    for (i, set) in sets.iter().enumerate() {
        let text = set.to_string();
        let parsed = parse_ruleset(&text).map_err(|e| format!("ruleset {i}: {e}"))?;
        let again = parse_ruleset(&parsed.to_string()).map_err(|e| format!("ruleset {i} reparse: {e}"))?;
        ensure(parsed.to_string() == text, || format!("ruleset {i}: print differs after parse"))?;
        ensure(again == parsed && parsed == *set, || format!("ruleset {i}: parsed value differs"))?;
    }
    Ok(format!("3 stars with \"{}\"; angel at 0%; {} rulesets round-trip", a.rationale, sets.len()))
}

/// Caffeine drives TST, fifteen other columns are noise.
fn signal_table(seed: u64, n: usize) -> TrainingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let caffeine = rng.random_range(0.0..500.0);
        let mut row = vec![caffeine];
        row.extend((1..16).map(|_| rng.random_range(0.0..100.0)));
        target.push(480.0 - 0.15 * caffeine + rng.random_range(-15.0..15.0));
        rows.push(row);
    }
    let mut names = vec!["caffeine_mg".to_string()];
    names.extend((1..16).map(|i| format!("noise_{i:02}")));
    TrainingTable::from_rows(names, rows, target).unwrap()
}

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

fn leaf_of(tree: &Tree, row: &[f64]) -> usize {
    let mut i = 0;
    loop {
        match &tree.nodes[i] {
            Node::Leaf { .. } => return i,
            Node::Split { feature, threshold, left, right, .. } => {
                i = if row[*feature] <= *threshold { *left } else { *right };
            }
        }
    }
}

/// Largest relative gap between a tree's summed gains and the SSE it removed
/// from the residuals it was fitted on.
fn worst_gain_gap(t: &TrainingTable, m: &lofm_core::TrainedModel) -> f64 {
    let mut pred = vec![m.base_score; t.len()];
    let mut worst: f64 = 0.0;
    for tree in &m.trees {
        let resid: Vec<f64> = t.target.iter().zip(&pred).map(|(y, p)| y - p).collect();
        let mut leaves: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (row, r) in t.rows.iter().zip(&resid) {
            leaves.entry(leaf_of(tree, row)).or_default().push(*r);
        }
        let removed = sse(&resid) - leaves.values().map(|v| sse(v)).sum::<f64>();
        let gains: f64 = tree.splits().map(|(_, g)| g).sum();
        worst = worst.max((gains - removed).abs() / sse(&resid).max(f64::MIN_POSITIVE));
        for (p, row) in pred.iter_mut().zip(&t.rows) {
            *p += tree.predict(row);
        }
    }
    worst
}

fn ml_sanity() -> Check {
    let hp = Hyperparams::default();
    let mut first = 0;
    let mut worst_gap: f64 = 0.0;
    for seed in 0..20u64 {
        let t = signal_table(seed, 40);
        let m = train(&t, &hp, seed).map_err(|e| e.to_string())?;
        if importance(&m).ranked().first().map(|(n, _)| *n) == Some("caffeine_mg") {
            first += 1;
        }
        worst_gap = worst_gap.max(worst_gain_gap(&t, &m));
        let again = train(&t, &hp, seed).map_err(|e| e.to_string())?;
        let same = serde_json::to_string(&m).unwrap() == serde_json::to_string(&again).unwrap() && m == again;
        ensure(same, || format!("seed {seed}: retraining differs"))?;
    }
    ensure(first >= 18, || format!("signal ranked first in {first} of 20 seeds"))?;
    ensure(worst_gap <= 1e-9, || format!("gain conservation off by {worst_gap:e}"))?;
    Ok(format!("signal first in {first}/20 seeds, worst gain gap {worst_gap:.1e}, same-seed models identical"))
}

fn deserved_trust() -> Check {
    let mut wins = 0;
    let mut intention = Vec::new();
    let mut follow = Vec::new();
    for seed in 0..20 {
        let cfg = SimConfig {
            ml_fidelity: 1.0,
            rules_fidelity: 0.3,
            follow_prob: 0.8,
            participants: 10,
            seed,
            ..SimConfig::default()
        };
        let report = run_experiment(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let t = report.doti.ok_or_else(|| format!("seed {seed}: no DOTI"))?;
        let e = cfg.objective;
        if t.relative(e, Stage::FollowThrough).value().is_some_and(|r| r > 1.0) {
            wins += 1;
        }
        intention.push(t.r2(e, Model::Ml, Stage::Intention).value().unwrap_or(0.0));
        follow.push(t.r2(e, Model::Ml, Stage::FollowThrough).value().unwrap_or(0.0));
    }
    let mi = intention.iter().sum::<f64>() / 20.0;
    let mf = follow.iter().sum::<f64>() / 20.0;
    let detail = format!("relative DOTI > 1 in {wins}/20 seeds; mean ML r2 intention {mi:.3}, follow-through {mf:.3}");
    if wins >= 18 && mf >= mi {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn placebo_null() -> Check {
    let mut sums = [0.0; 2];
    let mut n = 0.0;
    for seed in 0..20 {
        let cfg = SimConfig { seed, ..SimConfig::placebo_null() };
        let report = run_experiment(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let t = report.doti.ok_or_else(|| format!("seed {seed}: no DOTI"))?;
        for stage in [Stage::Intention, Stage::FollowThrough] {
            for (i, model) in [Model::Ml, Model::Rules].into_iter().enumerate() {
                sums[i] += t.r2(cfg.objective, model, stage).value().unwrap_or(0.0);
            }
            n += 1.0;
        }
    }
    let (ml, rules) = (sums[0] / n, sums[1] / n);
    let detail = format!("mean r2 ml {ml:.3}, rules {rules:.3}");
    if ml < 0.15 && rules < 0.15 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn expect_error(data: &std::path::Path, args: &[&str], code: &str) -> Result<(), String> {
    let o = lofm(data, args);
    ensure(o.code != 0 && o.stderr.contains(code), || {
        format!("`{}` gave exit {} / {}", args.join(" "), o.code, o.stderr.trim())
    })
}

fn pipeline_gates() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let from = start().to_string();
    let to = baseline_end().to_string();

    let poor = dir.path().join("poor");
    let csv = Fixture { participants: vec!["P01".into()], coverage: 50.0, ..Fixture::default() }.write(dir.path());
    ok(&poor, &["ingest", csv.to_str().unwrap()]);
    ok(&poor, &["objective", "-p", "P01", "tst_min"]);
    expect_error(&poor, &["baseline", "confirm", "-p", "P01", "--from", &from, "--to", &to], "quality-below-70")?;

    let data = dir.path().join("store");
    let csv = Fixture::default().write(dir.path());
    ok(&data, &["ingest", csv.to_str().unwrap()]);
    for pid in ["P01", "P02", "P03"] {
        ok(&data, &["objective", "-p", pid, "tst_min"]);
        ok(&data, &["baseline", "confirm", "-p", pid, "--from", &from, "--to", &to]);
    }
    // 31 confirmed days, four excluded, 27 left.
    let mut args = vec!["baseline", "exclude", "-p", "P02", "--reason", "travel"];
    let dates: Vec<String> = (3..7).map(|k| day(k).to_string()).collect();
    for d in &dates {
        args.extend(["--date", d.as_str()]);
    }
    let excluded = lofm(&data, &args);
    if excluded.code == 0 {
        expect_error(&data, &["train", "-p", "P02"], "insufficient-baseline")?;
    } else {
        ensure(excluded.stderr.contains("insufficient-baseline"), || excluded.stderr.clone())?;
    }

    ok(&data, &["train", "-p", "P01", "--seed", "7"]);
    let mut four = vec!["select", "-p", "P01"];
    for c in ["caffeine_mg", "evening_fluid_ml", "exercise_min", "screen_time_min"] {
        four.extend(["--choice", c]);
    }
    expect_error(&data, &four, "too-many-choices")?;

    ok(&data, &["train", "-p", "P03", "--seed", "7"]);
    let mut args = vec!["select", "-p", "P03"];
    for c in CHOICES[2] {
        args.extend(["--choice", c]);
    }
    ok(&data, &args);
    let mut args = vec!["targets", "-p", "P03", "--set-on", &to];
    for c in CHOICES[2] {
        args.extend(["--target", targets_for(c)]);
    }
    ok(&data, &args);
    let track = ok(&data, &["track", "-p", "P03", "--date", "2024-04-20", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&track).map_err(|e| e.to_string())?;
    ensure(v["status"]["se_alert"] == true, || format!("no alert: {}", v["status"]))?;
    Ok("quality-below-70, insufficient-baseline, too-many-choices and the SE alert all fire".into())
}

fn event_replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let csv = Fixture::default().write(dir.path());
    let original = dir.path().join("original");
    full_pipeline(&original, &csv);
    let rebuilt = dir.path().join("rebuilt");
    std::fs::create_dir(&rebuilt).map_err(|e| e.to_string())?;
    std::fs::copy(original.join(lofm::store::LOG_FILE), rebuilt.join(lofm::store::LOG_FILE))
        .map_err(|e| e.to_string())?;
    let a = read_outputs(&original);
    let b = read_outputs(&rebuilt);
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        ensure(x == y, || format!("output {i} differs after replay"))?;
    }
    let bytes: usize = a.iter().map(String::len).sum();
    Ok(format!("{} outputs ({bytes} bytes) identical from the log alone", a.len()))
}
