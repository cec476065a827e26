use chrono::NaiveDate;
use lofm_core::matrix::{assemble, bucket, calibrate, AxisSource, Demarcations, Format, MlAxis, RulesAxis};
use lofm_core::{registry, DateRange, Endpoint, ImportanceMap, LofmMatrix, RuleAssessment};
use proptest::prelude::*;

fn src() -> AxisSource {
    AxisSource {
        participant: "P07".into(),
        data_window: DateRange::new(
            NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
            NaiveDate::from_ymd_opt(2024, 3, 31).unwrap(),
        )
        .unwrap(),
        objective: Endpoint::Tst,
    }
}

fn assessment(metric: &str, stars: u8) -> RuleAssessment {
    RuleAssessment {
        metric_id: metric.into(),
        violation_rate: f64::from(stars) / 3.0,
        stars,
        mean: 0.0,
        rationale: String::new(),
        bands: Vec::new(),
    }
}

fn importances() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 1e-6..1e4f64], 4..20)
        .prop_filter("at least four positive", |v| v.iter().filter(|x| **x > 0.0).count() >= 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn at_least_four_reach_the_top_columns(values in importances()) {
        let (map, _) = ImportanceMap::from_entries(values.iter().enumerate().map(|(i, v)| (format!("f{i}"), *v)));
        let d = calibrate(&map).unwrap().demarcations;
        prop_assert!(d.t1 > 0.0 && d.t1 < d.t2 && d.t2 < d.t3);
        let top = values.iter().filter(|v| bucket(**v, &d) >= 2).count();
        prop_assert!(top >= 4, "{top} in top columns with {d:?}");
        // The strongest feature always reaches bucket 3.
        let max = values.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(bucket(max, &d), 3);
    }

    #[test]
    fn bucketing_is_monotone(a in 0.0..100.0f64, b in 0.0..100.0f64, t1 in 0.1..10.0f64, g1 in 0.1..10.0f64, g2 in 0.1..10.0f64) {
        let d = Demarcations::new(t1, t1 + g1, t1 + g1 + g2).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(bucket(lo, &d) <= bucket(hi, &d));
    }

    #[test]
    fn placement_partitions_and_diagonal(stars in prop::collection::vec(0u8..4, 16), imp in prop::collection::vec(0.0..50.0f64, 16)) {
        let feats: Vec<&str> = registry::features().map(|m| m.id).collect();
        let a: Vec<_> = feats.iter().zip(&stars).map(|(f, s)| assessment(f, *s)).collect();
        let (map, _) = ImportanceMap::from_entries(feats.iter().zip(&imp).map(|(f, v)| (f.to_string(), *v)));
        let s = src();
        let Ok((m, _)) = assemble(
            RulesAxis { source: &s, ruleset_version: "1.0.0", assessments: &a },
            MlAxis { source: &s, model_id: "gbdt-x", importances: &map },
        ) else {
            // Only an all-zero map fails.
            prop_assert!(imp.iter().all(|v| *v == 0.0));
            return Ok(());
        };
        prop_assert_eq!(m.len(), 16);
        let mut placed: Vec<String> = m.placements().map(|p| p.metric_id).collect();
        placed.sort();
        let mut expected: Vec<String> = feats.iter().map(|f| f.to_string()).collect();
        expected.sort();
        prop_assert_eq!(placed, expected);
        let off: usize = m.placements().filter(|p| p.stars != p.bucket).count();
        prop_assert_eq!(off, m.leap_of_faith().len());
        for p in m.placements() {
            let want = a.iter().find(|x| x.metric_id == p.metric_id).unwrap().stars;
            prop_assert_eq!(p.stars, want);
        }
        let json = lofm_core::matrix::render(&m, Format::Json);
        prop_assert_eq!(LofmMatrix::from_json(&json).unwrap(), m.clone());
        prop_assert_eq!(lofm_core::matrix::render(&m, Format::Svg), lofm_core::matrix::render(&m.clone(), Format::Svg));
    }
}

/// ML is the more discriminating axis: nine interventions without any
/// importance are ML angels, while the rules find a single angel.
#[test]
fn ml_has_nine_angels_rules_one() {
    let feats: Vec<&str> = registry::features().map(|m| m.id).collect();
    let a: Vec<_> =
        feats.iter().enumerate().map(|(i, f)| assessment(f, if i == 0 { 0 } else { 1 + (i % 3) as u8 })).collect();
    // Seven features carry importance (the lowest three tied, so t1 sits on
    // them), nine carry none.
    let gains = [5.0, 5.0, 5.0, 20.0, 40.0, 60.0, 80.0];
    let (map, _) = ImportanceMap::from_entries(
        feats.iter().enumerate().map(|(i, f)| (f.to_string(), gains.get(i).copied().unwrap_or(0.0))),
    );
    let s = src();
    let (m, warnings) = assemble(
        RulesAxis { source: &s, ruleset_version: "1.0.0", assessments: &a },
        MlAxis { source: &s, model_id: "gbdt-x", importances: &map },
    )
    .unwrap();
    assert!(warnings.is_empty());
    assert_eq!(m.ml_angels(), 9);
    assert_eq!(m.rules_angels(), 1);
}
