use lofm_core::num::median;
use lofm_core::pipeline::Dataset;
use lofm_core::sim::{run_experiment, ExperimentReport, SimConfig};
use lofm_core::trust::{Model, Stage};
use lofm_core::Endpoint;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn metric_mean(data: &Dataset, pid: &str, metric: &str, days: &[chrono::NaiveDate]) -> f64 {
    let v: Vec<f64> = days.iter().map(|d| data.daily_value(pid, *d, metric).unwrap()).collect();
    mean(&v)
}

/// Mean DIRTI ratio over a cohort, skipping participants whose rules mean is 0.
fn mean_dirti(r: &ExperimentReport) -> f64 {
    let v: Vec<f64> = r.participants.iter().filter_map(|p| p.dirti.ratio.value()).collect();
    mean(&v)
}

#[test]
fn zero_noise_full_compliance_conserves_effects() {
    let cfg = SimConfig { participants: 5, noise_sd: 0.0, follow_prob: 1.0, seed: 5, ..SimConfig::default() };
    let r = run_experiment(&cfg).unwrap();
    let start = cfg.start;
    let day = |k: usize| start + chrono::Days::new(k as u64);
    let base: Vec<_> = (0..cfg.baseline_days).map(day).collect();
    let total = cfg.baseline_days + cfg.intervention_days;
    let last7: Vec<_> = (total - 7..total).map(day).collect();
    for (p, t) in r.participants.iter().zip(&r.truths) {
        let pid = p.participant_id.as_str();
        let expected: f64 = t
            .features
            .iter()
            .map(|f| {
                f.w_tst
                    * (metric_mean(&r.data, pid, &f.metric_id, &last7) - metric_mean(&r.data, pid, &f.metric_id, &base))
            })
            .sum();
        let got = metric_mean(&r.data, pid, "tst_min", &last7) - metric_mean(&r.data, pid, "tst_min", &base);
        assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{pid}: {got} vs {expected}");
        let pct = p.improvements[&Endpoint::Tst];
        let b = metric_mean(&r.data, pid, "tst_min", &base);
        assert!((pct - got / b * 100.0).abs() < 1e-9);
    }
}

/// Compliance is measured, so noise can still pass an abandoned item now and
/// then; most items are zeroed and both means fall.
#[test]
fn no_follow_through_zeroes_dafti() {
    let r = run_experiment(&SimConfig { participants: 10, follow_prob: 0.0, ..SimConfig::default() }).unwrap();
    let mut zeroed = 0;
    let mut items = 0;
    for p in &r.participants {
        assert!(p.followed.is_empty());
        assert!(p.dafti.ml_mean <= p.dirti.ml_mean && p.dafti.rules_mean <= p.dirti.rules_mean);
        assert_eq!(p.dafti.items, p.dirti.items);
        items += p.compliance.entries.len() - 1;
        zeroed +=
            p.selection.chosen.iter().filter(|c| !p.compliance.entry(&c.metric_id).unwrap().followed_through).count();
    }
    assert!(zeroed * 3 >= items * 2, "{zeroed} of {items} zeroed");
    let dirti: Vec<f64> = r.participants.iter().map(|p| p.dirti.ml_mean + p.dirti.rules_mean).collect();
    let dafti: Vec<f64> = r.participants.iter().map(|p| p.dafti.ml_mean + p.dafti.rules_mean).collect();
    assert!(mean(&dafti) < 0.5 * mean(&dirti));
}

#[test]
fn dirti_rises_with_lambda() {
    let cohort_means = |lambda: f64| -> Vec<f64> {
        (0..50)
            .map(|seed| {
                mean_dirti(
                    &run_experiment(&SimConfig { participants: 5, lambda, seed, ..SimConfig::default() }).unwrap(),
                )
            })
            .collect()
    };
    let lo = cohort_means(0.0);
    let mid = cohort_means(0.5);
    let hi = cohort_means(1.0);
    let (lo, mid, hi) = (mean(&lo), mean(&mid), mean(&hi));
    assert!(lo < mid && mid < hi, "{lo} {mid} {hi}");
}

#[test]
fn equal_fidelity_centres_relative_doti() {
    let ratios: Vec<f64> = (0..50)
        .filter_map(|seed| {
            let cfg = SimConfig { ml_fidelity: 0.6, rules_fidelity: 0.6, seed, ..SimConfig::default() };
            run_experiment(&cfg).unwrap().doti.unwrap().relative(Endpoint::Tst, Stage::FollowThrough).value()
        })
        .collect();
    assert!(ratios.len() >= 45);
    let m = median(&ratios).unwrap();
    assert!((0.7..=1.4).contains(&m), "median {m}");
}

#[test]
fn ml_fidelity_tracks_outcomes_better_than_noise() {
    let r2 = |ml_fidelity: f64| -> f64 {
        let v: Vec<f64> = (0..10)
            .map(|seed| {
                let cfg = SimConfig { ml_fidelity, rules_fidelity: 0.3, seed, ..SimConfig::default() };
                let t = run_experiment(&cfg).unwrap().doti.unwrap();
                t.r2(Endpoint::Tst, Model::Ml, Stage::Intention).value().unwrap_or(0.0)
            })
            .collect();
        mean(&v)
    };
    assert!(r2(1.0) > r2(0.0));
}
