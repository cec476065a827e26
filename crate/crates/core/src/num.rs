//! Small numeric helpers shared across modules (the crate has no `std` float
//! intrinsics, so rounding and roots go through `libm`).

use alloc::string::String;
use alloc::vec::Vec;

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Sum of squared deviations from the mean.
pub fn sse(values: &[f64]) -> f64 {
    match mean(values) {
        Some(m) => values.iter().map(|v| (v - m) * (v - m)).sum(),
        None => 0.0,
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile (the "type 7" estimator).
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Squared Pearson correlation. `None` when either variable has zero
/// variance or the inputs are shorter than two points.
pub fn pearson_r2(x: &[f64], y: &[f64]) -> Option<f64> {
    let r = pearson_r(x, y)?;
    Some((r * r).clamp(0.0, 1.0))
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = mean(x)?;
    let my = mean(y)?;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Average ranks (1-based), ties share the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_r(&ranks(x), &ranks(y))
}

/// Human-facing number: integers print bare, everything else with at most
/// one decimal.
pub fn fmt_num(value: f64) -> String {
    let rounded = libm::round(value * 10.0) / 10.0;
    if rounded == libm::trunc(rounded) {
        alloc::format!("{}", rounded as i64)
    } else {
        alloc::format!("{rounded:.1}")
    }
}

/// Percent of `part` in `whole`, rounded to an integer.
pub fn pct(part: usize, whole: usize) -> u32 {
    if whole == 0 {
        return 0;
    }
    libm::round(part as f64 * 100.0 / whole as f64) as u32
}
