//! Declarative chart spec (series + bands) and its SVG rendering.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::rules::Band;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartDay {
    pub date: NaiveDate,
    pub value: f64,
    pub band: Option<Band>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartBand {
    pub name: Band,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub color: String,
}

/// `{metric, unit, days:[{date,value,band}], bands:[{name,min,max,color}], mean}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub metric: String,
    pub unit: String,
    pub days: Vec<ChartDay>,
    pub bands: Vec<ChartBand>,
    pub mean: Option<f64>,
}

const W: f64 = 640.0;
const H: f64 = 240.0;
const PAD: f64 = 40.0;

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

/// Bars per day coloured by band, band backgrounds, and a mean line.
pub fn render_chart_svg(spec: &ChartSpec) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in spec.days.iter().map(|d| d.value).chain(spec.bands.iter().flat_map(|b| b.min.into_iter().chain(b.max))) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    lo = lo.min(0.0);
    if hi <= lo {
        hi = lo + 1.0;
    }
    let y = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
    let plot_w = W - 2.0 * PAD;

    let mut s = String::new();
    let _ =
        write!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">");
    let _ = write!(
        s,
        "<text x=\"{PAD}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">{} ({})</text>",
        escape(&spec.metric),
        escape(&spec.unit)
    );
    for b in &spec.bands {
        let top = y(b.max.unwrap_or(hi).min(hi));
        let bottom = y(b.min.unwrap_or(lo).max(lo));
        let _ = write!(
            s,
            "<rect class=\"band band-{}\" x=\"{PAD}\" y=\"{top:.2}\" width=\"{plot_w}\" height=\"{:.2}\" fill=\"{}\" fill-opacity=\"0.12\"/>",
            b.name.name(),
            (bottom - top).max(0.0),
            b.color
        );
    }
    let n = spec.days.len().max(1) as f64;
    let slot = plot_w / n;
    for (i, d) in spec.days.iter().enumerate() {
        let top = y(d.value.max(lo));
        let color = d.band.map(Band::color).unwrap_or("#4a5568");
        let _ = write!(
            s,
            "<rect class=\"day\" x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"><title>{} {}</title></rect>",
            PAD + i as f64 * slot + slot * 0.1,
            slot * 0.8,
            (y(lo) - top).max(0.0),
            d.date,
            d.value
        );
    }
    if let Some(m) = spec.mean {
        let my = y(m);
        let _ = write!(
            s,
            "<line class=\"mean\" x1=\"{PAD}\" y1=\"{my:.2}\" x2=\"{:.2}\" y2=\"{my:.2}\" stroke=\"#3182ce\" stroke-width=\"2\"/>",
            W - PAD
        );
    }
    let _ =
        write!(s, "<line x1=\"{PAD}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#000\"/>", y(lo), W - PAD, y(lo));
    s.push_str(&format!(
        "<text x=\"4\" y=\"{:.2}\" font-size=\"10\">{}</text><text x=\"4\" y=\"{:.2}\" font-size=\"10\">{}</text>",
        y(hi) + 4.0,
        crate::num::fmt_num(hi),
        y(lo),
        crate::num::fmt_num(lo)
    ));
    s.push_str("</svg>\n");
    s
}
