use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LofmMatrix, MatrixError};
use crate::pipeline::chart::escape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Json,
    Svg,
}

impl FromStr for Format {
    type Err = MatrixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(MatrixError::UnknownFormat(other.into())),
        }
    }
}

pub fn render(m: &LofmMatrix, format: Format) -> String {
    match format {
        Format::Text => text(m),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(m).unwrap_or_default();
            s.push('\n');
            s
        }
        Format::Svg => svg(m),
    }
}

fn text(m: &LofmMatrix) -> String {
    let d = &m.demarcations;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "LoFM matrix for {} (objective {}, window {})",
        m.participant, m.objective, m.provenance.data_window
    );
    let _ = writeln!(out, "ML demarcations: t1={} t2={} t3={}", d.t1, d.t2, d.t3);
    let labels: Vec<String> = m.cells.iter().map(|c| c.interventions.join(", ")).collect();
    let head = ["ML 0", "ML 1", "ML 2", "ML 3"];
    let row_head = "expert \\ ML";
    let mut widths = [0usize; 4];
    for (b, w) in widths.iter_mut().enumerate() {
        *w = (0..4).map(|s| labels[s * 4 + b].chars().count()).chain([head[b].len()]).max().unwrap_or(0);
    }
    let first = row_head.len().max("3 stars".len());
    let _ = write!(out, "{row_head:<first$}");
    for (b, w) in widths.iter().enumerate() {
        let _ = write!(out, " | {:<w$}", head[b]);
    }
    out = out.trim_end().to_string();
    out.push('\n');
    let rule_len = first + widths.iter().map(|w| w + 3).sum::<usize>();
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');
    for s in 0..4 {
        let mut line = format!("{:<first$}", format!("{s} stars"));
        for (b, w) in widths.iter().enumerate() {
            let _ = write!(line, " | {:<w$}", labels[s * 4 + b]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

const CELL_W: usize = 190;
const CHIP_H: usize = 20;
const PAD: usize = 8;
const LEFT: usize = 110;
const TOP: usize = 60;

fn svg(m: &LofmMatrix) -> String {
    let most = m.cells.iter().map(|c| c.interventions.len()).max().unwrap_or(0);
    let cell_h = (most * (CHIP_H + 4) + 2 * PAD).max(70);
    let width = LEFT + 4 * CELL_W + 20;
    let height = TOP + 4 * cell_h + 50;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<title>LoFM matrix {} ({})</title>"#, escape(&m.participant), m.objective);
    let _ = writeln!(
        s,
        r#"<text class="legend" x="{}" y="20" text-anchor="middle">ML assessment</text>"#,
        LEFT + 2 * CELL_W
    );
    let mid_y = TOP + 2 * cell_h;
    let _ = writeln!(
        s,
        r#"<text class="legend" x="20" y="{mid_y}" text-anchor="middle" transform="rotate(-90 20 {mid_y})">expert conclusion</text>"#
    );
    for b in 0..4 {
        let x = LEFT + b * CELL_W + CELL_W / 2;
        let _ = writeln!(s, r#"<text class="axis" x="{x}" y="{}" text-anchor="middle">bucket {b}</text>"#, TOP - 10);
    }
    for st in 0..4 {
        let y = TOP + st * cell_h + cell_h / 2;
        let _ = writeln!(s, r#"<text class="axis" x="{}" y="{y}" text-anchor="end">{st} stars</text>"#, LEFT - 10);
    }
    for c in &m.cells {
        let x = LEFT + usize::from(c.bucket) * CELL_W;
        let y = TOP + usize::from(c.stars) * cell_h;
        let diag = if c.stars == c.bucket { " diagonal" } else { "" };
        let _ = writeln!(
            s,
            r##"<rect class="cell{diag}" x="{x}" y="{y}" width="{CELL_W}" height="{cell_h}" fill="#f7fafc" stroke="#4a5568"/>"##
        );
        for (i, name) in c.interventions.iter().enumerate() {
            let cy = y + PAD + i * (CHIP_H + 4);
            let _ = writeln!(
                s,
                r##"<g class="chip" data-stars="{}" data-bucket="{}"><rect x="{}" y="{cy}" width="{}" height="{CHIP_H}" rx="4" fill="#bee3f8"/><text x="{}" y="{}">{}</text></g>"##,
                c.stars,
                c.bucket,
                x + PAD,
                CELL_W - 2 * PAD,
                x + PAD + 6,
                cy + 14,
                escape(name)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text class="provenance" x="{LEFT}" y="{}">window {} | ruleset {} | model {}</text>"#,
        TOP + 4 * cell_h + 30,
        m.provenance.data_window,
        escape(&m.provenance.ruleset_version),
        escape(&m.provenance.model_id)
    );
    s.push_str("</svg>\n");
    s
}
