//! Result tables and figure data.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evaluation::relative_change;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    System,
    Fusion,
}

impl std::str::FromStr for RowKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "system" => Ok(RowKind::System),
            "fusion" => Ok(RowKind::Fusion),
            other => Err(format!("row kind must be system or fusion, got {other:?}")),
        }
    }
}

impl std::fmt::Display for RowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RowKind::System => "system",
            RowKind::Fusion => "fusion",
        })
    }
}

/// One EER (in percent) for a table row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct EerEntry {
    pub row: String,
    pub kind: RowKind,
    pub column: String,
    pub eer_percent: f64,
}

pub const EER_TABLE_HEADER: &str = "row,kind,column,eer_percent";

pub fn parse_eer_entries(text: &str) -> Result<Vec<EerEntry>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EER_TABLE_HEADER => {}
        _ => {
            return Err(Error::parse(
                1,
                format!("expected header `{EER_TABLE_HEADER}`"),
            ))
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::parse(idx + 1, "expected 4 fields"));
        }
        out.push(EerEntry {
            row: f[0].to_string(),
            kind: f[1].parse().map_err(|e: String| Error::parse(idx + 1, e))?,
            column: f[2].to_string(),
            eer_percent: f[3]
                .parse()
                .map_err(|_| Error::parse(idx + 1, format!("bad EER {:?}", f[3])))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub kind: RowKind,
    pub eer: Vec<f64>,
    /// Percent change vs the best component system of each column (fusion
    /// rows only).
    pub relative: Vec<Option<f64>>,
    pub best: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

/// Builds the table: systems first, then fusion rows, each in order of first
/// appearance. Fusion rows carry the relative change against the best of
/// their component systems in each column; the lowest EER of each column is
/// flagged.
///
/// A fusion row named `A+B` has components `A` and `B` when both are system
/// rows. Any other name (such as `ALL`) is compared against every system.
pub fn build_report(entries: &[EerEntry]) -> Result<Report> {
    let mut columns: Vec<String> = Vec::new();
    let mut names: Vec<(String, RowKind)> = Vec::new();
    for e in entries {
        if !columns.contains(&e.column) {
            columns.push(e.column.clone());
        }
        match names.iter().find(|(n, _)| *n == e.row) {
            Some((_, kind)) if *kind != e.kind => {
                return Err(Error::usage(format!(
                    "row {} is listed as both system and fusion",
                    e.row
                )))
            }
            Some(_) => {}
            None => names.push((e.row.clone(), e.kind)),
        }
    }
    if names.iter().all(|(_, k)| *k != RowKind::System) {
        return Err(Error::usage("report needs at least one system row"));
    }
    names.sort_by_key(|(_, k)| *k == RowKind::Fusion);
    let mut rows = Vec::with_capacity(names.len());
    for (name, kind) in names {
        let eer = columns
            .iter()
            .map(|c| {
                entries
                    .iter()
                    .find(|e| e.row == name && e.column == *c)
                    .map(|e| e.eer_percent)
                    .ok_or_else(|| Error::usage(format!("row {name} has no value for column {c}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(ReportRow {
            name,
            kind,
            relative: vec![None; columns.len()],
            best: vec![false; columns.len()],
            eer,
        });
    }
    let systems: Vec<&str> = rows
        .iter()
        .filter(|r| r.kind == RowKind::System)
        .map(|r| r.name.as_str())
        .collect();
    let components: Vec<Vec<usize>> = rows
        .iter()
        .map(|r| fusion_components(&r.name, &systems))
        .collect();
    for c in 0..columns.len() {
        let best = rows.iter().map(|r| r.eer[c]).fold(f64::INFINITY, f64::min);
        let relative: Vec<Option<f64>> = rows
            .iter()
            .zip(&components)
            .map(|(r, parts)| {
                if r.kind != RowKind::Fusion {
                    return Ok(None);
                }
                let baseline = parts
                    .iter()
                    .map(|&i| rows[i].eer[c])
                    .fold(f64::INFINITY, f64::min);
                relative_change(r.eer[c], baseline).map(Some)
            })
            .collect::<Result<_>>()?;
        for (r, rel) in rows.iter_mut().zip(relative) {
            r.relative[c] = rel;
            r.best[c] = r.eer[c] == best;
        }
    }
    Ok(Report { columns, rows })
}

/// Row indices of the systems a fusion row combines. Systems come first in
/// the row list, so system names index rows directly.
fn fusion_components(name: &str, systems: &[&str]) -> Vec<usize> {
    let parts: Vec<&str> = name.split('+').map(str::trim).collect();
    let found: Option<Vec<usize>> = parts
        .iter()
        .map(|p| systems.iter().position(|s| s == p))
        .collect();
    match found {
        Some(idx) if parts.len() >= 2 => idx,
        _ => (0..systems.len()).collect(),
    }
}

pub fn format_relative(change: f64) -> String {
    format!("({change:+.2}%)")
}

impl Report {
    fn has_fusion(&self) -> bool {
        self.rows.iter().any(|r| r.kind == RowKind::Fusion)
    }

    pub fn to_markdown(&self) -> String {
        let fusion = self.has_fusion();
        let mut out = String::from("| network |");
        let mut rule = String::from("|---|");
        for c in &self.columns {
            let _ = write!(out, " {c} |");
            rule.push_str("---:|");
            if fusion {
                out.push_str(" rel. |");
                rule.push_str("---:|");
            }
        }
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "| {} |", r.name);
            for c in 0..self.columns.len() {
                let value = format!("{:.2}", r.eer[c]);
                if r.best[c] {
                    let _ = write!(out, " **{value}** |");
                } else {
                    let _ = write!(out, " {value} |");
                }
                if fusion {
                    match r.relative[c] {
                        Some(rel) => {
                            let _ = write!(out, " {} |", format_relative(rel));
                        }
                        None => out.push_str(" - |"),
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,kind,column,eer_percent,relative_change_percent,best\n");
        for r in &self.rows {
            for (c, col) in self.columns.iter().enumerate() {
                let rel = r.relative[c].map(|v| format!("{v:.4}")).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.name, r.kind, col, r.eer[c], rel, r.best[c]
                );
            }
        }
        out
    }
}

/// A named series of (x, y) points for one figure panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Wide CSV: one row per x value, one column per series.
pub fn series_to_csv(x_label: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::usage("figure needs at least one non-empty series"));
    }
    let xs: BTreeSet<u64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0.to_bits()))
        .collect();
    let mut xs: Vec<f64> = xs.into_iter().map(f64::from_bits).collect();
    xs.sort_by(f64::total_cmp);
    let mut out = String::from(x_label);
    for s in series {
        let _ = write!(out, ",{}", s.name);
    }
    out.push('\n');
    for x in xs {
        let _ = write!(out, "{x}");
        for s in series {
            match s.points.iter().find(|p| p.0 == x) {
                Some(p) => {
                    let _ = write!(out, ",{}", p.1);
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 45.0;

impl Frame {
    fn from_points<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> Frame {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for &(x, y) in points {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if f.x1 <= f.x0 {
            f.x0 -= 0.5;
            f.x1 += 0.5;
        }
        if f.y1 <= f.y0 {
            f.y0 -= 0.5;
            f.y1 += 0.5;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (ax0, ax1, ay0, ay1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="18" font-size="13" text-anchor="middle">{}</text>"#,
            (ax0 + ax1) / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<polyline points="{ax0:.1},{ay0:.1} {ax0:.1},{ay1:.1} {ax1:.1},{ay1:.1}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let xv = self.x0 + t * (self.x1 - self.x0);
            let yv = self.y0 + t * (self.y1 - self.y0);
            let (tx, ty) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                out,
                r#"<text x="{tx:.1}" y="{:.1}" font-size="10" text-anchor="middle">{xv:.3}</text>"#,
                ay1 + 14.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{yv:.3}</text>"#,
                ax0 - 4.0,
                ty + 3.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            (ax0 + ax1) / 2.0,
            H - 8.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            (ay0 + ay1) / 2.0,
            (ay0 + ay1) / 2.0,
            escape(y_label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn svg_open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Self-contained line plot with axes and legend.
pub fn line_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::usage("figure needs at least one non-empty series"));
    }
    let frame = Frame::from_points(series.iter().flat_map(|s| s.points.iter()));
    let mut out = svg_open();
    frame.axes(&mut out, title, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = s.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 14.0 * i as f64 + 6.0;
        let lx = W - RIGHT + 10.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            lx + 20.0,
            ly + 3.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Self-contained scatter plot.
pub fn scatter_svg(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[(f64, f64)],
) -> Result<String> {
    if points.is_empty() {
        return Err(Error::usage("scatter plot needs points"));
    }
    let frame = Frame::from_points(points.iter());
    let mut out = svg_open();
    frame.axes(&mut out, title, x_label, y_label);
    for &(x, y) in points {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.1}" cy="{:.1}" r="2" fill="#1f77b4" fill-opacity="0.6"/>"##,
            frame.px(x),
            frame.py(y)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(row: &str, kind: RowKind, column: &str, v: f64) -> EerEntry {
        EerEntry {
            row: row.into(),
            kind,
            column: column.into(),
            eer_percent: v,
        }
    }

    #[test]
    fn table_brackets_against_best_system() {
        let entries = vec![
            entry("SQ", RowKind::System, "chi2", 4.93),
            entry("MB2", RowKind::System, "chi2", 2.10),
            entry("R50", RowKind::System, "chi2", 1.66),
            entry("ALL", RowKind::Fusion, "chi2", 1.31),
        ];
        let report = build_report(&entries).unwrap();
        let md = report.to_markdown();
        assert!(md.contains("| ALL | **1.31** | (-21.08%) |"), "{md}");
        assert!(md.contains("| R50 | 1.66 | - |"), "{md}");
    }

    #[test]
    fn pair_fusion_uses_its_own_best_component() {
        let entries = vec![
            entry("SQ", RowKind::System, "cosine", 5.44),
            entry("MB2", RowKind::System, "cosine", 2.12),
            entry("R50", RowKind::System, "cosine", 1.73),
            entry("SQ+MB2", RowKind::Fusion, "cosine", 2.05),
        ];
        let report = build_report(&entries).unwrap();
        let rel = report.rows[3].relative[0].unwrap();
        assert!((rel - 100.0 * (2.05 - 2.12) / 2.12).abs() < 1e-12);
    }

    #[test]
    fn single_system_has_no_bracket_column() {
        let report = build_report(&[entry("R50", RowKind::System, "cosine", 1.73)]).unwrap();
        let md = report.to_markdown();
        assert!(!md.contains("rel."));
        assert!(!md.contains('('));
    }

    #[test]
    fn equal_fusion_is_plus_zero() {
        let report = build_report(&[
            entry("A", RowKind::System, "c", 2.0),
            entry("A+A", RowKind::Fusion, "c", 2.0),
        ])
        .unwrap();
        assert!(report.to_markdown().contains("(+0.00%)"));
    }

    #[test]
    fn missing_column_is_usage_error() {
        let err = build_report(&[
            entry("A", RowKind::System, "cosine", 2.0),
            entry("B", RowKind::System, "chi2", 2.0),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn series_csv_shape() {
        let series: Vec<Series> = ["SQ", "MB2", "R50"]
            .iter()
            .map(|n| Series {
                name: n.to_string(),
                points: (1..=5).map(|d| (d as f64, d as f64 * 0.5)).collect(),
            })
            .collect();
        let csv = series_to_csv("distance", &series).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        assert!(lines.iter().all(|l| l.split(',').count() == 4));
        assert!(series_to_csv("x", &[]).is_err());
        let a = line_svg("t", "x", "y", &series).unwrap();
        assert_eq!(a, line_svg("t", "x", "y", &series).unwrap());
        assert!(a.starts_with("<svg") && a.contains("R50"));
    }
}
