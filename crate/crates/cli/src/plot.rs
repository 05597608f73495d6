//! Static SVG line plots of artifact CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use crate::args::PlotKind;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        if rows.is_empty() {
            bail!("{} has no data rows", path.display());
        }
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("schema mismatch: column `{name}` missing (have {})", self.header.join(",")))
    }

    /// Empty cells read as `None`.
    fn num(&self, row: usize, col: usize) -> Result<Option<f64>> {
        let cell = &self.rows[row][col];
        if cell.is_empty() {
            return Ok(None);
        }
        cell.parse::<f64>().map(Some).map_err(|_| anyhow!("row {}: `{cell}` is not a number", row + 2))
    }
}

/// Build the figure for `kind` from the CSV at `path`.
pub fn figure_from_csv(path: &Path, kind: PlotKind, level: usize, max_lines: usize) -> Result<Figure> {
    let t = Table::read(path)?;
    match kind {
        PlotKind::Slice => {
            let (cl, cn, cx, cv) = (t.col("level")?, t.col("node")?, t.col("x1")?, t.col("value")?);
            if t.header.iter().any(|h| h == "x2") {
                bail!("slice plots need a one-dimensional snapshot");
            }
            let mut nodes: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for r in 0..t.rows.len() {
                let l = t.num(r, cl)?.ok_or_else(|| anyhow!("empty level"))? as usize;
                if l != level {
                    continue;
                }
                let n = t.num(r, cn)?.ok_or_else(|| anyhow!("empty node"))? as usize;
                if nodes.len() >= max_lines && !nodes.contains_key(&n) {
                    continue;
                }
                let (Some(x), Some(v)) = (t.num(r, cx)?, t.num(r, cv)?) else { continue };
                nodes.entry(n).or_default().push((x, v));
            }
            if nodes.is_empty() {
                bail!("no rows at level {level}");
            }
            Ok(Figure {
                title: format!("solution at level {level}"),
                x_label: "x".into(),
                y_label: "value".into(),
                log_x: false,
                log_y: false,
                series: nodes.into_iter().map(|(n, points)| Series { label: format!("node {n}"), points }).collect(),
            })
        }
        PlotKind::Penalty => {
            let (cn, cm) = (t.col("n")?, t.col("penalty_mass")?);
            let mut points = Vec::new();
            for r in 0..t.rows.len() {
                if let (Some(n), Some(m)) = (t.num(r, cn)?, t.num(r, cm)?) {
                    points.push((n, m));
                }
            }
            Ok(Figure {
                title: "penalty mass".into(),
                x_label: "n".into(),
                y_label: "E sum n (u - xi)^- dt dx".into(),
                log_x: true,
                log_y: false,
                series: vec![Series { label: "penalty mass".into(), points }],
            })
        }
        PlotKind::Residual => {
            let ch = t.col("h")?;
            let metrics: Vec<(usize, String)> = ["l2_error", "energy_residual", "equivalence_residual", "obstacle_violation"]
                .iter()
                .filter_map(|m| t.col(m).ok().map(|c| (c, m.to_string())))
                .collect();
            if metrics.is_empty() {
                bail!("schema mismatch: no error columns");
            }
            let mut series = Vec::new();
            for (c, label) in metrics {
                let mut points = Vec::new();
                for r in 0..t.rows.len() {
                    if let (Some(h), Some(e)) = (t.num(r, ch)?, t.num(r, c)?) {
                        if h > 0.0 && e > 0.0 {
                            points.push((h, e));
                        }
                    }
                }
                if !points.is_empty() {
                    series.push(Series { label, points });
                }
            }
            if series.is_empty() {
                bail!("no positive errors to plot");
            }
            Ok(Figure {
                title: "errors under refinement".into(),
                x_label: "h".into(),
                y_label: "error".into(),
                log_x: true,
                log_y: true,
                series,
            })
        }
    }
}

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi > lo) {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

pub fn render_svg(fig: &Figure) -> String {
    let tx = |v: f64| if fig.log_x { v.log10() } else { v };
    let ty = |v: f64| if fig.log_y { v.log10() } else { v };
    let all = || fig.series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = axis_range(all().map(|p| tx(p.0)));
    let (y0, y1) = axis_range(all().map(|p| ty(p.1)));
    let px = |v: f64| MARGIN + (tx(v) - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (ty(v) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&fig.title));
    let (l, r, b, t) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    let tick = |v: f64, log: bool| if log { format!("1e{v:.1}") } else { format!("{v:.3e}") };
    let _ = writeln!(s, r#"<text x="{l}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#, b + 16.0, tick(x0, fig.log_x));
    let _ = writeln!(s, r#"<text x="{r}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#, b + 16.0, tick(x1, fig.log_x));
    let _ = writeln!(s, r#"<text x="{}" y="{b}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#, l - 4.0, tick(y0, fig.log_y));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#, l - 4.0, t + 4.0, tick(y1, fig.log_y));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 20.0, escape(&fig.x_label));
    let _ = writeln!(s, r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#, HEIGHT / 2.0, HEIGHT / 2.0, escape(&fig.y_label));
    for (i, series) in fig.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#, pts.join(" "), escape(&series.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
