//! Self-contained SVG figures from the documented CSV schemas. No display
//! server, no plotting dependency: charts are written as plain SVG text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// One row of `slack.csv` (shared with the oracle-verify command).
#[derive(Debug, Clone, Serialize)]
pub struct SlackRow {
    pub policy: u64,
    pub horizon: usize,
    pub arm: usize,
    pub gap: f64,
    pub budget: usize,
    pub event: String,
    pub p0_joint: f64,
    pub p1_joint: f64,
    pub bound: f64,
    pub slack_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    /// Mean regret against horizon, log-log, one curve per arm count
    /// (input: sweep.csv).
    Regret,
    /// Batches against block size, one curve per (K, T) cell
    /// (input: sweep.csv).
    Batches,
    /// Peak state bits against block size with the audited bound overlaid
    /// (input: sweep.csv).
    Bits,
    /// Change-of-measure slack ratio against the pull budget
    /// (input: slack.csv).
    Slack,
}

// ---------------------------------------------------------------------------
// CSV intake
// ---------------------------------------------------------------------------

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(|e| CliError::usage("CsvRead", format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map(|h| h.iter().map(str::to_string).collect())
            .unwrap_or_default();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| CliError::usage("CsvRead", e.to_string()))?;
            rows.push(record.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Result<usize, CliError> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::usage(
                "SchemaMismatch",
                format!("missing column '{name}' (have: {})", self.headers.join(",")),
            )
        })
    }

    fn f64(&self, row: &[String], col: usize) -> Option<f64> {
        row.get(col).and_then(|s| s.parse().ok())
    }
}

// ---------------------------------------------------------------------------
// Chart model and SVG rendering
// ---------------------------------------------------------------------------

pub enum SeriesStyle {
    Line,
    Dashed,
    Points,
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: SeriesStyle,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 78.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 58.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#e377c2",
];

impl Chart {
    /// Data range in transformed (post-log) coordinates, over the finite
    /// transformed points only; degenerate and empty ranges are widened.
    fn transformed_range(&self) -> ((f64, f64), (f64, f64)) {
        let tx = |v: f64| if self.log_x { v.log10() } else { v };
        let ty = |v: f64| if self.log_y { v.log10() } else { v };
        let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
        let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for &(x, y) in &s.points {
                let (x, y) = (tx(x), ty(y));
                if x.is_finite() && y.is_finite() {
                    xs = (xs.0.min(x), xs.1.max(x));
                    ys = (ys.0.min(y), ys.1.max(y));
                }
            }
        }
        if !xs.0.is_finite() || !ys.0.is_finite() {
            xs = (0.0, 1.0);
            ys = (0.0, 1.0);
        }
        if xs.0 == xs.1 {
            xs = (xs.0 - 0.5, xs.1 + 0.5);
        }
        if ys.0 == ys.1 {
            ys = (ys.0 - 0.5, ys.1 + 0.5);
        }
        (xs, ys)
    }

    pub fn render_svg(&self) -> String {
        let tx = |v: f64| if self.log_x { v.log10() } else { v };
        let ty = |v: f64| if self.log_y { v.log10() } else { v };
        let ((x0, x1), (y0, y1)) = self.transformed_range();
        let pad_x = (x1 - x0) * 0.04;
        let pad_y = (y1 - y0) * 0.06;
        let (x0, x1) = (x0 - pad_x, x1 + pad_x);
        let (y0, y1) = (y0 - pad_y, y1 + pad_y);
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let px = |x: f64| MARGIN_LEFT + (tx(x) - x0) / (x1 - x0) * plot_w;
        let py = |y: f64| MARGIN_TOP + plot_h - (ty(y) - y0) / (y1 - y0) * plot_h;

        let mut svg = String::new();
        let _ = write!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = write!(
            svg,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );

        // axes
        let axis = format!(
            r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#,
            l = MARGIN_LEFT,
            r = WIDTH - MARGIN_RIGHT,
            t = MARGIN_TOP,
            b = HEIGHT - MARGIN_BOTTOM,
        );
        svg.push_str(&axis);

        // ticks
        for (value, frac) in ticks(x0, x1, self.log_x) {
            let x = MARGIN_LEFT + frac * plot_w;
            let _ = write!(
                svg,
                r##"<line x1="{x}" y1="{b}" x2="{x}" y2="{t}" stroke="#dddddd"/><line x1="{x}" y1="{b}" x2="{x}" y2="{b2}" stroke="black"/><text x="{x}" y="{ly}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>"##,
                b = HEIGHT - MARGIN_BOTTOM,
                t = MARGIN_TOP,
                b2 = HEIGHT - MARGIN_BOTTOM + 5.0,
                ly = HEIGHT - MARGIN_BOTTOM + 18.0,
                label = format_tick(value),
            );
        }
        for (value, frac) in ticks(y0, y1, self.log_y) {
            let y = MARGIN_TOP + plot_h - frac * plot_h;
            let _ = write!(
                svg,
                r##"<line x1="{l}" y1="{y}" x2="{r}" y2="{y}" stroke="#dddddd"/><line x1="{l2}" y1="{y}" x2="{l}" y2="{y}" stroke="black"/><text x="{lx}" y="{ty}" font-family="sans-serif" font-size="11" text-anchor="end">{label}</text>"##,
                l = MARGIN_LEFT,
                r = WIDTH - MARGIN_RIGHT,
                l2 = MARGIN_LEFT - 5.0,
                lx = MARGIN_LEFT - 8.0,
                ty = y + 4.0,
                label = format_tick(value),
            );
        }

        // axis labels
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = write!(
            svg,
            r#"<text x="20" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            escape(&self.y_label)
        );

        // series; points that do not survive the log transform are skipped
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let visible: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter(|&&(x, y)| tx(x).is_finite() && ty(y).is_finite())
                .map(|&(x, y)| (px(x), py(y)))
                .collect();
            match s.style {
                SeriesStyle::Points => {
                    for &(cx, cy) in &visible {
                        let _ = write!(
                            svg,
                            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.5" fill="{color}" fill-opacity="0.7"/>"#
                        );
                    }
                }
                SeriesStyle::Line | SeriesStyle::Dashed => {
                    let dash = if matches!(s.style, SeriesStyle::Dashed) {
                        r#" stroke-dasharray="6,4""#
                    } else {
                        ""
                    };
                    let path: Vec<String> = visible
                        .iter()
                        .map(|&(cx, cy)| format!("{cx:.2},{cy:.2}"))
                        .collect();
                    let _ = write!(
                        svg,
                        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#,
                        path.join(" ")
                    );
                    for &(cx, cy) in &visible {
                        let _ = write!(
                            svg,
                            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.2" fill="{color}"/>"#
                        );
                    }
                }
            }
        }

        // legend
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let y = MARGIN_TOP + 10.0 + i as f64 * 16.0;
            let x = WIDTH - MARGIN_RIGHT - 170.0;
            let _ = write!(
                svg,
                r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
                x + 18.0,
                x + 24.0,
                y + 4.0,
                escape(&s.name)
            );
        }

        svg.push_str("</svg>\n");
        svg
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Tick positions as `(value, fraction of axis)`; decades on log axes.
fn ticks(lo: f64, hi: f64, log: bool) -> Vec<(f64, f64)> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return vec![];
    }
    let mut out = Vec::new();
    if log {
        let first = lo.ceil() as i64;
        let last = hi.floor().min(first as f64 + 24.0) as i64;
        for d in first..=last {
            out.push((10f64.powi(d as i32), (d as f64 - lo) / (hi - lo)));
        }
        if out.is_empty() {
            out.push((10f64.powf((lo + hi) / 2.0), 0.5));
        }
    } else {
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            out.push((v, i as f64 / 4.0));
        }
    }
    out
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let abs = v.abs();
    if !(0.01..10_000.0).contains(&abs) {
        format!("{v:.0e}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

// ---------------------------------------------------------------------------
// The plot command
// ---------------------------------------------------------------------------

/// Render `input` (a documented CSV schema) to a self-contained SVG.
pub fn cmd_plot(kind: PlotKind, input: &Path, out: &Path) -> Result<(), CliError> {
    let table = Table::read(input)?;
    let chart = match kind {
        PlotKind::Regret => regret_chart(&table)?,
        PlotKind::Batches => batches_chart(&table)?,
        PlotKind::Bits => bits_chart(&table)?,
        PlotKind::Slack => slack_chart(&table)?,
    };
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, chart.render_svg())?;
    Ok(())
}

fn ok_rows(table: &Table, status: usize) -> impl Iterator<Item = &Vec<String>> {
    table
        .rows
        .iter()
        .filter(move |r| r.get(status).map(String::as_str) == Some("ok"))
}

fn regret_chart(table: &Table) -> Result<Chart, CliError> {
    let (t_col, k_col, reg_col, status) = (
        table.column("horizon")?,
        table.column("arm_count")?,
        table.column("regret")?,
        table.column("status")?,
    );
    // mean regret per (K, T)
    let mut groups: BTreeMap<u64, BTreeMap<u64, (f64, u64)>> = BTreeMap::new();
    for row in ok_rows(table, status) {
        let (Some(t), Some(k), Some(reg)) = (
            table.f64(row, t_col),
            table.f64(row, k_col),
            table.f64(row, reg_col),
        ) else {
            continue;
        };
        let cell = groups
            .entry(k as u64)
            .or_default()
            .entry(t as u64)
            .or_insert((0.0, 0));
        cell.0 += reg;
        cell.1 += 1;
    }
    let series = groups
        .into_iter()
        .map(|(k, by_t)| Series {
            name: format!("K = {k}"),
            points: by_t
                .into_iter()
                .map(|(t, (sum, n))| (t as f64, sum / n as f64))
                .filter(|&(x, y)| x > 0.0 && y > 0.0)
                .collect(),
            style: SeriesStyle::Line,
        })
        .collect();
    Ok(Chart {
        title: "Mean regret vs horizon".into(),
        x_label: "horizon T (log)".into(),
        y_label: "mean regret (log)".into(),
        log_x: true,
        log_y: true,
        series,
    })
}

fn batches_chart(table: &Table) -> Result<Chart, CliError> {
    let (t_col, k_col, s_col, b_col, status) = (
        table.column("horizon")?,
        table.column("arm_count")?,
        table.column("block_size")?,
        table.column("batches")?,
        table.column("status")?,
    );
    let mut groups: BTreeMap<(u64, u64), BTreeMap<u64, (f64, u64)>> = BTreeMap::new();
    for row in ok_rows(table, status) {
        let (Some(t), Some(k), Some(s), Some(b)) = (
            table.f64(row, t_col),
            table.f64(row, k_col),
            table.f64(row, s_col),
            table.f64(row, b_col),
        ) else {
            continue;
        };
        let cell = groups
            .entry((k as u64, t as u64))
            .or_default()
            .entry(s as u64)
            .or_insert((0.0, 0));
        cell.0 += b;
        cell.1 += 1;
    }
    let series = groups
        .into_iter()
        .map(|((k, t), by_s)| Series {
            name: format!("K = {k}, T = {t}"),
            points: by_s
                .into_iter()
                .map(|(s, (sum, n))| (s as f64, sum / n as f64))
                .collect(),
            style: SeriesStyle::Line,
        })
        .collect();
    Ok(Chart {
        title: "Batches vs block size".into(),
        x_label: "block size S".into(),
        y_label: "batches B".into(),
        log_x: false,
        log_y: false,
        series,
    })
}

fn bits_chart(table: &Table) -> Result<Chart, CliError> {
    let (t_col, k_col, s_col, bits_col, status) = (
        table.column("horizon")?,
        table.column("arm_count")?,
        table.column("block_size")?,
        table.column("peak_bits")?,
        table.column("status")?,
    );
    let mut groups: BTreeMap<(u64, u64), BTreeMap<u64, u64>> = BTreeMap::new();
    for row in ok_rows(table, status) {
        let (Some(t), Some(k), Some(s), Some(bits)) = (
            table.f64(row, t_col),
            table.f64(row, k_col),
            table.f64(row, s_col),
            table.f64(row, bits_col),
        ) else {
            continue;
        };
        let peak = groups
            .entry((k as u64, t as u64))
            .or_default()
            .entry(s as u64)
            .or_insert(0);
        *peak = (*peak).max(bits as u64);
    }
    let mut series: Vec<Series> = Vec::new();
    let mut bound_done: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for ((k, t), by_s) in &groups {
        series.push(Series {
            name: format!("peak K = {k}, T = {t}"),
            points: by_s.iter().map(|(&s, &b)| (s as f64, b as f64)).collect(),
            style: SeriesStyle::Line,
        });
        bound_done
            .entry(*t)
            .or_default()
            .extend(by_s.keys().copied());
    }
    for (t, mut svals) in bound_done {
        svals.sort_unstable();
        svals.dedup();
        let width = batchmem::bits::width_for_max(t) as f64;
        series.push(Series {
            name: format!("bound (S+12)*8*ceil(log2(T+1)), T = {t}"),
            points: svals
                .into_iter()
                .map(|s| (s as f64, (s as f64 + 12.0) * 8.0 * width))
                .collect(),
            style: SeriesStyle::Dashed,
        });
    }
    Ok(Chart {
        title: "Peak persistent-state bits vs block size".into(),
        x_label: "block size S".into(),
        y_label: "bits".into(),
        log_x: false,
        log_y: false,
        series,
    })
}

fn slack_chart(table: &Table) -> Result<Chart, CliError> {
    let (n_col, ratio_col) = (table.column("budget")?, table.column("slack_ratio")?);
    let mut points = Vec::new();
    for row in &table.rows {
        let (Some(n), Some(r)) = (table.f64(row, n_col), table.f64(row, ratio_col)) else {
            continue;
        };
        points.push((n, r));
    }
    let max_n = points.iter().map(|p| p.0).fold(1.0, f64::max);
    let series = vec![
        Series {
            name: "slack ratio".into(),
            points,
            style: SeriesStyle::Points,
        },
        Series {
            name: "tightness limit".into(),
            points: vec![(0.0, 1.0), (max_n, 1.0)],
            style: SeriesStyle::Dashed,
        },
    ];
    Ok(Chart {
        title: "Change-of-measure slack ratio vs pull budget".into(),
        x_label: "budget n".into(),
        y_label: "P0 / bound".into(),
        log_x: false,
        log_y: false,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_empty_axes() {
        let chart = Chart {
            title: "empty".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: false,
            log_y: false,
            series: vec![],
        };
        let svg = chart.render_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn renders_log_log_series() {
        let chart = Chart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: true,
            log_y: true,
            series: vec![Series {
                name: "s".into(),
                points: vec![(10.0, 100.0), (100.0, 316.0), (1000.0, 1000.0)],
                style: SeriesStyle::Line,
            }],
        };
        let svg = chart.render_svg();
        assert!(svg.contains("polyline"));
        assert!(svg.contains("s</text>"));
    }
}
