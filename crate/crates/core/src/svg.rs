//! Minimal SVG rendering for curves, confidence bands and stacked areas.

use std::fmt::Write;

use crate::meta::{confidence_band, DominanceCurve, HeterogeneityCurve, MetaError, MetaFit};

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 55.0;

#[derive(Clone, Debug)]
pub struct Line {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dashed: bool,
}

#[derive(Clone, Debug)]
pub struct Band {
    pub x: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// A line chart; non-finite values break lines and bands.
#[derive(Clone, Debug, Default)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub lines: Vec<Line>,
    pub bands: Vec<Band>,
    pub reference_y: Option<f64>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT
            - MARGIN_BOTTOM
            - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Splits indices into runs where every listed series is finite.
fn finite_runs(n: usize, ok: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
    let mut runs = Vec::new();
    let mut current = Vec::new();
    for i in 0..n {
        if ok(i) {
            current.push(i);
        } else if !current.is_empty() {
            runs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        runs.push(current);
    }
    runs
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (WIDTH - MARGIN_RIGHT + MARGIN_LEFT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (top, bottom) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
    let _ = write!(
        out,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    for t in nice_ticks(f.x0, f.x1) {
        let x = f.px(t);
        let _ = write!(
            out,
            r#"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            bottom + 5.0,
            bottom + 18.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(f.y0, f.y1) {
        let y = f.py(t);
        let _ = write!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 5.0,
            left - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = write!(
        out,
        r#"<text transform="translate(18,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (top + bottom) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = write!(
            out,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            y - 10.0,
            x + 18.0,
            y,
            escape(label)
        );
    }
}

impl Figure {
    pub fn render(&self) -> String {
        let xs = self
            .lines
            .iter()
            .flat_map(|l| l.x.iter().copied())
            .chain(self.bands.iter().flat_map(|b| b.x.iter().copied()));
        let (x0, x1) = extent(xs);
        let ys = self
            .lines
            .iter()
            .flat_map(|l| l.y.iter().copied())
            .chain(
                self.bands
                    .iter()
                    .flat_map(|b| b.low.iter().chain(&b.high).copied()),
            )
            .chain(self.reference_y);
        let (y0, y1) = extent(ys);
        let pad = 0.05 * (y1 - y0);
        let frame = Frame {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
        };

        let mut out = String::new();
        header(&mut out, &self.title);
        for (k, band) in self.bands.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let n = band.x.len().min(band.low.len()).min(band.high.len());
            for run in finite_runs(n, |i| band.low[i].is_finite() && band.high[i].is_finite()) {
                let mut points = String::new();
                for &i in &run {
                    let _ = write!(
                        points,
                        "{:.2},{:.2} ",
                        frame.px(band.x[i]),
                        frame.py(band.high[i])
                    );
                }
                for &i in run.iter().rev() {
                    let _ = write!(
                        points,
                        "{:.2},{:.2} ",
                        frame.px(band.x[i]),
                        frame.py(band.low[i])
                    );
                }
                let _ = write!(
                    out,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                    points.trim_end()
                );
            }
        }
        if let Some(r) = self.reference_y {
            let y = frame.py(r);
            let _ = write!(
                out,
                r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
                WIDTH - MARGIN_RIGHT
            );
        }
        let mut entries = Vec::new();
        for (k, line) in self.lines.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let n = line.x.len().min(line.y.len());
            let dash = if line.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            for run in finite_runs(n, |i| line.y[i].is_finite() && line.x[i].is_finite()) {
                let points: Vec<String> = run
                    .iter()
                    .map(|&i| format!("{:.2},{:.2}", frame.px(line.x[i]), frame.py(line.y[i])))
                    .collect();
                let _ = write!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
                    points.join(" ")
                );
            }
            entries.push((line.label.clone(), color));
        }
        axes(&mut out, &frame, &self.x_label, &self.y_label);
        legend(&mut out, &entries);
        out.push_str("</svg>\n");
        out
    }
}

/// Arranges rendered figures in a grid, `columns` per row.
pub fn panel(figures: &[String], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = figures.len().div_ceil(columns).max(1);
    let (w, h) = (WIDTH * columns as f64, HEIGHT * rows as f64);
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    for (k, fig) in figures.iter().enumerate() {
        let (x, y) = (WIDTH * (k % columns) as f64, HEIGHT * (k / columns) as f64);
        let inner = fig
            .trim_end()
            .replacen("<svg ", &format!(r#"<svg x="{x}" y="{y}" "#), 1);
        out.push_str(&inner);
    }
    out.push_str("</svg>\n");
    out
}

/// Stacked areas of per-series fractions that sum to one at each x.
pub fn stacked_area(
    title: &str,
    x_label: &str,
    x: &[f64],
    labels: &[String],
    fractions: &[Vec<f64>],
) -> String {
    let (x0, x1) = extent(x.iter().copied());
    let frame = Frame {
        x0,
        x1,
        y0: 0.0,
        y1: 1.0,
    };
    let mut out = String::new();
    header(&mut out, title);
    let mut lower = vec![0.0; x.len()];
    let mut entries = Vec::new();
    for (k, row) in fractions.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let upper: Vec<f64> = lower
            .iter()
            .zip(row)
            .map(|(l, f)| l + if f.is_finite() { *f } else { 0.0 })
            .collect();
        let mut points = String::new();
        for i in 0..x.len() {
            let _ = write!(points, "{:.2},{:.2} ", frame.px(x[i]), frame.py(upper[i]));
        }
        for i in (0..x.len()).rev() {
            let _ = write!(points, "{:.2},{:.2} ", frame.px(x[i]), frame.py(lower[i]));
        }
        let _ = write!(
            out,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.85" stroke="none"/>"#,
            points.trim_end()
        );
        entries.push((labels.get(k).cloned().unwrap_or_default(), color));
        lower = upper;
    }
    axes(&mut out, &frame, x_label, "share of pooled weight");
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Cohort curves, pooled curve and its `(1 - alpha)` band against `x`.
pub fn meta_plot(
    meta: &MetaFit,
    x: &[f64],
    x_label: &str,
    alpha: f64,
) -> Result<String, MetaError> {
    let (low, high) = confidence_band(meta, alpha)?;
    let mut lines: Vec<Line> = vec![Line {
        label: format!("pooled ({})", meta.method.name()),
        x: x.to_vec(),
        y: meta.pooled_fit.clone(),
        dashed: false,
    }];
    for c in &meta.per_cohort {
        lines.push(Line {
            label: c.label.clone(),
            x: x.to_vec(),
            y: c.fit.clone(),
            dashed: true,
        });
    }
    let figure = Figure {
        title: meta.term.clone(),
        x_label: x_label.into(),
        y_label: "estimate".into(),
        lines,
        bands: vec![Band {
            x: x.to_vec(),
            low,
            high,
        }],
        reference_y: Some(0.0),
    };
    Ok(figure.render())
}

pub fn heterogeneity_plot(curve: &HeterogeneityCurve, x: &[f64], x_label: &str) -> String {
    let excess: Vec<f64> = curve
        .q
        .iter()
        .zip(&curve.df)
        .map(|(q, &d)| q - d as f64)
        .collect();
    Figure {
        title: "Cochran's Q minus df".into(),
        x_label: x_label.into(),
        y_label: "Q - df".into(),
        lines: vec![Line {
            label: "Q - df".into(),
            x: x.to_vec(),
            y: excess,
            dashed: false,
        }],
        bands: vec![Band {
            x: x.to_vec(),
            low: curve.ci_low.clone(),
            high: curve.ci_high.clone(),
        }],
        reference_y: Some(0.0),
    }
    .render()
}

pub fn dominance_plot(curve: &DominanceCurve, x: &[f64], x_label: &str) -> String {
    stacked_area("Dominance", x_label, x, &curve.labels, &curve.fractions)
}
