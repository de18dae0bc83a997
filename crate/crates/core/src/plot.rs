//! Self-contained SVG figures: yearly activity curves with changepoint markers,
//! and effect-versus-window curves with ±2·SE bands.
//!
//! Output is a pure function of the inputs; coordinates are printed with two
//! decimals so identical inputs give byte-identical files.

use std::fmt::Write;

use chrono::{Datelike, NaiveDate};

use crate::did::EffectRecord;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 40.0;

const YEAR_COLORS: [&str; 5] = ["#9e9e9e", "#5c7cab", "#c0392b", "#2e8b57", "#8e44ad"];
const MONTHS: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];

/// Linear map from data space to the plotting area.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x0 + 0.5) };
        let (y0, y1) = if y1 > y0 { (y0, y1) } else { (y0 - 0.5, y0 + 0.5) };
        Frame { x0, x1, y0, y1 }
    }

    pub fn sx(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    pub fn sy(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }

    /// SVG units per data unit on the y axis.
    pub fn y_scale(&self) -> f64 {
        (HEIGHT - TOP - BOTTOM) / (self.y1 - self.y0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round tick step covering `span` with about `target` intervals.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let n = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    };
    n * mag
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn open_svg(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{LEFT}" y="20" font-size="14">{}</text>"#, escape(title));
}

fn y_axis(out: &mut String, f: &Frame, label: &str) {
    let step = nice_step(f.y1 - f.y0, 5.0);
    let mut v = (f.y0 / step).ceil() * step;
    while v <= f.y1 + step * 1e-9 {
        let y = f.sy(v);
        let _ = writeln!(
            out,
            r##"<line class="grid" x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e6e6e6"/>"##,
            WIDTH - RIGHT
        );
        let shown = if v.abs() < step * 1e-9 { 0.0 } else { v };
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_tick(shown, step));
        v += step;
    }
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        escape(label)
    );
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}

fn frame_box(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<rect class="frame" x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );
}

fn polyline(out: &mut String, class: &str, color: &str, pts: &[(f64, f64)], extra: &str) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.5"{extra} points="{}"/>"#,
        coords.join(" ")
    );
}

/// One year's series, dates within that year.
#[derive(Debug, Clone, PartialEq)]
pub struct YearSeries {
    pub year: i32,
    pub points: Vec<(NaiveDate, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerKind {
    Mobility,
    Normality,
}

impl MarkerKind {
    fn label(self) -> &'static str {
        match self {
            MarkerKind::Mobility => "mobility",
            MarkerKind::Normality => "normality",
        }
    }
}

/// Rolling-average curves of several years on a shared day-of-year axis, with
/// one vertical line per changepoint marker.
pub fn activity_svg(title: &str, y_label: &str, years: &[YearSeries], markers: &[(MarkerKind, NaiveDate)]) -> String {
    let day = |d: NaiveDate| f64::from(d.ordinal0());
    let values = years.iter().flat_map(|y| y.points.iter().map(|p| p.1));
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { padded_range(lo, hi) } else { (0.0, 1.0) };
    let f = Frame::new(0.0, 365.0, lo, hi);

    let mut out = String::new();
    open_svg(&mut out, title);
    y_axis(&mut out, &f, y_label);
    for (m, name) in MONTHS.iter().enumerate() {
        let first = NaiveDate::from_ymd_opt(2021, m as u32 + 1, 1).expect("valid month");
        let x = f.sx(day(first));
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}">{name}</text>"#, HEIGHT - BOTTOM + 16.0);
    }
    for (i, y) in years.iter().enumerate() {
        let color = YEAR_COLORS[i % YEAR_COLORS.len()];
        let pts: Vec<(f64, f64)> = y.points.iter().map(|(d, v)| (f.sx(day(*d)), f.sy(*v))).collect();
        polyline(&mut out, "series", color, &pts, &format!(r#" data-year="{}""#, y.year));
        let ly = TOP + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - RIGHT - 6.0,
            y.year
        );
    }
    for (kind, date) in markers {
        let x = f.sx(day(*date));
        let dash = match kind {
            MarkerKind::Mobility => "",
            MarkerKind::Normality => r#" stroke-dasharray="4 3""#,
        };
        let _ = writeln!(
            out,
            r#"<line class="cp-marker" data-kind="{}" data-date="{date}" x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"{dash}/>"#,
            kind.label(),
            HEIGHT - BOTTOM
        );
    }
    frame_box(&mut out);
    out.push_str("</svg>\n");
    out
}

/// Effect estimates against window index, with a shaded `[ci_lo, ci_hi]` band.
pub fn effects_svg(title: &str, records: &[EffectRecord]) -> String {
    let (lo, hi) = records
        .iter()
        .fold((0.0f64, 0.0f64), |(lo, hi), r| (lo.min(r.ci_lo), hi.max(r.ci_hi)));
    let (lo, hi) = padded_range(lo, hi);
    let n_max = records.iter().map(|r| r.n).max().unwrap_or(1).max(1) as f64;
    let f = Frame::new(0.0, n_max, lo, hi);

    let mut out = String::new();
    open_svg(&mut out, title);
    y_axis(&mut out, &f, "effect (log scale)");
    let step = nice_step(n_max, 6.0).max(1.0);
    let mut n = 0.0;
    while n <= n_max {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#, f.sx(n), HEIGHT - BOTTOM + 16.0);
        n += step;
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">days since changepoint (window start)</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 6.0
    );
    if !records.is_empty() {
        let upper = records.iter().map(|r| format!("{:.2},{:.2}", f.sx(r.n as f64), f.sy(r.ci_hi)));
        let lower = records.iter().rev().map(|r| format!("{:.2},{:.2}", f.sx(r.n as f64), f.sy(r.ci_lo)));
        let pts: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            out,
            r##"<polygon class="ci-band" fill="#5c7cab" fill-opacity="0.25" stroke="none" points="{}"/>"##,
            pts.join(" ")
        );
    }
    let zero = f.sy(0.0);
    let _ = writeln!(
        out,
        r#"<line class="zero-line" x1="{LEFT:.2}" y1="{zero:.2}" x2="{:.2}" y2="{zero:.2}" stroke="black" stroke-dasharray="2 2"/>"#,
        WIDTH - RIGHT
    );
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (f.sx(r.n as f64), f.sy(r.delta))).collect();
    polyline(&mut out, "effect-line", "#1f3b63", &pts, "");
    frame_box(&mut out);
    out.push_str("</svg>\n");
    out
}
