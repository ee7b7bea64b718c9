//! Minimal hand-written SVG charts: line plots, bar plots and a confusion heatmap.

use std::fmt::Write;

use crate::dataset::NUM_CLASSES;
use crate::metrics::ConfusionMatrix;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const TICKS: usize = 5;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">
<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>
<text x="{x}" y="24" text-anchor="middle" font-size="15">{t}</text>"#,
        x = width / 2.0,
        t = escape(title)
    );
}

/// Padded value range that always has positive width.
fn span(values: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
    }
    let pad = (hi - lo) * 0.05;
    (if include_zero && lo == 0.0 { 0.0 } else { lo - pad }, hi + pad)
}

fn tick_label(v: f64, range: f64) -> String {
    if range >= 20.0 {
        format!("{v:.0}")
    } else if range >= 2.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.2}")
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str, x_ticks: bool) {
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            out,
            r##"<g stroke="#333" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"##
        );
        let yr = self.y.1 - self.y.0;
        for i in 0..=TICKS {
            let v = self.y.0 + yr * i as f64 / TICKS as f64;
            let y = self.py(v);
            let _ = writeln!(
                out,
                r##"<line x1="{a}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="#333"/><text x="{t}" y="{ty:.2}" text-anchor="end">{l}</text>"##,
                a = x0 - 4.0,
                t = x0 - 7.0,
                ty = y + 4.0,
                l = tick_label(v, yr)
            );
        }
        if x_ticks {
            let xr = self.x.1 - self.x.0;
            let step = (xr / TICKS as f64).ceil().max(1.0);
            let mut v = self.x.0;
            while v <= self.x.1 + 1e-9 {
                let x = self.px(v);
                let _ = writeln!(
                    out,
                    r##"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{b}" stroke="#333"/><text x="{x:.2}" y="{ty}" text-anchor="middle">{l}</text>"##,
                    b = y0 + 4.0,
                    ty = y0 + 18.0,
                    l = tick_label(v, xr.max(20.0))
                );
                v += step;
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{cx}" y="{by}" text-anchor="middle">{xl}</text>
<text x="16" y="{cy}" text-anchor="middle" transform="rotate(-90 16 {cy})">{yl}</text>"#,
            cx = (x0 + x1) / 2.0,
            by = HEIGHT - 12.0,
            cy = (y0 + y1) / 2.0,
            xl = escape(x_label),
            yl = escape(y_label)
        );
    }
}

fn legend(out: &mut String, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{ry}" width="14" height="4" fill="{c}"/><text x="{tx}" y="{ty}">{l}</text>"#,
            ry = y - 2.0,
            c = PALETTE[i % PALETTE.len()],
            tx = x + 20.0,
            ty = y + 4.0,
            l = escape(label)
        );
    }
}

/// Line chart with one `<polyline>` per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = || series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = || series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let (xlo, xhi) = xs().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let x = if xlo.is_finite() && xhi > xlo { (xlo, xhi) } else if xlo.is_finite() { (xlo - 1.0, xlo + 1.0) } else { (0.0, 1.0) };
    let frame = Frame { x, y: span(ys(), false) };

    let mut out = String::new();
    open(&mut out, WIDTH, HEIGHT, title);
    frame.axes(&mut out, x_label, y_label, true);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline data-series="{l}" fill="none" stroke="{c}" stroke-width="2" points="{p}"/>"#,
            l = escape(&s.label),
            c = PALETTE[i % PALETTE.len()],
            p = pts.join(" ")
        );
    }
    legend(&mut out, &series.iter().map(|s| s.label.as_str()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Vertical bar chart, one `<rect class="bar">` per entry.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let frame = Frame {
        x: (0.0, bars.len().max(1) as f64),
        y: span(bars.iter().map(|b| b.1), true),
    };
    let mut out = String::new();
    open(&mut out, WIDTH, HEIGHT, title);
    frame.axes(&mut out, "", y_label, false);
    let slot = frame.px(1.0) - frame.px(0.0);
    for (i, (label, v)) in bars.iter().enumerate() {
        let (top, base) = (frame.py(*v), frame.py(0.0));
        let x = frame.px(i as f64) + slot * 0.2;
        let _ = writeln!(
            out,
            r#"<rect class="bar" data-label="{l}" x="{x:.2}" y="{top:.2}" width="{w:.2}" height="{h:.2}" fill="{c}"/>
<text x="{cx:.2}" y="{ly:.2}" text-anchor="middle">{l}</text>
<text x="{cx:.2}" y="{vy:.2}" text-anchor="middle">{v:.2}</text>"#,
            l = escape(label),
            w = slot * 0.6,
            h = (base - top).max(0.0),
            c = PALETTE[i % PALETTE.len()],
            cx = x + slot * 0.3,
            ly = HEIGHT - BOTTOM + 18.0,
            vy = top - 6.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Gray level of a cell: 255 for zero, 0 for the largest count.
pub fn shade(count: u64, max: u64) -> u8 {
    if max == 0 {
        255
    } else {
        255 - ((count as f64 / max as f64) * 255.0).round() as u8
    }
}

/// Confusion heatmap; rows are true classes, columns predictions, darker is larger.
pub fn heatmap(title: &str, m: &ConfusionMatrix) -> String {
    const CELL: f64 = 36.0;
    const ORIGIN: f64 = 70.0;
    let size = ORIGIN + CELL * NUM_CLASSES as f64 + 20.0;
    let max = m.counts.iter().flatten().copied().max().unwrap_or(0);
    let mut out = String::new();
    open(&mut out, size, size + 20.0, title);
    for (t, row) in m.counts.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            let g = shade(count, max);
            let (x, y) = (ORIGIN + CELL * p as f64, ORIGIN + CELL * t as f64);
            let ink = if g < 128 { "white" } else { "black" };
            let _ = writeln!(
                out,
                r##"<rect class="cell" data-true="{t}" data-pred="{p}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})" stroke="#ccc"/><text x="{cx}" y="{cy}" text-anchor="middle" font-size="10" fill="{ink}">{count}</text>"##,
                cx = x + CELL / 2.0,
                cy = y + CELL / 2.0 + 4.0
            );
        }
    }
    for k in 0..NUM_CLASSES {
        let c = ORIGIN + CELL * k as f64 + CELL / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="{c}" y="{ty}" text-anchor="middle">{k}</text><text x="{lx}" y="{ly}" text-anchor="end">{k}</text>"#,
            ty = ORIGIN - 6.0,
            lx = ORIGIN - 6.0,
            ly = c + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{cx}" y="{py}" text-anchor="middle">predicted</text>
<text x="20" y="{cy}" text-anchor="middle" transform="rotate(-90 20 {cy})">true</text>"#,
        cx = ORIGIN + CELL * 5.0,
        py = ORIGIN - 24.0,
        cy = ORIGIN + CELL * 5.0
    );
    out.push_str("</svg>\n");
    out
}
