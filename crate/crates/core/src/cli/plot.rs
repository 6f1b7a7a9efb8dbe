//! Minimal deterministic SVG 1.1 line plots.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;

const PALETTE: [&str; 10] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac < 1.5 {
        1.0
    } else if frac < 3.0 {
        2.0
    } else if frac < 7.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders the series as polylines. With `log_y`, values are plotted as
/// `log10(max(y, floor))` where `floor` is the smallest positive value.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let floor = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .filter(|y| *y > 0.0 && y.is_finite())
        .fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 1e-300 };
    let ty = |y: f64| if log_y { y.max(floor).log10() } else { y };

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            let y = ty(y);
            if x.is_finite() && y.is_finite() {
                x_min = x_min.min(x);
                x_max = x_max.max(x);
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    if !x_min.is_finite() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    if y_max <= y_min {
        let pad = if y_min == 0.0 { 1.0 } else { 0.1 * y_min.abs() };
        y_min -= pad;
        y_max += pad;
    }
    if log_y {
        y_min = y_min.floor();
        y_max = y_max.ceil().max(y_min + 1.0);
    }

    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y_min) / (y_max - y_min)) * ph;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );

    let _ = writeln!(out, r##"<g stroke="#dddddd" stroke-width="1" font-family="sans-serif" font-size="11" fill="#333333">"##);
    let xs = nice_step(x_max - x_min, 8);
    let mut xt = (x_min / xs).ceil() * xs;
    while xt <= x_max + 1e-9 * xs {
        let px = sx(xt);
        let _ = writeln!(out, r#"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}"/>"#, TOP + ph);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{:.2}" stroke="none" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, tick_label(xt));
        xt += xs;
    }
    let ys = if log_y { nice_step(y_max - y_min, 6).max(1.0).round() } else { nice_step(y_max - y_min, 6) };
    let mut yt = (y_min / ys).ceil() * ys;
    while yt <= y_max + 1e-9 * ys {
        let py = sy(yt);
        let label = if log_y { format!("1e{}", yt.round() as i64) } else { tick_label(yt) };
        let _ = writeln!(out, r#"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}"/>"#, LEFT + pw);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" stroke="none" text-anchor="end">{label}</text>"#, LEFT - 6.0, py + 4.0);
        yt += ys;
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#333333" stroke-width="1"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in &s.points {
            let y = ty(y);
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
            }
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"><title>{}</title></polyline>"#,
            pts.trim_end(),
            escape(&s.label)
        );
    }
    if series.len() <= 10 {
        for (k, s) in series.iter().enumerate() {
            let y = TOP + 14.0 + 14.0 * k as f64;
            let x = LEFT + pw - 110.0;
            let color = PALETTE[k % PALETTE.len()];
            let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#, y - 4.0, x + 18.0, y - 4.0);
            let _ = writeln!(out, r#"<text x="{:.2}" y="{y:.2}" font-family="sans-serif" font-size="11">{}</text>"#, x + 24.0, escape(&s.label));
        }
    }
    let _ = writeln!(out, "</svg>");
    out
}
