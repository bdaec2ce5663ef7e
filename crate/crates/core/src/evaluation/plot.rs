use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// One forecast trace: truth, point forecast and interval band.
pub struct Trace<'a> {
    pub title: &'a str,
    pub truth: &'a [f64],
    pub forecast: &'a [f64],
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

const W: f64 = 900.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;

fn polyline(values: &[f64], x: &dyn Fn(usize) -> f64, y: &dyn Fn(f64) -> f64) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        let _ = write!(s, "{:.2},{:.2} ", x(i), y(*v));
    }
    s
}

/// Renders the trace as a standalone SVG string.
pub fn render_svg(t: &Trace<'_>) -> Result<String> {
    let n = t.truth.len();
    if n < 2 || [t.forecast.len(), t.lower.len(), t.upper.len()].iter().any(|l| *l != n) {
        return Err(Error::Validation("plot series must share a length of at least 2".into()));
    }
    let all = t.truth.iter().chain(t.lower).chain(t.upper).chain(t.forecast);
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = move |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n - 1) as f64;
    let y = move |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / span;

    let mut band = polyline(t.upper, &x, &y);
    let lower_rev: Vec<f64> = t.lower.iter().rev().copied().collect();
    let xr = move |i: usize| x(n - 1 - i);
    band.push_str(&polyline(&lower_rev, &xr, &y));

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, t.title);
    let _ = writeln!(s, r##"<polygon points="{band}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##);
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#, polyline(t.truth, &x, &y));
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="1.5"/>"##, polyline(t.forecast, &x, &y));
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">min {lo:.1}  max {hi:.1}</text>"#, H - 12.0);
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg(path: &Path, t: &Trace<'_>) -> Result<()> {
    std::fs::write(path, render_svg(t)?).map_err(|e| Error::io(path, e))
}
