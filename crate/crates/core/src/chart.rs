//! Minimal grouped bar charts as standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

const BAR_WIDTH: f64 = 18.0;
const GROUP_GAP: f64 = 16.0;
const PLOT_HEIGHT: f64 = 240.0;
const MARGIN_LEFT: f64 = 48.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 64.0;
const ACTUAL_COLOR: &str = "#1f77b4";
const PREDICTED_COLOR: &str = "#ff7f0e";

#[derive(Debug, Clone, PartialEq)]
pub struct BarPair {
    pub label: String,
    pub actual: f64,
    pub predicted: f64,
}

impl BarPair {
    pub fn new(label: impl Into<String>, actual: f64, predicted: f64) -> Self {
        Self { label: label.into(), actual, predicted }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders actual (left, blue) and predicted (right, orange) bars per
/// label. Negative or non-finite values are drawn as zero-height bars.
pub fn bar_chart_svg(title: &str, pairs: &[BarPair]) -> String {
    let clean = |v: f64| if v.is_finite() && v > 0.0 { v } else { 0.0 };
    let max = pairs.iter().map(|p| clean(p.actual).max(clean(p.predicted))).fold(0.0, f64::max);
    let scale_max = if max > 0.0 { max } else { 1.0 };
    let group = 2.0 * BAR_WIDTH + GROUP_GAP;
    let width = MARGIN_LEFT + GROUP_GAP + group * pairs.len() as f64 + 120.0;
    let height = MARGIN_TOP + PLOT_HEIGHT + MARGIN_BOTTOM;
    let base = MARGIN_TOP + PLOT_HEIGHT;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="20" font-size="14">{}</text>"#, MARGIN_LEFT, escape(title));
    // axes
    let _ = writeln!(svg, r#"<line x1="{MARGIN_LEFT:.1}" y1="{MARGIN_TOP:.1}" x2="{MARGIN_LEFT:.1}" y2="{base:.1}" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN_LEFT:.1}" y1="{base:.1}" x2="{:.1}" y2="{base:.1}" stroke="black"/>"#,
        width - 110.0
    );
    for tick in 0..=4 {
        let v = scale_max * f64::from(tick) / 4.0;
        let y = base - PLOT_HEIGHT * f64::from(tick) / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.1}</text>"#, MARGIN_LEFT - 4.0, y + 4.0, v);
    }
    for (i, p) in pairs.iter().enumerate() {
        let x0 = MARGIN_LEFT + GROUP_GAP + group * i as f64;
        for (k, (value, color)) in [(clean(p.actual), ACTUAL_COLOR), (clean(p.predicted), PREDICTED_COLOR)].iter().enumerate() {
            let h = PLOT_HEIGHT * value / scale_max;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.1}" y="{:.1}" width="{BAR_WIDTH:.1}" height="{h:.1}" fill="{color}"><title>{}</title></rect>"#,
                x0 + BAR_WIDTH * k as f64,
                base - h,
                value
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" transform="rotate(-45 {:.1} {:.1})">{}</text>"#,
            x0 + BAR_WIDTH,
            base + 14.0,
            x0 + BAR_WIDTH,
            base + 14.0,
            escape(&p.label)
        );
    }
    let lx = width - 100.0;
    let _ = writeln!(svg, r#"<rect x="{lx:.1}" y="{MARGIN_TOP:.1}" width="10" height="10" fill="{ACTUAL_COLOR}"/>"#);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">actual</text>"#, lx + 14.0, MARGIN_TOP + 9.0);
    let _ = writeln!(svg, r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{PREDICTED_COLOR}"/>"#, MARGIN_TOP + 16.0);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">predicted</text>"#, lx + 14.0, MARGIN_TOP + 25.0);
    svg.push_str("</svg>\n");
    svg
}

pub fn emit_bar_chart(title: &str, pairs: &[BarPair], path: impl AsRef<Path>) -> io::Result<()> {
    fs::write(path, bar_chart_svg(title, pairs))
}
