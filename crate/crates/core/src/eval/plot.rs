//! Standalone SVG scatter plots.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const LEGEND_COL: f64 = 56.0;
const LEGEND_ROWS: usize = 25;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One hue per class, evenly spaced around the color wheel.
fn color(label: usize, classes: usize) -> String {
    let hue = 360.0 * label as f64 / classes.max(1) as f64;
    format!("hsl({hue:.1},70%,45%)")
}

/// Scatter of `(x, y, label)` points, one colored marker per class, with a
/// legend of class ids. Output depends only on the inputs.
pub fn scatter_svg(points: &[(f64, f64, usize)], title: &str) -> String {
    let mut labels: Vec<usize> = points.iter().map(|p| p.2).collect();
    labels.sort_unstable();
    labels.dedup();
    let classes = labels.last().map_or(1, |&l| l + 1);
    let legend_cols = labels.len().div_ceil(LEGEND_ROWS);
    let total_w = WIDTH + legend_cols as f64 * LEGEND_COL;

    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y, _) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let px = |x: f64| MARGIN + (x - x0) / sx * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / sy * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    writeln!(
        s,
        r##"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0}" height="{HEIGHT:.0}" viewBox="0 0 {total_w:.0} {HEIGHT:.0}">
<rect x="0" y="0" width="{total_w:.0}" height="{HEIGHT:.0}" fill="white"/>
<text x="{:.1}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>
<rect x="{MARGIN:.0}" y="{MARGIN:.0}" width="{:.0}" height="{:.0}" fill="none" stroke="#999"/>"##,
        WIDTH / 2.0,
        escape(title),
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    )
    .expect("string write");
    for &(x, y, l) in points {
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"><title>{l}</title></circle>"#,
            px(x),
            py(y),
            color(l, classes)
        )
        .expect("string write");
    }
    for (i, &l) in labels.iter().enumerate() {
        let lx = WIDTH + (i / LEGEND_ROWS) as f64 * LEGEND_COL;
        let ly = MARGIN + (i % LEGEND_ROWS) as f64 * 16.0;
        writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{ly:.1}" r="4" fill="{}"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{l}</text>"#,
            lx + 6.0,
            color(l, classes),
            lx + 14.0,
            ly + 4.0
        )
        .expect("string write");
    }
    s.push_str("</svg>\n");
    s
}
