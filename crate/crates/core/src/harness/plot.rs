//! Plot-data emission: numeric text tables plus a minimal static SVG line
//! chart with an interval band per curve.

use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Text table: a `#` header line then `x y lo hi` rows in shortest
/// round-trip decimal form.
pub fn curve_table(header: &str, points: &[CurvePoint]) -> String {
    let mut out = format!("# {header}\n");
    for p in points {
        out.push_str(&format!("{} {} {} {}\n", p.x, p.y, p.lo, p.hi));
    }
    out
}

pub fn write_curve_table(path: &Path, header: &str, points: &[CurvePoint]) -> Result<()> {
    std::fs::write(path, curve_table(header, points))?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

fn finite_or(v: f64, fallback: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        fallback
    }
}

/// A self-contained SVG: axes with range labels, an interval band, the
/// mean polyline, and point markers. Infinite x values (open-ended grid
/// points) are clamped to the right edge.
pub fn curve_svg(title: &str, x_label: &str, y_label: &str, points: &[CurvePoint]) -> String {
    let finite_max_x = points
        .iter()
        .map(|p| p.x)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = points
        .iter()
        .map(|p| finite_or(p.x, finite_max_x * 1.25))
        .collect();
    let min_x = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max_x = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_y = points.iter().map(|p| p.lo.min(p.y)).fold(f64::INFINITY, f64::min);
    let max_y = points.iter().map(|p| p.hi.max(p.y)).fold(f64::NEG_INFINITY, f64::max);
    let span_x = (max_x - min_x).max(1e-12);
    let span_y = (max_y - min_y).max(1e-12);

    let px = |x: f64| MARGIN + (x - min_x) / span_x * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - min_y) / span_y * (HEIGHT - 2.0 * MARGIN);

    let mut band = String::new();
    for (i, p) in points.iter().enumerate() {
        band.push_str(&format!("{:.2},{:.2} ", px(xs[i]), py(p.hi)));
    }
    for (i, p) in points.iter().enumerate().rev() {
        band.push_str(&format!("{:.2},{:.2} ", px(xs[i]), py(p.lo)));
    }
    let line: String = points
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{:.2},{:.2}", px(xs[i]), py(p.y)))
        .collect::<Vec<_>>()
        .join(" ");
    let markers: String = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f6fb2\"/>",
                px(xs[i]),
                py(p.y)
            )
        })
        .collect();

    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
            "<line x1=\"{m}\" y1=\"{ybase}\" x2=\"{xend}\" y2=\"{ybase}\" stroke=\"black\"/>\n",
            "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{ybase}\" stroke=\"black\"/>\n",
            "<text x=\"{cx}\" y=\"{h_label}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>\n",
            "<text x=\"16\" y=\"{cy}\" text-anchor=\"middle\" font-size=\"12\" ",
            "transform=\"rotate(-90 16 {cy})\">{y_label}</text>\n",
            "<text x=\"{m}\" y=\"{tick_y}\" text-anchor=\"middle\" font-size=\"10\">{min_x}</text>\n",
            "<text x=\"{xend}\" y=\"{tick_y}\" text-anchor=\"middle\" font-size=\"10\">{max_x}</text>\n",
            "<text x=\"{tick_x}\" y=\"{ybase}\" text-anchor=\"end\" font-size=\"10\">{min_y}</text>\n",
            "<text x=\"{tick_x}\" y=\"{m}\" text-anchor=\"end\" font-size=\"10\">{max_y}</text>\n",
            "<polygon points=\"{band}\" fill=\"#9ec9e8\" fill-opacity=\"0.45\"/>\n",
            "<polyline points=\"{line}\" fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\"/>\n",
            "{markers}\n",
            "</svg>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        m = MARGIN,
        cx = WIDTH / 2.0,
        cy = HEIGHT / 2.0,
        xend = WIDTH - MARGIN,
        ybase = HEIGHT - MARGIN,
        h_label = HEIGHT - 20.0,
        tick_y = HEIGHT - MARGIN + 16.0,
        tick_x = MARGIN - 6.0,
        title = title,
        x_label = x_label,
        y_label = y_label,
        min_x = format_tick(min_x),
        max_x = format_tick(max_x),
        min_y = format_tick(min_y),
        max_y = format_tick(max_y),
        band = band.trim_end(),
        line = line,
        markers = markers,
    )
}

fn format_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 10_000.0) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

pub fn write_curve_svg(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[CurvePoint],
) -> Result<()> {
    std::fs::write(path, curve_svg(title, x_label, y_label, points))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points() -> Vec<CurvePoint> {
        vec![
            CurvePoint { x: 1.0, y: 0.5, lo: 0.4, hi: 0.6 },
            CurvePoint { x: 2.0, y: 0.3, lo: 0.25, hi: 0.35 },
            CurvePoint { x: 4.0, y: 0.2, lo: 0.18, hi: 0.22 },
        ]
    }

    #[test]
    fn table_has_one_row_per_point() {
        let table = curve_table("k mean lo hi", &points());
        assert_eq!(table.lines().count(), 4);
        assert!(table.starts_with("# k mean lo hi"));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = curve_svg("risk", "tasks", "excess risk", &points());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("<polygon"));
        assert_eq!(svg.matches("<circle").count(), 3);
    }

    #[test]
    fn svg_handles_infinite_axis_points() {
        let mut pts = points();
        pts.push(CurvePoint { x: f64::INFINITY, y: 0.4, lo: 0.35, hi: 0.45 });
        let svg = curve_svg("risk", "h", "excess risk", &pts);
        assert!(!svg.contains("inf"), "infinite coordinate leaked into svg");
    }
}
