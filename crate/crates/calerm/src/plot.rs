//! Minimal static SVG line plots for sweep summaries. No interactivity, no
//! dependencies; the CSV stays the primary output and the plot is derived
//! from it.

use std::fmt::Write as _;

use crate::experiments::SweepSummary;
use crate::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Render median-error curves, one polyline per loss label, against the
/// sweep value. Returns the SVG text.
pub fn median_curves_svg(summaries: &[SweepSummary], x_label: &str) -> Result<String> {
    let points: Vec<(&'static str, f64, f64)> = summaries
        .iter()
        .filter_map(|s| s.sweep_value.map(|v| (s.loss_kind, v, s.median)))
        .collect();
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    )
    .ok();
    writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>").ok();
    if points.is_empty() {
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">no sweep values to plot</text>",
            WIDTH / 2.0,
            HEIGHT / 2.0
        )
        .ok();
        writeln!(svg, "</svg>").ok();
        return Ok(svg);
    }
    let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
    let (x_min, x_max) = bounds(&xs);
    let (y_min, y_max) = bounds(&ys);
    let to_x = |v: f64| MARGIN + (v - x_min) / (x_max - x_min).max(1e-300) * (WIDTH - 2.0 * MARGIN);
    let to_y =
        |v: f64| HEIGHT - MARGIN - (v - y_min) / (y_max - y_min).max(1e-300) * (HEIGHT - 2.0 * MARGIN);

    // axes
    writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )
    .ok();
    writeln!(
        svg,
        "<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN
    )
    .ok();
    writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label)
    )
    .ok();
    writeln!(
        svg,
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\" font-size=\"12\">median est_error_l2</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .ok();
    for (v, label) in [(x_min, x_min), (x_max, x_max)] {
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{label:.3}</text>",
            to_x(v),
            HEIGHT - MARGIN + 16.0
        )
        .ok();
    }
    for (v, label) in [(y_min, y_min), (y_max, y_max)] {
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{label:.3e}</text>",
            MARGIN - 6.0,
            to_y(v) + 4.0
        )
        .ok();
    }

    // one polyline per loss label, in first-appearance order
    let mut labels: Vec<&'static str> = Vec::new();
    for p in &points {
        if !labels.contains(&p.0) {
            labels.push(p.0);
        }
    }
    for (li, label) in labels.iter().enumerate() {
        let color = PALETTE[li % PALETTE.len()];
        let mut series: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.0 == *label)
            .map(|p| (p.1, p.2))
            .collect();
        series.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let path: Vec<String> = series
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", to_x(*x), to_y(*y)))
            .collect();
        writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            path.join(" ")
        )
        .ok();
        writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * li as f64,
            xml_escape(label)
        )
        .ok();
    }
    writeln!(svg, "</svg>").ok();
    Ok(svg)
}

fn bounds(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polyline_per_loss() {
        let summaries = vec![
            SweepSummary {
                sweep_value: Some(0.5),
                loss_kind: "squared",
                q25: 0.1,
                median: 0.2,
                q75: 0.3,
                q99: 0.4,
                flagged: 0,
            },
            SweepSummary {
                sweep_value: Some(1.0),
                loss_kind: "squared",
                q25: 0.2,
                median: 0.4,
                q75: 0.5,
                q99: 0.9,
                flagged: 0,
            },
            SweepSummary {
                sweep_value: Some(0.5),
                loss_kind: "huber",
                q25: 0.1,
                median: 0.15,
                q75: 0.2,
                q99: 0.3,
                flagged: 0,
            },
        ];
        let svg = median_curves_svg(&summaries, "sigma").unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("squared") && svg.contains("huber"));
    }

    #[test]
    fn empty_input_still_valid_svg() {
        let svg = median_curves_svg(&[], "sigma").unwrap();
        assert!(svg.contains("no sweep values"));
    }
}
