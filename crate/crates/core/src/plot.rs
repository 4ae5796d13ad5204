//! Static SVG timeline of an evolution trace: cluster id against relative time.

use std::fmt::Write;

use crate::cluster::EvolutionTrace;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 320.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 48.0;
const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `trace` as a step plot. `num_clusters` fixes the y range.
pub fn trace_svg(trace: &EvolutionTrace, num_clusters: usize) -> String {
    let k = num_clusters.max(1);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let t_max = trace.steps.last().map_or(0, |s| s.relative_time).max(1) as f64;
    let x = |t: i64| MARGIN_LEFT + plot_w * t as f64 / t_max;
    // cluster 0 at the bottom, one band per cluster
    let y = |c: usize| MARGIN_TOP + plot_h * (1.0 - (c as f64 + 0.5) / k as f64);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">vessel {}</text>"#, WIDTH / 2.0, escape(&trace.mmsi));

    // axes
    let (x0, y0, x1, y1) = (MARGIN_LEFT, MARGIN_TOP + plot_h, MARGIN_LEFT + plot_w, MARGIN_TOP);
    let _ = writeln!(svg, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for c in 0..k {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle">{c}</text>"#, x0 - 8.0, y(c));
        let _ = writeln!(svg, r##"<line x1="{x0}" y1="{0}" x2="{x1}" y2="{0}" stroke="#dddddd"/>"##, y(c));
    }
    for i in 0..=4 {
        let t = t_max * i as f64 / 4.0;
        let px = MARGIN_LEFT + plot_w * i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{px}" y="{}" text-anchor="middle">{:.1}</text>"#, y0 + 16.0, t / 3600.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">relative time (h)</text>"#, WIDTH / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">cluster</text>"#,
        MARGIN_TOP + plot_h / 2.0
    );

    if let Some(first) = trace.steps.first() {
        let mut d = format!("M{:.2},{:.2}", x(first.relative_time), y(first.cluster));
        for w in trace.steps.windows(2) {
            let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", x(w[1].relative_time), y(w[0].cluster), x(w[1].relative_time), y(w[1].cluster));
        }
        let _ = writeln!(svg, r##"<path d="{d}" fill="none" stroke="#444444" stroke-width="1.5"/>"##);
        for s in &trace.steps {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}"/>"#,
                x(s.relative_time),
                y(s.cluster),
                PALETTE[s.cluster % PALETTE.len()]
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
