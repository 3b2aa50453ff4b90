//! Minimal SVG rendering of sweep fronts in reward space.

use std::fmt::Write as _;

use dpa_core::SweepReport;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

/// Axis upper bound: the largest coordinate rounded up to a multiple of 10.
fn axis_max(reports: &[SweepReport], j: usize) -> f64 {
    let m = reports
        .iter()
        .flat_map(|r| r.points.iter().map(move |p| p.mean_rewards.values()[j]))
        .fold(10.0, f64::max);
    (m / 10.0).ceil() * 10.0
}

pub fn render_fronts(reports: &[SweepReport]) -> String {
    let (xmax, ymax) = (axis_max(reports, 0), axis_max(reports, 1));
    let sx = |x: f64| MARGIN + x / xmax * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - y / ymax * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (x0, y0) = (sx(0.0), sy(0.0));
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {top} V{y0} H{right}" stroke="black" fill="none"/>"#,
        top = sy(ymax),
        right = sx(xmax)
    );
    for i in 0..=5 {
        let (fx, fy) = (xmax * i as f64 / 5.0, ymax * i as f64 / 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.0}</text>"#,
            sx(fx),
            y0 + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.0}</text>"#,
            x0 - 6.0,
            sy(fy) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">helpfulness r1</text>"#,
        W / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">verbosity r2</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, r) in reports.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = r
            .points
            .iter()
            .map(|p| {
                let [a, b] = p.mean_rewards.as_pair();
                format!("{:.2},{:.2}", sx(a), sy(b))
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{} t={} (hv {:.0})</text>"#,
            W - MARGIN - 150.0,
            escape(&r.model_id),
            r.iteration,
            r.hypervolume
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
