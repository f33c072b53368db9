//! Minimal SVG rendering of bench reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use convabs_core::batch::{BenchReport, Mode};
use convabs_core::Status;

const W: f64 = 520.0;
const H: f64 = 380.0;
const MARGIN: f64 = 56.0;
/// Runtimes below this are drawn at this value on log axes.
const FLOOR_SECS: f64 = 1e-4;

fn color(mode: Mode) -> &'static str {
    match mode {
        Mode::Vanilla => "#c0392b",
        Mode::Cegar => "#2471a3",
    }
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0).max(1e-12) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0).max(1e-12) * (H - 2.0 * MARGIN)
    }
}

fn log_secs(s: f64) -> f64 {
    s.max(FLOOR_SECS).log10()
}

fn header(svg: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}" stroke="black"/>"#,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 16.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
}

fn ticks(svg: &mut String, axes: &Axes, xlog: bool, ylog: bool) {
    let label = |v: f64, log: bool| if log { format!("1e{v:.0}") } else { format!("{v:.0}") };
    let steps = |lo: f64, hi: f64, log: bool| -> Vec<f64> {
        if log {
            (lo.floor() as i32..=hi.ceil() as i32).map(f64::from).filter(|v| *v >= lo && *v <= hi).collect()
        } else {
            let step = ((hi - lo) / 5.0).max(1.0).ceil();
            (0..=5).map(|i| lo + step * i as f64).filter(|v| *v <= hi).collect()
        }
    };
    for v in steps(axes.x.0, axes.x.1, xlog) {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            axes.px(v),
            H - MARGIN + 16.0,
            label(v, xlog)
        );
    }
    for v in steps(axes.y.0, axes.y.1, ylog) {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            axes.py(v) + 4.0,
            label(v, ylog)
        );
    }
}

/// Solved-query count against the per-query runtime needed, one line per mode.
pub fn cactus(report: &BenchReport) -> String {
    let mut series: BTreeMap<Mode, Vec<f64>> = BTreeMap::new();
    for r in &report.rows {
        if r.verdict != Status::Timeout {
            series.entry(r.mode).or_default().push(log_secs(r.secs));
        }
    }
    for s in series.values_mut() {
        s.sort_by(f64::total_cmp);
    }
    let n = series.values().map(Vec::len).max().unwrap_or(0).max(1) as f64;
    let all: Vec<f64> = series.values().flatten().copied().collect();
    let lo = all.iter().copied().fold(log_secs(FLOOR_SECS), f64::min).floor();
    let hi = all.iter().copied().fold(lo + 1.0, f64::max).ceil();
    let axes = Axes { x: (0.0, n), y: (lo, hi) };
    let mut svg = String::new();
    header(&mut svg, "Solved queries", "queries solved", "runtime (s, log scale)");
    ticks(&mut svg, &axes, false, true);
    for (i, (mode, ys)) in series.iter().enumerate() {
        let points: Vec<String> = ys
            .iter()
            .enumerate()
            .map(|(k, &y)| format!("{:.1},{:.1}", axes.px((k + 1) as f64), axes.py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            color(*mode),
            points.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" fill="{}">{}</text>"#,
            MARGIN + 10.0,
            MARGIN + 16.0 * i as f64,
            color(*mode),
            mode.name()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-query runtime of vanilla (x) against abstraction mode (y), log axes.
pub fn scatter(report: &BenchReport) -> String {
    let mut pairs: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in &report.rows {
        let e = pairs.entry(r.query.as_str()).or_default();
        match r.mode {
            Mode::Vanilla => e.0 = Some(log_secs(r.secs)),
            Mode::Cegar => e.1 = Some(log_secs(r.secs)),
        }
    }
    let points: Vec<(f64, f64)> = pairs.values().filter_map(|&(a, b)| Some((a?, b?))).collect();
    let lo = points.iter().flat_map(|&(a, b)| [a, b]).fold(log_secs(FLOOR_SECS), f64::min).floor();
    let hi = points.iter().flat_map(|&(a, b)| [a, b]).fold(lo + 1.0, f64::max).ceil();
    let axes = Axes { x: (lo, hi), y: (lo, hi) };
    let mut svg = String::new();
    header(&mut svg, "Runtime per query", "vanilla (s, log scale)", "abstraction (s, log scale)");
    ticks(&mut svg, &axes, true, true);
    let _ = writeln!(
        svg,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 4"/>"##,
        axes.px(lo),
        axes.py(lo),
        axes.px(hi),
        axes.py(hi)
    );
    for (a, b) in points {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}" fill-opacity="0.7"/>"#,
            axes.px(a),
            axes.py(b),
            color(Mode::Cegar)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
