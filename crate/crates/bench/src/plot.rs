//! Minimal SVG line charts of summary rows.

use std::fmt::Write;

use crate::config::Cell;
use crate::report::SummaryRow;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    L,
    K,
    MOverN,
    Source,
    Snr,
}

impl Axis {
    const ALL: [Axis; 5] = [Axis::L, Axis::K, Axis::MOverN, Axis::Source, Axis::Snr];

    fn name(self) -> &'static str {
        match self {
            Axis::L => "l",
            Axis::K => "k",
            Axis::MOverN => "m_over_n",
            Axis::Source => "source_param",
            Axis::Snr => "snr_db",
        }
    }

    fn value(self, c: &Cell) -> Option<f64> {
        match self {
            Axis::L => Some(c.l as f64),
            Axis::K => Some(c.k as f64),
            Axis::MOverN => Some(c.m as f64 / c.n as f64),
            Axis::Source => Some(c.source.param),
            Axis::Snr => c.snr_db,
        }
    }

    fn key(self, c: &Cell) -> String {
        let all = [
            (Axis::L, format!("l={}", c.l)),
            (Axis::K, format!("k={}", c.k)),
            (Axis::MOverN, format!("n={},m={}", c.n, c.m)),
            (
                Axis::Source,
                format!("{}={}", c.source.label, c.source.param),
            ),
            (
                Axis::Snr,
                format!("snr={}", c.snr_db.map_or("inf".into(), |s| s.to_string())),
            ),
        ];
        all.into_iter()
            .filter(|(a, _)| *a != self)
            .map(|(_, s)| s)
            .collect::<Vec<_>>()
            .join(",")
    }
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// One figure per grid axis that takes more than one value. Failure rate is
/// plotted against every axis except SNR, which gets MSE in dB.
pub fn figures(rows: &[SummaryRow]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for axis in Axis::ALL {
        let mut xs: Vec<f64> = rows.iter().filter_map(|r| axis.value(&r.cell)).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        if xs.len() < 2 {
            continue;
        }
        let mse_plot = axis == Axis::Snr;
        let mut series: Vec<Series> = Vec::new();
        for r in rows {
            let Some(x) = axis.value(&r.cell) else {
                continue;
            };
            let y = if mse_plot {
                match r.mean_mse {
                    Some(v) if v > 0.0 => 10.0 * v.log10(),
                    _ => continue,
                }
            } else {
                r.failure_rate
            };
            let label = format!("{} {}", r.algorithm, axis.key(&r.cell));
            match series.iter_mut().find(|s| s.label == label) {
                Some(s) => s.points.push((x, y)),
                None => series.push(Series {
                    label,
                    points: vec![(x, y)],
                }),
            }
        }
        for s in &mut series {
            s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let ylabel = if mse_plot { "mse (dB)" } else { "failure rate" };
        let stem = if mse_plot { "mse" } else { "failure" };
        out.push((
            format!("{stem}_vs_{}.svg", axis.name()),
            render(axis.name(), ylabel, &series, !mse_plot),
        ));
    }
    out
}

fn render(xlabel: &str, ylabel: &str, series: &[Series], unit_y: bool) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if unit_y {
        (y0, y1) = (0.0, 1.0);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            sx(xv),
            H - PAD + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            PAD - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#,
        W / 2.0,
        H - 18.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
            d.join(" ")
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{c}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{}</text>"#,
            PAD + 8.0,
            PAD + 14.0 * i as f64,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
