//! Minimal SVG line chart of validation curves.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::checkpoint::write_atomic;

use super::MetricSeries;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 40.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one polyline per series over the union of their epochs.
pub fn render_svg(series: &[MetricSeries]) -> Result<String> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(e, v)| (e as f64, v)))
        .filter(|p| p.1.is_finite())
        .collect();
    if series.is_empty() || pts.is_empty() {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let (x0, x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
    let xs = if x1 > x0 { x1 - x0 } else { 1.0 };
    let ys = if y1 > y0 { y1 - y0 } else { 1.0 };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / xs * pw;
    let py = |y: f64| TOP + ph - (y - y0) / ys * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let fx = x0 + xs * f64::from(i) / 4.0;
        let fy = y0 + ys * f64::from(i) / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            px(fx),
            H - BOTTOM + 15.0,
            fx
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            LEFT - 5.0,
            py(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#,
        LEFT + pw / 2.0,
        H - 5.0
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let line: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(e, v)| format!("{:.2},{:.2}", px(e as f64), py(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            line.join(" ")
        );
        let ly = TOP + 15.0 + 16.0 * i as f64;
        let lx = W - RIGHT + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{} ({})</text>"#,
            lx + 25.0,
            ly + 4.0,
            escape(&ser.label),
            ser.kind
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_convergence_plot(series: &[MetricSeries], path: &Path) -> Result<()> {
    write_atomic(path, render_svg(series)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricKind;

    fn series(label: &str, epochs: &[usize]) -> MetricSeries {
        let mut s = MetricSeries::new(MetricKind::L1, label);
        for &e in epochs {
            s.push(e, 1.0 / e as f64).unwrap();
        }
        s
    }

    #[test]
    fn two_series_plot_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.svg");
        let list = [series("U-Net_2_44 R", &[1, 2, 3]), series("U-Net_2_44 P(50k)", &[1, 2, 3])];
        emit_convergence_plot(&list, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);
        assert!(text.contains("P(50k)"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let list = [series("a", &[1, 5]), series("b", &[2, 3, 9])];
        assert_eq!(render_svg(&list).unwrap(), render_svg(&list).unwrap());
    }

    #[test]
    fn empty_input_errors() {
        assert!(render_svg(&[]).is_err());
    }
}
