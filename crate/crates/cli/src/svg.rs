//! Minimal line-chart SVG writer. Output depends only on the input data,
//! so identical inputs give identical bytes.

use std::fmt::Write as _;

pub const WIDTH: f64 = 1000.0;
pub const HEIGHT: f64 = 600.0;
/// Longest polyline drawn; longer series are thinned with a fixed stride.
pub const MAX_POINTS: usize = 2000;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const MARGIN_LEFT: f64 = 90.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 32.0;
const TICKS: usize = 5;

/// Colour for the `i`-th run.
pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// Index into the palette; fixed per run across panels.
    pub color_index: usize,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
    /// Requested log scale on y; ignored when some value is not positive.
    pub log_y: bool,
}

impl Panel {
    /// Whether the y axis is actually drawn on a log scale.
    pub fn uses_log(&self) -> bool {
        self.log_y
            && self
                .series
                .iter()
                .flat_map(|s| &s.points)
                .all(|&(_, y)| y > 0.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS);
    let mut out: Vec<_> = points.iter().step_by(stride).copied().collect();
    if let Some(&last) = points.last() {
        if out.last() != Some(&last) {
            out.push(last);
        }
    }
    out
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if lo > hi {
        return None;
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.05 };
        return Some((lo - pad, hi + pad));
    }
    Some((lo, hi))
}

fn draw_panel(s: &mut String, panel: &Panel, top: f64, height: f64) {
    let left = MARGIN_LEFT;
    let right = WIDTH - MARGIN_RIGHT;
    let plot_top = top + MARGIN_TOP;
    let plot_bottom = top + height - MARGIN_BOTTOM;
    let log = panel.uses_log();
    let ty = |y: f64| if log { y.log10() } else { y };

    let title = if panel.log_y && !log {
        format!("{} (linear: non-positive values)", panel.title)
    } else if log {
        format!("{} (log scale)", panel.title)
    } else {
        panel.title.clone()
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        top + 18.0,
        escape(&title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{left:.2}" y="{plot_top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        right - left,
        plot_bottom - plot_top
    );

    let points = || panel.series.iter().flat_map(|se| se.points.iter());
    let (Some((x0, x1)), Some((y0, y1))) = (
        range(points().map(|p| p.0)),
        range(points().map(|p| ty(p.1))),
    ) else {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">no data</text>"#,
            (left + right) / 2.0,
            (plot_top + plot_bottom) / 2.0
        );
        return;
    };
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let py = |y: f64| plot_bottom - (ty(y) - y0) / (y1 - y0) * (plot_bottom - plot_top);

    for i in 0..TICKS {
        let f = i as f64 / (TICKS - 1) as f64;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let ylabel = if log { 10f64.powf(yv) } else { yv };
        let xp = left + f * (right - left);
        let yp = plot_bottom - f * (plot_bottom - plot_top);
        let _ = writeln!(
            s,
            r##"<line x1="{xp:.2}" y1="{plot_bottom:.2}" x2="{xp:.2}" y2="{:.2}" stroke="#444"/><text x="{xp:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"##,
            plot_bottom + 4.0,
            plot_bottom + 16.0,
            tick_label(xv.round())
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{yp:.2}" x2="{left:.2}" y2="{yp:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"##,
            left - 4.0,
            left - 6.0,
            yp + 3.0,
            tick_label(ylabel)
        );
    }

    for se in &panel.series {
        let pts: Vec<String> = thin(&se.points)
            .into_iter()
            .filter(|p| p.0.is_finite() && ty(p.1).is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
            color(se.color_index),
            pts.join(" ")
        );
    }
}

fn draw_legend(s: &mut String, series: &[Series]) {
    let x = WIDTH - MARGIN_RIGHT + 12.0;
    for (i, se) in series.iter().enumerate() {
        let y = MARGIN_TOP + 10.0 + 14.0 * i as f64;
        if y > HEIGHT - 10.0 {
            break;
        }
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
            x + 16.0,
            color(se.color_index),
            x + 20.0,
            y + 3.0,
            escape(&se.label)
        );
    }
}

/// Stack `panels` vertically in a 1000x600 view box with one shared legend.
pub fn render(panels: &[Panel], legend: &[Series]) -> String {
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif">"#
    );
    s.push('\n');
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let h = HEIGHT / panels.len().max(1) as f64;
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut s, p, i as f64 * h, h);
    }
    draw_legend(&mut s, legend);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(label: &str, c: usize, pts: &[(f64, f64)]) -> Series {
        Series {
            label: label.into(),
            color_index: c,
            points: pts.to_vec(),
        }
    }

    #[test]
    fn one_polyline_per_series() {
        let a = series("a", 0, &[(0.0, 1.0), (10.0, 0.5)]);
        let b = series("b<1>", 1, &[(0.0, 2.0), (10.0, 0.1)]);
        let panel = Panel {
            title: "dev loss".into(),
            series: vec![a.clone(), b.clone()],
            log_y: true,
        };
        let svg = render(&[panel], &[a, b]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(r#"viewBox="0 0 1000 600""#));
        assert!(svg.contains("b&lt;1&gt;"));
        assert!(svg.contains("(log scale)"));
        assert!(svg.contains(color(1)));
    }

    #[test]
    fn log_falls_back_on_non_positive_values() {
        let panel = Panel {
            title: "dev loss".into(),
            series: vec![series("a", 0, &[(0.0, -1.0), (1.0, 2.0)])],
            log_y: true,
        };
        assert!(!panel.uses_log());
        assert!(render(&[panel], &[]).contains("linear: non-positive"));
    }

    #[test]
    fn long_series_are_thinned_but_keep_the_end() {
        let pts: Vec<(f64, f64)> = (0..10_001).map(|i| (i as f64, 1.0)).collect();
        let t = thin(&pts);
        assert!(t.len() <= MAX_POINTS + 1);
        assert_eq!(t.first(), pts.first());
        assert_eq!(t.last(), pts.last());
    }

    #[test]
    fn empty_panel_renders() {
        let panel = Panel {
            title: "x".into(),
            series: vec![],
            log_y: false,
        };
        assert!(render(&[panel], &[]).contains("no data"));
    }
}
