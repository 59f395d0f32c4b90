//! Minimal hand-written SVG line and bar charts.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

/// Grouped bars: one group per category, one bar per series in each group.
#[derive(Clone, Debug, PartialEq)]
pub struct BarPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<(String, Vec<Option<f64>>)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    (lo, hi)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<text class="x-label" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text class="y-label" x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn axes(out: &mut String, f: &Frame, x_ticks: bool) {
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0:.1} {y1:.1} L{x0:.1} {y0:.1} L{x1:.1} {y0:.1}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let y = f.py(yv);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            tick(yv)
        );
        if x_ticks {
            let xv = f.x.0 + t * (f.x.1 - f.x.0);
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                f.px(xv),
                y0 + 16.0,
                tick(xv)
            );
        }
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e5) {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            y - 9.0,
            x + 14.0,
            y,
            escape(name)
        );
    }
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let f = Frame {
            x: range(all().map(|p| p.0), false),
            y: range(all().map(|p| p.1), false),
        };
        let mut out = String::new();
        header(&mut out, &self.title, &self.x_label, &self.y_label);
        axes(&mut out, &f, true);
        for (i, s) in self.series.iter().enumerate() {
            let mut d = String::new();
            for (j, &(x, y)) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).enumerate() {
                let _ = write!(d, "{}{:.2} {:.2} ", if j == 0 { 'M' } else { 'L' }, f.px(x), f.py(y));
            }
            let _ = writeln!(
                out,
                r#"<path class="series" data-name="{}" d="{}" stroke="{}" stroke-width="1.5" fill="none"/>"#,
                escape(&s.name),
                d.trim_end(),
                PALETTE[i % PALETTE.len()]
            );
        }
        legend(&mut out, &self.series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
        out.push_str("</svg>\n");
        out
    }
}

impl BarPlot {
    pub fn to_svg(&self) -> String {
        let f = Frame {
            x: (0.0, self.categories.len().max(1) as f64),
            y: range(self.series.iter().flat_map(|s| s.1.iter().flatten().copied()), true),
        };
        let mut out = String::new();
        header(&mut out, &self.title, &self.x_label, &self.y_label);
        axes(&mut out, &f, false);
        let n = self.series.len().max(1) as f64;
        let slot = f.px(1.0) - f.px(0.0);
        let bar = slot * 0.8 / n;
        for (ci, cat) in self.categories.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                f.px(ci as f64 + 0.5),
                HEIGHT - BOTTOM + 16.0,
                escape(cat)
            );
            for (si, (name, values)) in self.series.iter().enumerate() {
                let Some(v) = values.get(ci).copied().flatten() else {
                    continue;
                };
                let x = f.px(ci as f64) + slot * 0.1 + bar * si as f64;
                let (ya, yb) = (f.py(v), f.py(0.0));
                let _ = writeln!(
                    out,
                    r#"<rect class="bar" data-name="{}" x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{:.2}" fill="{}"/>"#,
                    escape(name),
                    ya.min(yb),
                    (ya - yb).abs(),
                    PALETTE[si % PALETTE.len()]
                );
            }
        }
        legend(&mut out, &self.series.iter().map(|s| s.0.as_str()).collect::<Vec<_>>());
        out.push_str("</svg>\n");
        out
    }
}
