//! Reports, CSV tables and SVG plots.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! identical results give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

/// Ordered `key = value` report. Strings are quoted, so the text parses as
/// TOML.
#[derive(Debug, Default, Clone)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num(&mut self, key: &str, v: f64) -> &mut Self {
        let text = if v.is_finite() {
            let s = format!("{v}");
            if s.contains(['.', 'e', 'E']) { s } else { format!("{s}.0") }
        } else if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
        self.lines.push((key.into(), text));
        self
    }

    pub fn int(&mut self, key: &str, v: impl Into<i128>) -> &mut Self {
        self.lines.push((key.into(), v.into().to_string()));
        self
    }

    pub fn text(&mut self, key: &str, v: &str) -> &mut Self {
        self.lines.push((key.into(), format!("{v:?}")));
        self
    }

    pub fn flag(&mut self, key: &str, v: bool) -> &mut Self {
        self.lines.push((key.into(), v.to_string()));
        self
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

pub fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn read_file(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// CSV text from a header and numeric rows.
pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Matrix CSV: first column the row coordinate, one column per column
/// coordinate.
pub fn matrix_csv(row_name: &str, rows: &[f64], col_name: &str, cols: &[f64], value: impl Fn(usize, usize) -> f64) -> String {
    let mut s = format!("{row_name}\\{col_name}");
    for c in cols {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (i, r) in rows.iter().enumerate() {
        let _ = write!(s, "{r}");
        for j in 0..cols.len() {
            let _ = write!(s, ",{}", value(i, j));
        }
        s.push('\n');
    }
    s
}

/// Output location for one command.
pub struct Outputs {
    pub dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir, written: Vec::new() }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let p = self.dir.join(name);
        write_file(&p, contents)?;
        self.written.push(p);
        Ok(())
    }

    pub fn list(&self) -> String {
        self.written.iter().map(|p| format!("wrote {}\n", p.display())).collect()
    }
}

// viridis, sampled at five stops
const STOPS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { return "#bbbbbb".into() };
    let x = t * (STOPS.len() - 1) as f64;
    let k = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - k as f64;
    let (a, b) = (STOPS[k], STOPS[k + 1]);
    let mix = |p: f64, q: f64| (p + f * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

pub struct Heatmap<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub log_scale: bool,
}

impl Heatmap<'_> {
    /// Cell colours from `value(ix, iy)`; non-finite values are drawn grey.
    pub fn render(&self, value: impl Fn(usize, usize) -> f64) -> String {
        let (w, h, left, top, cbar) = (640.0, 480.0, 70.0, 40.0, 90.0);
        let pw = w - left - cbar - 20.0;
        let ph = h - top - 60.0;
        let tf = |v: f64| if self.log_scale { v.log10() } else { v };
        let vals: Vec<f64> = (0..self.x.len())
            .flat_map(|i| (0..self.y.len()).map(move |j| (i, j)))
            .map(|(i, j)| tf(value(i, j)))
            .filter(|v| v.is_finite())
            .collect();
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (nx, ny) = (self.x.len() as f64, self.y.len() as f64);
        let (cw, ch) = (pw / nx, ph / ny);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, self.title);
        for i in 0..self.x.len() {
            for j in 0..self.y.len() {
                let v = tf(value(i, j));
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    left + i as f64 * cw,
                    top + ph - (j + 1) as f64 * ch,
                    cw + 0.3,
                    ch + 0.3,
                    color((v - lo) / span)
                );
            }
        }
        let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let ticks = |n: usize| -> Vec<usize> {
            let step = n.div_ceil(6).max(1);
            (0..n).step_by(step).collect()
        };
        for i in ticks(self.x.len()) {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                left + (i as f64 + 0.5) * cw,
                top + ph + 16.0,
                self.x[i]
            );
        }
        for j in ticks(self.y.len()) {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                left - 6.0,
                top + ph - (j as f64 + 0.5) * ch + 4.0,
                self.y[j]
            );
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 12.0, self.x_label);
        let _ = writeln!(
            s,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            top + ph / 2.0,
            top + ph / 2.0,
            self.y_label
        );
        let bx = left + pw + 20.0;
        for k in 0..50 {
            let t = k as f64 / 49.0;
            let _ = writeln!(
                s,
                r#"<rect x="{bx}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
                top + ph - (k + 1) as f64 * ph / 50.0,
                ph / 50.0 + 0.3,
                color(t)
            );
        }
        let label = |v: f64| {
            if self.log_scale {
                format!("{:.3}", 10f64.powf(v))
            } else {
                format!("{v:.3}")
            }
        };
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bx + 20.0, top + 10.0, label(hi));
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bx + 20.0, top + ph, label(lo));
        if self.log_scale {
            let _ = writeln!(s, r#"<text x="{}" y="{}">log</text>"#, bx + 20.0, top + ph / 2.0);
        }
        s.push_str("</svg>\n");
        s
    }
}

pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    /// Draw markers instead of a line.
    pub points: bool,
}

pub struct LinePlot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub log_y: bool,
    pub series: Vec<Series<'a>>,
}

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

impl LinePlot<'_> {
    pub fn render(&self) -> String {
        let (w, h, left, top) = (640.0, 440.0, 80.0, 40.0);
        let (pw, ph) = (w - left - 30.0, h - top - 60.0);
        let ty = |v: f64| if self.log_y { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };
        let finite = |it: &mut dyn Iterator<Item = f64>| it.filter(|v| v.is_finite()).collect::<Vec<_>>();
        let xs = finite(&mut self.series.iter().flat_map(|s| s.x.iter().copied()));
        let ys = finite(&mut self.series.iter().flat_map(|s| s.y.iter().map(|&v| ty(v))));
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(lo.is_finite() && hi.is_finite()) {
                (0.0, 1.0)
            } else if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (x0, x1) = range(&xs);
        let (y0, y1) = range(&ys);
        let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, self.title);
        let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let ylab = if self.log_y { format!("{:.3e}", 10f64.powf(yv)) } else { format!("{yv:.4}") };
            let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{:.4}</text>"#, px(xv), top + ph + 16.0, xv);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{ylab}</text>"#, left - 6.0, py(yv) + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 14.0, self.x_label);
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            top + ph / 2.0,
            top + ph / 2.0,
            self.y_label
        );
        for (k, series) in self.series.iter().enumerate() {
            let c = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = series
                .x
                .iter()
                .zip(series.y)
                .map(|(&x, &y)| (x, ty(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|(x, y)| (px(x), py(y)))
                .collect();
            if series.points {
                for (x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{c}"/>"#);
                }
            } else {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, path.join(" "));
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{c}">{}</text>"#,
                left + pw - 150.0,
                top + 16.0 + 16.0 * k as f64,
                series.name
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
