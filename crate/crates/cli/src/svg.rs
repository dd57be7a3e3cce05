//! Minimal SVG line plots: polylines, filled bands and point markers.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;

enum Mark {
    Line { y: Vec<f64> },
    Band { lo: Vec<f64>, hi: Vec<f64> },
    Points { y: Vec<f64> },
}

struct Layer {
    x: Vec<f64>,
    mark: Mark,
    color: &'static str,
    label: String,
}

pub struct Plot {
    title: String,
    layers: Vec<Layer>,
}

impl Plot {
    pub fn new(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            layers: Vec::new(),
        }
    }

    pub fn line(mut self, label: &str, color: &'static str, x: &[f64], y: &[f64]) -> Self {
        self.push(label, color, x, Mark::Line { y: y.to_vec() });
        self
    }

    pub fn points(mut self, label: &str, color: &'static str, x: &[f64], y: &[f64]) -> Self {
        self.push(label, color, x, Mark::Points { y: y.to_vec() });
        self
    }

    /// Filled region between `mean − std` and `mean + std`.
    pub fn band(mut self, label: &str, color: &'static str, x: &[f64], mean: &[f64], std: &[f64]) -> Self {
        let lo = mean.iter().zip(std).map(|(m, s)| m - s).collect();
        let hi = mean.iter().zip(std).map(|(m, s)| m + s).collect();
        self.push(label, color, x, Mark::Band { lo, hi });
        self
    }

    fn push(&mut self, label: &str, color: &'static str, x: &[f64], mark: Mark) {
        self.layers.push(Layer {
            x: x.to_vec(),
            mark,
            color,
            label: label.to_string(),
        });
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for l in &self.layers {
            for &x in &l.x {
                b.0 = b.0.min(x);
                b.1 = b.1.max(x);
            }
            let ys: Box<dyn Iterator<Item = &f64>> = match &l.mark {
                Mark::Line { y } | Mark::Points { y } => Box::new(y.iter()),
                Mark::Band { lo, hi } => Box::new(lo.iter().chain(hi)),
            };
            for &y in ys.filter(|y| y.is_finite()) {
                b.2 = b.2.min(y);
                b.3 = b.3.max(y);
            }
        }
        let widen = |lo: f64, hi: f64| {
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.04 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = widen(b.0, b.1);
        let (y0, y1) = widen(b.2, b.3);
        (x0, x1, y0, y1)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        for v in ticks(x0, x1) {
            let _ = writeln!(
                s,
                r##"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="#e5e5e5"/><text x="{0:.2}" y="{3}" text-anchor="middle">{4}</text>"##,
                sx(v),
                TOP,
                TOP + ph,
                TOP + ph + 16.0,
                label(v)
            );
        }
        for v in ticks(y0, y1) {
            let _ = writeln!(
                s,
                r##"<line x1="{1}" y1="{0:.2}" x2="{2}" y2="{0:.2}" stroke="#e5e5e5"/><text x="{3}" y="{4:.2}" text-anchor="end">{5}</text>"##,
                sy(v),
                LEFT,
                LEFT + pw,
                LEFT - 6.0,
                sy(v) + 4.0,
                label(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for (i, l) in self.layers.iter().enumerate() {
            let path = |ys: &mut dyn Iterator<Item = (f64, f64)>| {
                ys.map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            match &l.mark {
                Mark::Band { lo, hi } => {
                    let fwd = path(&mut l.x.iter().cloned().zip(hi.iter().cloned()));
                    let back = path(&mut l.x.iter().rev().cloned().zip(lo.iter().rev().cloned()));
                    let _ = writeln!(
                        s,
                        r#"<polygon points="{fwd} {back}" fill="{}" fill-opacity="0.25" stroke="none"/>"#,
                        l.color
                    );
                }
                Mark::Line { y } => {
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
                        path(&mut l.x.iter().cloned().zip(y.iter().cloned())),
                        l.color
                    );
                }
                Mark::Points { y } => {
                    for (x, y) in l.x.iter().zip(y) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.8" fill="{}"/>"#, sx(*x), sy(*y), l.color);
                    }
                }
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx}" y="{}" width="14" height="8" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                ly - 7.0,
                l.color,
                lx + 20.0,
                ly + 1.0,
                escape(&l.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Round tick positions covering `[lo, hi]`, about six of them.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r == 0.0 {
        "0".into()
    } else {
        r.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
