//! Static SVG output: diverging heatmaps and fan charts.
//!
//! Numbers are printed with fixed precision so equal inputs give equal files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

const CELL_W: f64 = 90.0;
const CELL_H: f64 = 28.0;
const LABEL_W: f64 = 110.0;
const TITLE_H: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Colour for `value` against `center`: green on the `good` side, red on the
/// other, white at the centre, saturating at `span` away.
fn diverging(value: f64, center: f64, span: f64, lower_is_good: bool) -> String {
    if !value.is_finite() {
        return "#cccccc".into();
    }
    let mut t = ((value - center) / span).clamp(-1.0, 1.0);
    if !lower_is_good {
        t = -t;
    }
    let mix = |a: f64, b: f64, w: f64| (a + (b - a) * w).round() as u8;
    let (r, g, b) = if t < 0.0 {
        let w = -t;
        (mix(255.0, 26.0, w), mix(255.0, 150.0, w), mix(255.0, 65.0, w))
    } else {
        (mix(255.0, 215.0, t), mix(255.0, 48.0, t), mix(255.0, 39.0, t))
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

pub struct Heatmap<'a> {
    pub title: &'a str,
    pub rows: &'a [String],
    pub cols: &'a [String],
    /// Row-major, `rows.len() * cols.len()`; `NaN` for empty cells.
    pub values: &'a [f64],
    pub center: f64,
    pub span: f64,
    pub lower_is_good: bool,
}

impl Heatmap<'_> {
    pub fn to_svg(&self) -> String {
        let width = LABEL_W + CELL_W * self.cols.len() as f64 + 10.0;
        let height = TITLE_H + CELL_H * (self.rows.len() + 1) as f64 + 10.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<text x="8" y="22" font-size="14">{}</text>"#, escape(self.title));
        for (c, name) in self.cols.iter().enumerate() {
            let x = LABEL_W + CELL_W * (c as f64 + 0.5);
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                TITLE_H + CELL_H * 0.6,
                escape(name)
            );
        }
        for (r, name) in self.rows.iter().enumerate() {
            let y = TITLE_H + CELL_H * (r + 1) as f64;
            let _ = writeln!(s, r#"<text x="8" y="{:.1}">{}</text>"#, y + CELL_H * 0.65, escape(name));
            for c in 0..self.cols.len() {
                let v = self.values[r * self.cols.len() + c];
                let x = LABEL_W + CELL_W * c as f64;
                let _ = writeln!(
                    s,
                    r##"<rect x="{x:.1}" y="{y:.1}" width="{CELL_W:.1}" height="{CELL_H:.1}" fill="{}" stroke="#ffffff"/>"##,
                    diverging(v, self.center, self.span, self.lower_is_good)
                );
                let label = if v.is_finite() { format!("{v:.3}") } else { "-".into() };
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#,
                    x + CELL_W / 2.0,
                    y + CELL_H * 0.65
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }
}

/// Median line with a shaded 16-84 band over horizons `0..n`.
pub struct FanChart<'a> {
    pub title: &'a str,
    pub q16: &'a [f64],
    pub q50: &'a [f64],
    pub q84: &'a [f64],
}

impl FanChart<'_> {
    pub fn to_svg(&self) -> String {
        let (w, h) = (420.0, 260.0);
        let (left, right, top, bottom) = (50.0, 15.0, 35.0, 30.0);
        let n = self.q50.len();
        let mut lo = self.q16.iter().chain(self.q50).chain(self.q84).fold(0.0f64, |a, &b| a.min(b));
        let mut hi = self.q16.iter().chain(self.q50).chain(self.q84).fold(0.0f64, |a, &b| a.max(b));
        if hi - lo < 1e-9 {
            lo -= 1.0;
            hi += 1.0;
        }
        let px = |k: usize| left + (w - left - right) * k as f64 / (n.max(2) - 1) as f64;
        let py = |v: f64| top + (h - top - bottom) * (hi - v) / (hi - lo);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<text x="8" y="20" font-size="13">{}</text>"#, escape(self.title));
        let mut band = String::new();
        for k in 0..n {
            let _ = write!(band, "{:.2},{:.2} ", px(k), py(self.q84[k]));
        }
        for k in (0..n).rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(k), py(self.q16[k]));
        }
        let _ = writeln!(s, r##"<polygon points="{}" fill="#9ecae1" stroke="none"/>"##, band.trim_end());
        let _ = writeln!(
            s,
            r##"<line x1="{left:.1}" y1="{z:.2}" x2="{:.1}" y2="{z:.2}" stroke="#555555" stroke-dasharray="4 3"/>"##,
            w - right,
            z = py(0.0)
        );
        let line: Vec<String> = (0..n).map(|k| format!("{:.2},{:.2}", px(k), py(self.q50[k]))).collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
            line.join(" ")
        );
        for (v, label) in [(hi, hi), (lo, lo)] {
            let _ = writeln!(s, r#"<text x="4" y="{:.2}">{label:.3}</text>"#, py(v) + 4.0);
        }
        for k in 0..n {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{k}</text>"#, px(k), h - 10.0);
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg())?;
        Ok(())
    }
}
