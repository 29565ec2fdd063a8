// SPDX-License-Identifier: MIT OR Apache-2.0

//! Static SVG charts: line charts, scatter plots, heatmaps and placeholder
//! panels. Output is plain text with fixed-precision coordinates, so equal
//! inputs give byte-identical files.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

/// Categorical colours for series.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Colour on a blue to red ramp for `t` in `[0, 1]`.
pub fn ramp(t: f64) -> String {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let r = (40.0 + 200.0 * t).round() as u8;
    let b = (220.0 - 190.0 * t).round() as u8;
    format!("#{r:02x}50{b:02x}")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in it.filter(|v| v.is_finite()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() {
                return (0.0, 1.0);
            }
            if hi - lo < 1e-12 {
                return (lo - 0.5, hi + 0.5);
            }
            let pad = (hi - lo) * 0.05;
            (lo - pad, hi + pad)
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        esc(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (bx, by) = (H - BOTTOM, LEFT);
    let _ = writeln!(
        out,
        "<line x1=\"{LEFT}\" y1=\"{bx}\" x2=\"{}\" y2=\"{bx}\" stroke=\"black\"/>\n<line x1=\"{by}\" y1=\"{TOP}\" x2=\"{by}\" y2=\"{bx}\" stroke=\"black\"/>",
        W - RIGHT
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x0 + t * (f.x1 - f.x0);
        let yv = f.y0 + t * (f.y1 - f.y0);
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{xv:.3}</text>\n<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{yv:.3}</text>",
            f.px(xv),
            bx + 16.0,
            LEFT - 6.0,
            f.py(yv) + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        (LEFT + W - RIGHT) / 2.0,
        H - 14.0,
        esc(x_label),
        (TOP + bx) / 2.0,
        (TOP + bx) / 2.0,
        esc(y_label)
    );
}

fn legend(out: &mut String, entries: &[(String, String)]) {
    for (i, (name, color)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 16.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n<text x=\"{}\" y=\"{:.2}\">{}</text>",
            y - 9.0,
            x + 14.0,
            y,
            esc(name)
        );
    }
}

/// One named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let f = Frame::new(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    for s in series {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let dash = if s.dashed {
            " stroke-dasharray=\"5,3\""
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{dash} points=\"{}\"/>",
            s.color,
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>",
                f.px(x),
                f.py(y),
                s.color
            );
        }
    }
    legend(
        &mut out,
        &series
            .iter()
            .map(|s| (s.name.clone(), s.color.clone()))
            .collect::<Vec<_>>(),
    );
    out.push_str("</svg>\n");
    out
}

/// One scatter point with its fill colour.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub color: String,
}

pub fn scatter(
    title: &str,
    x_label: &str,
    y_label: &str,
    points: &[Point],
    legend_entries: &[(String, String)],
) -> String {
    let f = Frame::new(points.iter().map(|p| p.x), points.iter().map(|p| p.y));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    for p in points {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{}\" fill-opacity=\"0.8\"/>",
            f.px(p.x),
            f.py(p.y),
            p.color
        );
    }
    legend(&mut out, legend_entries);
    out.push_str("</svg>\n");
    out
}

/// Heatmap of values in `[0, 1]`, rows top to bottom.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, values: &[Vec<f64>]) -> String {
    let rows = values.len().max(1);
    let cols = values.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let cw = (W - LEFT - RIGHT) / cols as f64;
    let ch = (H - TOP - BOTTOM) / rows as f64;
    let mut out = String::new();
    header(&mut out, title);
    for (i, r) in values.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let (x, y) = (LEFT + j as f64 * cw, TOP + i as f64 * ch);
            let _ = writeln!(
                out,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cw:.2}\" height=\"{ch:.2}\" fill=\"rgb({shade},{shade},255)\" stroke=\"white\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{v:.2}</text>",
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            LEFT - 6.0,
            TOP + (i as f64 + 0.5) * ch + 4.0,
            i + 1
        );
    }
    for j in 0..cols {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            LEFT + (j as f64 + 0.5) * cw,
            H - BOTTOM + 16.0,
            j + 1
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{}</text>",
        (LEFT + W - RIGHT) / 2.0,
        H - 14.0,
        esc(x_label),
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        esc(y_label)
    );
    out.push_str("</svg>\n");
    out
}

/// Placeholder panel for a figure whose inputs are absent.
pub fn missing_panel(title: &str, reason: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let _ = write!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{}\" height=\"{}\" fill=\"#f4f4f4\" stroke=\"#999\" stroke-dasharray=\"6,4\"/>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"16\" text-anchor=\"middle\">missing</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n</svg>\n",
        W - LEFT - RIGHT,
        H - TOP - BOTTOM,
        (LEFT + W - RIGHT) / 2.0,
        H / 2.0,
        (LEFT + W - RIGHT) / 2.0,
        H / 2.0 + 20.0,
        esc(reason)
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_deterministic_and_well_formed() {
        let s = vec![Series {
            name: "a<b".into(),
            color: PALETTE[0].into(),
            points: vec![(1.0, 0.5), (2.0, 0.7)],
            dashed: false,
        }];
        let a = line_chart("t", "x", "y", &s);
        assert_eq!(a, line_chart("t", "x", "y", &s));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a&lt;b"));
        let h = heatmap("h", "x", "y", &[vec![1.0, 0.0], vec![0.5, 0.5]]);
        assert_eq!(h.matches("<rect x=").count(), 4);
        assert!(missing_panel("m", "run analyze").contains("missing"));
        assert_eq!(ramp(0.0), "#2850dc");
    }
}
