//! Minimal SVG 1.1 emission: points, segments and heatmap cells in data
//! coordinates.

use std::fmt::Write as _;

pub const BLUE: &str = "#1f77b4";
pub const RED: &str = "#d62728";
pub const GREEN: &str = "#2ca02c";
pub const ORANGE: &str = "#ff7f0e";
pub const GRAY: &str = "#7f7f7f";

pub struct Svg {
    width: f64,
    height: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    body: String,
    comment: Option<String>,
}

impl Svg {
    /// A canvas of `width x height` pixels showing the data box
    /// `x_range x y_range` (y grows upwards).
    pub fn new(width: f64, height: f64, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        Svg { width, height, x_range, y_range, body: String::new(), comment: None }
    }

    /// Adds a comment line, e.g. a generation timestamp.
    pub fn comment(mut self, text: impl Into<String>) -> Self {
        self.comment = Some(text.into());
        self
    }

    fn px(&self, x: f64) -> f64 {
        (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.height - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * self.height
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str, opacity: f64) {
        let (cx, cy) = (self.px(x), self.py(y));
        let _ = writeln!(
            self.body,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{fill}" fill-opacity="{opacity:.3}"/>"#
        );
    }

    pub fn line(&mut self, from: (f64, f64), to: (f64, f64), stroke: &str, width: f64, opacity: f64) {
        let (x1, y1, x2, y2) = (self.px(from.0), self.py(from.1), self.px(to.0), self.py(to.1));
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width:.2}" stroke-opacity="{opacity:.3}"/>"#
        );
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64) {
        let mut coords = String::new();
        for &(x, y) in points {
            let _ = write!(coords, "{:.2},{:.2} ", self.px(x), self.py(y));
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width:.2}"/>"#,
            coords.trim_end()
        );
    }

    /// An axis-aligned cell with corners in data coordinates.
    pub fn rect(&mut self, lo: (f64, f64), hi: (f64, f64), fill: &str) {
        let (x, y) = (self.px(lo.0), self.py(hi.1));
        let (w, h) = (self.px(hi.0) - x, self.py(lo.1) - y);
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" stroke="none"/>"#
        );
    }

    pub fn text(&mut self, x_px: f64, y_px: f64, size: f64, content: &str) {
        let escaped = content.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x_px:.2}" y="{y_px:.2}" font-family="sans-serif" font-size="{size:.1}">{escaped}</text>"#
        );
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        if let Some(c) = &self.comment {
            let _ = writeln!(out, "<!-- {} -->", c.replace("--", "- -"));
        }
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        out.push_str(&self.body);
        out.push_str("</svg>\n");
        out
    }
}

/// Maps `t` in `[0, 1]` to a white-to-dark-red ramp.
pub fn heat_color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let r = 255.0 - 80.0 * t;
    let g = 255.0 * (1.0 - t);
    let b = 255.0 * (1.0 - t).powi(2);
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let mut svg = Svg::new(100.0, 100.0, (-1.0, 1.0), (-1.0, 1.0)).comment("generated -- now");
        svg.circle(0.0, 0.0, 2.0, BLUE, 1.0);
        svg.line((-1.0, -1.0), (1.0, 1.0), GREEN, 1.0, 0.5);
        svg.rect((-1.0, -1.0), (0.0, 0.0), &heat_color(0.5));
        svg.text(5.0, 10.0, 10.0, "a<b");
        let doc = svg.render();
        assert!(doc.contains(r#"cx="50.00" cy="50.00""#));
        assert!(doc.contains("<!-- generated - - now -->"));
        assert!(doc.contains("a&lt;b"));
        assert!(doc.trim_end().ends_with("</svg>"));
        assert_eq!(doc.matches("<rect").count(), 2);
    }

    #[test]
    fn heat_ramp_endpoints() {
        assert_eq!(heat_color(0.0), "#ffffff");
        assert_eq!(heat_color(1.0), "#af0000");
    }
}
