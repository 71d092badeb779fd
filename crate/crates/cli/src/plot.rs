//! Figure assembly on top of the core SVG primitives. Points are drawn from
//! their first two coordinates.

use std::time::{SystemTime, UNIX_EPOCH};

use ddimlab::svg::{heat_color, Svg};
use ddimlab::Tensor;

const SIZE: f64 = 600.0;

pub struct Layer<'a> {
    pub points: &'a Tensor,
    pub color: &'a str,
    pub radius: f64,
    pub opacity: f64,
}

/// Figure canvas shared by all plots.
pub struct Figure {
    svg: Svg,
}

fn xy(t: &Tensor, i: usize) -> (f64, f64) {
    let r = t.row(i);
    (r[0], r.get(1).copied().unwrap_or(0.0))
}

/// Square box around every finite point, with a small margin.
fn bounds(sets: &[&Tensor]) -> ((f64, f64), (f64, f64)) {
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for t in sets {
        for i in 0..t.rows() {
            let (x, y) = xy(t, i);
            if x.is_finite() && y.is_finite() {
                lo = (lo.0.min(x), lo.1.min(y));
                hi = (hi.0.max(x), hi.1.max(y));
            }
        }
    }
    if !lo.0.is_finite() {
        return ((-1.0, 1.0), (-1.0, 1.0));
    }
    let half = 0.5 * (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-6) * 1.08;
    let c = (0.5 * (lo.0 + hi.0), 0.5 * (lo.1 + hi.1));
    ((c.0 - half, c.0 + half), (c.1 - half, c.1 + half))
}

impl Figure {
    pub fn covering(sets: &[&Tensor], timestamp: bool) -> Self {
        let (xr, yr) = bounds(sets);
        Self::with_ranges(xr, yr, timestamp)
    }

    pub fn with_ranges(x_range: (f64, f64), y_range: (f64, f64), timestamp: bool) -> Self {
        let mut svg = Svg::new(SIZE, SIZE, x_range, y_range);
        if timestamp {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            svg = svg.comment(format!("generated at unix time {secs}"));
        }
        Figure { svg }
    }

    pub fn scatter(&mut self, layer: &Layer<'_>) {
        for i in 0..layer.points.rows() {
            let (x, y) = xy(layer.points, i);
            if x.is_finite() && y.is_finite() {
                self.svg.circle(x, y, layer.radius, layer.color, layer.opacity);
            }
        }
    }

    /// A segment from each row of `from` to the same row of `to`.
    pub fn segments(&mut self, from: &Tensor, to: &Tensor, rows: impl IntoIterator<Item = usize>, color: &str, opacity: f64) {
        for i in rows {
            self.svg.line(xy(from, i), xy(to, i), color, 0.6, opacity);
        }
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], color: &str) {
        self.svg.polyline(points, color, 1.5);
    }

    /// Grid cells shaded by value relative to the maximum.
    pub fn heatmap(&mut self, centers: &Tensor, values: &[f64], cell: (f64, f64)) {
        let max = values.iter().copied().fold(0.0f64, f64::max);
        for (i, &v) in values.iter().enumerate() {
            let (x, y) = xy(centers, i);
            let t = if max > 0.0 { v / max } else { 0.0 };
            self.svg.rect((x - cell.0 / 2.0, y - cell.1 / 2.0), (x + cell.0 / 2.0, y + cell.1 / 2.0), &heat_color(t));
        }
    }

    pub fn title(&mut self, text: &str) {
        self.svg.text(8.0, 18.0, 13.0, text);
    }

    pub fn render(&self) -> String {
        self.svg.render()
    }
}
