//! Standalone SVG figure: `U` and `T` on top, `n·T'` below.

use std::fmt::Write;

use crate::energy::InequalityReport;
use crate::func::PiecewiseAffine;

const WIDTH: f64 = 640.0;
const PANEL: f64 = 220.0;
const MARGIN: f64 = 40.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    top: f64,
}

impl Frame {
    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN);
        let span = if self.y1 > self.y0 {
            self.y1 - self.y0
        } else {
            1.0
        };
        let py = self.top + PANEL - MARGIN - (y - self.y0) / span * (PANEL - 2.0 * MARGIN);
        (px, py)
    }

    fn polyline(&self, svg: &mut String, pts: &[(f64, f64)], color: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (px, py) = self.map(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"##,
            coords.join(" ")
        );
    }

    fn axes(&self, svg: &mut String, title: &str) {
        let (l, b) = self.map(self.x0, self.y0);
        let (r, t) = self.map(self.x1, self.y1);
        let _ = writeln!(
            svg,
            r##"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999"/>"##,
            r - l,
            b - t
        );
        let _ = writeln!(
            svg,
            r##"<text x="{l:.2}" y="{:.2}" font-size="12" font-family="sans-serif">{title}  [{:.4}, {:.4}]</text>"##,
            t - 8.0,
            self.y0,
            self.y1
        );
    }
}

fn points(f: &PiecewiseAffine) -> Vec<(f64, f64)> {
    f.breakpoints()
        .iter()
        .copied()
        .zip(f.values().iter().copied())
        .collect()
}

/// SVG document overlaying `u` and its rearrangement `t`, with the step
/// function `n·T'` from the report bands in a second panel.
pub fn inequality_svg(
    u: &PiecewiseAffine,
    t: &PiecewiseAffine,
    report: &InequalityReport,
) -> String {
    let dom = u.domain();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{}" viewBox="0 0 {WIDTH} {}">"##,
        2.0 * PANEL,
        2.0 * PANEL
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="white"/>"##);

    let top = Frame {
        x0: dom.a,
        x1: dom.b,
        y0: u.min_value().min(t.min_value()),
        y1: u.max_value().max(t.max_value()),
        top: 0.0,
    };
    top.axes(&mut svg, "U (blue), T (red)");
    top.polyline(&mut svg, &points(u), "#1f77b4");
    top.polyline(&mut svg, &points(t), "#d62728");

    let steps: Vec<(f64, f64)> = report
        .bands
        .iter()
        .flat_map(|b| {
            let v = b.n.times(b.tslope);
            [(b.lo, v), (b.hi, v)]
        })
        .collect();
    let ymax = steps.iter().map(|p| p.1).fold(0.0, f64::max);
    let bottom = Frame {
        x0: dom.a,
        x1: dom.b,
        y0: 0.0,
        y1: ymax,
        top: PANEL,
    };
    bottom.axes(&mut svg, "n·T'");
    bottom.polyline(&mut svg, &steps, "#2ca02c");
    svg.push_str("</svg>\n");
    svg
}
