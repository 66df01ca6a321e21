//! A small hand-rolled SVG writer: just enough shapes for loss curves,
//! trajectory overlays, and heat grids. Coordinates are written with full
//! float precision so tests can parse values back exactly.

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Svg { width, height, body: String::new() }
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, stroke_width: f64) {
        let points: Vec<String> = pts.iter().map(|(x, y)| format!("{x},{y}")).collect();
        self.body.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{stroke_width}\" points=\"{}\"/>\n",
            points.join(" ")
        ));
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        self.body.push_str(&format!("<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{r}\" fill=\"{fill}\"/>\n"));
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        self.body.push_str(&format!("<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"{fill}\"/>\n"));
    }

    /// Rect whose opacity carries a data value; used for heat maps.
    pub fn cell(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, opacity: f64) {
        self.body.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"{fill}\" fill-opacity=\"{opacity}\"/>\n"
        ));
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, s: &str) {
        self.body.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" font-size=\"{size}\" font-family=\"monospace\">{}</text>\n",
            escape(s)
        ));
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" width=\"{}\" height=\"{}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.width, self.height, self.width, self.height, self.body
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps data space onto a screen rectangle, flipping y so larger values are
/// drawn higher.
#[derive(Debug, Clone, Copy)]
pub struct Frame2D {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl Frame2D {
    /// Data bounds padded so degenerate spans still map sanely.
    pub fn fit(xs: &[f64], ys: &[f64], left: f64, top: f64, width: f64, height: f64) -> Self {
        let span = |vals: &[f64]| -> (f64, f64) {
            let lo = vals.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = vals.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            (lo, hi)
        };
        let (mut x0, mut x1) = span(xs);
        let (mut y0, mut y1) = span(ys);
        if !(x1 > x0) {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if !(y1 > y0) {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Frame2D { x0, x1, y0, y1, left, top, width, height }
    }

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = self.left + (x - self.x0) / (self.x1 - self.x0) * self.width;
        let sy = self.top + (1.0 - (y - self.y0) / (self.y1 - self.y0)) * self.height;
        (sx, sy)
    }
}
