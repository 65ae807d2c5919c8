//! Minimal native SVG charts: line, step, band and box-plot layers on a
//! linear pair of axes.

use std::fmt::Write;

use crate::metrics::FiveNumber;

pub const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 52.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Roughly `n` round tick values covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / n.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Approximate rendered width of `s` at the document font size.
const CHAR_PX: f64 = 7.0;

fn trim_decimal(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a >= 1e6 {
        format!("{}M", trim_decimal(format!("{:.3}", v / 1e6)))
    } else if a >= 1e4 {
        format!("{}k", trim_decimal(format!("{:.2}", v / 1e3)))
    } else if v != 0.0 && a < 1e-2 {
        format!("{v:.1e}")
    } else {
        trim_decimal(format!("{v:.2}"))
    }
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub width: f64,
    pub height: f64,
    title: String,
    x_label: String,
    y_label: String,
    x_range: (f64, f64),
    y_range: (f64, f64),
    y_categories: Vec<(f64, String)>,
    body: String,
    legend: Vec<(String, String)>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, x_range: (f64, f64), y_label: &str, y_range: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        Self {
            width: 760.0,
            height: 420.0,
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            x_range: widen(x_range),
            y_range: widen(y_range),
            y_categories: Vec::new(),
            body: String::new(),
            legend: Vec::new(),
        }
    }

    pub fn size(mut self, width: f64, height: f64) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    /// Replaces numeric y ticks by labelled positions.
    pub fn y_categories(mut self, labels: Vec<(f64, String)>) -> Self {
        self.y_categories = labels;
        self
    }

    fn px(&self, x: f64) -> f64 {
        let (lo, hi) = self.x_range;
        MARGIN_L + (x - lo) / (hi - lo) * (self.width - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.height - MARGIN_B - (y - lo) / (hi - lo) * (self.height - MARGIN_T - MARGIN_B)
    }

    pub fn legend(&mut self, label: &str, color: &str) {
        self.legend.push((label.into(), color.into()));
    }

    pub fn line(&mut self, points: &[(f64, f64)], color: &str, label: Option<&str>) {
        if points.is_empty() {
            return;
        }
        let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
            pts.join(" ")
        );
        if let Some(l) = label {
            self.legend(l, color);
        }
    }

    /// Right-continuous step function through `points`, held until `x_end`.
    pub fn step(&mut self, points: &[(f64, f64)], x_end: f64, color: &str, label: Option<&str>) {
        let mut path = Vec::with_capacity(points.len() * 2 + 1);
        for (k, &(x, y)) in points.iter().enumerate() {
            if k > 0 {
                path.push((x, points[k - 1].1));
            }
            path.push((x, y));
        }
        if let Some(&(_, y)) = points.last() {
            path.push((x_end, y));
        }
        self.line(&path, color, label);
    }

    pub fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, color: &str) {
        let (a, b) = (self.px(x0.min(x1)), self.px(x0.max(x1)));
        let (c, d) = (self.py(y0.max(y1)), self.py(y0.min(y1)));
        let _ = writeln!(
            self.body,
            r#"<rect x="{a:.2}" y="{c:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
            b - a,
            d - c
        );
    }

    pub fn boxplot(&mut self, x: f64, half_width: f64, s: &FiveNumber, color: &str) {
        let (l, r, m) = (self.px(x - half_width), self.px(x + half_width), self.px(x));
        let y = |v| self.py(v);
        let _ = writeln!(
            self.body,
            concat!(
                r#"<g stroke="{c}" fill="none" stroke-width="1">"#,
                r#"<line x1="{m:.2}" y1="{lo:.2}" x2="{m:.2}" y2="{q1:.2}"/>"#,
                r#"<line x1="{m:.2}" y1="{q3:.2}" x2="{m:.2}" y2="{hi:.2}"/>"#,
                r#"<rect x="{l:.2}" y="{q3:.2}" width="{w:.2}" height="{h:.2}" fill="{c}" fill-opacity="0.25"/>"#,
                r#"<line x1="{l:.2}" y1="{md:.2}" x2="{r:.2}" y2="{md:.2}" stroke-width="2"/></g>"#
            ),
            c = color,
            m = m,
            l = l,
            r = r,
            lo = y(s.min),
            hi = y(s.max),
            q1 = y(s.q1),
            q3 = y(s.q3),
            md = y(s.median),
            w = r - l,
            h = (y(s.q1) - y(s.q3)).max(0.5),
        );
    }

    fn y_ticks(&self) -> Vec<(f64, String)> {
        if self.y_categories.is_empty() {
            nice_ticks(self.y_range.0, self.y_range.1, 6).into_iter().map(|t| (t, fmt_tick(t))).collect()
        } else {
            self.y_categories.clone()
        }
    }

    /// Extra room needed beyond the default margins for tick labels and the
    /// legend, as (left, right).
    fn overflow(&self) -> (f64, f64) {
        let widest = |it: &mut dyn Iterator<Item = usize>| it.max().unwrap_or(0) as f64 * CHAR_PX;
        let ticks = widest(&mut self.y_ticks().iter().map(|(_, l)| l.chars().count()));
        let label = if self.y_label.is_empty() { 6.0 } else { 30.0 };
        let left = (ticks + 8.0 + label - MARGIN_L).max(0.0);
        let legend = widest(&mut self.legend.iter().map(|(l, _)| l.chars().count()));
        let right = (legend + 40.0 - MARGIN_R).max(0.0);
        (left, right)
    }

    fn axes(&self, out: &mut String) {
        let (x0, x1) = (self.px(self.x_range.0), self.px(self.x_range.1));
        let (y0, y1) = (self.py(self.y_range.0), self.py(self.y_range.1));
        let _ = writeln!(out, r##"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##, x1 - x0, y0 - y1);
        for t in nice_ticks(self.x_range.0, self.x_range.1, 8) {
            let x = self.px(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                y0 + 5.0,
                y0 + 18.0,
                fmt_tick(t)
            );
        }
        for (t, label) in self.y_ticks() {
            let y = self.py(t);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                x0 - 5.0,
                x0 - 8.0,
                y + 4.0,
                esc(&label)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            self.height - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text transform="translate({:.2},{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            16.0 - self.overflow().0,
            (y0 + y1) / 2.0,
            esc(&self.y_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-weight="bold">{}</text>"#,
            (x0 + x1) / 2.0,
            esc(&self.title)
        );
        for (k, (label, color)) in self.legend.iter().enumerate() {
            let ly = MARGIN_T + 10.0 + k as f64 * 18.0;
            let lx = x1 + 12.0;
            let _ = writeln!(
                out,
                r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="10" fill="{color}"/><text x="{:.2}" y="{ly:.2}">{}</text>"#,
                ly - 9.0,
                lx + 20.0,
                esc(label)
            );
        }
    }

    /// Rendered width including any margin overflow.
    pub fn total_width(&self) -> f64 {
        let (l, r) = self.overflow();
        self.width + l + r
    }

    fn group(&self, dy: f64) -> String {
        let mut out = format!("<g transform=\"translate({},{dy})\">\n", self.overflow().0);
        out.push_str(&self.body);
        self.axes(&mut out);
        out.push_str("</g>\n");
        out
    }

    pub fn render(&self) -> String {
        stack(std::slice::from_ref(self))
    }
}

/// Charts placed top to bottom in one document.
pub fn stack(charts: &[Chart]) -> String {
    let width = charts.iter().map(Chart::total_width).fold(0.0, f64::max);
    let height: f64 = charts.iter().map(|c| c.height).sum();
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    let mut dy = 0.0;
    for c in charts {
        out.push_str(&c.group(dy));
        dy += c.height;
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tick_labels_are_short() {
        assert_eq!(fmt_tick(400_000.0), "400k");
        assert_eq!(fmt_tick(1_250_000.0), "1.25M");
        assert_eq!(fmt_tick(12_500.0), "12.5k");
        assert_eq!(fmt_tick(0.25), "0.25");
        assert_eq!(fmt_tick(3.0), "3");
        assert_eq!(fmt_tick(0.0), "0");
    }

    #[test]
    fn margins_grow_with_labels() {
        let mut c = Chart::new("t", "x", (0.0, 1.0), "y", (0.0, 1.0));
        let base = c.total_width();
        c.legend("a very long legend label indeed, longer than the margin", "#000");
        assert!(c.total_width() > base);
    }

    #[test]
    fn ticks_are_round() {
        assert_eq!(nice_ticks(0.0, 100.0, 5), vec![0.0, 20.0, 40.0, 60.0, 80.0, 100.0]);
        assert_eq!(nice_ticks(0.0, 1.0, 4), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(nice_ticks(3.0, 3.0, 4), vec![3.0]);
    }

    #[test]
    fn rendered_document_is_well_formed_enough() {
        let mut c = Chart::new("a < b", "x", (0.0, 10.0), "y", (0.0, 1.0));
        c.step(&[(1.0, 0.2), (2.0, 0.6)], 10.0, PALETTE[0], Some("s&p"));
        c.boxplot(5.0, 0.5, &FiveNumber { min: 0.1, q1: 0.2, median: 0.3, q3: 0.4, max: 0.9 }, PALETTE[1]);
        let svg = c.render();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b") && svg.contains("s&amp;p"));
        assert_eq!(svg.matches("<g").count(), svg.matches("</g>").count());
    }
}
