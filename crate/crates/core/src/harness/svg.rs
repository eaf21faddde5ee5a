//! Minimal self-contained SVG charts.

use std::fmt::Write;

use super::record::CoordinateSummary;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#17becf"];

/// Data-to-pixel mapping on one axis.
#[derive(Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Scale {
    fn new(lo: f64, hi: f64, from: f64, to: f64) -> Self {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            let pad = lo.abs().max(1.0) * 0.5;
            (lo - pad, hi + pad)
        };
        Self { lo, hi, from, to }
    }

    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0 && span.is_finite()) {
        return vec![lo];
    }
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = 0.05 * (hi - lo).max(1e-12);
    (lo - pad, hi + pad)
}

struct Canvas {
    body: String,
}

impl Canvas {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(body, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            body,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        Self { body }
    }

    fn y_axis(&mut self, y: Scale, name: &str, log: bool) {
        let (lo, hi) = (y.lo, y.hi);
        let _ = writeln!(
            self.body,
            r##"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="#333"/>"##,
            HEIGHT - BOTTOM
        );
        for t in ticks(lo, hi, 6) {
            let py = y.map(t);
            let text = if log { label(10f64.powf(t)) } else { label(t) };
            let _ = writeln!(
                self.body,
                r##"<line x1="{}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{text}</text>"##,
                LEFT,
                WIDTH - RIGHT,
                LEFT - 6.0,
                py + 4.0
            );
        }
        let _ = writeln!(
            self.body,
            r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (TOP + HEIGHT - BOTTOM) / 2.0,
            escape(name)
        );
    }

    fn x_axis_numeric(&mut self, x: Scale, name: &str, log: bool) {
        let base = HEIGHT - BOTTOM;
        let _ = writeln!(
            self.body,
            r##"<line x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="#333"/>"##,
            WIDTH - RIGHT
        );
        for t in ticks(x.lo, x.hi, 8) {
            let px = x.map(t);
            let text = if log { label(10f64.powf(t)) } else { label(t) };
            let _ = writeln!(
                self.body,
                r##"<line x1="{px:.2}" y1="{base}" x2="{px:.2}" y2="{}" stroke="#333"/><text x="{px:.2}" y="{}" text-anchor="middle">{text}</text>"##,
                base + 5.0,
                base + 18.0
            );
        }
        self.x_name(name);
    }

    fn x_name(&mut self, name: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            HEIGHT - 10.0,
            escape(name)
        );
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        for (i, (text, color)) in entries.iter().enumerate() {
            let y = TOP + 8.0 + 16.0 * i as f64;
            let x = WIDTH - RIGHT - 170.0;
            let _ = writeln!(
                self.body,
                r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
                y - 9.0,
                x + 15.0,
                y,
                escape(text)
            );
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn y_scale(lo: f64, hi: f64) -> Scale {
    let (lo, hi) = padded(lo, hi);
    Scale::new(lo, hi, HEIGHT - BOTTOM, TOP)
}

fn x_scale(lo: f64, hi: f64) -> Scale {
    Scale::new(lo, hi, LEFT, WIDTH - RIGHT)
}

fn finite_range<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// One box per coefficient, with optional reference values drawn as red crosses.
pub fn boxplot(title: &str, labels: &[String], boxes: &[CoordinateSummary], reference: Option<&[f64]>) -> String {
    let mut extent: Vec<f64> = boxes.iter().flat_map(|b| [b.whisker_low, b.whisker_high]).collect();
    if let Some(r) = reference {
        extent.extend_from_slice(r);
    }
    extent.push(0.0);
    let (lo, hi) = finite_range(&extent);
    let y = y_scale(lo, hi);
    let mut c = Canvas::new(title);
    c.y_axis(y, "coefficient", false);
    let slot = (WIDTH - LEFT - RIGHT) / boxes.len().max(1) as f64;
    let half = (slot * 0.3).min(18.0);
    let zero = y.map(0.0);
    let _ = writeln!(
        c.body,
        r##"<line x1="{LEFT}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        WIDTH - RIGHT
    );
    for (i, b) in boxes.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let (q1, q3, med) = (y.map(b.q1), y.map(b.q3), y.map(b.median));
        let (wl, wh) = (y.map(b.whisker_low), y.map(b.whisker_high));
        let _ = writeln!(
            c.body,
            r##"<line x1="{cx:.2}" y1="{wl:.2}" x2="{cx:.2}" y2="{wh:.2}" stroke="#333"/><rect x="{:.2}" y="{q3:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#333"/><line x1="{:.2}" y1="{med:.2}" x2="{:.2}" y2="{med:.2}" stroke="#e6550d" stroke-width="2"/>"##,
            cx - half,
            2.0 * half,
            (q1 - q3).max(0.5),
            cx - half,
            cx + half
        );
        if let Some(v) = reference.and_then(|r| r.get(i)).filter(|v| v.is_finite()) {
            let py = y.map(*v);
            let s = 6.0;
            let _ = writeln!(
                c.body,
                r#"<path d="M{:.2} {:.2}L{:.2} {:.2}M{:.2} {:.2}L{:.2} {:.2}" stroke="red" stroke-width="2"/>"#,
                cx - s,
                py - s,
                cx + s,
                py + s,
                cx - s,
                py + s,
                cx + s,
                py - s
            );
        }
        let _ = writeln!(
            c.body,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 18.0,
            escape(&labels[i])
        );
    }
    c.x_name("coordinate");
    if reference.is_some() {
        c.legend(&[("empirical".into(), "#9ecae1"), ("closed form".into(), "red")]);
    }
    c.finish()
}

/// Bars for a single coefficient vector, with optional reference crosses.
pub fn bars(title: &str, labels: &[String], values: &[f64], reference: Option<&[f64]>) -> String {
    let boxes: Vec<CoordinateSummary> = values
        .iter()
        .map(|&v| CoordinateSummary {
            median: v,
            q1: v.min(0.0),
            q3: v.max(0.0),
            whisker_low: v.min(0.0),
            whisker_high: v.max(0.0),
            mean: v,
            std_dev: 0.0,
        })
        .collect();
    boxplot(title, labels, &boxes, reference)
}

/// Histogram with a vertical marker line.
pub fn histogram(title: &str, values: &[f64], marker: f64, marker_label: &str) -> String {
    let (mut lo, mut hi) = finite_range(values.iter().chain(std::iter::once(&marker)));
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let bins = ((values.len() as f64).sqrt().ceil() as usize).clamp(5, 40);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values.iter().filter(|v| v.is_finite()) {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let x = x_scale(lo, hi);
    let y = Scale::new(0.0, max * 1.1, HEIGHT - BOTTOM, TOP);
    let mut c = Canvas::new(title);
    c.y_axis(y, "count", false);
    c.x_axis_numeric(x, "error", false);
    for (k, &n) in counts.iter().enumerate() {
        let (x0, x1) = (x.map(lo + k as f64 * width), x.map(lo + (k + 1) as f64 * width));
        let top = y.map(n as f64);
        let _ = writeln!(
            c.body,
            r##"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#333"/>"##,
            (x1 - x0).max(0.5),
            y.map(0.0) - top
        );
    }
    let mx = x.map(marker);
    let _ = writeln!(
        c.body,
        r#"<line x1="{mx:.2}" y1="{TOP}" x2="{mx:.2}" y2="{}" stroke="red" stroke-width="2"/>"#,
        HEIGHT - BOTTOM
    );
    c.legend(&[(marker_label.to_string(), "red")]);
    c.finish()
}

/// Poly-lines sharing an x axis. With `log`, both axes are base-10 logarithmic
/// and non-positive points are dropped.
pub fn lines(
    title: &str,
    x_name: &str,
    y_name: &str,
    xs: &[f64],
    series: &[(String, Vec<f64>)],
    log: bool,
    vertical: Option<f64>,
) -> String {
    let tf = |v: f64| if log { v.log10() } else { v };
    let txs: Vec<f64> = xs.iter().map(|&v| tf(v)).collect();
    let all: Vec<f64> = series.iter().flat_map(|(_, ys)| ys.iter().map(|&v| tf(v))).collect();
    let (xlo, xhi) = finite_range(&txs);
    let (ylo, yhi) = finite_range(&all);
    let x = x_scale(xlo, xhi);
    let y = y_scale(ylo, yhi);
    let mut c = Canvas::new(title);
    c.y_axis(y, y_name, log);
    c.x_axis_numeric(x, x_name, log);
    let mut legend = Vec::new();
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = txs
            .iter()
            .zip(ys)
            .map(|(&px, &py)| (px, tf(py)))
            .filter(|(px, py)| px.is_finite() && py.is_finite())
            .map(|(px, py)| format!("{:.2},{:.2}", x.map(px), y.map(py)))
            .collect();
        let _ = writeln!(
            c.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        for p in &points {
            let (px, py) = p.split_once(',').expect("formatted above");
            let _ = writeln!(c.body, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
        }
        legend.push((name.clone(), color));
    }
    if let Some(v) = vertical.map(tf).filter(|v| v.is_finite()) {
        let vx = x.map(v);
        let _ = writeln!(
            c.body,
            r#"<line x1="{vx:.2}" y1="{TOP}" x2="{vx:.2}" y2="{}" stroke="red" stroke-dasharray="5 3"/>"#,
            HEIGHT - BOTTOM
        );
    }
    let entries: Vec<(String, &str)> = legend.iter().map(|(n, c)| (n.clone(), *c)).collect();
    c.legend(&entries);
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::record::summarize;

    fn well_formed(svg: &str) {
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn tick_steps_are_round() {
        assert_eq!(ticks(0.0, 10.0, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(ticks(3.0, 3.0, 5), vec![3.0]);
    }

    #[test]
    fn charts_render() {
        let b = vec![summarize(&[1.0, 2.0, 3.0]), summarize(&[-1.0, 0.0, 4.0])];
        well_formed(&boxplot("t", &["a".into(), "b".into()], &b, Some(&[2.0, f64::NAN])));
        well_formed(&bars("t", &["a".into()], &[3.0], None));
        well_formed(&histogram("h", &[0.1, 0.2, 0.2, 0.5], 0.3, "center"));
        well_formed(&histogram("h", &[1.0, 1.0], 1.0, "center"));
        well_formed(&lines(
            "l",
            "n",
            "err",
            &[1e3, 1e4, 1e5],
            &[("mean".into(), vec![0.3, 0.1, 0.03])],
            true,
            None,
        ));
        well_formed(&lines(
            "l",
            "nu",
            "theta",
            &[0.1, 1.0],
            &[("t".into(), vec![-1.0, 1.0])],
            false,
            Some(0.5),
        ));
    }

    #[test]
    fn text_is_escaped() {
        assert!(boxplot("a<b", &["x&y".into()], &[summarize(&[1.0])], None).contains("a&lt;b"));
    }
}
