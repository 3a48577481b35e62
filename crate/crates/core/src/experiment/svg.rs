//! Static SVG panels with the plotted data embedded as JSON metadata.

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Line {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub lines: Vec<Line>,
    /// Horizontal reference levels, e.g. a test threshold.
    pub guides: Vec<f64>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str, log_log: bool) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: log_log,
            log_y: log_log,
            lines: Vec::new(),
            guides: Vec::new(),
        }
    }

    pub fn line(mut self, label: &str, x: Vec<f64>, y: Vec<f64>) -> Self {
        self.lines.push(Line { label: label.into(), x, y });
        self
    }

    pub fn guide(mut self, level: f64) -> Self {
        self.guides.push(level);
        self
    }
}

const W: f64 = 520.0;
const H: f64 = 320.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        Axis { log, lo, hi }
    }

    fn map(&self, v: f64, from: f64, to: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some(from + (v - self.lo) / (self.hi - self.lo) * (to - from))
    }

    fn tick_label(&self, frac: f64) -> String {
        let v = self.lo + frac * (self.hi - self.lo);
        if self.log {
            format!("1e{v:.1}")
        } else {
            format!("{v:.3}")
        }
    }
}

fn panel(plot: &Plot, top: f64, out: &mut String) {
    let ax = Axis::fit(plot.lines.iter().flat_map(|l| l.x.iter().copied()), plot.log_x);
    let ay = Axis::fit(plot.lines.iter().flat_map(|l| l.y.iter().copied()).chain(plot.guides.iter().copied()), plot.log_y);
    let (x0, x1) = (MARGIN, W - 16.0);
    let (y0, y1) = (top + H - MARGIN, top + 28.0);
    out.push_str(&format!(
        "<g><text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        top + 18.0,
        escape(&plot.title)
    ));
    out.push_str(&format!("<rect x=\"{x0}\" y=\"{y1}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n", x1 - x0, y0 - y1));
    for frac in [0.0, 0.5, 1.0] {
        let x = x0 + frac * (x1 - x0);
        let y = y0 + frac * (y1 - y0);
        out.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            y0 + 14.0,
            ax.tick_label(frac)
        ));
        out.push_str(&format!("<text x=\"{}\" y=\"{y}\" font-size=\"10\" text-anchor=\"end\">{}</text>\n", x0 - 4.0, ay.tick_label(frac)));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        y0 + 32.0,
        escape(&plot.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&plot.y_label)
    ));
    for &g in &plot.guides {
        if let Some(y) = ay.map(g, y0, y1) {
            out.push_str(&format!(
                "<line x1=\"{x0}\" x2=\"{x1}\" y1=\"{y:.2}\" y2=\"{y:.2}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n"
            ));
        }
    }
    for (i, line) in plot.lines.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> =
            line.x.iter().zip(&line.y).filter_map(|(&x, &y)| Some((ax.map(x, x0, x1)?, ay.map(y, y0, y1)?))).collect();
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        out.push_str(&format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", path.join(" ")));
        for (x, y) in &pts {
            out.push_str(&format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{color}\"/>\n"));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"{color}\">{}</text>\n",
            x0 + 8.0,
            y1 + 14.0 + 12.0 * i as f64,
            escape(&line.label)
        ));
    }
    out.push_str("</g>\n");
}

/// Stacked panels, one per plot, with a JSON copy of all series.
pub fn render(plots: &[Plot]) -> String {
    let height = H * plots.len().max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{height}\" viewBox=\"0 0 {W} {height}\" font-family=\"sans-serif\">\n"
    );
    let data = serde_json::to_string(plots).unwrap_or_default();
    out.push_str(&format!("<metadata id=\"data\">{}</metadata>\n", escape(&data)));
    for (i, p) in plots.iter().enumerate() {
        panel(p, i as f64 * H, &mut out);
    }
    out.push_str("</svg>\n");
    out
}
