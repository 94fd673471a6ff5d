//! Minimal self-contained SVG emitters (line charts, histograms, quiver
//! maps). Kept behind this one module so alternative backends can replace it.

use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_bounds(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Self {
        let mut f = Frame {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for x in xs {
            f.x_min = f.x_min.min(x);
            f.x_max = f.x_max.max(x);
        }
        for y in ys {
            f.y_min = f.y_min.min(y);
            f.y_max = f.y_max.max(y);
        }
        if !f.x_min.is_finite() || f.x_min == f.x_max {
            f.x_min -= 0.5;
            f.x_max += 0.5;
        }
        if !f.y_min.is_finite() || f.y_min == f.y_max {
            f.y_min -= 0.5;
            f.y_max += 0.5;
        }
        let pad = (f.y_max - f.y_min) * 0.06;
        f.y_min -= pad;
        f.y_max += pad;
        f
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn axes(svg: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let _ = write!(
        svg,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" \
         stroke=\"#444\"/>\n",
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for k in 0..=4 {
        let fx = f.x_min + (f.x_max - f.x_min) * k as f64 / 4.0;
        let fy = f.y_min + (f.y_max - f.y_min) * k as f64 / 4.0;
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{}</text>\n",
            f.px(fx),
            HEIGHT - MARGIN + 18.0,
            format_tick(fx)
        );
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\">{}</text>\n",
            MARGIN - 6.0,
            f.py(fy) + 4.0,
            format_tick(fy)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\">{}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = write!(
        svg,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Multi-series line chart with markers.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
) -> std::io::Result<()> {
    let f = Frame::from_bounds(
        series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)),
        series.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)),
    );
    let mut svg = header(title);
    axes(&mut svg, &f, x_label, y_label);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (k, (x, y)) in pts.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if k == 0 { "M" } else { "L" }, f.px(*x), f.py(*y));
        }
        let _ = write!(
            svg,
            "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n"
        );
        for (x, y) in pts {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.6\" fill=\"{color}\"/>\n",
                f.px(*x),
                f.py(*y)
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" \
             fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN - 150.0,
            MARGIN + 18.0 + 16.0 * i as f64,
            escape(name)
        );
    }
    std::fs::write(path, svg + "</svg>\n")
}

/// Histogram of scalar values.
pub fn histogram(path: &Path, title: &str, x_label: &str, values: &[f64], n_bins: usize) -> std::io::Result<()> {
    if values.is_empty() {
        return std::fs::write(path, header(title) + "</svg>\n");
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / n_bins as f64).max(1e-12);
    let mut counts = vec![0usize; n_bins];
    for v in values {
        let idx = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let max_count = *counts.iter().max().unwrap() as f64;
    let f = Frame {
        x_min: lo,
        x_max: hi,
        y_min: 0.0,
        y_max: max_count * 1.05,
    };
    let mut svg = header(title);
    axes(&mut svg, &f, x_label, "count");
    for (i, &count) in counts.iter().enumerate() {
        let x0 = f.px(lo + i as f64 * width);
        let x1 = f.px(lo + (i + 1) as f64 * width);
        let y = f.py(count as f64);
        let _ = write!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#1f77b4\" \
             fill-opacity=\"0.7\" stroke=\"#0d3d66\" stroke-width=\"0.5\"/>\n",
            x0,
            y,
            (x1 - x0).max(0.5),
            HEIGHT - MARGIN - y
        );
    }
    std::fs::write(path, svg + "</svg>\n")
}

/// Quiver map over the unit square: empirical arrows in red, optional
/// theory overlay in gray.
pub fn quiver(
    path: &Path,
    title: &str,
    arrows: &[(f64, f64, f64, f64)],
    overlay: &[(f64, f64, f64, f64)],
    arrow_scale: f64,
) -> std::io::Result<()> {
    let f = Frame {
        x_min: -1.1,
        x_max: 1.1,
        y_min: -1.1,
        y_max: 1.1,
    };
    let mut svg = header(title);
    axes(&mut svg, &f, "y", "z");
    let draw = |svg: &mut String, set: &[(f64, f64, f64, f64)], color: &str, width: f64| {
        for &(x, y, dx, dy) in set {
            let x0 = f.px(x);
            let y0 = f.py(y);
            let x1 = f.px(x + dx * arrow_scale);
            let y1 = f.py(y + dy * arrow_scale);
            let _ = write!(
                svg,
                "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" \
                 stroke=\"{color}\" stroke-width=\"{width}\"/>\n"
            );
            // arrowhead
            let (vx, vy) = (x1 - x0, y1 - y0);
            let norm = (vx * vx + vy * vy).sqrt().max(1e-9);
            let (ux, uy) = (vx / norm, vy / norm);
            let (px_, py_) = (-uy, ux);
            let size = 3.0;
            let _ = write!(
                svg,
                "<path d=\"M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2} Z\" fill=\"{color}\"/>\n",
                x1,
                y1,
                x1 - ux * size + px_ * size * 0.6,
                y1 - uy * size + py_ * size * 0.6,
                x1 - ux * size - px_ * size * 0.6,
                y1 - uy * size - py_ * size * 0.6
            );
        }
    };
    draw(&mut svg, overlay, "#999999", 1.0);
    draw(&mut svg, arrows, "#d62728", 1.3);
    std::fs::write(path, svg + "</svg>\n")
}
