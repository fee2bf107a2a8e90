//! Self-contained SVG charts with the plotted data embedded as comments,
//! so figures stay inspectable without any plotting runtime.

/// One plotted series.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 52.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart of one or more series; x is typically the bucket index.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    warnings: &[String],
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<!-- chart data\n");
    for s in series {
        out.push_str(&format!("  series {}:", esc(&s.name)));
        for (x, y) in &s.points {
            out.push_str(&format!(" ({x},{y})"));
        }
        out.push('\n');
    }
    out.push_str("-->\n");
    out.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        esc(title)
    ));

    let (x_lo, x_hi) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (mut y_lo, mut y_hi) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    // pad the y range a little so lines stay off the frame
    let pad = (y_hi - y_lo) * 0.06;
    y_lo -= pad;
    y_hi += pad;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

    // frame and y grid
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333\"/>\n"
    ));
    for i in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let py = sy(y);
        out.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{py:.2}\" x2=\"{:.2}\" y2=\"{py:.2}\" stroke=\"#ddd\"/>\n",
            MARGIN_L + plot_w
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{y:.3}</text>\n",
            MARGIN_L - 6.0,
            py + 4.0
        ));
    }
    // x ticks at integers when the span is small, else quarters
    let ticks: Vec<f64> = if (x_hi - x_lo) <= 12.0 && x_lo.fract() == 0.0 {
        let mut t = Vec::new();
        let mut x = x_lo;
        while x <= x_hi + 1e-9 {
            t.push(x);
            x += 1.0;
        }
        t
    } else {
        (0..=4).map(|i| x_lo + (x_hi - x_lo) * i as f64 / 4.0).collect()
    };
    for x in ticks {
        let px = sx(x);
        out.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{x:.0}</text>\n",
            MARGIN_T + plot_h + 16.0
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0,
        esc(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        esc(y_label)
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !s.points.is_empty() {
            let path: Vec<String> =
                s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                path.join(" ")
            ));
            for (x, y) in &s.points {
                out.push_str(&format!(
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                    sx(*x),
                    sy(*y)
                ));
            }
        }
        // legend
        let ly = MARGIN_T + 14.0 + 16.0 * i as f64;
        out.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n",
            MARGIN_L + 8.0,
            ly - 9.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{ly:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_L + 22.0,
            esc(&s.name)
        ));
    }

    for (i, w) in warnings.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{MARGIN_L}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#b00\">warning: {}</text>\n",
            MARGIN_T + plot_h + 32.0 + 13.0 * i as f64,
            esc(w)
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Simple labeled bar chart (summary tables).
pub fn bar_chart(title: &str, labels: &[String], values: &[f64]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<!-- chart data\n");
    for (l, v) in labels.iter().zip(values) {
        out.push_str(&format!("  bar {}: {v}\n", esc(l)));
    }
    out.push_str("-->\n");
    out.push_str(&format!("<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        esc(title)
    ));
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let (lo, hi) = extent(values.iter().copied().chain(std::iter::once(0.0)));
    let sy = |y: f64| MARGIN_T + plot_h - (y - lo) / (hi - lo) * plot_h;
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#333\"/>\n"
    ));
    let n = values.len().max(1) as f64;
    let slot = plot_w / n;
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x = MARGIN_L + slot * i as f64 + slot * 0.2;
        let baseline = lo.max(0.0);
        let y = sy(v.max(baseline));
        let bar_h = (sy(baseline) - sy(v)).abs();
        out.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{bar_h:.2}\" fill=\"{color}\"/>\n",
            slot * 0.6
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            x + slot * 0.3,
            MARGIN_T + plot_h + 16.0,
            esc(label)
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{v:.3}</text>\n",
            x + slot * 0.3,
            y - 4.0
        ));
    }
    out.push_str("</svg>\n");
    out
}
