//! Self-contained SVG learning curves.
//!
//! One faint polyline per seed plus a bold mean curve, x = environment
//! steps, y = win rate when the metrics carry one, mean return otherwise.

use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::metrics::MetricsFile;

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 25.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

struct Scale {
    min: f64,
    max: f64,
    lo_px: f64,
    hi_px: f64,
}

impl Scale {
    fn to_px(&self, v: f64) -> f64 {
        let span = (self.max - self.min).max(1e-12);
        self.lo_px + (v - self.min) / span * (self.hi_px - self.lo_px)
    }

    fn ticks(&self, n: usize) -> Vec<f64> {
        (0..=n)
            .map(|i| self.min + (self.max - self.min) * i as f64 / n as f64)
            .collect()
    }
}

fn polyline(points: &[(f64, f64)], style: &str) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", coords.join(" "))
}

/// Render a learning-curve SVG from a metrics file. Empty metrics produce a
/// placeholder plot and a warning on stderr.
pub fn render_plot(metrics: &MetricsFile, title: &str) -> Result<String> {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        WIDTH / 2.0
    ));

    let (y_name, y_col) = match metrics.column_index("win_rate") {
        Some(c) => ("win rate", c),
        None => (
            "mean return",
            metrics
                .column_index("mean_return")
                .ok_or_else(|| Error::Data("metrics file lacks a mean_return column".into()))?,
        ),
    };
    let x_col = metrics
        .column_index("env_steps")
        .ok_or_else(|| Error::Data("metrics file lacks an env_steps column".into()))?;

    if metrics.rows.is_empty() {
        eprintln!("warning: metrics file has no data rows; emitting empty plot");
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" fill=\"#888\">no data</text>\n",
            WIDTH / 2.0,
            HEIGHT / 2.0
        ));
        svg.push_str("</svg>\n");
        return Ok(svg);
    }

    let xs: Vec<f64> = metrics.rows.iter().map(|r| r[x_col]).collect();
    let ys: Vec<f64> = metrics.rows.iter().map(|r| r[y_col]).collect();
    let x_scale = Scale {
        min: xs.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0),
        max: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        lo_px: MARGIN_L,
        hi_px: WIDTH - MARGIN_R,
    };
    let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((y_max - y_min) * 0.05).max(1e-6);
    let y_scale = Scale {
        min: y_min - pad,
        max: y_max + pad,
        lo_px: HEIGHT - MARGIN_B,
        hi_px: MARGIN_T,
    };

    // Axes and ticks.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        HEIGHT - MARGIN_B
    ));
    for t in x_scale.ticks(5) {
        let x = x_scale.to_px(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{t:.0}</text>\n",
            HEIGHT - MARGIN_B + 18.0
        ));
    }
    for t in y_scale.ticks(5) {
        let y = y_scale.to_px(t);
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_L}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            MARGIN_L - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{t:.3}</text>\n",
            MARGIN_L - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">environment steps</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{y_name}</text>\n",
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0,
        (MARGIN_T + HEIGHT - MARGIN_B) / 2.0
    ));

    // Per-seed faint curves.
    let groups = metrics.seed_groups();
    let mut max_len = 0usize;
    for (_, idxs) in &groups {
        max_len = max_len.max(idxs.len());
        let pts: Vec<(f64, f64)> = idxs
            .iter()
            .map(|&i| (x_scale.to_px(xs[i]), y_scale.to_px(ys[i])))
            .collect();
        if pts.len() == 1 {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#7788cc\" opacity=\"0.5\"/>\n",
                pts[0].0, pts[0].1
            ));
        } else {
            svg.push_str(&polyline(
                &pts,
                "stroke=\"#7788cc\" stroke-width=\"1\" opacity=\"0.35\"",
            ));
        }
    }

    // Mean curve across seeds, aligned by iteration index.
    let mut mean_pts = Vec::with_capacity(max_len);
    for k in 0..max_len {
        let mut x_acc = 0.0;
        let mut y_acc = 0.0;
        let mut count = 0usize;
        for (_, idxs) in &groups {
            if let Some(&i) = idxs.get(k) {
                x_acc += xs[i];
                y_acc += ys[i];
                count += 1;
            }
        }
        if count > 0 {
            mean_pts.push((
                x_scale.to_px(x_acc / count as f64),
                y_scale.to_px(y_acc / count as f64),
            ));
        }
    }
    if mean_pts.len() == 1 {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#cc3344\"/>\n",
            mean_pts[0].0, mean_pts[0].1
        ));
    } else {
        svg.push_str(&polyline(
            &mean_pts,
            "stroke=\"#cc3344\" stroke-width=\"2\"",
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Read a metrics CSV and write the learning-curve SVG.
pub fn emit_plot(metrics_path: &Path, out_path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(metrics_path)?;
    let metrics = MetricsFile::parse(&text)?;
    let title = metrics_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "learning curve".into());
    let svg = render_plot(&metrics, &title)?;
    std::fs::write(out_path, svg)?;
    Ok(())
}
