use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use super::{EvalError, EvalReport, PredictionTrace};

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<(), EvalError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut json = serde_json::to_string_pretty(report).map_err(io::Error::other)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<EvalReport, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EvalError::Report {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Serialize)]
struct TraceRow<'a> {
    user_id: &'a str,
    pass: &'a str,
    iteration: usize,
    history_size: usize,
    target_item_id: &'a str,
    predicted: f64,
    truth: f64,
    abs_error: f64,
    parse_retried: bool,
    imputed: bool,
    shown_record_ids: String,
    prompt_tokens: u64,
    reply_tokens: u64,
    calls: u32,
}

/// One row per trace; shown record ids are `;`-joined.
pub fn write_trace_csv<W: io::Write>(out: W, traces: &[PredictionTrace]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for t in traces {
        w.serialize(TraceRow {
            user_id: &t.user_id,
            pass: &t.pass,
            iteration: t.iteration,
            history_size: t.history_size,
            target_item_id: &t.target_item_id,
            predicted: t.predicted,
            truth: t.truth,
            abs_error: (t.predicted - t.truth).abs(),
            parse_retried: t.parse_retried,
            imputed: t.imputed,
            shown_record_ids: t.shown_record_ids.join(";"),
            prompt_tokens: t.prompt_tokens,
            reply_tokens: t.reply_tokens,
            calls: t.calls,
        })
        .map_err(io::Error::other)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub points: BTreeMap<usize, f64>,
    pub dashed: bool,
}

impl PlotSeries {
    /// Raw and smoothed series for a report.
    pub fn from_report(report: &EvalReport) -> [PlotSeries; 2] {
        let label = report.recommender.label();
        [
            PlotSeries {
                label: label.to_string(),
                points: report.mae_by_size.clone(),
                dashed: true,
            },
            PlotSeries {
                label: format!("{label} (smoothed)"),
                points: report.smoothed_mae_by_size.clone(),
                dashed: false,
            },
        ]
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// MAE against history size as a standalone SVG line chart.
pub fn render_svg(title: &str, series: &[PlotSeries]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 170.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;

    let xs = series.iter().flat_map(|s| s.points.keys().copied());
    let (xmin, xmax) = xs.fold((usize::MAX, 0), |(lo, hi), x| (lo.min(x), hi.max(x)));
    let (xmin, xmax) = if xmin > xmax { (1, 18) } else { (xmin, xmax.max(xmin + 1)) };
    let ys = series.iter().flat_map(|s| s.points.values().copied());
    let (ymin, ymax) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
    let (ymin, ymax) = if ymin > ymax {
        (0.0, 1.0)
    } else {
        let pad = ((ymax - ymin) * 0.1).max(0.05);
        ((ymin - pad).max(0.0), ymax + pad)
    };
    let px = |x: usize| left + (x - xmin) as f64 / (xmax - xmin) as f64 * pw;
    let py = |y: f64| top + (1.0 - (y - ymin) / (ymax - ymin)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r##"<path d="M{left},{top} V{} H{}" fill="none" stroke="#333"/>"##,
        top + ph,
        left + pw
    );
    for x in xmin..=xmax {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="#333"/><text x="{0:.1}" y="{3}" text-anchor="middle">{4}</text>"##,
            px(x),
            top + ph,
            top + ph + 4.0,
            top + ph + 18.0,
            x
        );
    }
    for i in 0..=5 {
        let y = ymin + (ymax - ymin) * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="{1:.1}" x2="{2}" y2="{1:.1}" stroke="#ddd"/><text x="{3}" y="{4:.1}" text-anchor="end">{5:.3}</text>"##,
            left,
            py(y),
            left + pw,
            left - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">History size</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">MAE</text>"#,
        top + ph / 2.0
    );
    for (i, series) in series.iter().enumerate() {
        let color = COLORS[(i / 2) % COLORS.len()];
        let dash = if series.dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", px(*x), py(*y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            pts.join(" ")
        );
        let ly = top + 14.0 + i as f64 * 18.0;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
