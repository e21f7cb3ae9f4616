//! SVG charts over `metrics.csv` files.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::METRICS_HEADER;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartKind {
    /// Congested vehicles over time.
    CongestionVsTime,
    /// Distribution of the per-tick mean speed.
    SpeedHistogram,
    /// Cumulative messages over time.
    OverheadVsTime,
}

impl FromStr for ChartKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "congestion_vs_time" => Ok(ChartKind::CongestionVsTime),
            "speed_histogram" => Ok(ChartKind::SpeedHistogram),
            "overhead_vs_time" => Ok(ChartKind::OverheadVsTime),
            other => Err(format!(
                "unknown chart kind {other:?} (expected congestion_vs_time, speed_histogram or overhead_vs_time)"
            )),
        }
    }
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChartKind::CongestionVsTime => "congestion_vs_time",
            ChartKind::SpeedHistogram => "speed_histogram",
            ChartKind::OverheadVsTime => "overhead_vs_time",
        })
    }
}

/// Columns a chart needs from one metrics file.
#[derive(Debug, Clone, Default)]
struct Columns {
    time: Vec<f64>,
    congested: Vec<f64>,
    mean_speed: Vec<f64>,
    msgs_total: Vec<f64>,
}

fn parse_metrics(csv: &str, label: &str) -> Result<Columns> {
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or("").trim_end_matches('\r');
    if header != METRICS_HEADER {
        return Err(Error::SchemaMismatch(format!("{label}: unexpected header {header:?}")));
    }
    let mut cols = Columns::default();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::SchemaMismatch(format!("{label} line {}: expected 10 fields, got {}", n + 2, fields.len())));
        }
        let num = |i: usize| {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::SchemaMismatch(format!("{label} line {}: bad number {:?}", n + 2, fields[i])))
        };
        cols.time.push(num(0)?);
        cols.congested.push(num(2)?);
        cols.mean_speed.push(num(6)?);
        cols.msgs_total.push(num(8)?);
    }
    Ok(cols)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLOURS: [&str; 2] = ["#c0392b", "#2471a3"];

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        LEFT + v / self.x_max * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - v / self.y_max * (HEIGHT - TOP - BOTTOM)
    }
}

/// Rounds an axis maximum up to 1, 2 or 5 times a power of ten.
fn nice_ceiling(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|c| *c >= v).unwrap_or(10.0 * mag)
}

fn axes(svg: &mut String, frame: &Frame, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">{title}</text>"#,
        WIDTH / 2.0
    );
    let (x0, y0) = (frame.x(0.0), frame.y(0.0));
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.1},{TOP:.1} V{y0:.1} H{:.1}" fill="none" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    for i in 0..=5 {
        let xv = frame.x_max * i as f64 / 5.0;
        let yv = frame.y_max * i as f64 / 5.0;
        let (xp, yp) = (frame.x(xv), frame.y(yv));
        let _ = writeln!(
            svg,
            r#"<line x1="{xp:.1}" y1="{y0:.1}" x2="{xp:.1}" y2="{:.1}" stroke="black"/><text x="{xp:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
            y0 + 5.0,
            y0 + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{yp:.1}" x2="{x0:.1}" y2="{yp:.1}" stroke="black"/><line x1="{x0:.1}" y1="{yp:.1}" x2="{:.1}" y2="{yp:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"##,
            x0 - 5.0,
            WIDTH - RIGHT,
            x0 - 8.0,
            yp + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{x_label}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18,{:.1}) rotate(-90)" text-anchor="middle" font-size="13">{y_label}</text>"#,
        (TOP + HEIGHT - BOTTOM) / 2.0
    );
}

fn tick_label(v: f64) -> String {
    if v.fract().abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

fn legend(svg: &mut String, labels: &[&str]) {
    if labels.len() < 2 {
        return;
    }
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 8.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT - 170.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="14" height="4" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            y - 4.0,
            COLOURS[i % 2],
            x + 20.0,
            y + 1.0,
            escape(label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn line_chart(series: &[(String, Vec<f64>, Vec<f64>)], title: &str, y_label: &str) -> String {
    let x_max = nice_ceiling(series.iter().flat_map(|s| s.1.iter().copied()).fold(0.0, f64::max));
    let y_max = nice_ceiling(series.iter().flat_map(|s| s.2.iter().copied()).fold(0.0, f64::max));
    let frame = Frame { x_max, y_max };
    let mut svg = String::new();
    axes(&mut svg, &frame, title, "time (s)", y_label);
    for (i, (_, xs, ys)) in series.iter().enumerate() {
        if xs.is_empty() {
            continue;
        }
        let mut d = String::new();
        for (k, (x, y)) in xs.iter().zip(ys).enumerate() {
            let _ = write!(d, "{}{:.1},{:.1}", if k == 0 { "M" } else { " L" }, frame.x(*x), frame.y(*y));
        }
        let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.5"/>"#, COLOURS[i % 2]);
    }
    let labels: Vec<&str> = series.iter().map(|s| s.0.as_str()).collect();
    legend(&mut svg, &labels);
    svg
}

fn histogram(series: &[(String, Vec<f64>)]) -> String {
    const BINS: usize = 12;
    let top = nice_ceiling(series.iter().flat_map(|s| s.1.iter().copied()).fold(0.0, f64::max));
    let width = top / BINS as f64;
    let counts: Vec<[usize; BINS]> = series
        .iter()
        .map(|(_, values)| {
            let mut c = [0; BINS];
            for v in values {
                c[((v / width) as usize).min(BINS - 1)] += 1;
            }
            c
        })
        .collect();
    let y_max = nice_ceiling(counts.iter().flatten().copied().max().unwrap_or(0) as f64);
    let frame = Frame { x_max: top, y_max };
    let mut svg = String::new();
    axes(&mut svg, &frame, "Mean speed distribution", "mean speed (m/s)", "ticks");
    let n = series.len().max(1) as f64;
    for (i, c) in counts.iter().enumerate() {
        for (b, count) in c.iter().enumerate() {
            if *count == 0 {
                continue;
            }
            let x = frame.x(b as f64 * width) + (frame.x(width) - frame.x(0.0)) * i as f64 / n;
            let w = (frame.x(width) - frame.x(0.0)) / n - 1.0;
            let y = frame.y(*count as f64);
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{:.1}" fill="{}"/>"#,
                frame.y(0.0) - y,
                COLOURS[i % 2]
            );
        }
    }
    let labels: Vec<&str> = series.iter().map(|s| s.0.as_str()).collect();
    legend(&mut svg, &labels);
    svg
}

/// Renders one chart from one or two metrics CSV texts, given as
/// `(label, csv)` pairs.
pub fn render_chart(inputs: &[(&str, &str)], kind: ChartKind) -> Result<String> {
    let mut parsed = Vec::with_capacity(inputs.len());
    for (label, csv) in inputs {
        parsed.push((label.to_string(), parse_metrics(csv, label)?));
    }
    let body = match kind {
        ChartKind::CongestionVsTime => line_chart(
            &parsed.into_iter().map(|(l, c)| (l, c.time, c.congested)).collect::<Vec<_>>(),
            "Congested vehicles",
            "vehicles at zero speed",
        ),
        ChartKind::OverheadVsTime => line_chart(
            &parsed.into_iter().map(|(l, c)| (l, c.time, c.msgs_total)).collect::<Vec<_>>(),
            "Message overhead",
            "messages sent (cumulative)",
        ),
        ChartKind::SpeedHistogram => histogram(&parsed.into_iter().map(|(l, c)| (l, c.mean_speed)).collect::<Vec<_>>()),
    };
    Ok(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    ))
}

/// File-based form of [`render_chart`]. Series are labelled by the name of
/// the directory holding each CSV, falling back to the file name.
pub fn render_chart_files(inputs: &[impl AsRef<Path>], kind: ChartKind, out: impl AsRef<Path>) -> Result<()> {
    let mut texts = Vec::with_capacity(inputs.len());
    for p in inputs {
        let p = p.as_ref();
        let label = p
            .parent()
            .and_then(|d| d.file_name())
            .or_else(|| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        texts.push((label, fs::read_to_string(p)?));
    }
    let refs: Vec<(&str, &str)> = texts.iter().map(|(l, t)| (l.as_str(), t.as_str())).collect();
    fs::write(out, render_chart(&refs, kind)?)?;
    Ok(())
}
