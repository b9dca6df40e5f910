//! Figure data as CSV plus self-contained SVG renderings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use svnr::agent::{ActionRecord, EpisodeMetrics};

use crate::records::{CsvSink, CURVE_SCHEMA, SCATTER_SCHEMA};
use crate::HarnessError;

pub const REWARD_BINS: usize = 5;
const PALETTE: [&str; REWARD_BINS] = ["#3b4cc0", "#7b9ff9", "#c0d4f5", "#f49a7b", "#b40426"];
const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub step: usize,
    pub action: Vec<f64>,
    pub reward: f64,
    /// Reward level, 0 (lowest) to `REWARD_BINS - 1` (highest).
    pub bin: usize,
}

/// Keeps every `stride`-th record with step in `from..=to`, counting from
/// `from`, and bins the kept rewards into equal-width levels.
pub fn scatter(actions: &[ActionRecord], stride: usize, from: usize, to: usize) -> Result<Vec<ScatterPoint>, HarnessError> {
    if actions.is_empty() {
        return Err(HarnessError::Config("action log is empty".into()));
    }
    let stride = stride.max(1);
    let kept: Vec<&ActionRecord> =
        actions.iter().filter(|a| a.step >= from && a.step <= to && (a.step - from) % stride == 0).collect();
    let lo = kept.iter().map(|a| a.reward).fold(f64::INFINITY, f64::min);
    let hi = kept.iter().map(|a| a.reward).fold(f64::NEG_INFINITY, f64::max);
    Ok(kept
        .into_iter()
        .map(|a| {
            let bin = if hi > lo {
                (((a.reward - lo) / (hi - lo)) * REWARD_BINS as f64).floor().min((REWARD_BINS - 1) as f64) as usize
            } else {
                REWARD_BINS - 1
            };
            ScatterPoint { step: a.step, action: a.action.clone(), reward: a.reward, bin }
        })
        .collect())
}

fn extent(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(1.0f64, |m, v| m.max(v.abs())).ceil()
}

fn scatter_svg(points: &[ScatterPoint], x: usize, y: usize, range: f64) -> String {
    let sx = |v: f64| MARGIN + (v + range) / (2.0 * range) * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v + range) / (2.0 * range) * (HEIGHT - 2.0 * MARGIN);
    let mut s = svg_open();
    axes(&mut s, &format!("u{}", x + 1), &format!("u{}", y + 1), (-range, range), (-range, range));
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.7"/>"#,
            sx(p.action[x]),
            sy(p.action[y]),
            PALETTE[p.bin]
        );
    }
    s.push_str("</svg>\n");
    s
}

fn svg_open() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn axes(s: &mut String, xlabel: &str, ylabel: &str, xr: (f64, f64), yr: (f64, f64)) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{xlabel}</text>"#, (l + r) / 2.0, HEIGHT - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {})">{ylabel}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0
    );
    let _ = writeln!(s, r#"<text x="{l}" y="{}" font-size="10">{}</text>"#, b + 14.0, fmt_tick(xr.0));
    let _ = writeln!(s, r#"<text x="{r}" y="{}" font-size="10" text-anchor="end">{}</text>"#, b + 14.0, fmt_tick(xr.1));
    let _ = writeln!(s, r#"<text x="{}" y="{b}" font-size="10" text-anchor="end">{}</text>"#, l - 4.0, fmt_tick(yr.0));
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#, l - 4.0, t + 10.0, fmt_tick(yr.1));
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Writes `<stem>.csv` with the raw kept rows and one SVG per projection:
/// `<stem>_u1u2.svg` and, for three or more coordinates, `<stem>_u1u3.svg`.
pub fn write_scatter(points: &[ScatterPoint], stem: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let dim = points.first().map_or(0, |p| p.action.len());
    let header: Vec<String> = std::iter::once("step".to_string())
        .chain((1..=dim).map(|k| format!("u{k}")))
        .chain(["reward".to_string(), "bin".to_string()])
        .collect();
    let csv_path = stem.with_extension("csv");
    let mut sink = CsvSink::create(&csv_path, SCATTER_SCHEMA, Some(&format!("{REWARD_BINS} equal-width reward bins")), &header)?;
    for p in points {
        let row: Vec<String> = std::iter::once(p.step.to_string())
            .chain(p.action.iter().map(f64::to_string))
            .chain([p.reward.to_string(), p.bin.to_string()])
            .collect();
        sink.row(row)?;
    }
    sink.flush()?;
    let mut written = vec![csv_path];
    let range = extent(points.iter().flat_map(|p| p.action.iter().copied()));
    for y in [1usize, 2] {
        if dim > y {
            let path = PathBuf::from(format!("{}_u1u{}.svg", stem.display(), y + 1));
            std::fs::write(&path, scatter_svg(points, 0, y, range)).map_err(|e| HarnessError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Mean and ±1 std of smoothed per-episode return across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub episodes: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub window: usize,
    pub warnings: Vec<String>,
}

/// Trailing moving average of each seed's return over `window` episodes,
/// then mean and population std across seeds. Seeds with different
/// episode grids are cut to the shortest common prefix with a warning.
pub fn curves(runs: &[Vec<EpisodeMetrics>], window: usize) -> Result<Curve, HarnessError> {
    if runs.is_empty() {
        return Err(HarnessError::Config("curves need at least one seed".into()));
    }
    let window = window.max(1);
    let mut warnings = Vec::new();
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let first: Vec<usize> = runs[0][..len].iter().map(|m| m.episode).collect();
    if runs.iter().any(|r| r.len() != len || r[..len].iter().map(|m| m.episode).ne(first.iter().copied())) {
        warnings.push(format!("episode grids differ across seeds; using the first {len} common episodes"));
        eprintln!("warning: {}", warnings.last().unwrap());
    }
    let smoothed: Vec<Vec<f64>> = runs
        .iter()
        .map(|r| {
            let mut acc = 0.0;
            (0..len)
                .map(|k| {
                    acc += r[k].ret;
                    if k >= window {
                        acc -= r[k - window].ret;
                    }
                    acc / (k + 1).min(window) as f64
                })
                .collect()
        })
        .collect();
    let n = smoothed.len() as f64;
    let mean: Vec<f64> = (0..len).map(|k| smoothed.iter().map(|s| s[k]).sum::<f64>() / n).collect();
    let std = (0..len)
        .map(|k| (smoothed.iter().map(|s| (s[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Ok(Curve { episodes: first, mean, std, window, warnings })
}

fn curve_svg(c: &Curve) -> String {
    let (x0, x1) = (*c.episodes.first().unwrap_or(&0) as f64, (*c.episodes.last().unwrap_or(&1)).max(1) as f64);
    let lo = c.mean.iter().zip(&c.std).map(|(m, s)| m - s).fold(f64::INFINITY, f64::min);
    let hi = c.mean.iter().zip(&c.std).map(|(m, s)| m + s).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
    let sx = |e: f64| MARGIN + (e - x0) / (x1 - x0).max(1.0) * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);
    let mut s = svg_open();
    axes(&mut s, "episode", "return", (x0, x1), (lo, hi));
    if !c.episodes.is_empty() {
        let upper = c.episodes.iter().zip(c.mean.iter().zip(&c.std)).map(|(&e, (m, d))| format!("{:.2},{:.2}", sx(e as f64), sy(m + d)));
        let lower = c.episodes.iter().zip(c.mean.iter().zip(&c.std)).rev().map(|(&e, (m, d))| format!("{:.2},{:.2}", sx(e as f64), sy(m - d)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r##"<polygon points="{}" fill="#7b9ff9" fill-opacity="0.35" stroke="none"/>"##, band.join(" "));
        let line: Vec<String> =
            c.episodes.iter().zip(&c.mean).map(|(&e, m)| format!("{:.2},{:.2}", sx(e as f64), sy(*m))).collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#3b4cc0" stroke-width="1.5"/>"##, line.join(" "));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.csv` (episode, mean, std) and `<stem>.svg`.
pub fn write_curve(c: &Curve, stem: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let csv_path = stem.with_extension("csv");
    let note = format!("smoothing window {} episodes (trailing mean)", c.window);
    let mut sink = CsvSink::create(&csv_path, CURVE_SCHEMA, Some(&note), &["episode".into(), "mean".into(), "std".into()])?;
    for k in 0..c.episodes.len() {
        sink.row([c.episodes[k].to_string(), c.mean[k].to_string(), c.std[k].to_string()])?;
    }
    sink.flush()?;
    let svg = stem.with_extension("svg");
    std::fs::write(&svg, curve_svg(c)).map_err(|e| HarnessError::io(&svg, e))?;
    Ok(vec![csv_path, svg])
}
