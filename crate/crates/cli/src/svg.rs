//! Plain-text SVG rendering of partitions and learning curves.

use std::fmt::Write;

use anyhow::{ensure, Result};

use crate::metrics::SnapshotFile;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArrowDir {
    Right,
    Left,
    Up,
    Down,
}

impl ArrowDir {
    fn name(self) -> &'static str {
        match self {
            ArrowDir::Right => "right",
            ArrowDir::Left => "left",
            ArrowDir::Up => "up",
            ArrowDir::Down => "down",
        }
    }

    /// Screen-space unit vector (y grows downwards).
    fn screen(self) -> (f64, f64) {
        match self {
            ArrowDir::Right => (1.0, 0.0),
            ArrowDir::Left => (-1.0, 0.0),
            ArrowDir::Up => (0.0, -1.0),
            ArrowDir::Down => (0.0, 1.0),
        }
    }
}

/// Arrows for a region whose velocity intervals are `vx` and `vy`: one per
/// sign-definite component.
pub fn velocity_arrows(vx: (f64, f64), vy: (f64, f64)) -> Vec<ArrowDir> {
    let mut out = Vec::new();
    if vx.0 >= 0.0 {
        out.push(ArrowDir::Right);
    } else if vx.1 <= 0.0 {
        out.push(ArrowDir::Left);
    }
    if vy.0 >= 0.0 {
        out.push(ArrowDir::Up);
    } else if vy.1 <= 0.0 {
        out.push(ArrowDir::Down);
    }
    out
}

const SIZE: f64 = 400.0;
const MARGIN: f64 = 20.0;

fn px(x: f64) -> f64 {
    MARGIN + SIZE * x
}

fn py(y: f64) -> f64 {
    MARGIN + SIZE * (1.0 - y)
}

fn rect(out: &mut String, class: &str, x: (f64, f64), y: (f64, f64), style: &str, extra: &str) {
    let _ = writeln!(
        out,
        r#"<rect class="{class}"{extra} x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" {style}/>"#,
        px(x.0),
        py(y.1),
        SIZE * (x.1 - x.0),
        SIZE * (y.1 - y.0)
    );
}

/// Maze walls, the exit in red, each region's position box in green, and
/// velocity-sign arrows. Regions sharing a position box get their arrows
/// offset and coloured apart.
pub fn render_partition(snap: &SnapshotFile) -> Result<String> {
    let dim = snap.partition.state_domain.dim();
    ensure!(dim >= 2, "snapshot state domain has {dim} dimensions, need at least 2");
    let total = 2.0 * MARGIN + SIZE;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{h}" viewBox="0 0 {total} {h}">"#,
        h = total + 20.0
    );
    out.push_str(
        r##"<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto"><path d="M0,0 L6,3 L0,6 z" fill="context-stroke"/></marker></defs>
"##,
    );
    rect(
        &mut out,
        "frame",
        (0.0, 1.0),
        (0.0, 1.0),
        r#"fill="white" stroke="black""#,
        "",
    );
    for wall in &snap.maze.walls {
        rect(&mut out, "wall", wall.x, wall.y, r##"fill="#555555""##, "");
    }
    let exit = snap.maze.exit;
    rect(
        &mut out,
        "exit",
        exit.x,
        exit.y,
        r#"fill="red" fill-opacity="0.4" stroke="red""#,
        "",
    );

    let mut groups: Vec<((u64, u64, u64, u64), usize)> = Vec::new();
    for r in &snap.partition.regions {
        let (x, y) = ((r.lo[0], r.hi[0]), (r.lo[1], r.hi[1]));
        let _ = writeln!(out, r#"<g class="region-group" data-id="{}">"#, r.id);
        rect(
            &mut out,
            "region",
            x,
            y,
            r#"fill="none" stroke="green" stroke-width="1.5""#,
            &format!(r#" data-id="{}""#, r.id),
        );
        if dim >= 4 {
            let arrows = velocity_arrows((r.lo[2], r.hi[2]), (r.lo[3], r.hi[3]));
            if !arrows.is_empty() {
                let key = (x.0.to_bits(), x.1.to_bits(), y.0.to_bits(), y.1.to_bits());
                let slot = match groups.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, n)) => {
                        *n += 1;
                        *n - 1
                    }
                    None => {
                        groups.push((key, 1));
                        0
                    }
                };
                let colour = PALETTE[slot % PALETTE.len()];
                let offset = 8.0 * slot as f64;
                let (cx, cy) = (px(0.5 * (x.0 + x.1)) + offset, py(0.5 * (y.0 + y.1)) + offset);
                for a in arrows {
                    let (dx, dy) = a.screen();
                    let _ = writeln!(
                        out,
                        r#"<line class="arrow arrow-{}" x1="{cx:.2}" y1="{cy:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="1.5" marker-end="url(#head)"/>"#,
                        a.name(),
                        cx + 14.0 * dx,
                        cy + 14.0 * dy
                    );
                }
            }
        }
        out.push_str("</g>\n");
    }
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{:.2}" font-family="sans-serif" font-size="12">step {}, {} regions</text>"#,
        total + 10.0,
        snap.step,
        snap.partition.regions.len()
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Aggregated success curve of one agent kind across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSeries {
    pub label: String,
    pub runs: usize,
    pub steps: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Piecewise-linear interpolation of `(x, y)` points sorted by x, holding
/// the end values outside the sampled range.
pub fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= x);
    let (a, b) = (points[i - 1], points[i]);
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

/// Mean and min–max envelope of several runs. Runs on different step grids
/// are linearly interpolated onto the coarsest one (fewest points, first on
/// ties).
pub fn aggregate(label: &str, runs: &[Vec<(f64, f64)>]) -> Result<CurveSeries> {
    ensure!(!runs.is_empty(), "{label}: no runs");
    ensure!(runs.iter().all(|r| !r.is_empty()), "{label}: empty metrics file");
    let grid: Vec<f64> = runs
        .iter()
        .min_by_key(|r| r.len())
        .expect("non-empty")
        .iter()
        .map(|p| p.0)
        .collect();
    let mut series = CurveSeries {
        label: label.to_string(),
        runs: runs.len(),
        steps: grid.clone(),
        mean: Vec::with_capacity(grid.len()),
        min: Vec::with_capacity(grid.len()),
        max: Vec::with_capacity(grid.len()),
    };
    for &x in &grid {
        let values: Vec<f64> = runs.iter().map(|r| interpolate(r, x)).collect();
        series.mean.push(values.iter().sum::<f64>() / values.len() as f64);
        series.min.push(values.iter().copied().fold(f64::INFINITY, f64::min));
        series
            .max
            .push(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(series)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;

/// Success rate against environment steps: one line per series and a
/// min–max band when a series has more than one run.
pub fn render_curves(series: &[CurveSeries]) -> Result<String> {
    ensure!(!series.is_empty(), "nothing to plot");
    let x_max = series
        .iter()
        .flat_map(|s| s.steps.iter().copied())
        .fold(0.0, f64::max)
        .max(1.0);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let sx = |x: f64| LEFT + pw * x / x_max;
    let sy = |y: f64| TOP + ph * (1.0 - y);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        out,
        r#"<rect class="plot-area" x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="white" stroke="black"/>"#
    );
    for i in 0..=4 {
        let y = f64::from(i) / 4.0;
        let _ = writeln!(
            out,
            r##"<line class="grid" x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#dddddd"/><text x="{2:.2}" y="{3:.2}" text-anchor="end">{y:.2}</text>"##,
            sy(y),
            LEFT + pw,
            LEFT - 6.0,
            sy(y) + 4.0
        );
        let x = x_max * f64::from(i) / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(x),
            TOP + ph + 16.0,
            x.round()
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">environment steps (low-level)</text>"#,
        LEFT + pw / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(14 {:.2}) rotate(-90)" text-anchor="middle">eval success rate</text>"#,
        TOP + ph / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let label = escape(&s.label);
        if s.runs > 1 {
            let mut pts: Vec<String> = s
                .steps
                .iter()
                .zip(&s.max)
                .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            pts.extend(
                s.steps
                    .iter()
                    .zip(&s.min)
                    .rev()
                    .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y))),
            );
            let _ = writeln!(
                out,
                r#"<polygon class="band" data-label="{label}" points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = s
            .steps
            .iter()
            .zip(&s.mean)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="mean" data-label="{label}" points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let lx = LEFT + pw - 150.0;
        let _ = writeln!(
            out,
            r#"<g class="legend-entry"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{label} (n={})</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            s.runs
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
