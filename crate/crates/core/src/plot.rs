//! Dependency-free SVG charts: the λ trade-off plot and labeled scatter plots.
//!
//! Output is a pure function of the input (fixed number formatting, no
//! timestamps), so identical tables give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::simcons::SweepTable;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
pub const CONSISTENCY_COLOR: &str = "#1f77b4";
pub const PRIMARY_COLOR: &str = "#d62728";
const PALETTE: [&str; 10] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

const LEFT: f64 = 80.0;
const RIGHT: f64 = 720.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 420.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="13">"#).unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    s
}

/// Axis range covering `values`, padded and snapped outward to steps of 0.05.
fn nice_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(0.01);
    let lo = ((lo - pad) / 0.05).floor() * 0.05;
    let hi = ((hi + pad) / 0.05).ceil() * 0.05;
    (lo, hi)
}

fn scale(v: f64, (lo, hi): (f64, f64)) -> f64 {
    BOTTOM - (v - lo) / (hi - lo) * (BOTTOM - TOP)
}

fn y_axis(s: &mut String, x: f64, range: (f64, f64), color: &str, label: &str, left: bool) {
    writeln!(s, r#"<line x1="{x}" y1="{TOP}" x2="{x}" y2="{BOTTOM}" stroke="{color}"/>"#).unwrap();
    let (tick_dx, anchor) = if left { (-8.0, "end") } else { (8.0, "start") };
    for i in 0..=5 {
        let v = range.0 + (range.1 - range.0) * i as f64 / 5.0;
        let y = scale(v, range);
        writeln!(s, r#"<line x1="{x}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}"/>"#, x + tick_dx / 2.0).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}" fill="{color}">{v:.3}</text>"#, x + tick_dx, y + 4.0).unwrap();
    }
    let lx = if left { 22.0 } else { WIDTH - 22.0 };
    let cy = (TOP + BOTTOM) / 2.0;
    writeln!(s, r#"<text x="{lx}" y="{cy}" text-anchor="middle" fill="{color}" transform="rotate(-90 {lx} {cy})">{}</text>"#, escape(label)).unwrap();
}

fn series(s: &mut String, xs: &[f64], points: &[(f64, f64)], range: (f64, f64), color: &str, marker_square: bool) {
    let path: Vec<String> = xs.iter().zip(points).map(|(x, (m, _))| format!("{x:.2},{:.2}", scale(*m, range))).collect();
    writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" ")).unwrap();
    for (x, &(m, sd)) in xs.iter().zip(points) {
        let (y_lo, y_hi) = (scale(m - sd, range), scale(m + sd, range));
        writeln!(s, r#"<line x1="{x:.2}" y1="{y_lo:.2}" x2="{x:.2}" y2="{y_hi:.2}" stroke="{color}"/>"#).unwrap();
        for y in [y_lo, y_hi] {
            writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}"/>"#, x - 5.0, x + 5.0).unwrap();
        }
        let y = scale(m, range);
        if marker_square {
            writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="{color}"/>"#, x - 4.0, y - 4.0).unwrap();
        } else {
            writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{color}"/>"#).unwrap();
        }
    }
}

/// Consistency (left axis) and primary Dice (right axis) against λ, with ±std error bars.
pub fn plot_sweep(table: &SweepTable) -> Result<String> {
    if table.rows.len() < 2 {
        return Err(Error::EmptyInput(format!("sweep plot needs at least 2 rows, got {}", table.rows.len())));
    }
    let n = table.rows.len();
    let xs: Vec<f64> = (0..n).map(|i| LEFT + (RIGHT - LEFT) * (i as f64 + 0.5) / n as f64).collect();
    let cons: Vec<(f64, f64)> = table.rows.iter().map(|r| (r.consistency_avg.mean, r.consistency_avg.std)).collect();
    let prim: Vec<(f64, f64)> = table.rows.iter().map(|r| (r.primary_dice.mean, r.primary_dice.std)).collect();
    let spread = |v: &[(f64, f64)]| v.iter().flat_map(|&(m, sd)| [m - sd, m + sd]).collect::<Vec<_>>();
    let cons_range = nice_range(spread(&cons).into_iter());
    let prim_range = nice_range(spread(&prim).into_iter());

    let mut s = header("Consistency vs. primary task");
    writeln!(s, r#"<line x1="{LEFT}" y1="{BOTTOM}" x2="{RIGHT}" y2="{BOTTOM}" stroke="black"/>"#).unwrap();
    for (x, r) in xs.iter().zip(&table.rows) {
        writeln!(s, r#"<line x1="{x:.2}" y1="{BOTTOM}" x2="{x:.2}" y2="{}" stroke="black"/>"#, BOTTOM + 5.0).unwrap();
        writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, BOTTOM + 20.0, r.lambda).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">λ (consistency weight)</text>"#, (LEFT + RIGHT) / 2.0, BOTTOM + 45.0).unwrap();
    y_axis(&mut s, LEFT, cons_range, CONSISTENCY_COLOR, "Consistency (avg Dice)", true);
    y_axis(&mut s, RIGHT, prim_range, PRIMARY_COLOR, "Primary Dice", false);
    series(&mut s, &xs, &cons, cons_range, CONSISTENCY_COLOR, false);
    series(&mut s, &xs, &prim, prim_range, PRIMARY_COLOR, true);
    writeln!(s, r#"<circle cx="{}" cy="60" r="4" fill="{CONSISTENCY_COLOR}"/><text x="{}" y="64">consistency</text>"#, LEFT + 20.0, LEFT + 30.0).unwrap();
    writeln!(s, r#"<rect x="{}" y="74" width="8" height="8" fill="{PRIMARY_COLOR}"/><text x="{}" y="82">primary Dice</text>"#, LEFT + 16.0, LEFT + 30.0).unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

/// Scatter plot with one color per group; groups are ordered by name.
pub fn scatter_svg(title: &str, points: &[(String, f64, f64)]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptyInput("scatter plot needs at least one point".into()));
    }
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (g, x, y) in points {
        groups.entry(g.as_str()).or_default().push((*x, *y));
    }
    let xr = nice_range(points.iter().map(|p| p.1));
    let yr = nice_range(points.iter().map(|p| p.2));
    let sx = |v: f64| LEFT + (v - xr.0) / (xr.1 - xr.0) * (RIGHT - 120.0 - LEFT);
    let mut s = header(title);
    let plot_right = RIGHT - 120.0;
    writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#, plot_right - LEFT, BOTTOM - TOP).unwrap();
    for i in 0..=4 {
        let vx = xr.0 + (xr.1 - xr.0) * i as f64 / 4.0;
        writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{vx:.3}</text>"#, sx(vx), BOTTOM + 18.0).unwrap();
        let vy = yr.0 + (yr.1 - yr.0) * i as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{vy:.3}</text>"#, LEFT - 6.0, scale(vy, yr) + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">component 1</text>"#, (LEFT + plot_right) / 2.0, BOTTOM + 40.0).unwrap();
    writeln!(s, r#"<text x="22" y="{0}" text-anchor="middle" transform="rotate(-90 22 {0})">component 2</text>"#, (TOP + BOTTOM) / 2.0).unwrap();
    for (gi, (name, pts)) in groups.iter().enumerate() {
        let color = PALETTE[gi % PALETTE.len()];
        for &(x, y) in pts {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#, sx(x), scale(y, yr)).unwrap();
        }
        let ly = TOP + 10.0 + 20.0 * gi as f64;
        writeln!(s, r#"<circle cx="{}" cy="{ly}" r="5" fill="{color}"/><text x="{}" y="{}">{}</text>"#, plot_right + 20.0, plot_right + 32.0, ly + 4.0, escape(name)).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}
