//! CSV and SVG output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub backbone: String,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub episodes: u64,
    pub reward_mean: f64,
    pub reward_se: f64,
    pub served_mean: f64,
    pub cost_mean: f64,
    pub dev_pct: Option<f64>,
}

pub const RESULTS_HEADER: &str = "model,backbone,k,seed,episodes,reward_mean,reward_se,served_mean,cost_mean,dev_pct";

/// Seeds are joined with `;` in the `seed` column; `dev_pct` is blank
/// without an oracle.
pub fn write_results_csv(out: &mut impl Write, rows: &[ResultRow]) -> io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let dev = r.dev_pct.map(|d| format!("{d:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.model,
            r.backbone,
            r.k,
            seeds.join(";"),
            r.episodes,
            r.reward_mean,
            r.reward_se,
            r.served_mean,
            r.cost_mean,
            dev
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub backbone: String,
    pub reward: f64,
    pub served: f64,
    pub cost: f64,
}

pub const SWEEP_HEADER: &str = "k,backbone,reward,served,cost";

pub fn write_sweep_csv(out: &mut impl Write, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{:.6},{:.6},{:.6}", r.k, r.backbone, r.reward, r.served, r.cost)?;
    }
    Ok(())
}

pub const SWEEP_RUNS_HEADER: &str = "seed,k,backbone,reward,served,cost";

/// Sweep rows tagged with the training seed that produced them.
pub fn write_sweep_runs_csv<'a>(
    out: &mut impl Write,
    runs: impl IntoIterator<Item = (u64, &'a [SweepRow])>,
) -> io::Result<()> {
    writeln!(out, "{SWEEP_RUNS_HEADER}")?;
    for (seed, rows) in runs {
        for r in rows {
            writeln!(out, "{seed},{},{},{:.6},{:.6},{:.6}", r.k, r.backbone, r.reward, r.served, r.cost)?;
        }
    }
    Ok(())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Line chart of reward against `k`, one polyline per backbone.
pub fn write_sweep_svg(out: &mut impl Write, rows: &[SweepRow]) -> io::Result<()> {
    let (w, h, margin) = (640.0, 400.0, 60.0);
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        series.entry(&r.backbone).or_default().push((r.k as f64, r.reward));
    }
    let xs = rows.iter().map(|r| r.k as f64);
    let ys = rows.iter().map(|r| r.reward);
    let (mut x0, mut x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (mut y0, mut y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    if !(x1 > x0) {
        x0 -= 1.0;
        x1 += 1.0;
    }
    if !(y1 > y0) {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let px = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin);
    let py = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = margin,
        t = margin,
        b = h - margin,
        r = w - margin
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">k</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {})">reward</text>"#,
        h / 2.0,
        h / 2.0
    );
    for x in [x0, x1] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{x}</text>"#,
            px(x),
            h - margin + 18.0
        );
    }
    for y in [y0, y1] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{y:.1}</text>"#,
            margin - 6.0,
            py(y) + 4.0
        );
    }
    for (idx, (name, mut pts)) in series.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = PALETTE[idx % PALETTE.len()];
        let points: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-backbone="{name}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            points.join(" ")
        );
        let ly = margin + 16.0 * idx as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{color}">{name}</text>"#,
            w - margin - 90.0
        );
    }
    svg.push_str("</svg>\n");
    out.write_all(svg.as_bytes())
}
