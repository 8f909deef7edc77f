//! Static SVG plots from a run's metrics and summary: belief entropy over
//! time, cumulative confirmations, and trajectories over the obstacle map
//! with target markers (red unconfirmed, green confirmed).

use std::fmt::Write as FmtWrite;
use std::fs;
use std::path::Path;

use crate::{load, CliError};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 48.0;
const SERIES_COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Metrics {
    ticks: Vec<f64>,
    /// Per robot: (x, y, entropy) series.
    robots: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    confirmed: Vec<f64>,
}

fn parse_metrics(path: &Path) -> Result<Metrics, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config(format!("{}: empty metrics", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n_robots = cols.iter().filter(|c| c.ends_with("_entropy_bits")).count();

    let mut m = Metrics {
        ticks: Vec::new(),
        robots: vec![(Vec::new(), Vec::new(), Vec::new()); n_robots],
        confirmed: Vec::new(),
    };
    for (lineno, line) in lines.enumerate() {
        let f: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        if f.len() != cols.len() {
            return Err(CliError::Config(format!(
                "{}:{}: expected {} columns, found {}",
                path.display(),
                lineno + 2,
                cols.len(),
                f.len()
            )));
        }
        m.ticks.push(f[0]);
        for r in 0..n_robots {
            let base = 1 + r * 7;
            m.robots[r].0.push(f[base]);
            m.robots[r].1.push(f[base + 1]);
            m.robots[r].2.push(f[base + 5]);
        }
        m.confirmed.push(f[1 + n_robots * 7]);
    }
    Ok(m)
}

/// Axis-fitted polyline chart; renders axes even for empty series.
fn line_chart(title: &str, series: &[(String, &[f64], &[f64])]) -> String {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y: f64 = 0.0;
    let mut max_y = f64::NEG_INFINITY;
    for (_, xs, ys) in series {
        for &x in *xs {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
        }
        for &y in *ys {
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
    }
    if !min_x.is_finite() {
        min_x = 0.0;
        max_x = 1.0;
    }
    if !max_y.is_finite() {
        max_y = 1.0;
    }
    if (max_x - min_x).abs() < 1e-12 {
        max_x = min_x + 1.0;
    }
    if (max_y - min_y).abs() < 1e-12 {
        max_y = min_y + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - min_x) / (max_x - min_x) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - min_y) / (max_y - min_y) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(
        svg,
        r#"<rect width="{W}" height="{H}" fill="white"/><text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );
    // Axes.
    let _ = write!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">tick</text>"#,
        W / 2.0,
        H - 10.0
    );
    // Min/max tick labels.
    let _ = write!(
        svg,
        r#"<text x="{m}" y="{y}" font-family="sans-serif" font-size="10" text-anchor="middle">{min_x:.0}</text><text x="{r}" y="{y}" font-family="sans-serif" font-size="10" text-anchor="middle">{max_x:.0}</text>"#,
        m = MARGIN,
        r = W - MARGIN,
        y = H - MARGIN + 16.0
    );
    let _ = write!(
        svg,
        r#"<text x="{x}" y="{t}" font-family="sans-serif" font-size="10" text-anchor="end">{max_y:.1}</text><text x="{x}" y="{b}" font-family="sans-serif" font-size="10" text-anchor="end">{min_y:.1}</text>"#,
        x = MARGIN - 6.0,
        t = MARGIN + 4.0,
        b = H - MARGIN
    );
    for (i, (label, xs, ys)) in series.iter().enumerate() {
        let colour = SERIES_COLOURS[i % SERIES_COLOURS.len()];
        if !xs.is_empty() {
            let points: Vec<String> = xs
                .iter()
                .zip(*ys)
                .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = write!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
                points.join(" ")
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{colour}">{label}</text>"#,
            W - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>");
    svg
}

pub fn cmd_plot(scenario: &Path, out: &Path, plots: &str) -> Result<(), CliError> {
    let cfg = load(scenario)?;
    let metrics = parse_metrics(&out.join("metrics.csv"))?;
    let summary_text = fs::read_to_string(out.join("summary.json"))
        .map_err(|e| CliError::Config(format!("summary.json: {e}")))?;
    let summary: serde_json::Value = serde_json::from_str(&summary_text)
        .map_err(|e| CliError::Config(format!("summary.json: {e}")))?;

    let kinds: Vec<&str> = plots.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    for kind in &kinds {
        match *kind {
            "entropy" => {
                let series: Vec<(String, &[f64], &[f64])> = metrics
                    .robots
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (format!("r{i}"), metrics.ticks.as_slice(), r.2.as_slice()))
                    .collect();
                let svg = line_chart("Belief entropy (bits) vs tick", &series);
                fs::write(out.join("entropy.svg"), svg)
                    .map_err(|e| CliError::Runtime(format!("entropy.svg: {e}")))?;
            }
            "confirmations" => {
                let series = vec![(
                    "confirmed".to_string(),
                    metrics.ticks.as_slice(),
                    metrics.confirmed.as_slice(),
                )];
                let svg = line_chart("Targets confirmed vs tick", &series);
                fs::write(out.join("confirmations.svg"), svg)
                    .map_err(|e| CliError::Runtime(format!("confirmations.svg: {e}")))?;
            }
            "trajectories" => {
                let svg = trajectory_overlay(&cfg, &metrics, &summary);
                fs::write(out.join("trajectories.svg"), svg)
                    .map_err(|e| CliError::Runtime(format!("trajectories.svg: {e}")))?;
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown plot kind '{other}' (entropy | confirmations | trajectories)"
                )))
            }
        }
    }
    println!("wrote {} plot(s) to {}", kinds.len(), out.display());
    Ok(())
}

fn trajectory_overlay(
    cfg: &scoutsim_core::engine::ScenarioConfig,
    metrics: &Metrics,
    summary: &serde_json::Value,
) -> String {
    let world = &cfg.world;
    let extent_x = world.width() as f64 * world.cell_size();
    let extent_y = world.height() as f64 * world.cell_size();
    let size = 560.0;
    let scale = (size - 2.0 * MARGIN) / extent_x.max(extent_y);
    let sx = |x: f64| MARGIN + x * scale;
    let sy = |y: f64| MARGIN + y * scale;

    let confirmed_ids: Vec<u64> = summary["confirmations"]
        .as_array()
        .map(|a| {
            a.iter()
                .filter_map(|c| c["target"].as_u64())
                .collect()
        })
        .unwrap_or_default();

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = write!(svg, r#"<rect width="{size}" height="{size}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        sx(0.0),
        sy(0.0),
        extent_x * scale,
        extent_y * scale
    );
    // Obstacles.
    for y in 0..world.height() {
        for x in 0..world.width() {
            let cell = scoutsim_core::geom::Cell::new(x, y);
            if world.is_obstacle(cell) {
                let _ = write!(
                    svg,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#999"/>"##,
                    sx(x as f64 * world.cell_size()),
                    sy(y as f64 * world.cell_size()),
                    world.cell_size() * scale,
                    world.cell_size() * scale
                );
            }
        }
    }
    // Trajectories.
    for (i, (xs, ys, _)) in metrics.robots.iter().enumerate() {
        if xs.is_empty() {
            continue;
        }
        let colour = SERIES_COLOURS[i % SERIES_COLOURS.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = write!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.2" opacity="0.8"/>"#,
            points.join(" ")
        );
        let _ = write!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{colour}"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" fill="{colour}">r{i}</text>"#,
            sx(*xs.last().expect("non-empty")),
            sy(*ys.last().expect("non-empty")),
            sx(*xs.last().expect("non-empty")) + 6.0,
            sy(*ys.last().expect("non-empty")) - 6.0
        );
    }
    // Targets: green once confirmed, red otherwise.
    for &(id, cell) in world.targets() {
        let (cx, cy) = world.cell_center(cell);
        let colour = if confirmed_ids.contains(&(id.0 as u64)) {
            "#2ca02c"
        } else {
            "#d62728"
        };
        let _ = write!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="6" fill="{colour}" stroke="black"/>"#,
            sx(cx),
            sy(cy)
        );
    }
    svg.push_str("</svg>");
    svg
}
