//! Figure emission: loss curves from training logs, trajectory overlays
//! from evaluation reports, and attention heat grids from stored encoder
//! weights. Everything is plain SVG plus a CSV of the plotted numbers.

use std::fs;
use std::path::{Path, PathBuf};

use numcore::load_tensor;

use trainer::{read_log, StepLog};
use worldgen::{generate_world, read_rollout, RolloutRecord, WorldGeom};

use crate::evalcmd::read_report;
use crate::manifest::RunManifest;
use crate::policy::{run_rollout, Policy, RolloutOptions};
use crate::svg::{Frame2D, Svg};
use crate::{io_err, CliError, Result};

const CURVE_COLORS: [(&str, &str); 5] = [
    ("total", "#1f77b4"),
    ("traj", "#ff7f0e"),
    ("align", "#2ca02c"),
    ("wm", "#d62728"),
    ("ego", "#9467bd"),
];

fn term(l: &StepLog, name: &str) -> Option<f64> {
    match name {
        "total" => Some(l.terms.total),
        "traj" => Some(l.terms.traj),
        "align" => l.terms.align,
        "wm" => l.terms.wm,
        "ego" => l.terms.ego,
        _ => None,
    }
}

/// One polyline per loss term present in the log; every polyline has
/// exactly one point per logged step.
pub fn plot_loss(log_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let log = read_log(log_path)?;
    if log.is_empty() {
        return Err(CliError::Data(format!("{} holds no steps", log_path.display())));
    }
    let steps: Vec<f64> = log.iter().map(|l| l.step as f64).collect();
    let mut all_vals = Vec::new();
    let mut series = Vec::new();
    for (name, color) in CURVE_COLORS {
        let vals: Vec<Option<f64>> = log.iter().map(|l| term(l, name)).collect();
        if vals.iter().all(|v| v.is_some()) {
            let vals: Vec<f64> = vals.into_iter().map(|v| v.unwrap()).collect();
            all_vals.extend_from_slice(&vals);
            series.push((name, color, vals));
        }
    }

    let (w, h, left, top, pw, ph) = (640.0, 400.0, 60.0, 20.0, 560.0, 330.0);
    let frame = Frame2D::fit(&steps, &all_vals, left, top, pw, ph);
    let mut svg = Svg::new(w, h);
    for (i, (name, color, vals)) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = steps.iter().zip(vals).map(|(&s, &v)| frame.map(s, v)).collect();
        svg.polyline(&pts, color, 1.5);
        svg.text(left + 90.0 * i as f64, h - 6.0, 12.0, name);
        svg.rect(left + 90.0 * i as f64 - 14.0, h - 16.0, 10.0, 10.0, color);
    }
    svg.text(6.0, top + 10.0, 11.0, &format!("{:.4}", frame.y1));
    svg.text(6.0, top + ph, 11.0, &format!("{:.4}", frame.y0));
    svg.text(left, top + ph + 16.0, 11.0, "step 0");
    svg.text(left + pw - 60.0, top + ph + 16.0, 11.0, &format!("step {}", log.last().unwrap().step));

    let svg_path = out.join("loss_curve.svg");
    fs::write(&svg_path, svg.finish()).map_err(|e| io_err(&svg_path, e))?;

    let mut csv = String::from("step");
    for (name, _, _) in &series {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for (i, l) in log.iter().enumerate() {
        csv.push_str(&l.step.to_string());
        for (_, _, vals) in &series {
            csv.push_str(&format!(",{}", vals[i]));
        }
        csv.push('\n');
    }
    let csv_path = out.join("loss_curve.csv");
    fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;
    Ok(vec![svg_path, csv_path])
}

fn driven_path(records: &[RolloutRecord]) -> Vec<(f64, f64)> {
    records.iter().map(|r| (r.state.x, r.state.y)).collect()
}

/// World-frame overlay of the driven (predicted) path against an expert
/// reference rerun on the same world: distinct colors and markers — squares
/// for the prediction, circles for the expert.
pub fn plot_overlay(report_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let report = read_report(report_dir)?;
    let mut written = Vec::new();
    for row in &report.scenarios {
        let Some(log_name) = &row.rollout else { continue };
        let records = read_rollout(&report_dir.join(log_name))?;
        if records.is_empty() {
            continue;
        }
        let world = generate_world(row.seed, row.difficulty);
        let scfg = worldgen::scenario::ScenarioConfig::default();
        let expert = run_rollout(&world, &Policy::Expert, &scfg, &RolloutOptions::default())?;

        let pred = driven_path(&records);
        let exp = driven_path(&expert);
        let center: Vec<(f64, f64)> = {
            let geom = WorldGeom::new(&world);
            let n = 100;
            (0..=n)
                .map(|i| {
                    let p = geom.point_at(geom.length() * i as f64 / n as f64);
                    (p[0], p[1])
                })
                .collect()
        };
        let xs: Vec<f64> = pred.iter().chain(&exp).chain(&center).map(|p| p.0).collect();
        let ys: Vec<f64> = pred.iter().chain(&exp).chain(&center).map(|p| p.1).collect();
        let (w, h, left, top, pw, ph) = (640.0, 480.0, 30.0, 30.0, 580.0, 400.0);
        let frame = Frame2D::fit(&xs, &ys, left, top, pw, ph);

        let mut svg = Svg::new(w, h);
        let map = |pts: &[(f64, f64)]| -> Vec<(f64, f64)> { pts.iter().map(|&(x, y)| frame.map(x, y)).collect() };
        svg.polyline(&map(&center), "#cccccc", 1.0);
        let e = map(&exp);
        svg.polyline(&e, "#1f77b4", 1.5);
        for &(x, y) in &e {
            svg.circle(x, y, 2.0, "#1f77b4");
        }
        let p = map(&pred);
        svg.polyline(&p, "#ff7f0e", 1.5);
        for &(x, y) in &p {
            svg.rect(x - 2.0, y - 2.0, 4.0, 4.0, "#ff7f0e");
        }
        svg.text(left, 18.0, 12.0, &format!("seed {} — circles: expert, squares: {}", row.seed, report.policy));

        let svg_path = out.join(format!("overlay_{}.svg", row.dir));
        fs::write(&svg_path, svg.finish()).map_err(|e| io_err(&svg_path, e))?;

        let mut csv = String::from("idx,pred_x,pred_y,expert_x,expert_y\n");
        for i in 0..pred.len().max(exp.len()) {
            let f = |p: Option<&(f64, f64)>, pick_x: bool| {
                p.map(|&(x, y)| if pick_x { x.to_string() } else { y.to_string() }).unwrap_or_default()
            };
            csv.push_str(&format!(
                "{i},{},{},{},{}\n",
                f(pred.get(i), true),
                f(pred.get(i), false),
                f(exp.get(i), true),
                f(exp.get(i), false)
            ));
        }
        let csv_path = out.join(format!("overlay_{}.csv", row.dir));
        fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;
        written.push(svg_path);
        written.push(csv_path);
    }
    if written.is_empty() {
        return Err(CliError::Data(format!(
            "report in {} has no rollout logs to overlay (open-loop reports have none)",
            report_dir.display()
        )));
    }
    Ok(written)
}

/// Min–max renormalization to `[0, 1]`; a flat matrix maps to all zeros.
pub fn renormalize(data: &[f64]) -> Vec<f64> {
    let lo = data.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = data.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; data.len()];
    }
    data.iter().map(|&v| (v - lo) / span).collect()
}

/// Heat grid of a stored attention matrix; cell opacity carries the
/// renormalized weight at full precision.
pub fn plot_attention(lwt_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let t = load_tensor(lwt_path)?;
    if t.rank() != 2 || t.numel() == 0 {
        return Err(CliError::Data(format!(
            "{} holds a {:?} tensor, heat maps need a non-empty matrix",
            lwt_path.display(),
            t.shape
        )));
    }
    let (rows, cols) = (t.shape[0], t.shape[1]);
    let norm = renormalize(&t.data);

    let cell = 24.0;
    let (left, top) = (40.0, 30.0);
    let mut svg = Svg::new(left + cols as f64 * cell + 20.0, top + rows as f64 * cell + 20.0);
    svg.text(left, 18.0, 12.0, "scene query attention over patches");
    for r in 0..rows {
        svg.text(8.0, top + (r as f64 + 0.65) * cell, 11.0, &format!("q{r}"));
        for c in 0..cols {
            svg.cell(left + c as f64 * cell, top + r as f64 * cell, cell, cell, "#1f77b4", norm[r * cols + c]);
        }
    }
    let svg_path = out.join("attention.svg");
    fs::write(&svg_path, svg.finish()).map_err(|e| io_err(&svg_path, e))?;

    let mut csv = String::new();
    for r in 0..rows {
        let row: Vec<String> = (0..cols).map(|c| norm[r * cols + c].to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let csv_path = out.join("attention.csv");
    fs::write(&csv_path, csv).map_err(|e| io_err(&csv_path, e))?;
    Ok(vec![svg_path, csv_path])
}

/// Dispatches on the input: `.lwt` tensors become heat maps, `.jsonl` logs
/// become loss curves, report directories (or `report.json`) become
/// trajectory overlays.
pub fn plot(input: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let files = match input.extension().and_then(|e| e.to_str()) {
        Some("lwt") => plot_attention(input, out)?,
        Some("jsonl") => plot_loss(input, out)?,
        Some("json") => plot_overlay(input.parent().unwrap_or(Path::new(".")), out)?,
        _ if input.is_dir() => plot_overlay(input, out)?,
        _ => {
            return Err(CliError::Config(format!(
                "cannot plot {}: expected a .lwt tensor, a .jsonl training log, or a report directory",
                input.display()
            )));
        }
    };
    RunManifest::new("plot", 0, out).with_config(input).write(out)?;
    Ok(files)
}
