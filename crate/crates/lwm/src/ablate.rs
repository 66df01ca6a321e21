//! Component and stride sweeps: retrain the model once per configuration
//! row from a shared seed, score each checkpoint open- and closed-loop, and
//! emit one CSV row per configuration. Reruns wipe each row directory first,
//! so the sweep is a pure function of (config, corpus, seed).

use std::fs;
use std::path::{Path, PathBuf};

use trainer::{stride_rows, Geometry, Toggles, TrainConfig};

use crate::evalcmd::{eval, EvalMode, EvalOptions};
use crate::manifest::RunManifest;
use crate::{io_err, CliError, Result};

#[derive(Debug, Clone)]
pub struct AblateRow {
    pub label: String,
    pub epdms: Option<f64>,
    pub ade: Option<f64>,
}

#[derive(Debug)]
pub struct AblateOutcome {
    pub csv: PathBuf,
    pub rows: Vec<AblateRow>,
}

/// Human-readable row name derived from the toggle pattern.
pub fn toggle_label(t: &Toggles) -> String {
    if !t.compression {
        return "baseline".into();
    }
    let mut parts = vec!["compression"];
    match t.geometry {
        Geometry::Off => {}
        Geometry::Distill => parts.push("distill"),
        Geometry::Concat => parts.push("concat"),
    }
    if t.world_model {
        parts.push("wm");
    }
    if t.ego_status {
        parts.push("ego");
    }
    parts.join("+")
}

pub fn stride_label(stride: &[i64]) -> String {
    stride.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("_")
}

fn row_dir(out: &Path, idx: usize, label: &str) -> PathBuf {
    let safe: String = label.chars().map(|c| if c.is_alphanumeric() { c } else { '-' }).collect();
    out.join(format!("row{idx:02}_{safe}"))
}

/// One row: wipe, retrain, evaluate. Closed loop is capped to a handful of
/// scenarios; open loop covers the whole held-out tail.
fn run_row(cfg: &TrainConfig, corpus: &Path, dir: &Path, closed_limit: usize) -> Result<AblateRow> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    trainer::train(corpus, cfg, dir, None)?;
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(dir.join("config.json"), text).map_err(|e| io_err(&dir.join("config.json"), e))?;

    let open = eval(Some(dir), corpus, &dir.join("open"), &EvalOptions::default())?;
    let closed_opts = EvalOptions {
        mode: EvalMode::ClosedLoop,
        limit: Some(closed_limit),
        ..EvalOptions::default()
    };
    let closed = eval(Some(dir), corpus, &dir.join("closed"), &closed_opts)?;
    Ok(AblateRow { label: String::new(), epdms: closed.mean_epdms, ade: open.mean_ade })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs the `table3` component matrix (seven toggle rows) or the `table5`
/// stride sweep (three temporal patterns) and writes `ablation_<matrix>.csv`.
pub fn ablate(matrix: &str, base: &TrainConfig, corpus: &Path, out: &Path) -> Result<AblateOutcome> {
    base.validate()?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let rows_cfg: Vec<(String, TrainConfig)> = match matrix {
        "table3" => Toggles::matrix()
            .into_iter()
            .map(|t| {
                let label = toggle_label(&t);
                (label, TrainConfig { toggles: t, ..base.clone() })
            })
            .collect(),
        "table5" => stride_rows()
            .into_iter()
            .map(|stride| {
                let label = stride_label(&stride);
                (label, TrainConfig { stride, ..base.clone() })
            })
            .collect(),
        other => {
            return Err(CliError::Config(format!("unknown matrix {other:?}, expected table3|table5")));
        }
    };

    let mut rows = Vec::with_capacity(rows_cfg.len());
    let mut csv = String::from("matrix,row,label,epdms,open_loop_ade\n");
    for (i, (label, cfg)) in rows_cfg.iter().enumerate() {
        cfg.validate()?;
        let mut row = run_row(cfg, corpus, &row_dir(out, i, label), 3)?;
        row.label = label.clone();
        csv.push_str(&format!("{matrix},{i},{label},{},{}\n", fmt_opt(row.epdms), fmt_opt(row.ade)));
        rows.push(row);
    }

    let csv_path = out.join(format!("ablation_{matrix}.csv"));
    fs::write(&csv_path, &csv).map_err(|e| io_err(&csv_path, e))?;
    RunManifest::new("ablate", base.seed, out).with_corpus(corpus)?.write(out)?;
    Ok(AblateOutcome { csv: csv_path, rows })
}
