//! Open- and closed-loop evaluation over a corpus.
//!
//! Open loop scores the planner against the cached expert future at the
//! conventional present frame (average displacement error). Closed loop
//! re-runs the policy in the simulator at a fixed replan interval and feeds
//! the logs to the metric evaluator. When a checkpoint is given, scoring is
//! restricted to the same held-out tail the trainer never touched.

use std::fs;
use std::path::{Path, PathBuf};

use numcore::{save_tensor, Tensor};
use serde::{Deserialize, Serialize};

use metrics::{evaluate_rollout, MetricConfig, SubScores};
use model::encoder::encode_with_attn;
use model::ModelConfig;
use trainer::{scenario_config_for, TrainConfig};
use worldgen::scenario::load_corpus_meta;
use worldgen::{generate_world, load_scenario, write_rollout, Difficulty, Trajectory};

use crate::manifest::RunManifest;
use crate::policy::{pack_frame, EvalModel, Policy, RolloutOptions};
use crate::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    OpenLoop,
    ClosedLoop,
}

impl EvalMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "openloop" => Ok(EvalMode::OpenLoop),
            "closedloop" => Ok(EvalMode::ClosedLoop),
            other => Err(CliError::Config(format!("unknown mode {other:?}, expected openloop|closedloop"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// `model`, `expert`, or `stationary`.
    pub policy: String,
    /// Cap on evaluated scenarios, applied after the held-out restriction.
    pub limit: Option<usize>,
    pub rollout: RolloutOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EvalMode::OpenLoop,
            policy: "model".into(),
            limit: None,
            rollout: RolloutOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub difficulty: Difficulty,
    pub dir: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ade: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epdms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scores: Option<SubScores>,
    /// Rollout log file name, relative to the report directory.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rollout: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub policy: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<String>,
    pub scenarios: Vec<ScenarioReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_ade: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_epdms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_r_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_hd: Option<f64>,
}

pub const REPORT_FILE: &str = "report.json";
pub const ATTENTION_FILE: &str = "attention.lwt";

/// Finds the newest complete epoch directory under a training output dir.
pub fn latest_epoch_dir(train_out: &Path) -> Result<PathBuf> {
    let root = train_out.join("checkpoints");
    let mut best: Option<(usize, PathBuf)> = None;
    let entries = fs::read_dir(&root).map_err(|e| io_err(&root, e))?;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(epoch) = name.to_str().and_then(|n| n.strip_prefix("epoch_")).and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        if entry.path().join("state.json").exists() && best.as_ref().is_none_or(|(b, _)| epoch > *b) {
            best = Some((epoch, entry.path()));
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| CliError::Data(format!("no complete checkpoint under {}", root.display())))
}

/// Reads the effective training configuration a `train` run saved beside
/// its checkpoints.
pub fn train_config_of(train_out: &Path) -> Result<TrainConfig> {
    let path = train_out.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn mean_of(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Average displacement error between two pose sequences, positions only.
pub fn ade(plan: &Trajectory, expert: &Trajectory) -> Result<f64> {
    let n = plan.poses.len().min(expert.poses.len());
    if n == 0 {
        return Err(CliError::Data("cannot score empty trajectories".into()));
    }
    let sum: f64 = plan.poses[..n]
        .iter()
        .zip(&expert.poses[..n])
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .sum();
    Ok(sum / n as f64)
}

struct Setup {
    policy: Policy,
    mcfg: ModelConfig,
    /// Index of the first held-out corpus entry, when a trainer split applies.
    holdout_from: Option<usize>,
}

fn setup(checkpoint: Option<&Path>, n_entries: usize, opts: &EvalOptions) -> Result<Setup> {
    match (opts.policy.as_str(), checkpoint) {
        ("model", None) => Err(CliError::Config(
            "the model policy needs --checkpoint pointing at a training output directory".into(),
        )),
        ("model", Some(out)) => {
            let tcfg = train_config_of(out)?;
            let mcfg = tcfg.model_config()?;
            let epoch = latest_epoch_dir(out)?;
            let model = EvalModel::load(&mcfg, &epoch)?;
            let held = (n_entries as f64 * tcfg.holdout_frac).ceil() as usize;
            let held = held.clamp(1, n_entries.saturating_sub(1).max(1));
            Ok(Setup {
                policy: Policy::Model(model),
                mcfg,
                holdout_from: Some(n_entries - held),
            })
        }
        ("expert", _) => Ok(Setup { policy: Policy::Expert, mcfg: ModelConfig::desk(), holdout_from: None }),
        ("stationary", _) => Ok(Setup { policy: Policy::Stationary, mcfg: ModelConfig::desk(), holdout_from: None }),
        (other, _) => Err(CliError::Config(format!("unknown policy {other:?}, expected model|expert|stationary"))),
    }
}

/// Extracts the scene-query -> patch attention of the front view from the
/// encoder's last block, head 0: an `[N, S]` heat matrix.
fn attention_matrix(model: &EvalModel, input: &Tensor) -> Result<Tensor> {
    let cfg = &model.cfg;
    let mut g = numcore::Graph::new();
    let b = model.params.bind(&mut g)?;
    let (_, _, probs) = encode_with_attn(&mut g, &b, cfg, input)?;
    let head = *probs.first().ok_or_else(|| CliError::Data("encoder produced no attention".into()))?;
    let t = g.value(head);
    let (n, s, l) = (cfg.n_queries, cfg.s(), cfg.n_queries + cfg.s());
    if t.shape != [cfg.n_views, l, l] {
        return Err(CliError::Data(format!("unexpected attention shape {:?}", t.shape)));
    }
    let front = 1usize; // view order is left, front, right
    let mut out = Vec::with_capacity(n * s);
    for q in 0..n {
        for p in 0..s {
            out.push(t.data[(front * l + q) * l + (n + p)]);
        }
    }
    Ok(Tensor::from_vec(vec![n, s], out)?)
}

/// Evaluates a corpus and writes `report.json`, rollout logs (closed loop),
/// and the encoder attention dump (open loop, model policy) under `out`.
pub fn eval(checkpoint: Option<&Path>, corpus: &Path, out: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let meta = load_corpus_meta(corpus)?;
    if meta.entries.is_empty() {
        return Err(CliError::Data(format!("corpus at {} lists no scenarios", corpus.display())));
    }
    let s = setup(checkpoint, meta.entries.len(), opts)?;
    let scfg = scenario_config_for(&s.mcfg);
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let from = s.holdout_from.unwrap_or(0);
    let entries: Vec<_> = meta.entries[from..]
        .iter()
        .take(opts.limit.unwrap_or(usize::MAX))
        .collect();
    if entries.is_empty() {
        return Err(CliError::Data("nothing to evaluate after the held-out restriction".into()));
    }

    let mut scenarios = Vec::with_capacity(entries.len());
    let mut attention_saved = false;
    for entry in entries {
        let mut row = ScenarioReport {
            seed: entry.seed,
            difficulty: entry.difficulty,
            dir: entry.dir.clone(),
            ade: None,
            epdms: None,
            r_c: None,
            hd: None,
            scores: None,
            rollout: None,
        };
        match opts.mode {
            EvalMode::OpenLoop => {
                let scenario = load_scenario(&corpus.join(&entry.dir), false)?;
                let frame = scenario
                    .frame(0)
                    .ok_or_else(|| CliError::Data(format!("{} lacks the present frame", entry.dir)))?;
                let expert = &frame.expert_future;
                let plan = match &s.policy {
                    Policy::Expert => expert.clone(),
                    Policy::Stationary => Trajectory::zeros(expert.poses.len()),
                    Policy::Model(m) => {
                        let input = pack_frame(&frame.views, &m.cfg)?;
                        if !attention_saved {
                            let heat = attention_matrix(m, &input)?;
                            save_tensor(&out.join(ATTENTION_FILE), &heat)?;
                            attention_saved = true;
                        }
                        let cands = m.candidates(&input, &frame.ego)?;
                        model::traj_decoder::select(&cands, frame.ego.command)?
                    }
                };
                row.ade = Some(ade(&plan, expert)?);
            }
            EvalMode::ClosedLoop => {
                let world = generate_world(entry.seed, entry.difficulty);
                let records = crate::policy::run_rollout(&world, &s.policy, &scfg, &opts.rollout)?;
                let log_name = format!("rollout_{}.jsonl", entry.dir);
                write_rollout(&out.join(&log_name), &records)?;
                let eval = evaluate_rollout(&world, &records, &MetricConfig::default())?;
                row.epdms = Some(eval.epdms);
                row.r_c = Some(eval.r_c);
                row.hd = Some(eval.hd);
                row.scores = Some(eval.scores);
                row.rollout = Some(log_name);
            }
        }
        scenarios.push(row);
    }

    let collect = |f: fn(&ScenarioReport) -> Option<f64>| -> Vec<f64> { scenarios.iter().filter_map(f).collect() };
    let report = EvalReport {
        mode: match opts.mode {
            EvalMode::OpenLoop => "openloop".into(),
            EvalMode::ClosedLoop => "closedloop".into(),
        },
        policy: opts.policy.clone(),
        checkpoint: checkpoint.map(|p| p.display().to_string()),
        mean_ade: mean_of(&collect(|r| r.ade)),
        mean_epdms: mean_of(&collect(|r| r.epdms)),
        mean_r_c: mean_of(&collect(|r| r.r_c)),
        mean_hd: mean_of(&collect(|r| r.hd)),
        scenarios,
    };
    let path = out.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;

    let mut manifest = RunManifest::new("eval", 0, out).with_corpus(corpus)?;
    manifest.config = checkpoint.map(|p| p.display().to_string());
    manifest.write(out)?;
    Ok(report)
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join(REPORT_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
