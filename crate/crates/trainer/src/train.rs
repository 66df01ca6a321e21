//! The epoch loop: shuffled batches, optimizer and EMA updates, per-step
//! logs, per-epoch checkpoints, and clean resume from the last checkpoint.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use numcore::Graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use model::world_model::{aggregate, ego_heads, predict_future};
use model::{build_params, encoder_shadow, ModelConfig, ParamSet};

use crate::data::{load_samples, split_holdout, Sample};
use crate::loss::{total_loss, LossTerms};
use crate::optim::AdamW;
use crate::schedule::lr_at;
use crate::{io_err, Geometry, Result, TrainConfig, TrainError};

pub const LOG_FILE: &str = "train_log.jsonl";
const CHECKPOINT_DIR: &str = "checkpoints";
const STATE_FILE: &str = "state.json";

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub terms: LossTerms,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainState {
    next_epoch: usize,
    global_step: usize,
    total_steps: usize,
    opt_steps: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Steps executed by this call (not counting resumed history).
    pub steps_run: usize,
    pub last: Option<LossTerms>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

fn epoch_dir(out: &Path, epoch: usize) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}"))
}

/// Highest epoch with a complete checkpoint; state.json is written last, so
/// its presence marks completeness.
fn latest_checkpoint(out: &Path) -> Option<(usize, TrainState)> {
    let dir = out.join(CHECKPOINT_DIR);
    let mut best: Option<(usize, TrainState)> = None;
    for entry in fs::read_dir(dir).ok()?.flatten() {
        let name = entry.file_name();
        let Some(epoch) = name.to_str().and_then(|n| n.strip_prefix("epoch_")).and_then(|n| n.parse().ok())
        else {
            continue;
        };
        let Ok(text) = fs::read_to_string(entry.path().join(STATE_FILE)) else { continue };
        let Ok(state) = serde_json::from_str::<TrainState>(&text) else { continue };
        if best.as_ref().is_none_or(|(b, _)| epoch > *b) {
            best = Some((epoch, state));
        }
    }
    best
}

fn save_checkpoint(
    dir: &Path,
    params: &ParamSet,
    shadow: &ParamSet,
    opt: &AdamW,
    state: &TrainState,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    params.save(dir, "p.")?;
    shadow.save(dir, "ema.")?;
    opt.save(dir)?;
    let path = dir.join(STATE_FILE);
    let tmp = dir.join("state.json.tmp");
    let text = serde_json::to_string_pretty(state)
        .map_err(|e| TrainError::Json { path: path.clone(), source: e })?;
    fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))?;
    Ok(())
}

/// Drops any log lines past the checkpointed step so a mid-epoch interruption
/// replays the epoch without duplicate entries.
fn trim_log(path: &Path, keep: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let kept: Vec<&str> = text.lines().take(keep).collect();
    let mut body = kept.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    fs::write(path, body).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<StepLog>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| TrainError::Json { path: path.to_path_buf(), source: e }))
        .collect()
}

/// Runs (or resumes) training on the corpus at `corpus`, writing logs and
/// checkpoints under `out`. `limit_epochs` stops early after that many total
/// epochs — the hook the interruption tests use.
pub fn train(corpus: &Path, cfg: &TrainConfig, out: &Path, limit_epochs: Option<usize>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mcfg = cfg.model_config()?;
    let needs_teacher = cfg.toggles.geometry != Geometry::Off;
    let samples = load_samples(corpus, &mcfg, needs_teacher)?;
    let (train_set, _held) = split_holdout(samples, cfg.holdout_frac);
    if train_set.is_empty() {
        return Err(TrainError::Config("no training samples left after the holdout split".into()));
    }
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let log_path = out.join(LOG_FILE);

    let mut params;
    let mut shadow;
    let mut opt;
    let mut start_epoch = 0;
    let mut global_step = 0;
    match latest_checkpoint(out) {
        Some((epoch, state)) => {
            if state.total_steps != total_steps {
                return Err(TrainError::Config(format!(
                    "checkpoint was trained toward {} steps, this config wants {}",
                    state.total_steps, total_steps
                )));
            }
            let dir = epoch_dir(out, epoch);
            params = build_params(&mcfg, cfg.seed)?;
            params.load(&dir, "p.")?;
            shadow = encoder_shadow(&params);
            shadow.load(&dir, "ema.")?;
            opt = AdamW::load(&params, &dir, state.opt_steps, cfg.weight_decay, cfg.clip_norm)?;
            start_epoch = state.next_epoch;
            global_step = state.global_step;
        }
        None => {
            params = build_params(&mcfg, cfg.seed)?;
            shadow = encoder_shadow(&params);
            opt = AdamW::new(&params, cfg.weight_decay, cfg.clip_norm);
            if log_path.exists() {
                fs::remove_file(&log_path).map_err(|e| io_err(&log_path, e))?;
            }
        }
    }
    trim_log(&log_path, global_step)?;
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| io_err(&log_path, e))?;

    let end_epoch = limit_epochs.unwrap_or(cfg.epochs).min(cfg.epochs);
    let mut steps_run = 0;
    let mut last = None;
    for epoch in start_epoch..end_epoch {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let lr = lr_at(global_step, total_steps, cfg);

            let mut g = Graph::new();
            let b = params.bind(&mut g)?;
            let bs = shadow.bind(&mut g)?;
            let shadow_bound = cfg.toggles.world_model.then_some(&bs);
            let (nodes, terms) = total_loss(&mut g, &b, shadow_bound, cfg, &mcfg, &batch, global_step)?;
            g.backward(nodes.total)?;
            opt.step(&mut params, &g, &b, lr);
            shadow.ema_update(&params, cfg.ema_mu)?;

            let line = StepLog { step: global_step, epoch, lr, terms };
            let text = serde_json::to_string(&line)
                .map_err(|e| TrainError::Json { path: log_path.clone(), source: e })?;
            writeln!(log, "{text}").map_err(|e| io_err(&log_path, e))?;
            log.flush().map_err(|e| io_err(&log_path, e))?;

            last = Some(terms);
            global_step += 1;
            steps_run += 1;
        }
        let state = TrainState {
            next_epoch: epoch + 1,
            global_step,
            total_steps,
            opt_steps: opt.steps(),
        };
        save_checkpoint(&epoch_dir(out, epoch), &params, &shadow, &opt, &state)?;
    }

    let final_epoch = end_epoch.max(start_epoch);
    Ok(TrainOutcome {
        steps_run,
        last,
        checkpoint: epoch_dir(out, final_epoch.saturating_sub(1)),
        log: log_path,
    })
}

/// Fraction of future frames whose command the ego head ranks first, over a
/// sample set. Teacher-forced: context frames are ground truth.
pub fn command_accuracy(params: &ParamSet, mcfg: &ModelConfig, samples: &[Sample]) -> Result<f64> {
    let mut hits = 0usize;
    let mut rows = 0usize;
    for sample in samples {
        let mut g = Graph::new();
        let b = params.bind(&mut g)?;
        let (scene, _) = model::encoder::encode(&mut g, &b, mcfg, &sample.input)?;
        let world = aggregate(&mut g, &b, mcfg, scene, &sample.egos)?;
        let pred = predict_future(&mut g, &b, mcfg, world, None)?;
        let heads = ego_heads(&mut g, &b, mcfg, pred)?;
        let probs = g.value(heads.cmd);
        for (i, ego) in sample.egos[1..].iter().enumerate() {
            let row = &probs.data[i * 4..(i + 1) * 4];
            let top = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
                .map(|(k, _)| k)
                .expect("four commands");
            hits += usize::from(top == ego.command.index());
            rows += 1;
        }
    }
    Ok(hits as f64 / rows.max(1) as f64)
}
