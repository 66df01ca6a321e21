//! Turns stored scenarios into model-shaped training samples.

use std::path::Path;

use numcore::Tensor;

use model::ModelConfig;
use worldgen::scenario::{load_corpus_meta, ScenarioConfig};
use worldgen::{Command, EgoState, RenderConfig, Scenario, TeacherConfig, Trajectory, N_CHANNELS, N_VIEWS};

use crate::{Result, TrainError};

/// One scenario prepared for a forward pass at a fixed stride pattern.
#[derive(Debug, Clone)]
pub struct Sample {
    pub seed: u64,
    /// `[T, M, S, C]` rasters at the stride frames.
    pub input: Tensor,
    /// `[T, M, S, D_g]` frozen geometry features; empty tensor when skipped.
    pub teacher: Tensor,
    /// Ego state at each stride frame.
    pub egos: Vec<EgoState>,
    /// Expert motion from the current frame, `n_traj` poses in ego frame.
    pub expert: Trajectory,
    /// Command issued at the current frame.
    pub command: Command,
}

/// Scenario generation settings matching a model configuration: same patch
/// grid and geometry-feature width.
pub fn scenario_config_for(cfg: &ModelConfig) -> ScenarioConfig {
    ScenarioConfig {
        render: RenderConfig { grid_h: cfg.grid_h, grid_w: cfg.grid_w, ..RenderConfig::default() },
        teacher: TeacherConfig { d_g: cfg.d_g, ..TeacherConfig::default() },
        ..ScenarioConfig::default()
    }
}

pub fn assemble(scenario: &Scenario, cfg: &ModelConfig, with_teacher: bool) -> Result<Sample> {
    let (t, m, s) = (cfg.t(), cfg.n_views, cfg.s());
    if m != N_VIEWS || cfg.c_in != N_CHANNELS {
        return Err(TrainError::Config(format!(
            "model wants {m} views x {} channels, scenarios store {N_VIEWS} x {N_CHANNELS}",
            cfg.c_in
        )));
    }
    let mut input = Vec::with_capacity(t * m * s * cfg.c_in);
    let mut teacher = Vec::with_capacity(if with_teacher { t * m * s * cfg.d_g } else { 0 });
    let mut egos = Vec::with_capacity(t);
    for &idx in &cfg.stride {
        let frame = scenario.frame(idx as i32).ok_or_else(|| {
            TrainError::Config(format!("scenario {} lacks frame {idx}", scenario.world.seed))
        })?;
        for (v, view) in frame.views.iter().enumerate() {
            if view.raster.shape != [cfg.grid_h, cfg.grid_w, cfg.c_in] {
                return Err(TrainError::Config(format!(
                    "seed {} frame {idx} view {v}: raster {:?}, model grid {}x{}",
                    scenario.world.seed, view.raster.shape, cfg.grid_h, cfg.grid_w
                )));
            }
            input.extend_from_slice(&view.raster.data);
        }
        if with_teacher {
            if frame.teacher.len() != m {
                return Err(TrainError::Config(format!(
                    "seed {} frame {idx}: teacher features absent; regenerate the corpus",
                    scenario.world.seed
                )));
            }
            for (v, feat) in frame.teacher.iter().enumerate() {
                if feat.shape != [s, cfg.d_g] {
                    return Err(TrainError::Config(format!(
                        "seed {} frame {idx} view {v}: teacher {:?}, model wants [{s}, {}]",
                        scenario.world.seed, feat.shape, cfg.d_g
                    )));
                }
                teacher.extend_from_slice(&feat.data);
            }
        }
        egos.push(frame.ego);
    }

    let current = scenario
        .frame(0)
        .ok_or_else(|| TrainError::Config(format!("scenario {} lacks the current frame", scenario.world.seed)))?;
    if current.expert_future.poses.len() < cfg.n_traj {
        return Err(TrainError::Config(format!(
            "stored future has {} poses, model decodes {}",
            current.expert_future.poses.len(),
            cfg.n_traj
        )));
    }
    let expert = Trajectory { poses: current.expert_future.poses[..cfg.n_traj].to_vec() };

    Ok(Sample {
        seed: scenario.world.seed,
        input: Tensor::from_vec(vec![t, m, s, cfg.c_in], input)?,
        teacher: if with_teacher {
            Tensor::from_vec(vec![t, m, s, cfg.d_g], teacher)?
        } else {
            Tensor::zeros(vec![0])
        },
        egos,
        expert,
        command: current.ego.command,
    })
}

/// Loads and assembles every scenario listed in the corpus, in listing order.
pub fn load_samples(root: &Path, cfg: &ModelConfig, with_teacher: bool) -> Result<Vec<Sample>> {
    let meta = load_corpus_meta(root)?;
    let mut out = Vec::with_capacity(meta.entries.len());
    for entry in &meta.entries {
        let scenario = worldgen::load_scenario(&root.join(&entry.dir), with_teacher)?;
        out.push(assemble(&scenario, cfg, with_teacher)?);
    }
    Ok(out)
}

/// Splits off the held-out tail: the last `ceil(frac * n)` samples, at least
/// one when the fraction is nonzero.
pub fn split_holdout(samples: Vec<Sample>, frac: f64) -> (Vec<Sample>, Vec<Sample>) {
    if frac <= 0.0 || samples.is_empty() {
        return (samples, Vec::new());
    }
    let held = ((frac * samples.len() as f64).ceil() as usize).clamp(1, samples.len() - 1);
    let mut train = samples;
    let holdout = train.split_off(train.len() - held);
    (train, holdout)
}
