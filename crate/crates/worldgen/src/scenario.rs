//! Scenario building and on-disk corpus format.
//!
//! A scenario is one seeded world plus a set of timestamped frames sampled
//! from an expert closed-loop run at 2 Hz. The stored frame set is the union
//! of every context/target index the model presets use, so a single corpus
//! serves all temporal stride patterns. Frame index k corresponds to world
//! time (k + 3) * 0.5 s, i.e. index -3 is the start of the run.
//!
//! Layout under a corpus root:
//!   corpus_meta.json
//!   scenario_<tag><seed>/spec.json          world definition
//!   scenario_<tag><seed>/meta.json          per-frame ego, futures, cameras
//!   scenario_<tag><seed>/raster_f<k>_v<m>.lwt
//!   scenario_<tag><seed>/teacher_f<k>_v<m>.lwt

use std::fs;
use std::path::{Path, PathBuf};

use numcore::{load_tensor, save_tensor, Tensor};
use serde::{Deserialize, Serialize};

use campipe::{Extrinsics, Intrinsics};

use crate::expert::{expert_policy, ExpertConfig};
use crate::render::{render_views, RenderConfig, ViewRaster, N_VIEWS};
use crate::sim::{command_at, step_sim, SimConfig};
use crate::teacher::{teacher_features, TeacherConfig};
use crate::world::{generate_world, Difficulty, WorldGeom, WorldSpec};
use crate::{io_err, Command, EgoState, Result, Trajectory, WorldError};

/// Frame indices stored per scenario (index 0 is the conventional "present").
pub const STORED_FRAMES: [i32; 8] = [-3, -2, -1, 0, 2, 4, 6, 8];

/// Offset from frame index to expert-rollout step: frame -3 is step 0.
const FRAME_BASE: i32 = 3;
const FRAME_DT: f64 = 0.5;
const INITIAL_SPEED: f64 = 4.0;

/// Future horizon stored per frame, in pose steps.
pub const FUTURE_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ScenarioConfig {
    pub render: RenderConfig,
    pub teacher: TeacherConfig,
    pub expert: ExpertConfig,
    pub sim: SimConfig,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub idx: i32,
    pub time: f64,
    pub ego: EgoState,
    pub views: Vec<ViewRaster>,
    /// One `[patches, d_g]` tensor per view.
    pub teacher: Vec<Tensor>,
    /// Realized expert motion over the next `FUTURE_STEPS` poses, ego frame.
    pub expert_future: Trajectory,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub world: WorldSpec,
    pub frames: Vec<Frame>,
}

impl Scenario {
    pub fn frame(&self, idx: i32) -> Option<&Frame> {
        self.frames.iter().find(|f| f.idx == idx)
    }
}

/// Run the expert closed loop and capture the stored frames.
pub fn build_scenario(seed: u64, difficulty: Difficulty, cfg: &ScenarioConfig) -> Result<Scenario> {
    let world = generate_world(seed, difficulty);
    let geom = WorldGeom::new(&world);
    let start = world.centerline[0];
    let mut state = EgoState {
        x: start[0],
        y: start[1],
        theta: geom.heading_at(0.0),
        v: [INITIAL_SPEED, 0.0],
        a: [0.0, 0.0],
        command: Command::Straight,
    };
    state.command = command_at(&world, &geom, state.x, state.y, &cfg.sim);

    let last_step = (STORED_FRAMES[STORED_FRAMES.len() - 1] + FRAME_BASE) as usize + FUTURE_STEPS;
    let mut states = vec![state];
    for step in 0..last_step {
        let t = step as f64 * FRAME_DT;
        let plan = expert_policy(&world, &state, t, &cfg.expert);
        state = step_sim(&world, &state, &plan, FRAME_DT, &cfg.sim)?;
        states.push(state);
    }

    let mut frames = Vec::with_capacity(STORED_FRAMES.len());
    for &idx in &STORED_FRAMES {
        let at = (idx + FRAME_BASE) as usize;
        let ego = states[at];
        let (sh, ch) = ego.theta.sin_cos();
        let poses = (1..=FUTURE_STEPS)
            .map(|j| {
                let s = &states[at + j];
                let dx = s.x - ego.x;
                let dy = s.y - ego.y;
                [
                    ch * dx + sh * dy,
                    -sh * dx + ch * dy,
                    crate::world::wrap_angle(s.theta - ego.theta),
                ]
            })
            .collect();
        frames.push(Frame {
            idx,
            time: at as f64 * FRAME_DT,
            ego,
            views: render_views(&world, &ego, &cfg.render)?,
            teacher: teacher_features(&world, &ego, &cfg.render, &cfg.teacher)?,
            expert_future: Trajectory { poses },
        });
    }
    Ok(Scenario { world, frames })
}

// ── On-disk format ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CamMeta {
    k: Intrinsics,
    ext: Extrinsics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameMeta {
    idx: i32,
    time: f64,
    ego: EgoState,
    expert_future: Trajectory,
    cams: Vec<CamMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioMeta {
    grid_h: usize,
    grid_w: usize,
    d_g: usize,
    frames: Vec<FrameMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub seed: u64,
    pub difficulty: Difficulty,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub entries: Vec<CorpusEntry>,
}

pub fn scenario_dir_name(seed: u64, difficulty: Difficulty) -> String {
    format!("scenario_{}{:05}", difficulty.tag(), seed)
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| WorldError::Json { path: path.display().to_string(), source: e })?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text.as_bytes()).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| missing_or_io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| WorldError::Json { path: path.display().to_string(), source: e })
}

fn missing_or_io(path: &Path, e: std::io::Error) -> WorldError {
    if e.kind() == std::io::ErrorKind::NotFound {
        WorldError::MissingData(format!(
            "{} not found; run `lwm gen-data` to build the corpus",
            path.display()
        ))
    } else {
        io_err(path, e)
    }
}

fn raster_path(dir: &Path, idx: i32, view: usize) -> PathBuf {
    dir.join(format!("raster_f{idx}_v{view}.lwt"))
}

fn teacher_path(dir: &Path, idx: i32, view: usize) -> PathBuf {
    dir.join(format!("teacher_f{idx}_v{view}.lwt"))
}

pub fn save_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json_atomic(&dir.join("spec.json"), &scenario.world)?;
    let first = scenario.frames.first().ok_or_else(|| {
        WorldError::Invalid("scenario has no frames".into())
    })?;
    let grid = &first.views[0].raster.shape;
    let meta = ScenarioMeta {
        grid_h: grid[0],
        grid_w: grid[1],
        d_g: first.teacher[0].shape[1],
        frames: scenario
            .frames
            .iter()
            .map(|f| FrameMeta {
                idx: f.idx,
                time: f.time,
                ego: f.ego,
                expert_future: f.expert_future.clone(),
                cams: f
                    .views
                    .iter()
                    .map(|v| CamMeta { k: v.k, ext: v.cam_to_world })
                    .collect(),
            })
            .collect(),
    };
    write_json_atomic(&dir.join("meta.json"), &meta)?;
    for f in &scenario.frames {
        for (m, view) in f.views.iter().enumerate() {
            save_tensor(&raster_path(dir, f.idx, m), &view.raster).map_err(WorldError::Num)?;
        }
        for (m, t) in f.teacher.iter().enumerate() {
            save_tensor(&teacher_path(dir, f.idx, m), t).map_err(WorldError::Num)?;
        }
    }
    Ok(())
}

/// Read a scenario back. Teacher tensors are only required (and loaded) when
/// `with_teacher` is set; evaluation paths can skip them.
pub fn load_scenario(dir: &Path, with_teacher: bool) -> Result<Scenario> {
    let world: WorldSpec = read_json(&dir.join("spec.json"))?;
    world.validate()?;
    let meta: ScenarioMeta = read_json(&dir.join("meta.json"))?;
    let mut frames = Vec::with_capacity(meta.frames.len());
    for fm in &meta.frames {
        if fm.cams.len() != N_VIEWS {
            return Err(WorldError::Invalid(format!(
                "frame {} has {} cameras, expected {}",
                fm.idx,
                fm.cams.len(),
                N_VIEWS
            )));
        }
        let mut views = Vec::with_capacity(N_VIEWS);
        let mut teacher = Vec::new();
        for (m, cam) in fm.cams.iter().enumerate() {
            let path = raster_path(dir, fm.idx, m);
            let raster = load_tensor(&path).map_err(|e| tensor_err(&path, e))?;
            if raster.shape != vec![meta.grid_h, meta.grid_w, crate::render::N_CHANNELS] {
                return Err(WorldError::Invalid(format!(
                    "{}: unexpected raster shape {:?}",
                    path.display(),
                    raster.shape
                )));
            }
            views.push(ViewRaster { raster, k: cam.k, cam_to_world: cam.ext });
            if with_teacher {
                let tp = teacher_path(dir, fm.idx, m);
                let t = load_tensor(&tp).map_err(|e| tensor_err(&tp, e))?;
                if t.shape != vec![meta.grid_h * meta.grid_w, meta.d_g] {
                    return Err(WorldError::Invalid(format!(
                        "{}: unexpected teacher shape {:?}",
                        tp.display(),
                        t.shape
                    )));
                }
                teacher.push(t);
            }
        }
        frames.push(Frame {
            idx: fm.idx,
            time: fm.time,
            ego: fm.ego,
            views,
            teacher,
            expert_future: fm.expert_future.clone(),
        });
    }
    Ok(Scenario { world, frames })
}

fn tensor_err(path: &Path, e: numcore::NumError) -> WorldError {
    match e {
        numcore::NumError::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => {
            WorldError::MissingData(format!(
                "{} not found; run `lwm gen-data` to build the corpus",
                path.display()
            ))
        }
        other => WorldError::Num(other),
    }
}

pub fn save_corpus_meta(root: &Path, meta: &CorpusMeta) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    write_json_atomic(&root.join("corpus_meta.json"), meta)
}

pub fn load_corpus_meta(root: &Path) -> Result<CorpusMeta> {
    read_json(&root.join("corpus_meta.json"))
}
