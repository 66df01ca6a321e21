//! Procedural driving micro-world: seeded world generation, a patch-grid
//! multi-camera renderer, a frozen geometry teacher, a scripted expert
//! driver, and the closed-loop vehicle simulator. Everything downstream
//! (training corpora, evaluation rollouts) is built from these pieces.

pub mod expert;
pub mod render;
pub mod rollout;
pub mod scenario;
pub mod sim;
pub mod teacher;
pub mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expert::{expert_policy, ExpertConfig};
pub use render::{render_views, RenderConfig, ViewRaster, N_CHANNELS, N_VIEWS};
pub use rollout::{candidate_hash, read_rollout, write_rollout, RolloutRecord};
pub use scenario::{build_scenario, load_scenario, save_scenario, Frame, Scenario, STORED_FRAMES};
pub use sim::{command_at, step_sim, SimConfig};
pub use teacher::{teacher_features, TeacherConfig};
pub use world::{generate_world, Difficulty, Obstacle, TrafficLight, WorldGeom, WorldSpec};

/// Ego footprint half-extents, meters.
pub const EGO_HALF_LEN: f64 = 2.0;
pub const EGO_HALF_WID: f64 = 0.9;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world or configuration: {0}")]
    Invalid(String),
    #[error("missing corpus data: {0}")]
    MissingData(String),
    #[error(transparent)]
    Num(#[from] numcore::NumError),
    #[error(transparent)]
    Cam(#[from] campipe::CamError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, WorldError>;

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> WorldError {
    WorldError::Io { path: path.display().to_string(), source }
}

/// High-level maneuver the route demands next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Left,
    Straight,
    Right,
    Unknown,
}

impl Command {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            Command::Left => 0,
            Command::Straight => 1,
            Command::Right => 2,
            Command::Unknown => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Command> {
        match i {
            0 => Some(Command::Left),
            1 => Some(Command::Straight),
            2 => Some(Command::Right),
            3 => Some(Command::Unknown),
            _ => None,
        }
    }
}

/// Full kinematic state of the ego vehicle. Velocity and acceleration are in
/// the body frame: longitudinal then lateral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: [f64; 2],
    pub a: [f64; 2],
    pub command: Command,
}

/// A planned path: poses `[x, y, theta]` in the emitting ego's frame, at a
/// fixed time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn zeros(n: usize) -> Self {
        Trajectory { poses: vec![[0.0, 0.0, 0.0]; n] }
    }

    /// Sum of consecutive displacements, origin included.
    pub fn total_displacement(&self) -> f64 {
        let mut total = 0.0;
        let mut prev = [0.0, 0.0];
        for p in &self.poses {
            total += (p[0] - prev[0]).hypot(p[1] - prev[1]);
            prev = [p[0], p[1]];
        }
        total
    }
}
