//! Rollout evaluator: turns a closed-loop log into sub-scores, the gated
//! composite, and the per-frame driveability score. The progress reference
//! is an internal deterministic rerun of the scripted expert from the same
//! initial state.

use serde::{Deserialize, Serialize};

use worldgen::world::wrap_angle;
use worldgen::{
    expert_policy, step_sim, ExpertConfig, RolloutRecord, SimConfig, WorldGeom, WorldSpec,
    EGO_HALF_LEN, EGO_HALF_WID,
};

use crate::collision::obb_intersects_aabb;
use crate::{epdms, hd_score, HdFrame, MetricError, Result, SubScores};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Comfort bound on |acceleration| components, m/s^2.
    pub a_max: f64,
    /// Comfort bound on longitudinal jerk at the log cadence, m/s^3.
    pub jerk_max: f64,
    /// Consistency bound on mean displacement between overlapping parts of
    /// consecutive plans, meters.
    pub ec_max: f64,
    /// Projection horizon for time-to-collision checks, seconds.
    pub ttc_window: f64,
    pub ttc_sub_dt: f64,
    /// Interpolation samples per log interval for collision sweeping.
    pub nc_substeps: usize,
    /// Route tail excluded from the completion denominator, meters.
    pub end_margin: f64,
    /// Below this expert progress the progress ratio is moot and scores 1.
    pub min_expert_progress: f64,
    pub expert: ExpertConfig,
    pub sim: SimConfig,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            a_max: 3.0,
            jerk_max: 5.0,
            ec_max: 0.5,
            ttc_window: 1.0,
            ttc_sub_dt: 0.05,
            nc_substeps: 10,
            end_margin: 10.0,
            min_expert_progress: 0.5,
            expert: ExpertConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutEval {
    pub scores: SubScores,
    pub epdms: f64,
    pub r_c: f64,
    pub hd: f64,
    pub progress: f64,
    pub expert_progress: f64,
}

fn ego_hits_anything(world: &WorldSpec, x: f64, y: f64, theta: f64) -> bool {
    world
        .obstacles
        .iter()
        .any(|ob| obb_intersects_aabb(x, y, theta, EGO_HALF_LEN, EGO_HALF_WID, ob))
}

/// Earliest frame index at or before which a collision occurs, sweeping each
/// log interval with linear pose interpolation so thin obstacles cannot be
/// stepped over.
fn first_collision_frame(world: &WorldSpec, records: &[RolloutRecord], substeps: usize) -> Option<usize> {
    let s0 = &records[0].state;
    if ego_hits_anything(world, s0.x, s0.y, s0.theta) {
        return Some(0);
    }
    for i in 0..records.len() - 1 {
        let a = &records[i].state;
        let b = &records[i + 1].state;
        for k in 1..=substeps {
            let f = k as f64 / substeps as f64;
            let x = a.x + f * (b.x - a.x);
            let y = a.y + f * (b.y - a.y);
            let th = a.theta + f * wrap_angle(b.theta - a.theta);
            if ego_hits_anything(world, x, y, th) {
                return Some(i + 1);
            }
        }
    }
    None
}

/// Constant-velocity projection: does the ego footprint, frozen at its
/// current heading, sweep into any obstacle within the window?
fn ttc_clear(world: &WorldSpec, state: &worldgen::EgoState, cfg: &MetricConfig) -> bool {
    let v = state.v[0];
    if v <= 0.1 {
        return true;
    }
    let (s, c) = state.theta.sin_cos();
    let mut tau = cfg.ttc_sub_dt;
    while tau <= cfg.ttc_window + 1e-12 {
        let x = state.x + v * tau * c;
        let y = state.y + v * tau * s;
        if ego_hits_anything(world, x, y, state.theta) {
            return false;
        }
        tau += cfg.ttc_sub_dt;
    }
    true
}

fn expert_progress_reference(
    world: &WorldSpec,
    geom: &WorldGeom,
    start: &worldgen::EgoState,
    n_steps: usize,
    dt: f64,
    cfg: &MetricConfig,
) -> Result<f64> {
    let mut state = *start;
    let (s0, _) = geom.project([state.x, state.y]);
    let mut best = 0.0f64;
    for step in 0..n_steps {
        let plan = expert_policy(world, &state, step as f64 * dt, &cfg.expert);
        state = step_sim(world, &state, &plan, dt, &cfg.sim)?;
        let (s, _) = geom.project([state.x, state.y]);
        best = best.max(s - s0);
    }
    Ok(best)
}

fn plan_to_world(record: &RolloutRecord) -> Vec<[f64; 2]> {
    let (s, c) = record.state.theta.sin_cos();
    record
        .plan
        .poses
        .iter()
        .map(|p| {
            [
                record.state.x + c * p[0] - s * p[1],
                record.state.y + s * p[0] + c * p[1],
            ]
        })
        .collect()
}

/// Consecutive replans agree where their horizons overlap: the pose of the
/// earlier plan aimed at a given wall-clock time is compared against the later
/// plan's pose for the same time, and every adjacent pair must stay within
/// `ec_max` mean displacement.
fn plans_consistent(records: &[RolloutRecord], dt: f64, pose_dt: f64, ec_max: f64) -> bool {
    let shift = (dt / pose_dt).round() as usize;
    records.windows(2).all(|w| {
        let prev = plan_to_world(&w[0]);
        let next = plan_to_world(&w[1]);
        let pairs: Vec<f64> = prev
            .iter()
            .skip(shift)
            .zip(next.iter())
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .collect();
        if pairs.is_empty() {
            return true;
        }
        pairs.iter().sum::<f64>() / pairs.len() as f64 <= ec_max
    })
}

pub fn evaluate_rollout(
    world: &WorldSpec,
    records: &[RolloutRecord],
    cfg: &MetricConfig,
) -> Result<RolloutEval> {
    if records.len() < 2 {
        return Err(MetricError::Eval(format!(
            "need at least two records, got {}",
            records.len()
        )));
    }
    let dt = records[1].t - records[0].t;
    if dt <= 0.0 {
        return Err(MetricError::Eval("non-increasing timestamps".into()));
    }
    for w in records.windows(2) {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-9 {
            return Err(MetricError::Eval("uneven log cadence".into()));
        }
    }
    world.validate()?;
    let geom = WorldGeom::new(world);

    let n = records.len();
    let collision_at = first_collision_frame(world, records, cfg.nc_substeps.max(1));

    let mut lat = Vec::with_capacity(n);
    let mut arc = Vec::with_capacity(n);
    for r in records {
        let (s, l) = geom.project([r.state.x, r.state.y]);
        arc.push(s);
        lat.push(l);
    }

    let dac_ok: Vec<bool> = lat.iter().map(|l| l.abs() <= world.half_width).collect();
    let ttc_ok: Vec<bool> = records.iter().map(|r| ttc_clear(world, &r.state, cfg)).collect();
    let com_ok: Vec<bool> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let a_ok = r.state.a[0].abs() <= cfg.a_max && r.state.a[1].abs() <= cfg.a_max;
            let jerk_ok = if i == 0 {
                true
            } else {
                ((r.state.a[0] - records[i - 1].state.a[0]) / dt).abs() <= cfg.jerk_max
            };
            a_ok && jerk_ok
        })
        .collect();

    let ddc = records.iter().zip(&arc).all(|(r, &s)| {
        r.state.v[0] <= 0.5 || wrap_angle(r.state.theta - geom.heading_at(s)).abs() <= std::f64::consts::FRAC_PI_2
    });

    let lk_bound = world.half_width - worldgen::EGO_HALF_WID;
    let ec = plans_consistent(records, dt, cfg.sim.pose_dt, cfg.ec_max);

    let tlc = match &world.light {
        None => true,
        Some(light) => !(0..n - 1).any(|i| {
            let (sa, sb) = (arc[i], arc[i + 1]);
            if sa <= light.stop_s && light.stop_s < sb {
                let f = (light.stop_s - sa) / (sb - sa).max(1e-9);
                light.is_red(records[i].t + f * dt)
            } else {
                false
            }
        }),
    };

    let progress = arc.iter().fold(0.0f64, |m, &s| m.max(s - arc[0]));
    let expert_progress =
        expert_progress_reference(world, &geom, &records[0].state, n - 1, dt, cfg)?;
    let ep = if expert_progress < cfg.min_expert_progress {
        1.0
    } else {
        (progress / expert_progress).clamp(0.0, 1.0)
    };

    let scores = SubScores {
        nc: if collision_at.is_none() { 1.0 } else { 0.0 },
        dac: if dac_ok.iter().all(|&b| b) { 1.0 } else { 0.0 },
        ddc: if ddc { 1.0 } else { 0.0 },
        tlc: if tlc { 1.0 } else { 0.0 },
        ep,
        ttc: ttc_ok.iter().filter(|&&b| b).count() as f64 / n as f64,
        lk: if lat.iter().all(|l| l.abs() <= lk_bound) { 1.0 } else { 0.0 },
        hc: if com_ok.iter().all(|&b| b) { 1.0 } else { 0.0 },
        ec: if ec { 1.0 } else { 0.0 },
    };
    let composite = epdms(&scores)?;

    let usable = (geom.length() - cfg.end_margin - arc[0]).max(1.0);
    let r_c = (progress / usable).clamp(0.0, 1.0);
    let frames: Vec<HdFrame> = (0..n)
        .map(|i| HdFrame {
            nc: match collision_at {
                Some(at) if i >= at => 0.0,
                _ => 1.0,
            },
            dac: if dac_ok[i] { 1.0 } else { 0.0 },
            ttc: if ttc_ok[i] { 1.0 } else { 0.0 },
            com: if com_ok[i] { 1.0 } else { 0.0 },
        })
        .collect();
    let hd = hd_score(r_c, &frames)?;

    Ok(RolloutEval { scores, epdms: composite, r_c, hd, progress, expert_progress })
}
