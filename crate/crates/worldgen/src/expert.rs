//! Scripted expert driver: pure-pursuit steering along the route centerline
//! with a preview speed governor (cruise cap, curvature cap, stop ramps for
//! lane blockers and red lights) and jerk-limited longitudinal control.
//! Plans are short rollouts of a kinematic bicycle, emitted as poses in the
//! ego frame at the plan start.

use serde::{Deserialize, Serialize};

use crate::world::{wrap_angle, WorldGeom, WorldSpec};
use crate::{EgoState, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub cruise: f64,
    pub n_poses: usize,
    pub pose_dt: f64,
    pub sub_dt: f64,
    pub accel_max: f64,
    pub decel_comfort: f64,
    pub jerk_max: f64,
    pub lat_accel_max: f64,
    pub lookahead_base: f64,
    pub lookahead_gain: f64,
    pub wheelbase: f64,
    pub steer_max: f64,
    pub stop_margin: f64,
    pub block_lateral: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            cruise: 5.0,
            n_poses: 8,
            pose_dt: 0.5,
            sub_dt: 0.05,
            accel_max: 2.0,
            decel_comfort: 2.0,
            jerk_max: 4.0,
            lat_accel_max: 2.5,
            lookahead_base: 4.0,
            lookahead_gain: 0.6,
            wheelbase: 2.8,
            steer_max: 0.6,
            stop_margin: 2.0,
            block_lateral: 1.5,
        }
    }
}

/// Arc-length stop targets implied by lane blockers and an active red light.
fn stop_points(world: &WorldSpec, geom: &WorldGeom, t_now: f64, cfg: &ExpertConfig) -> Vec<f64> {
    let mut stops = Vec::new();
    for o in &world.obstacles {
        let (s_o, lat_o) = geom.project([o.cx, o.cy]);
        if lat_o.abs() - o.radius() < cfg.block_lateral {
            stops.push(s_o - o.radius() - cfg.stop_margin);
        }
    }
    if let Some(l) = &world.light {
        if l.is_red(t_now) {
            stops.push(l.stop_s - cfg.stop_margin);
        }
    }
    stops
}

fn curvature_at(geom: &WorldGeom, s: f64) -> f64 {
    geom.heading_change(s - 1.0, 2.0).abs() / 2.0
}

/// Highest speed admissible at arc length `s`, looking ahead so braking to
/// each upcoming cap is always within comfort decel.
fn speed_limit(geom: &WorldGeom, s: f64, stops: &[f64], cfg: &ExpertConfig) -> f64 {
    let mut v = cfg.cruise;
    for step in 0..=10 {
        let ds = step as f64;
        let kappa = curvature_at(geom, s + ds);
        let v_curve = if kappa < 1e-4 { cfg.cruise } else { (cfg.lat_accel_max / kappa).sqrt() };
        let reachable = (v_curve * v_curve + 2.0 * cfg.decel_comfort * ds).sqrt();
        v = v.min(reachable);
    }
    for &stop in stops {
        let d = stop - s;
        // Past the stop point but not yet released: hold at zero.
        let allowed = if d <= 0.0 { 0.0 } else { (2.0 * cfg.decel_comfort * d).sqrt() };
        v = v.min(allowed);
    }
    // Past the end of the route there is nothing to track.
    let remain = geom.length() - s;
    v = v.min(if remain <= 0.0 { 0.0 } else { (2.0 * cfg.decel_comfort * remain).sqrt() });
    v.max(0.0)
}

/// Plan a trajectory from `ego` at world time `t`. Poses are in the frame of
/// the starting pose, one every `pose_dt`.
pub fn expert_policy(world: &WorldSpec, ego: &EgoState, t: f64, cfg: &ExpertConfig) -> Trajectory {
    let geom = WorldGeom::new(world);
    let (x0, y0, th0) = (ego.x, ego.y, ego.theta);
    let (mut x, mut y, mut th, mut v) = (x0, y0, th0, ego.v[0].max(0.0));
    let mut accel = 0.0;
    let subs = (cfg.pose_dt / cfg.sub_dt).round() as usize;
    let mut poses = Vec::with_capacity(cfg.n_poses);
    let (s0, c0) = th0.sin_cos();
    for k in 0..cfg.n_poses {
        for sub in 0..subs {
            let tau = t + (k * subs + sub) as f64 * cfg.sub_dt;
            let (s, _) = geom.project([x, y]);
            let stops = stop_points(world, &geom, tau, cfg);
            let v_tgt = speed_limit(&geom, s, &stops, cfg);

            let want = ((v_tgt - v) / 0.25).clamp(-cfg.decel_comfort, cfg.accel_max);
            let max_da = cfg.jerk_max * cfg.sub_dt;
            accel += (want - accel).clamp(-max_da, max_da);

            let ld = cfg.lookahead_base + cfg.lookahead_gain * v;
            let target = geom.point_at(s + ld);
            let alpha = wrap_angle((target[1] - y).atan2(target[0] - x) - th);
            let steer = (2.0 * cfg.wheelbase * alpha.sin() / ld).atan().clamp(-cfg.steer_max, cfg.steer_max);

            x += v * th.cos() * cfg.sub_dt;
            y += v * th.sin() * cfg.sub_dt;
            th += v / cfg.wheelbase * steer.tan() * cfg.sub_dt;
            v = (v + accel * cfg.sub_dt).max(0.0);
        }
        let dx = x - x0;
        let dy = y - y0;
        poses.push([c0 * dx + s0 * dy, -s0 * dx + c0 * dy, wrap_angle(th - th0)]);
    }
    Trajectory { poses }
}
