//! Closed-loop vehicle simulation: a kinematic bicycle tracks a planned
//! trajectory for one control interval. Also derives the navigation command
//! from route geometry at a pose.

use serde::{Deserialize, Serialize};

use crate::world::{wrap_angle, WorldGeom, WorldSpec};
use crate::{Command, EgoState, Result, Trajectory, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub wheelbase: f64,
    pub sub_dt: f64,
    pub pose_dt: f64,
    pub accel_max: f64,
    pub brake_max: f64,
    pub steer_max: f64,
    pub speed_tau: f64,
    /// Plans that move less than this total are treated as a stop request.
    pub stop_epsilon: f64,
    pub cmd_lookahead: f64,
    pub cmd_thresh_deg: f64,
    pub offroad_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            wheelbase: 2.8,
            sub_dt: 0.05,
            pose_dt: 0.5,
            accel_max: 3.0,
            brake_max: 3.0,
            steer_max: 0.6,
            speed_tau: 0.25,
            stop_epsilon: 0.05,
            cmd_lookahead: 10.0,
            cmd_thresh_deg: 15.0,
            offroad_factor: 1.5,
        }
    }
}

/// Navigation command at a world position: the sign of the route's heading
/// change over the next `cmd_lookahead` meters, or `Unknown` when the pose
/// has left the corridor or the route is about to end.
pub fn command_at(world: &WorldSpec, geom: &WorldGeom, x: f64, y: f64, cfg: &SimConfig) -> Command {
    let (s, lat) = geom.project([x, y]);
    if lat.abs() > cfg.offroad_factor * world.half_width {
        return Command::Unknown;
    }
    if geom.length() - s < cfg.cmd_lookahead {
        return Command::Unknown;
    }
    let dh = geom.heading_change(s, cfg.cmd_lookahead);
    let thresh = cfg.cmd_thresh_deg.to_radians();
    if dh > thresh {
        Command::Left
    } else if dh < -thresh {
        Command::Right
    } else {
        Command::Straight
    }
}

/// Advance the ego by `dt`, tracking `traj` (poses in the current ego frame).
pub fn step_sim(
    world: &WorldSpec,
    ego: &EgoState,
    traj: &Trajectory,
    dt: f64,
    cfg: &SimConfig,
) -> Result<EgoState> {
    if traj.poses.is_empty() {
        return Err(WorldError::Invalid("cannot track an empty trajectory".into()));
    }
    let geom = WorldGeom::new(world);
    let (sh, ch) = ego.theta.sin_cos();
    let world_pts: Vec<[f64; 2]> = traj
        .poses
        .iter()
        .map(|p| [ego.x + ch * p[0] - sh * p[1], ego.y + sh * p[0] + ch * p[1]])
        .collect();
    // Per-segment target speeds from consecutive plan displacements.
    let mut seg_speed = Vec::with_capacity(world_pts.len());
    let mut prev = [ego.x, ego.y];
    for p in &world_pts {
        seg_speed.push((p[0] - prev[0]).hypot(p[1] - prev[1]) / cfg.pose_dt);
        prev = *p;
    }
    let stopping = traj.total_displacement() < cfg.stop_epsilon;

    let (mut x, mut y, mut th, mut v) = (ego.x, ego.y, ego.theta, ego.v[0].max(0.0));
    let mut steer = 0.0;
    let n_sub = (dt / cfg.sub_dt).round().max(1.0) as usize;
    for sub in 0..n_sub {
        let tau = sub as f64 * cfg.sub_dt;
        let idx = ((tau / cfg.pose_dt) as usize).min(world_pts.len() - 1);
        let v_tgt = if stopping { 0.0 } else { seg_speed[idx] };
        let a = ((v_tgt - v) / cfg.speed_tau).clamp(-cfg.brake_max, cfg.accel_max);
        if !stopping {
            let target = world_pts[idx];
            let dist = (target[0] - x).hypot(target[1] - y);
            let ld = dist.max(1.5);
            let alpha = wrap_angle((target[1] - y).atan2(target[0] - x) - th);
            steer = if dist > 0.2 && v > 1e-3 {
                (2.0 * cfg.wheelbase * alpha.sin() / ld).atan().clamp(-cfg.steer_max, cfg.steer_max)
            } else {
                0.0
            };
        } else {
            steer = 0.0;
        }
        x += v * th.cos() * cfg.sub_dt;
        y += v * th.sin() * cfg.sub_dt;
        th += v / cfg.wheelbase * steer.tan() * cfg.sub_dt;
        v = (v + a * cfg.sub_dt).max(0.0);
    }

    let v_lat = v * steer.tan() / 2.0;
    let a_long = (v - ego.v[0]) / dt;
    let a_lat = (v_lat - ego.v[1]) / dt;
    Ok(EgoState {
        x,
        y,
        theta: wrap_angle(th),
        v: [v, v_lat],
        a: [a_long, a_lat],
        command: command_at(world, &geom, x, y, cfg),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{expert_policy, ExpertConfig};
    use crate::world::{generate_world, Difficulty};

    fn straight_world() -> WorldSpec {
        WorldSpec {
            seed: 0,
            difficulty: Difficulty::Easy,
            centerline: vec![[-10.0, 0.0], [200.0, 0.0]],
            half_width: 3.5,
            obstacles: vec![],
            light: None,
        }
    }

    fn ego(v: f64) -> EgoState {
        EgoState { x: 0.0, y: 0.0, theta: 0.0, v: [v, 0.0], a: [0.0, 0.0], command: Command::Straight }
    }

    #[test]
    fn zero_plan_brakes_to_rest() {
        let world = straight_world();
        let cfg = SimConfig::default();
        let mut e = ego(5.0);
        let zero = Trajectory::zeros(8);
        for _ in 0..10 {
            e = step_sim(&world, &e, &zero, 0.5, &cfg).unwrap();
        }
        assert!(e.v[0] < 1e-3, "still moving at {}", e.v[0]);
        assert_eq!(e.theta, 0.0);
        // Stopping distance from 5 m/s at up to 3 m/s^2, plus control lag.
        assert!(e.x < 7.0, "overran to {}", e.x);
        assert!(e.x > 2.0);
    }

    #[test]
    fn tracks_a_constant_speed_plan() {
        let world = straight_world();
        let cfg = SimConfig::default();
        let plan = Trajectory { poses: (1..=8).map(|k| [2.5 * k as f64, 0.0, 0.0]).collect() };
        let e = step_sim(&world, &ego(5.0), &plan, 0.5, &cfg).unwrap();
        assert!((e.x - 2.5).abs() < 0.3, "moved {}", e.x);
        assert!(e.y.abs() < 1e-6 && e.theta.abs() < 1e-6);
        assert!((e.v[0] - 5.0).abs() < 0.2);
    }

    #[test]
    fn refining_the_integration_step_barely_moves_the_result() {
        let world = generate_world(4, Difficulty::Medium);
        let start = world.centerline[0];
        let e0 = EgoState {
            x: start[0],
            y: start[1],
            theta: 0.0,
            v: [4.0, 0.0],
            a: [0.0, 0.0],
            command: Command::Straight,
        };
        let plan = expert_policy(&world, &e0, 0.0, &ExpertConfig::default());
        let coarse = SimConfig::default();
        let fine = SimConfig { sub_dt: 0.025, ..SimConfig::default() };
        let a = step_sim(&world, &e0, &plan, 0.5, &coarse).unwrap();
        let b = step_sim(&world, &e0, &plan, 0.5, &fine).unwrap();
        let d = (a.x - b.x).hypot(a.y - b.y);
        assert!(d < 0.05, "integration drift {d}");
    }

    #[test]
    fn empty_plan_is_rejected() {
        let world = straight_world();
        let r = step_sim(&world, &ego(5.0), &Trajectory { poses: vec![] }, 0.5, &SimConfig::default());
        assert!(r.is_err());
    }

    #[test]
    fn command_reads_route_geometry() {
        let cfg = SimConfig::default();
        let left_turn = WorldSpec {
            seed: 0,
            difficulty: Difficulty::Easy,
            centerline: vec![[0.0, 0.0], [15.0, 0.0], [20.0, 5.0], [25.0, 12.0]],
            half_width: 3.0,
            obstacles: vec![],
            light: None,
        };
        let g = WorldGeom::new(&left_turn);
        assert_eq!(command_at(&left_turn, &g, 8.0, 0.0, &cfg), Command::Left);

        let right_turn = WorldSpec {
            centerline: left_turn.centerline.iter().map(|p| [p[0], -p[1]]).collect(),
            ..left_turn.clone()
        };
        let g = WorldGeom::new(&right_turn);
        assert_eq!(command_at(&right_turn, &g, 8.0, 0.0, &cfg), Command::Right);

        let world = straight_world();
        let g = WorldGeom::new(&world);
        assert_eq!(command_at(&world, &g, 0.0, 0.0, &cfg), Command::Straight);
        // Far off the corridor.
        assert_eq!(command_at(&world, &g, 0.0, 9.0, &cfg), Command::Unknown);
        // Within ten meters of the route end.
        assert_eq!(command_at(&world, &g, 195.0, 0.0, &cfg), Command::Unknown);
    }

    #[test]
    fn expert_in_the_loop_stays_in_lane() {
        for seed in [1, 7] {
            let world = generate_world(seed, Difficulty::Medium);
            let geom = WorldGeom::new(&world);
            let start = world.centerline[0];
            let mut e = EgoState {
                x: start[0],
                y: start[1],
                theta: geom.heading_at(0.0),
                v: [4.0, 0.0],
                a: [0.0, 0.0],
                command: Command::Straight,
            };
            let ecfg = ExpertConfig::default();
            let scfg = SimConfig::default();
            for step in 0..16 {
                let plan = expert_policy(&world, &e, step as f64 * 0.5, &ecfg);
                e = step_sim(&world, &e, &plan, 0.5, &scfg).unwrap();
                let (_, lat) = geom.project([e.x, e.y]);
                assert!(lat.abs() < 1.0, "seed {seed} step {step}: lateral {lat}");
                assert!(e.v[0] <= 5.3, "seed {seed}: speed {}", e.v[0]);
            }
        }
    }
}
