//! Patch-grid renderer. Three pinhole cameras on the roof (left / front /
//! right) cast one ray per patch center into the plan-view world. Depth is
//! the horizontal distance to the first vertical surface (obstacle walls or
//! the low curbs at the lane edges); the ground itself never registers depth
//! but drives the semantic channels.

use campipe::{Extrinsics, Intrinsics};
use numcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::world::{WorldGeom, WorldSpec};
use crate::{EgoState, Result};

pub const N_VIEWS: usize = 3;
pub const N_CHANNELS: usize = 5;

/// Channel order within a raster patch.
pub const CH_DEPTH: usize = 0;
pub const CH_ROAD: usize = 1;
pub const CH_OBSTACLE: usize = 2;
pub const CH_MARKING: usize = 3;
pub const CH_BACKGROUND: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub far_plane: f64,
    pub cam_height: f64,
    pub mount_yaw_deg: f64,
    pub obstacle_height: f64,
    pub curb_height: f64,
    pub marking_band: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            grid_h: 14,
            grid_w: 28,
            far_plane: 50.0,
            cam_height: 1.6,
            mount_yaw_deg: 60.0,
            obstacle_height: 2.2,
            curb_height: 0.25,
            marking_band: 0.3,
        }
    }
}

impl RenderConfig {
    pub fn patches_per_view(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.grid_w as f64 / 2.0,
            fy: self.grid_w as f64 / 2.0,
            cx: self.grid_w as f64 / 2.0,
            cy: self.grid_h as f64 / 2.0,
        }
    }
}

/// One rendered camera view plus its calibration.
#[derive(Debug, Clone)]
pub struct ViewRaster {
    /// `[grid_h, grid_w, N_CHANNELS]`
    pub raster: Tensor,
    pub k: Intrinsics,
    pub cam_to_world: Extrinsics,
}

/// Camera poses for the three views, given the ego pose. View order is
/// left (+yaw), front, right (-yaw).
pub fn cameras(ego: &EgoState, cfg: &RenderConfig) -> Vec<Extrinsics> {
    let yaw = cfg.mount_yaw_deg.to_radians();
    [yaw, 0.0, -yaw]
        .iter()
        .map(|off| {
            let psi = ego.theta + off;
            let (s, c) = psi.sin_cos();
            // Columns: camera right, down, forward in world coordinates.
            let r = [[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]];
            Extrinsics { r, t: [ego.x, ego.y, cfg.cam_height] }
        })
        .collect()
}

// ── Ray casting ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum HitKind {
    Obstacle,
    Boundary,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct RayHit {
    /// Horizontal (plan-view) distance; `far_plane` when nothing is hit.
    pub dist: f64,
    pub kind: Option<HitKind>,
    /// Plan-view surface normal at the hit, facing the ray origin.
    pub normal: [f64; 2],
}

fn ray_aabb(o: [f64; 2], d: [f64; 2], ob: &crate::world::Obstacle) -> Option<(f64, [f64; 2])> {
    if ob.contains(o) {
        return Some((0.0, [-d[0], -d[1]]));
    }
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut axis = 0usize;
    for (i, (c, h)) in [(ob.cx, ob.hx), (ob.cy, ob.hy)].iter().enumerate() {
        if d[i].abs() < 1e-12 {
            if (o[i] - c).abs() > *h {
                return None;
            }
            continue;
        }
        let t1 = (c - h - o[i]) / d[i];
        let t2 = (c + h - o[i]) / d[i];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_enter {
            t_enter = lo;
            axis = i;
        }
        t_exit = t_exit.min(hi);
    }
    if t_exit < t_enter || t_exit < 0.0 || t_enter < 0.0 {
        return None;
    }
    let mut normal = [0.0, 0.0];
    normal[axis] = -d[axis].signum();
    Some((t_enter, normal))
}

fn ray_segment(o: [f64; 2], d: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let e = [b[0] - a[0], b[1] - a[1]];
    let denom = d[0] * e[1] - d[1] * e[0];
    if denom.abs() < 1e-12 {
        return None;
    }
    let ao = [a[0] - o[0], a[1] - o[1]];
    let t = (ao[0] * e[1] - ao[1] * e[0]) / denom;
    let u = (ao[0] * d[1] - ao[1] * d[0]) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

fn seg_normal_toward(o: [f64; 2], d: [f64; 2], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let e = [b[0] - a[0], b[1] - a[1]];
    let l = e[0].hypot(e[1]).max(1e-12);
    let mut n = [-e[1] / l, e[0] / l];
    if n[0] * d[0] + n[1] * d[1] > 0.0 {
        n = [-n[0], -n[1]];
    }
    let _ = o;
    n
}

/// Cast one plan-view ray. `z_slope` is the change in world z per unit of
/// horizontal travel; a surface only counts when the ray's height at the
/// crossing lies within that surface's vertical extent.
pub(crate) fn cast_ray(
    world: &WorldSpec,
    geom: &WorldGeom,
    o: [f64; 2],
    d: [f64; 2],
    z_slope: f64,
    cfg: &RenderConfig,
) -> RayHit {
    let mut best = RayHit { dist: cfg.far_plane, kind: None, normal: [0.0, 0.0] };
    let z_at = |t: f64| cfg.cam_height + z_slope * t;
    for ob in &world.obstacles {
        if let Some((t, n)) = ray_aabb(o, d, ob) {
            let z = z_at(t);
            if t < best.dist && (0.0..=cfg.obstacle_height).contains(&z) {
                best = RayHit { dist: t, kind: Some(HitKind::Obstacle), normal: n };
            }
        }
    }
    for edge in [&geom.left_edge, &geom.right_edge] {
        for w in edge.windows(2) {
            if let Some(t) = ray_segment(o, d, w[0], w[1]) {
                let z = z_at(t);
                if t < best.dist && (0.0..=cfg.curb_height).contains(&z) {
                    best = RayHit {
                        dist: t,
                        kind: Some(HitKind::Boundary),
                        normal: seg_normal_toward(o, d, w[0], w[1]),
                    };
                }
            }
        }
    }
    best
}

/// Semantic class of a ground point, from its lateral offset to the route.
fn ground_class(geom: &WorldGeom, p: [f64; 2], cfg: &RenderConfig) -> usize {
    let (_, lat) = geom.project(p);
    let dist_to_edge = (lat.abs() - geom.half_width).abs();
    if dist_to_edge <= cfg.marking_band {
        CH_MARKING
    } else if lat.abs() < geom.half_width {
        CH_ROAD
    } else {
        CH_BACKGROUND
    }
}

/// The per-patch ray in world coordinates: unit plan direction plus z-slope.
/// Returns `None` for degenerate (near-vertical) rays.
pub(crate) fn patch_ray(
    k: &Intrinsics,
    ext: &Extrinsics,
    pu: usize,
    pv: usize,
) -> Option<([f64; 2], f64, [f64; 3])> {
    let [dx, dy, dz] = campipe::pixel_ray(k, pu as f64 + 0.5, pv as f64 + 0.5);
    let n = (dx * dx + dy * dy + dz * dz).sqrt();
    let cam = [dx / n, dy / n, dz / n];
    let r = &ext.r;
    let w = [
        r[0][0] * cam[0] + r[0][1] * cam[1] + r[0][2] * cam[2],
        r[1][0] * cam[0] + r[1][1] * cam[1] + r[1][2] * cam[2],
        r[2][0] * cam[0] + r[2][1] * cam[1] + r[2][2] * cam[2],
    ];
    let h = w[0].hypot(w[1]);
    if h < 1e-9 {
        return None;
    }
    Some(([w[0] / h, w[1] / h], w[2] / h, w))
}

/// Render the three camera views at the given ego pose.
pub fn render_views(world: &WorldSpec, ego: &EgoState, cfg: &RenderConfig) -> Result<Vec<ViewRaster>> {
    world.validate()?;
    let geom = WorldGeom::new(world);
    let k = cfg.intrinsics();
    let (gh, gw) = (cfg.grid_h, cfg.grid_w);
    let mut out = Vec::with_capacity(N_VIEWS);
    for ext in cameras(ego, cfg) {
        ext.validate().map_err(crate::WorldError::Cam)?;
        let mut data = vec![0.0; gh * gw * N_CHANNELS];
        for pv in 0..gh {
            for pu in 0..gw {
                let at = (pv * gw + pu) * N_CHANNELS;
                let Some((d2, z_slope, _)) = patch_ray(&k, &ext, pu, pv) else {
                    data[at + CH_DEPTH] = 1.0;
                    data[at + CH_BACKGROUND] = 1.0;
                    continue;
                };
                let o = [ext.t[0], ext.t[1]];
                let hit = cast_ray(world, &geom, o, d2, z_slope, cfg);
                let (depth, class) = match hit.kind {
                    Some(HitKind::Obstacle) => (hit.dist, CH_OBSTACLE),
                    Some(HitKind::Boundary) => {
                        let p = [o[0] + hit.dist * d2[0], o[1] + hit.dist * d2[1]];
                        (hit.dist, ground_class(&geom, p, cfg))
                    }
                    None => {
                        // No vertical surface: classify where the ray lands.
                        let class = if z_slope < -1e-12 {
                            let tg = -cfg.cam_height / z_slope;
                            if tg <= cfg.far_plane {
                                ground_class(&geom, [o[0] + tg * d2[0], o[1] + tg * d2[1]], cfg)
                            } else {
                                CH_BACKGROUND
                            }
                        } else {
                            CH_BACKGROUND
                        };
                        (cfg.far_plane, class)
                    }
                };
                data[at + CH_DEPTH] = depth / cfg.far_plane;
                data[at + class] = 1.0;
            }
        }
        out.push(ViewRaster {
            raster: Tensor::from_vec(vec![gh, gw, N_CHANNELS], data).map_err(crate::WorldError::Num)?,
            k,
            cam_to_world: ext,
        });
    }
    Ok(out)
}
