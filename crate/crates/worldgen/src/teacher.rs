//! Geometry teacher: per-patch raw geometric descriptors lifted into a
//! high-dimensional embedding by a frozen orthonormal-column matrix. The
//! lift is norm-preserving, so the embedding carries exactly the raw
//! geometry and nothing else — a stand-in for a pretrained geometry network
//! with a known closed form.

use numcore::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::render::{cameras, cast_ray, patch_ray, RenderConfig, N_VIEWS};
use crate::world::{WorldGeom, WorldSpec};
use crate::{EgoState, Result, WorldError};

pub const RAW_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub d_g: usize,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig { d_g: 64, seed: 0x7EAC_4E12 }
    }
}

/// Frozen lift with orthonormal columns: `d_g x RAW_DIM`, row-major.
pub fn lift_matrix(cfg: &TeacherConfig) -> Result<Vec<f64>> {
    if cfg.d_g < RAW_DIM {
        return Err(WorldError::Invalid(format!(
            "teacher dimension {} is below the raw geometry dimension {}",
            cfg.d_g, RAW_DIM
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(RAW_DIM);
    for _ in 0..RAW_DIM {
        let mut c: Vec<f64> = (0..cfg.d_g).map(|_| StandardNormal.sample(&mut rng)).collect();
        // Two passes of Gram-Schmidt for numerical orthogonality.
        for _ in 0..2 {
            for prev in &cols {
                let dot: f64 = c.iter().zip(prev).map(|(a, b)| a * b).sum();
                for (x, p) in c.iter_mut().zip(prev) {
                    *x -= dot * p;
                }
            }
        }
        let norm: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            return Err(WorldError::Invalid("degenerate teacher lift basis".into()));
        }
        for x in &mut c {
            *x /= norm;
        }
        cols.push(c);
    }
    let mut m = vec![0.0; cfg.d_g * RAW_DIM];
    for (k, col) in cols.iter().enumerate() {
        for (j, &v) in col.iter().enumerate() {
            m[j * RAW_DIM + k] = v;
        }
    }
    Ok(m)
}

/// Raw per-ray geometry: normalized depth, hit normal (ego frame, zero when
/// nothing is hit), ray direction (ego frame), and signed lane clearance at
/// the point the ray lands on.
pub(crate) fn raw_geometry(
    world: &WorldSpec,
    geom: &WorldGeom,
    ego_theta: f64,
    o: [f64; 2],
    d2: [f64; 2],
    z_slope: f64,
    dir_world: [f64; 3],
    cfg: &RenderConfig,
) -> [f64; RAW_DIM] {
    let hit = cast_ray(world, geom, o, d2, z_slope, cfg);
    let (s, c) = ego_theta.sin_cos();
    let to_ego2 = |v: [f64; 2]| [c * v[0] + s * v[1], -s * v[0] + c * v[1]];
    let n_ego = to_ego2(hit.normal);
    let ray_ego = {
        let xy = to_ego2([dir_world[0], dir_world[1]]);
        [xy[0], xy[1], dir_world[2]]
    };
    // Landing point: the hit if any, else the ground crossing, else far.
    let land_t = if hit.kind.is_some() {
        hit.dist
    } else if z_slope < -1e-12 {
        (-cfg.cam_height / z_slope).min(cfg.far_plane)
    } else {
        cfg.far_plane
    };
    let land = [o[0] + land_t * d2[0], o[1] + land_t * d2[1]];
    let (_, lat) = geom.project(land);
    let clear = ((geom.half_width - lat.abs()) / geom.half_width).clamp(-1.0, 1.0);
    [
        hit.dist / cfg.far_plane,
        n_ego[0],
        n_ego[1],
        ray_ego[0],
        ray_ego[1],
        ray_ego[2],
        clear,
    ]
}

/// Teacher embeddings for all three views: each tensor is
/// `[grid_h * grid_w, d_g]`, rows ordered row-major over the patch grid.
pub fn teacher_features(
    world: &WorldSpec,
    ego: &EgoState,
    rcfg: &RenderConfig,
    tcfg: &TeacherConfig,
) -> Result<Vec<Tensor>> {
    world.validate()?;
    let geom = WorldGeom::new(world);
    let lift = lift_matrix(tcfg)?;
    let k = rcfg.intrinsics();
    let s_patches = rcfg.patches_per_view();
    let mut out = Vec::with_capacity(N_VIEWS);
    for ext in cameras(ego, rcfg) {
        let mut data = vec![0.0; s_patches * tcfg.d_g];
        for pv in 0..rcfg.grid_h {
            for pu in 0..rcfg.grid_w {
                let row = pv * rcfg.grid_w + pu;
                let raw = match patch_ray(&k, &ext, pu, pv) {
                    Some((d2, zs, dw)) => raw_geometry(
                        world,
                        &geom,
                        ego.theta,
                        [ext.t[0], ext.t[1]],
                        d2,
                        zs,
                        dw,
                        rcfg,
                    ),
                    None => [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                };
                for j in 0..tcfg.d_g {
                    let mut acc = 0.0;
                    for (kk, &r) in raw.iter().enumerate() {
                        acc += lift[j * RAW_DIM + kk] * r;
                    }
                    data[row * tcfg.d_g + j] = acc;
                }
            }
        }
        out.push(Tensor::from_vec(vec![s_patches, tcfg.d_g], data).map_err(WorldError::Num)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Difficulty, Obstacle};
    use crate::Command;

    fn ego() -> EgoState {
        EgoState { x: 0.0, y: 0.0, theta: 0.0, v: [5.0, 0.0], a: [0.0, 0.0], command: Command::Straight }
    }

    fn world_with(obstacles: Vec<Obstacle>) -> WorldSpec {
        WorldSpec {
            seed: 0,
            difficulty: Difficulty::Easy,
            centerline: vec![[-20.0, 0.0], [120.0, 0.0]],
            half_width: 3.5,
            obstacles,
            light: None,
        }
    }

    #[test]
    fn lift_columns_are_orthonormal() {
        let cfg = TeacherConfig::default();
        let m = lift_matrix(&cfg).unwrap();
        for a in 0..RAW_DIM {
            for b in 0..RAW_DIM {
                let dot: f64 = (0..cfg.d_g).map(|j| m[j * RAW_DIM + a] * m[j * RAW_DIM + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9, "col {a} . col {b} = {dot}");
            }
        }
    }

    #[test]
    fn lift_preserves_norms() {
        use rand::Rng;
        let cfg = TeacherConfig { d_g: 16, ..TeacherConfig::default() };
        let m = lift_matrix(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..RAW_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lifted: Vec<f64> = (0..cfg.d_g)
                .map(|j| (0..RAW_DIM).map(|k| m[j * RAW_DIM + k] * raw[k]).sum())
                .collect();
            let n_raw: f64 = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            let n_lift: f64 = lifted.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n_raw - n_lift).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_dimension_below_raw() {
        assert!(lift_matrix(&TeacherConfig { d_g: 3, seed: 1 }).is_err());
    }

    #[test]
    fn features_are_deterministic() {
        let w = world_with(vec![Obstacle { cx: 12.0, cy: 1.0, hx: 0.5, hy: 0.5 }]);
        let rcfg = RenderConfig::default();
        let tcfg = TeacherConfig::default();
        let a = teacher_features(&w, &ego(), &rcfg, &tcfg).unwrap();
        let b = teacher_features(&w, &ego(), &rcfg, &tcfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn features_ignore_geometry_beyond_the_far_plane() {
        // An obstacle 40 m behind the ego is outside every ray's reach (the
        // most rearward-looking ray would need ~150 m of travel), so the
        // teacher output cannot change.
        let near = world_with(vec![Obstacle { cx: 10.0, cy: 2.0, hx: 0.6, hy: 0.6 }]);
        let far = world_with(vec![
            Obstacle { cx: 10.0, cy: 2.0, hx: 0.6, hy: 0.6 },
            Obstacle { cx: -40.0, cy: 5.0, hx: 0.9, hy: 0.9 },
        ]);
        let rcfg = RenderConfig::default();
        let tcfg = TeacherConfig { d_g: 8, ..TeacherConfig::default() };
        let a = teacher_features(&near, &ego(), &rcfg, &tcfg).unwrap();
        let b = teacher_features(&far, &ego(), &rcfg, &tcfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn depth_component_recoverable_through_transpose() {
        // Orthonormal columns mean M^T M = I, so M^T recovers the raw vector.
        let w = world_with(vec![Obstacle { cx: 8.0, cy: 0.0, hx: 0.5, hy: 4.0 }]);
        let rcfg = RenderConfig { grid_h: 7, grid_w: 7, ..RenderConfig::default() };
        let tcfg = TeacherConfig { d_g: 12, ..TeacherConfig::default() };
        let m = lift_matrix(&tcfg).unwrap();
        let feats = teacher_features(&w, &ego(), &rcfg, &tcfg).unwrap();
        let center = 3 * 7 + 3;
        let row = &feats[1].data[center * tcfg.d_g..(center + 1) * tcfg.d_g];
        let mut raw = [0.0; RAW_DIM];
        for (k, r) in raw.iter_mut().enumerate() {
            *r = (0..tcfg.d_g).map(|j| m[j * RAW_DIM + k] * row[j]).sum();
        }
        // Front face at 7.5 m on the optical axis.
        assert!((raw[0] - 7.5 / 50.0).abs() < 1e-9, "depth {}", raw[0]);
        // Hit normal faces the ego: -x in the ego frame.
        assert!((raw[1] + 1.0).abs() < 1e-9 && raw[2].abs() < 1e-9);
        // Center ray looks straight ahead.
        assert!((raw[3] - 1.0).abs() < 1e-9 && raw[4].abs() < 1e-9 && raw[5].abs() < 1e-9);
        // On the centerline the clearance is maximal.
        assert!((raw[6] - 1.0).abs() < 1e-9);
    }
}
