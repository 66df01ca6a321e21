//! World specification and procedural generation: a piecewise-linear lane
//! corridor with axis-aligned obstacles and an optional timed light.
//! Generation is a pure function of (seed, difficulty).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Result, WorldError, EGO_HALF_WID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Extreme,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard, Difficulty::Extreme];

    pub fn tag(self) -> &'static str {
        match self {
            Difficulty::Easy => "E",
            Difficulty::Medium => "M",
            Difficulty::Hard => "H",
            Difficulty::Extreme => "X",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "E" | "e" | "easy" => Some(Difficulty::Easy),
            "M" | "m" | "medium" => Some(Difficulty::Medium),
            "H" | "h" | "hard" => Some(Difficulty::Hard),
            "X" | "x" | "extreme" => Some(Difficulty::Extreme),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub cx: f64,
    pub cy: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Obstacle {
    pub fn radius(&self) -> f64 {
        self.hx.hypot(self.hy)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.cx).abs() <= self.hx && (p[1] - self.cy).abs() <= self.hy
    }
}

/// Fixed-cycle signal at an arc-length position along the route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub stop_s: f64,
    pub period: f64,
    pub red_frac: f64,
    pub offset: f64,
}

impl TrafficLight {
    pub fn is_red(&self, t: f64) -> bool {
        let phase = (t + self.offset).rem_euclid(self.period) / self.period;
        phase < self.red_frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub difficulty: Difficulty,
    pub centerline: Vec<[f64; 2]>,
    pub half_width: f64,
    pub obstacles: Vec<Obstacle>,
    pub light: Option<TrafficLight>,
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.centerline.len() < 2 {
            return Err(WorldError::Invalid("centerline needs at least two points".into()));
        }
        if self.half_width <= EGO_HALF_WID {
            return Err(WorldError::Invalid(format!(
                "half width {} does not fit the ego ({})",
                self.half_width, EGO_HALF_WID
            )));
        }
        for w in self.centerline.windows(2) {
            if w[1][0] <= w[0][0] {
                return Err(WorldError::Invalid("centerline must make forward progress in x".into()));
            }
        }
        let start = self.centerline[0];
        for o in &self.obstacles {
            let d = (o.cx - start[0]).hypot(o.cy - start[1]);
            if d < o.radius() + 3.0 {
                return Err(WorldError::Invalid("obstacle covers the route start".into()));
            }
        }
        Ok(())
    }
}

// ── Route geometry ─────────────────────────────────────────────────────────

/// Centerline with precomputed arc lengths, plus the two lane-edge polylines
/// (vertices offset along averaged segment normals).
#[derive(Debug, Clone)]
pub struct WorldGeom {
    pub pts: Vec<[f64; 2]>,
    pub cum: Vec<f64>,
    pub half_width: f64,
    pub left_edge: Vec<[f64; 2]>,
    pub right_edge: Vec<[f64; 2]>,
}

impl WorldGeom {
    pub fn new(world: &WorldSpec) -> Self {
        Self::from_polyline(&world.centerline, world.half_width)
    }

    pub fn from_polyline(pts: &[[f64; 2]], half_width: f64) -> Self {
        assert!(pts.len() >= 2, "polyline needs two points");
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            cum.push(cum.last().unwrap() + d);
        }
        // Per-vertex normals averaged over adjacent segments.
        let n = pts.len();
        let seg_normal = |i: usize| -> [f64; 2] {
            let dx = pts[i + 1][0] - pts[i][0];
            let dy = pts[i + 1][1] - pts[i][1];
            let l = dx.hypot(dy);
            [-dy / l, dx / l] // left normal
        };
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for i in 0..n {
            let nm = if i == 0 {
                seg_normal(0)
            } else if i == n - 1 {
                seg_normal(n - 2)
            } else {
                let a = seg_normal(i - 1);
                let b = seg_normal(i);
                let s = [a[0] + b[0], a[1] + b[1]];
                let l = s[0].hypot(s[1]).max(1e-9);
                [s[0] / l, s[1] / l]
            };
            left.push([pts[i][0] + nm[0] * half_width, pts[i][1] + nm[1] * half_width]);
            right.push([pts[i][0] - nm[0] * half_width, pts[i][1] - nm[1] * half_width]);
        }
        WorldGeom { pts: pts.to_vec(), cum, half_width, left_edge: left, right_edge: right }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_of(s);
        let t = (s - self.cum[i]) / (self.cum[i + 1] - self.cum[i]);
        [
            self.pts[i][0] + t * (self.pts[i + 1][0] - self.pts[i][0]),
            self.pts[i][1] + t * (self.pts[i + 1][1] - self.pts[i][1]),
        ]
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let i = self.segment_of(s.clamp(0.0, self.length()));
        let dx = self.pts[i + 1][0] - self.pts[i][0];
        let dy = self.pts[i + 1][1] - self.pts[i][1];
        dy.atan2(dx)
    }

    fn segment_of(&self, s: f64) -> usize {
        let mut i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i >= self.pts.len() - 1 {
            i = self.pts.len() - 2;
        }
        i
    }

    /// Closest point on the centerline: returns (arc length, signed lateral
    /// offset — positive to the left of travel).
    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..self.pts.len() - 1 {
            let a = self.pts[i];
            let b = self.pts[i + 1];
            let ab = [b[0] - a[0], b[1] - a[1]];
            let l2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / l2).clamp(0.0, 1.0);
            let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if d2 < best.0 {
                let l = l2.sqrt();
                let cross = (ab[0] * (p[1] - a[1]) - ab[1] * (p[0] - a[0])) / l;
                best = (d2, self.cum[i] + t * l, cross);
            }
        }
        (best.1, best.2)
    }

    /// Signed heading change of the route over `[s, s + ds]`, wrapped to pi.
    pub fn heading_change(&self, s: f64, ds: f64) -> f64 {
        wrap_angle(self.heading_at(s + ds) - self.heading_at(s))
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    } else if a < -std::f64::consts::PI {
        a += 2.0 * std::f64::consts::PI;
    }
    a
}

// ── Generation ─────────────────────────────────────────────────────────────

struct DiffKnobs {
    seg_turn: f64, // max |heading delta| per segment, radians
    half_width: f64,
    obst_lo: usize,
    obst_hi: usize,
    blocker_frac: f64, // fraction of obstacles allowed to intrude into the lane
    light_prob: f64,
}

fn knobs(d: Difficulty) -> DiffKnobs {
    let deg = std::f64::consts::PI / 180.0;
    match d {
        Difficulty::Easy => DiffKnobs { seg_turn: 5.0 * deg, half_width: 3.5, obst_lo: 0, obst_hi: 2, blocker_frac: 0.0, light_prob: 0.0 },
        Difficulty::Medium => DiffKnobs { seg_turn: 15.0 * deg, half_width: 3.0, obst_lo: 2, obst_hi: 4, blocker_frac: 0.0, light_prob: 0.3 },
        Difficulty::Hard => DiffKnobs { seg_turn: 30.0 * deg, half_width: 2.75, obst_lo: 4, obst_hi: 7, blocker_frac: 0.4, light_prob: 0.6 },
        Difficulty::Extreme => DiffKnobs { seg_turn: 45.0 * deg, half_width: 2.5, obst_lo: 6, obst_hi: 10, blocker_frac: 0.7, light_prob: 0.9 },
    }
}

/// Deterministic world from (seed, difficulty). The cumulative heading is
/// clamped to +-75 deg, which keeps the centerline x-monotone and therefore
/// free of self-intersections.
pub fn generate_world(seed: u64, difficulty: Difficulty) -> WorldSpec {
    let kn = knobs(difficulty);
    let didx = Difficulty::ALL.iter().position(|&d| d == difficulty).unwrap() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (didx.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    let max_cum = 75.0 * std::f64::consts::PI / 180.0;

    let n_seg = rng.gen_range(7..=9);
    let mut heading: f64 = 0.0;
    let mut pts = vec![[0.0, 0.0]];
    for i in 0..n_seg {
        if i > 0 {
            let delta = rng.gen_range(-kn.seg_turn..=kn.seg_turn);
            heading = (heading + delta).clamp(-max_cum, max_cum);
        }
        let len = rng.gen_range(8.0..12.0);
        let last = *pts.last().unwrap();
        pts.push([last[0] + len * heading.cos(), last[1] + len * heading.sin()]);
    }

    let geom = WorldGeom::from_polyline(&pts, kn.half_width);
    let route_len = geom.length();

    let n_obst = rng.gen_range(kn.obst_lo..=kn.obst_hi.max(kn.obst_lo));
    let mut obstacles = Vec::new();
    'place: for _ in 0..n_obst {
        for _attempt in 0..20 {
            let hx = rng.gen_range(0.3..0.9);
            let hy = rng.gen_range(0.3..0.9);
            let s = rng.gen_range(10.0..route_len - 4.0);
            let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let lat = match difficulty {
                Difficulty::Easy => side * rng.gen_range(11.5..18.0),
                _ => {
                    if rng.gen::<f64>() < kn.blocker_frac {
                        // Lane intruder; dead-center occasionally on extreme worlds.
                        if difficulty == Difficulty::Extreme && rng.gen::<f64>() < 0.25 {
                            0.0
                        } else {
                            side * rng.gen_range(kn.half_width - 0.7..kn.half_width)
                        }
                    } else {
                        side * rng.gen_range(kn.half_width + 0.4..kn.half_width + 3.0)
                    }
                }
            };
            let base = geom.point_at(s);
            let h = geom.heading_at(s);
            let o = Obstacle {
                cx: base[0] - lat * h.sin(),
                cy: base[1] + lat * h.cos(),
                hx,
                hy,
            };
            // Easy tier must keep a 10 m clear band around the whole route.
            if difficulty == Difficulty::Easy {
                let (_, l) = geom.project([o.cx, o.cy]);
                if l.abs() < 10.0 + o.radius() {
                    continue;
                }
            }
            let start = pts[0];
            if (o.cx - start[0]).hypot(o.cy - start[1]) < o.radius() + 6.0 {
                continue;
            }
            obstacles.push(o);
            continue 'place;
        }
    }

    let light = if rng.gen::<f64>() < kn.light_prob {
        Some(TrafficLight {
            stop_s: rng.gen_range(0.4 * route_len..0.7 * route_len),
            period: 8.0,
            red_frac: 0.4,
            offset: rng.gen_range(0.0..8.0),
        })
    } else {
        None
    };

    let world = WorldSpec {
        seed,
        difficulty,
        centerline: pts,
        half_width: kn.half_width,
        obstacles,
        light,
    };
    world.validate().expect("generated world must satisfy its own invariants");
    world
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let a = generate_world(42, Difficulty::Hard);
        let b = generate_world(42, Difficulty::Hard);
        assert_eq!(a, b);
        let c = generate_world(43, Difficulty::Hard);
        assert_ne!(a, c);
    }

    #[test]
    fn difficulty_changes_world_for_same_seed() {
        let a = generate_world(5, Difficulty::Easy);
        let b = generate_world(5, Difficulty::Extreme);
        assert_ne!(a.centerline, b.centerline);
    }

    #[test]
    fn easy_keeps_ten_meter_clearance() {
        for seed in 0..40 {
            let w = generate_world(seed, Difficulty::Easy);
            let g = WorldGeom::new(&w);
            for o in &w.obstacles {
                let (_, lat) = g.project([o.cx, o.cy]);
                assert!(lat.abs() >= 10.0 + o.radius(), "seed {} obstacle at lateral {}", seed, lat);
            }
        }
    }

    #[test]
    fn obstacle_count_grows_with_difficulty() {
        let mut avg = Vec::new();
        for d in Difficulty::ALL {
            let total: usize = (0..60).map(|s| generate_world(s, d).obstacles.len()).sum();
            avg.push(total as f64 / 60.0);
        }
        assert!(avg[0] <= avg[1] && avg[1] <= avg[2] && avg[2] <= avg[3], "averages {:?}", avg);
    }

    #[test]
    fn worlds_validate_across_seeds_and_tiers() {
        for d in Difficulty::ALL {
            for seed in 0..25 {
                let w = generate_world(seed, d);
                w.validate().unwrap();
                assert!(WorldGeom::new(&w).length() >= 50.0);
            }
        }
    }

    #[test]
    fn projection_recovers_on_route_points() {
        let w = generate_world(9, Difficulty::Medium);
        let g = WorldGeom::new(&w);
        for k in 0..20 {
            let s = g.length() * k as f64 / 20.0;
            let p = g.point_at(s);
            let (sp, lat) = g.project(p);
            assert!((sp - s).abs() < 1e-6 && lat.abs() < 1e-9);
        }
    }

    #[test]
    fn lateral_sign_is_positive_left() {
        let g = WorldGeom::from_polyline(&[[0.0, 0.0], [10.0, 0.0]], 3.0);
        let (_, lat) = g.project([5.0, 2.0]);
        assert!(lat > 0.0);
        let (_, lat) = g.project([5.0, -2.0]);
        assert!(lat < 0.0);
    }

    #[test]
    fn light_phase_cycles() {
        let l = TrafficLight { stop_s: 20.0, period: 8.0, red_frac: 0.4, offset: 0.0 };
        assert!(l.is_red(0.0) && l.is_red(3.1) && !l.is_red(3.3) && !l.is_red(7.9));
        assert!(l.is_red(8.1));
    }

    #[test]
    fn heading_change_sees_turns() {
        let g = WorldGeom::from_polyline(&[[0.0, 0.0], [10.0, 0.0], [15.0, 5.0]], 3.0);
        let d = g.heading_change(5.0, 10.0);
        assert!((d - std::f64::consts::FRAC_PI_4).abs() < 1e-9);
    }
}
