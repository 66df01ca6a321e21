//! Rotary position application over three coordinate axes. The head
//! dimension is split into a temporal, a view and a token-index section,
//! each rotated by its own base frequency; dot products between rotated
//! vectors then depend only on per-axis coordinate differences.

use numcore::{Graph, Result as NumResult, Tid};

use crate::{ModelError, Result};

pub const BASE_T: f64 = 50.0;
pub const BASE_M: f64 = 10.0;
pub const BASE_N: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeConfig {
    pub d_t: usize,
    pub d_m: usize,
    pub d_n: usize,
    pub base_t: f64,
    pub base_m: f64,
    pub base_n: f64,
}

fn floor_even(x: usize) -> usize {
    x - x % 2
}

impl RopeConfig {
    /// Splits a head dimension roughly 3:1:4 across the axes, keeping every
    /// section even and at least one pair for the temporal and view axes.
    /// The token-index section takes the remainder and may be empty for very
    /// narrow heads.
    pub fn for_head_dim(d_h: usize) -> Result<Self> {
        if d_h == 0 || d_h % 2 != 0 {
            return Err(ModelError::Config(format!("head dim {d_h} must be positive and even")));
        }
        let d_t = floor_even(3 * d_h / 8).max(2);
        let d_m = floor_even(d_h / 8).max(2);
        if d_t + d_m > d_h {
            return Err(ModelError::Config(format!("head dim {d_h} too narrow to split across axes")));
        }
        Ok(RopeConfig {
            d_t,
            d_m,
            d_n: d_h - d_t - d_m,
            base_t: BASE_T,
            base_m: BASE_M,
            base_n: BASE_N,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_t + self.d_m + self.d_n
    }

    /// Per-pair rotation angles for one token at coordinates `(t, m, n)`;
    /// pair `i` of a section of width `d` turns by `pos * base^(-2i/d)`.
    fn angles(&self, coord: [f64; 3], out: &mut Vec<f64>) {
        for (d, base, pos) in [
            (self.d_t, self.base_t, coord[0]),
            (self.d_m, self.base_m, coord[1]),
            (self.d_n, self.base_n, coord[2]),
        ] {
            for i in 0..d / 2 {
                out.push(pos * base.powf(-2.0 * i as f64 / d as f64));
            }
        }
    }

    /// Cosine/sine tables for a row of tokens, tiled across `heads` so they
    /// line up with a `[L, heads * head_dim]` projection layout.
    pub fn tables(&self, heads: usize, coords: &[[f64; 3]]) -> (Vec<f64>, Vec<f64>) {
        let half = self.head_dim() / 2;
        let mut cos = Vec::with_capacity(coords.len() * heads * half);
        let mut sin = Vec::with_capacity(coords.len() * heads * half);
        let mut angles = Vec::with_capacity(half);
        for &c in coords {
            angles.clear();
            self.angles(c, &mut angles);
            for _ in 0..heads {
                for &a in &angles {
                    cos.push(a.cos());
                    sin.push(a.sin());
                }
            }
        }
        (cos, sin)
    }

    /// Rotates `x: [L, heads * head_dim]` in place on the tape, one table row
    /// per token shared across heads.
    pub fn apply(&self, g: &mut Graph, x: Tid, heads: usize, coords: &[[f64; 3]]) -> NumResult<Tid> {
        let (cos, sin) = self.tables(heads, coords);
        g.rotate_pairs(x, &cos, &sin, coords.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use numcore::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_keeps_three_to_one_to_four_ratio() {
        assert_eq!(RopeConfig::for_head_dim(8).map(|c| (c.d_t, c.d_m, c.d_n)).unwrap(), (2, 2, 4));
        assert_eq!(RopeConfig::for_head_dim(16).map(|c| (c.d_t, c.d_m, c.d_n)).unwrap(), (6, 2, 8));
        assert_eq!(RopeConfig::for_head_dim(32).map(|c| (c.d_t, c.d_m, c.d_n)).unwrap(), (12, 4, 16));
        assert_eq!(RopeConfig::for_head_dim(4).map(|c| (c.d_t, c.d_m, c.d_n)).unwrap(), (2, 2, 0));
        assert!(RopeConfig::for_head_dim(2).is_err());
        assert!(RopeConfig::for_head_dim(7).is_err());
    }

    #[test]
    fn zero_coordinates_are_an_exact_identity() {
        let cfg = RopeConfig::for_head_dim(8).unwrap();
        let mut g = Graph::new();
        let x = Tensor::from_vec(vec![3, 16], (0..48).map(|i| 0.1 * i as f64 - 2.0).collect()).unwrap();
        let id = g.constant(x.clone()).unwrap();
        let y = cfg.apply(&mut g, id, 2, &[[0.0; 3]; 3]).unwrap();
        assert_eq!(g.value(y).data, x.data);
    }

    #[test]
    fn first_pair_of_the_temporal_section_turns_by_the_raw_coordinate() {
        // Pair 0 has frequency base^0 = 1, so t = 1 rotates by exactly 1 rad.
        let cfg = RopeConfig::for_head_dim(8).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1, 8], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        let y = cfg.apply(&mut g, x, 1, &[[1.0, 0.0, 0.0]]).unwrap();
        let v = &g.value(y).data;
        assert!((v[0] - 1.0f64.cos()).abs() < 1e-15);
        assert!((v[1] - 1.0f64.sin()).abs() < 1e-15);
        assert!(v[2..].iter().all(|&z| z == 0.0));
    }

    #[test]
    fn dot_products_depend_on_coordinate_differences_only() {
        let cfg = RopeConfig::for_head_dim(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..30 {
            let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c1 = [rng.gen_range(-4.0..4.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..16.0)];
            let c2 = [rng.gen_range(-4.0..4.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..16.0)];
            let axis = trial % 3;
            let mut s1 = c1;
            let mut s2 = c2;
            let delta = rng.gen_range(-5.0..5.0);
            s1[axis] += delta;
            s2[axis] += delta;
            let dot = |a: [f64; 3], b: [f64; 3]| -> f64 {
                let mut g = Graph::new();
                let qt = g.constant(Tensor::from_vec(vec![1, 8], q.clone()).unwrap()).unwrap();
                let kt = g.constant(Tensor::from_vec(vec![1, 8], k.clone()).unwrap()).unwrap();
                let qr = cfg.apply(&mut g, qt, 1, &[a]).unwrap();
                let kr = cfg.apply(&mut g, kt, 1, &[b]).unwrap();
                g.value(qr).data.iter().zip(&g.value(kr).data).map(|(x, y)| x * y).sum()
            };
            assert!((dot(c1, c2) - dot(s1, s2)).abs() < 1e-9, "axis {axis} shift changed the logit");
        }
    }

    #[test]
    fn tables_tile_per_head() {
        let cfg = RopeConfig::for_head_dim(4).unwrap();
        let (cos, _) = cfg.tables(3, &[[2.0, 1.0, 0.0]]);
        assert_eq!(cos.len(), 3 * 2);
        assert_eq!(&cos[0..2], &cos[2..4]);
        assert_eq!(&cos[0..2], &cos[4..6]);
    }
}
