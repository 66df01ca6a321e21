//! Model hyperparameters and the named presets used across the workspace.

use serde::{Deserialize, Serialize};

use crate::rope::RopeConfig;
use crate::{ModelError, Result};

/// Frame-index lists at the 2 Hz logging cadence; index 0 is the current
/// frame, negatives are history, positives are prediction targets.
pub const STRIDE_SHORT: [i64; 2] = [0, 8];
pub const STRIDE_DEFAULT: [i64; 4] = [-3, 0, 4, 8];
pub const STRIDE_DENSE: [i64; 8] = [-3, -2, -1, 0, 2, 4, 6, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Cameras per frame, ordered left, front, right.
    pub n_views: usize,
    /// Raster patch grid; `s() = grid_h * grid_w` patches per view.
    pub grid_h: usize,
    pub grid_w: usize,
    /// Channels per patch.
    pub c_in: usize,
    /// Learnable scene queries per view.
    pub n_queries: usize,
    /// Encoder width.
    pub d_e: usize,
    /// Latent width carried by scene tokens and the world model.
    pub d_l: usize,
    /// Frozen geometry-feature width.
    pub d_g: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub wm_layers: usize,
    pub wm_heads: usize,
    pub td_layers: usize,
    pub td_heads: usize,
    /// FFN hidden width as a multiple of the block width.
    pub ffn_mult: usize,
    /// Candidate trajectories (one per command class).
    pub k_cands: usize,
    /// Poses per trajectory.
    pub n_traj: usize,
    /// Ordered frame indices consumed per sample.
    pub stride: Vec<i64>,
}

impl ModelConfig {
    /// Full desk-scale configuration.
    pub fn desk() -> Self {
        ModelConfig {
            n_views: 3,
            grid_h: 14,
            grid_w: 28,
            c_in: 5,
            n_queries: 16,
            d_e: 64,
            d_l: 32,
            d_g: 64,
            enc_layers: 2,
            enc_heads: 4,
            wm_layers: 2,
            wm_heads: 4,
            td_layers: 2,
            td_heads: 4,
            ffn_mult: 4,
            k_cands: 4,
            n_traj: 8,
            stride: STRIDE_DEFAULT.to_vec(),
        }
    }

    /// Reduced raster for fast end-to-end training runs.
    pub fn smoke() -> Self {
        ModelConfig { grid_h: 7, grid_w: 14, ..Self::desk() }
    }

    /// Minimal dimensions for gradient checks; small enough that central
    /// differences over every parameter stay cheap.
    pub fn tiny() -> Self {
        ModelConfig {
            n_views: 3,
            grid_h: 2,
            grid_w: 4,
            c_in: 5,
            n_queries: 2,
            d_e: 8,
            d_l: 8,
            d_g: 8,
            enc_layers: 1,
            enc_heads: 2,
            wm_layers: 1,
            wm_heads: 2,
            td_layers: 1,
            td_heads: 2,
            ffn_mult: 2,
            k_cands: 4,
            n_traj: 8,
            stride: vec![-3, 0, 4],
        }
    }

    /// Published-scale widths; not runnable on one core in reasonable time,
    /// kept so the shape arithmetic is exercised at full size.
    pub fn reference() -> Self {
        ModelConfig {
            n_views: 3,
            grid_h: 14,
            grid_w: 28,
            c_in: 5,
            n_queries: 16,
            d_e: 768,
            d_l: 256,
            d_g: 384,
            enc_layers: 4,
            enc_heads: 8,
            wm_layers: 4,
            wm_heads: 8,
            td_layers: 4,
            td_heads: 8,
            ffn_mult: 4,
            k_cands: 4,
            n_traj: 8,
            stride: STRIDE_DEFAULT.to_vec(),
        }
    }

    /// Patches per view.
    pub fn s(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Frames per sample.
    pub fn t(&self) -> usize {
        self.stride.len()
    }

    /// Tokens per frame block: scene tokens for every view plus the ego slot.
    pub fn b_tokens(&self) -> usize {
        self.n_views * self.n_queries + 1
    }

    /// Position of the current frame (index 0) within the stride.
    pub fn current_index(&self) -> usize {
        self.stride.iter().position(|&f| f == 0).expect("validated stride contains 0")
    }

    pub fn rope(&self) -> Result<RopeConfig> {
        RopeConfig::for_head_dim(self.d_l / self.wm_heads)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        if self.n_views == 0 || self.grid_h == 0 || self.grid_w == 0 || self.c_in == 0 {
            return fail("raster dimensions must be positive".into());
        }
        if self.n_queries == 0 {
            return fail("need at least one scene query per view".into());
        }
        if self.d_l > self.d_e {
            return fail(format!("latent width {} exceeds encoder width {}", self.d_l, self.d_e));
        }
        if self.enc_heads == 0 || self.d_e % self.enc_heads != 0 {
            return fail(format!("encoder width {} not divisible by {} heads", self.d_e, self.enc_heads));
        }
        for (who, heads) in [("world model", self.wm_heads), ("trajectory decoder", self.td_heads)] {
            if heads == 0 || self.d_l % heads != 0 {
                return fail(format!("{who}: latent width {} not divisible by {} heads", self.d_l, heads));
            }
        }
        if self.enc_layers == 0 || self.wm_layers == 0 || self.td_layers == 0 {
            return fail("all stacks need at least one layer".into());
        }
        if self.ffn_mult == 0 {
            return fail("ffn_mult must be positive".into());
        }
        if self.k_cands != worldgen::Command::COUNT {
            return fail(format!("need one candidate per command class, got {}", self.k_cands));
        }
        if self.n_traj < 2 {
            return fail("trajectories need at least two poses".into());
        }
        if self.stride.len() < 2 {
            return fail("stride must cover at least two frames".into());
        }
        if !self.stride.windows(2).all(|w| w[0] < w[1]) {
            return fail(format!("stride {:?} must be strictly increasing", self.stride));
        }
        if !self.stride.contains(&0) {
            return fail(format!("stride {:?} must contain the current frame 0", self.stride));
        }
        if self.stride.last() <= Some(&0) {
            return fail("stride needs at least one future frame".into());
        }
        self.rope()?;
        Ok(())
    }
}
