//! Command-conditioned trajectory decoder. A fixed bank of queries — one
//! block per command class — cross-attends to the current frame's world
//! status; the block matching the issued command becomes the output
//! trajectory. Candidates never attend across blocks, so supervision of the
//! selected candidate leaves the others' query rows untouched.

use numcore::{BoolMat, Graph, Tensor, Tid};
use rand::Rng;
use worldgen::{Command, Trajectory};

use crate::attention::{block_diag_mask, decoder_block, linear, ln, register_decoder_block, register_linear, register_ln, INIT_STD};
use crate::config::ModelConfig;
use crate::params::{normal_init, Bound, ParamSet};
use crate::{ModelError, Result};

pub fn register_traj_decoder<R: Rng>(ps: &mut ParamSet, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    let rows = cfg.k_cands * cfg.n_traj;
    ps.add("td.query", normal_init(rng, vec![rows, cfg.d_l], INIT_STD), false)?;
    for i in 0..cfg.td_layers {
        register_decoder_block(ps, rng, &format!("td.blk{i}"), cfg.d_l, cfg.ffn_mult)?;
    }
    register_ln(ps, "td.final", cfg.d_l)?;
    register_linear(ps, rng, "td.head", cfg.d_l, 3)
}

/// Decodes `[K, n_p, 3]` candidate poses from one frame's context tokens.
/// `world_t` may be the compressed frame block or, with compression ablated,
/// the frame's raw patch tokens — any `[L, D_l]` context works.
pub fn decode_candidates(g: &mut Graph, b: &Bound, cfg: &ModelConfig, world_t: Tid) -> Result<Tid> {
    let sh = g.value(world_t).shape.clone();
    if sh.len() != 2 || sh[1] != cfg.d_l {
        return Err(ModelError::Config(format!("frame context {sh:?} does not match [_, {}]", cfg.d_l)));
    }
    let rows = cfg.k_cands * cfg.n_traj;
    let self_mask = block_diag_mask(cfg.k_cands, cfg.n_traj);
    let cross_mask = BoolMat::all_true(rows, sh[0]);
    let mut x = b.id("td.query");
    for i in 0..cfg.td_layers {
        x = decoder_block(
            g,
            b,
            &format!("td.blk{i}"),
            cfg.td_heads,
            x,
            world_t,
            &self_mask,
            &cross_mask,
            None,
            None,
        )?;
    }
    let x = ln(g, b, "td.final", x)?;
    let x = linear(g, b, "td.head", x)?;
    Ok(g.reshape(x, vec![cfg.k_cands, cfg.n_traj, 3])?)
}

/// Picks the candidate at the command's index.
pub fn select(candidates: &Tensor, command: Command) -> Result<Trajectory> {
    if candidates.rank() != 3 || candidates.shape[2] != 3 {
        return Err(ModelError::Config(format!("candidates {:?} not [K, n_p, 3]", candidates.shape)));
    }
    let k = command.index();
    if k >= candidates.shape[0] {
        return Err(ModelError::Config(format!("command index {k} outside {} candidates", candidates.shape[0])));
    }
    let n = candidates.shape[1];
    let base = k * n * 3;
    let poses = (0..n)
        .map(|i| {
            let o = base + i * 3;
            [candidates.data[o], candidates.data[o + 1], candidates.data[o + 2]]
        })
        .collect();
    Ok(Trajectory { poses })
}

/// Mean absolute error between the command-selected candidate and the expert
/// plan; the other candidates contribute nothing.
pub fn traj_loss(g: &mut Graph, candidates: Tid, expert: &Trajectory, command: Command) -> Result<Tid> {
    let sh = g.value(candidates).shape.clone();
    if sh.len() != 3 || sh[2] != 3 {
        return Err(ModelError::Config(format!("candidates {sh:?} not [K, n_p, 3]")));
    }
    if expert.poses.len() != sh[1] {
        return Err(ModelError::Config(format!(
            "expert has {} poses, decoder emits {}",
            expert.poses.len(),
            sh[1]
        )));
    }
    let picked = g.slice(candidates, 0, command.index(), 1)?;
    let picked = g.reshape(picked, vec![sh[1], 3])?;
    let target: Vec<f64> = expert.poses.iter().flatten().copied().collect();
    let want = g.constant(Tensor::from_vec(vec![sh[1], 3], target)?)?;
    Ok(g.l1_loss(picked, want)?)
}
