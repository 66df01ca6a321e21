//! Latent world model. Scene tokens and an embedded ego status form one
//! block per frame; learnable future queries then decode the next frames in
//! parallel under a block-causal mask, supervised against the frozen target
//! encoder. Ego heads read command, velocity and acceleration back out of
//! the predicted ego slots.

use numcore::{BoolMat, Graph, Tensor, Tid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use worldgen::EgoState;

use crate::attention::{decoder_block, linear, ln, register_decoder_block, register_linear, register_ln, Rope, INIT_STD};
use crate::config::ModelConfig;
use crate::encoder::EGO_FEAT;
use crate::params::{normal_init, Bound, ParamSet};
use crate::{ModelError, Result};

/// Seed of the frozen map used when raw geometry features are concatenated
/// into the context instead of distilled.
const CONCAT_MAP_SEED: u64 = 0xC0FF_EE;

/// One-hot command plus planar velocity and acceleration.
pub fn ego_feature(state: &EgoState) -> [f64; EGO_FEAT] {
    let mut f = [0.0; EGO_FEAT];
    f[state.command.index()] = 1.0;
    f[4] = state.v[0];
    f[5] = state.v[1];
    f[6] = state.a[0];
    f[7] = state.a[1];
    f
}

pub fn register_world_model<R: Rng>(ps: &mut ParamSet, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    let b = cfg.b_tokens();
    let rows = (cfg.t() - 1) * b;
    ps.add("wm.fq", normal_init(rng, vec![rows, cfg.d_l], INIT_STD), false)?;
    for i in 0..cfg.wm_layers {
        register_decoder_block(ps, rng, &format!("wm.blk{i}"), cfg.d_l, cfg.ffn_mult)?;
    }
    register_ln(ps, "wm.out.ln", cfg.d_l)?;
    register_linear(ps, rng, "wm.out.lin", cfg.d_l, cfg.d_l)?;
    for (head, width) in [("cmd", worldgen::Command::COUNT), ("vel", 2), ("acc", 2)] {
        register_linear(ps, rng, &format!("wm.{head}.l1"), cfg.d_l, cfg.d_l)?;
        register_linear(ps, rng, &format!("wm.{head}.l2"), cfg.d_l, width)?;
    }
    Ok(())
}

/// Stacks `[T, M, N, D_l]` scene tokens into `[T, M*N + 1, D_l]` frame
/// blocks, embedding each frame's ego status into the trailing slot.
pub fn aggregate(g: &mut Graph, b: &Bound, cfg: &ModelConfig, scene: Tid, egos: &[EgoState]) -> Result<Tid> {
    let sh = g.value(scene).shape.clone();
    if sh.len() != 4 || sh[1] != cfg.n_views || sh[2] != cfg.n_queries || sh[3] != cfg.d_l {
        return Err(ModelError::Config(format!(
            "scene tokens {sh:?} do not match [T, {}, {}, {}]",
            cfg.n_views, cfg.n_queries, cfg.d_l
        )));
    }
    let t = sh[0];
    if egos.len() != t {
        return Err(ModelError::Config(format!("{} ego states for {} frames", egos.len(), t)));
    }
    let sc = g.reshape(scene, vec![t, cfg.n_views * cfg.n_queries, cfg.d_l])?;
    let feats: Vec<f64> = egos.iter().flat_map(|e| ego_feature(e)).collect();
    let ef = g.constant(Tensor::from_vec(vec![t, EGO_FEAT], feats)?)?;
    let ee = linear(g, b, "enc.ego", ef)?;
    let ee = g.reshape(ee, vec![t, 1, cfg.d_l])?;
    Ok(g.concat(&[sc, ee], 1)?)
}

/// Teacher-forcing visibility over `t` frame blocks of `b` tokens: full
/// attention within a block, earlier blocks visible, later blocks hidden.
pub fn build_tf_mask(t: usize, b: usize) -> BoolMat {
    let n = t * b;
    BoolMat::from_fn(n, n, |i, j| j / b <= i / b)
}

/// Rotary coordinates for one frame block: scene slots carry their view and
/// query index, the ego slot sits at the sentinel view `M`.
fn slot_coords(cfg: &ModelConfig) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(cfg.b_tokens());
    for m in 0..cfg.n_views {
        for n in 0..cfg.n_queries {
            out.push([m as f64, n as f64]);
        }
    }
    out.push([cfg.n_views as f64, 0.0]);
    out
}

fn frame_coords(cfg: &ModelConfig, frames: &[i64]) -> Vec<[f64; 3]> {
    let slots = slot_coords(cfg);
    let mut out = Vec::with_capacity(frames.len() * slots.len());
    for &f in frames {
        for s in &slots {
            out.push([f as f64, s[0], s[1]]);
        }
    }
    out
}

/// Frozen geometry tokens appended to the world-model context for the
/// concatenation ablation.
pub struct ExtraCtx {
    /// `[T-1, M*S, D_l]`, one block per context frame.
    pub tokens: Tensor,
    pub coords: Vec<[f64; 3]>,
}

impl ExtraCtx {
    /// Maps raw `[T, M, S, D_g]` teacher features through a fixed random
    /// projection; only the context frames (all but the last) are kept.
    pub fn from_teacher(cfg: &ModelConfig, teacher: &Tensor) -> Result<ExtraCtx> {
        let t = cfg.t();
        let (m, s) = (cfg.n_views, cfg.s());
        if teacher.shape != [t, m, s, cfg.d_g] {
            return Err(ModelError::Config(format!(
                "teacher {:?} does not match [{t}, {m}, {s}, {}]",
                teacher.shape, cfg.d_g
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(CONCAT_MAP_SEED);
        let dist = Normal::new(0.0, 1.0 / (cfg.d_g as f64).sqrt()).expect("finite std");
        let map: Vec<f64> = (0..cfg.d_g * cfg.d_l).map(|_| dist.sample(&mut rng)).collect();

        let frames = t - 1;
        let mut data = vec![0.0; frames * m * s * cfg.d_l];
        for f in 0..frames {
            for v in 0..m * s {
                let src = ((f * m * s) + v) * cfg.d_g;
                let dst = ((f * m * s) + v) * cfg.d_l;
                for o in 0..cfg.d_l {
                    data[dst + o] = (0..cfg.d_g)
                        .map(|i| teacher.data[src + i] * map[i * cfg.d_l + o])
                        .sum();
                }
            }
        }
        let mut coords = Vec::with_capacity(frames * m * s);
        for f in 0..frames {
            for mv in 0..m {
                for p in 0..s {
                    coords.push([cfg.stride[f] as f64, mv as f64, p as f64]);
                }
            }
        }
        Ok(ExtraCtx {
            tokens: Tensor::from_vec(vec![frames, m * s, cfg.d_l], data)?,
            coords,
        })
    }
}

/// Predicts the world status of frames 1..T from the aggregated status of
/// frames 0..T-1. Queries for one target frame attend only among themselves
/// and cross-attend to strictly earlier context blocks, so all targets
/// decode in one pass yet match a frame-by-frame decode.
pub fn predict_future(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    world: Tid,
    extra: Option<&ExtraCtx>,
) -> Result<Tid> {
    let sh = g.value(world).shape.clone();
    let bt = cfg.b_tokens();
    let t = cfg.t();
    if sh != [t, bt, cfg.d_l] {
        return Err(ModelError::Config(format!(
            "world status {sh:?} does not match [{t}, {bt}, {}]",
            cfg.d_l
        )));
    }
    if t < 2 {
        return Err(ModelError::Config("need at least two frames to predict".into()));
    }
    let tc = t - 1;
    let rope = cfg.rope()?;

    let ctx = g.slice(world, 0, 0, tc)?;
    let mut ctx = g.reshape(ctx, vec![tc * bt, cfg.d_l])?;
    let mut k_coords = frame_coords(cfg, &cfg.stride[..tc]);
    let q_coords = frame_coords(cfg, &cfg.stride[1..]);

    let self_mask = crate::attention::block_diag_mask(tc, bt);
    let mut cross_mask = build_tf_mask(tc, bt);
    if let Some(ex) = extra {
        let per = ex.tokens.shape[1];
        if ex.tokens.shape[0] != tc || ex.tokens.shape[2] != cfg.d_l {
            return Err(ModelError::Config(format!(
                "extra context {:?} does not match [{tc}, _, {}]",
                ex.tokens.shape, cfg.d_l
            )));
        }
        let flat = g.constant(ex.tokens.clone())?;
        let flat = g.reshape(flat, vec![tc * per, cfg.d_l])?;
        ctx = g.concat(&[ctx, flat], 0)?;
        k_coords.extend_from_slice(&ex.coords);
        cross_mask = BoolMat::from_fn(tc * bt, tc * (bt + per), |i, j| {
            let cf = if j < tc * bt { j / bt } else { (j - tc * bt) / per };
            cf <= i / bt
        });
    }

    let mut x = b.id("wm.fq");
    for l in 0..cfg.wm_layers {
        x = decoder_block(
            g,
            b,
            &format!("wm.blk{l}"),
            cfg.wm_heads,
            x,
            ctx,
            &self_mask,
            &cross_mask,
            Some(&Rope { cfg: rope, q: &q_coords, k: &q_coords }),
            Some(&Rope { cfg: rope, q: &q_coords, k: &k_coords }),
        )?;
    }
    let x = ln(g, b, "wm.out.ln", x)?;
    let x = linear(g, b, "wm.out.lin", x)?;
    Ok(g.reshape(x, vec![tc, bt, cfg.d_l])?)
}

/// MSE against target world status produced by the frozen encoder copy.
pub fn wm_loss(g: &mut Graph, pred: Tid, target: Tid) -> Result<Tid> {
    if g.value(pred).shape != g.value(target).shape {
        return Err(ModelError::Config(format!(
            "prediction {:?} vs target {:?}",
            g.value(pred).shape,
            g.value(target).shape
        )));
    }
    Ok(g.mse_loss(pred, target)?)
}

pub struct EgoPreds {
    /// Pre-softmax command scores, the quantity the loss consumes.
    pub cmd_logits: Tid,
    /// `[T-1, 4]`, rows on the simplex.
    pub cmd: Tid,
    /// `[T-1, 2]` velocity.
    pub vel: Tid,
    /// `[T-1, 2]` acceleration.
    pub acc: Tid,
}

/// Decodes ego state from the predicted ego slot of every future frame.
pub fn ego_heads(g: &mut Graph, b: &Bound, cfg: &ModelConfig, future: Tid) -> Result<EgoPreds> {
    let sh = g.value(future).shape.clone();
    let bt = cfg.b_tokens();
    if sh.len() != 3 || sh[1] != bt || sh[2] != cfg.d_l {
        return Err(ModelError::Config(format!("future status {sh:?} does not match [_, {bt}, {}]", cfg.d_l)));
    }
    let slots = g.slice(future, 1, bt - 1, 1)?;
    let slots = g.reshape(slots, vec![sh[0], cfg.d_l])?;
    let head = |g: &mut Graph, name: &str| -> Result<Tid> {
        let w1 = b.id(&format!("wm.{name}.l1.w"));
        let b1 = b.id(&format!("wm.{name}.l1.b"));
        let w2 = b.id(&format!("wm.{name}.l2.w"));
        let b2 = b.id(&format!("wm.{name}.l2.b"));
        Ok(g.mlp_forward(slots, w1, b1, w2, b2)?)
    };
    let cmd_logits = head(g, "cmd")?;
    let cmd = g.softmax(cmd_logits)?;
    let vel = head(g, "vel")?;
    let acc = head(g, "acc")?;
    Ok(EgoPreds { cmd_logits, cmd, vel, acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode;
    use worldgen::Command;

    fn tiny() -> (ModelConfig, ParamSet) {
        let cfg = ModelConfig::tiny();
        let ps = crate::build_params(&cfg, 3).unwrap();
        (cfg, ps)
    }

    fn ego(cmd: Command, vx: f64) -> EgoState {
        EgoState { x: 0.0, y: 0.0, theta: 0.0, v: [vx, 0.1], a: [0.4, -0.2], command: cmd }
    }

    fn random_scene(cfg: &ModelConfig, t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = t * cfg.n_views * cfg.n_queries * cfg.d_l;
        Tensor::from_vec(
            vec![t, cfg.n_views, cfg.n_queries, cfg.d_l],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn random_world(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.t() * cfg.b_tokens() * cfg.d_l;
        Tensor::from_vec(
            vec![cfg.t(), cfg.b_tokens(), cfg.d_l],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ego_feature_layout() {
        let f = ego_feature(&ego(Command::Right, 3.0));
        assert_eq!(f, [0.0, 0.0, 1.0, 0.0, 3.0, 0.1, 0.4, -0.2]);
    }

    #[test]
    fn aggregate_places_the_ego_slot_last() {
        let (cfg, ps) = tiny();
        let scene = random_scene(&cfg, 2, 7);
        let egos = [ego(Command::Left, 2.0), ego(Command::Straight, 4.0)];
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let sc = g.constant(scene.clone()).unwrap();
        let world = aggregate(&mut g, &b, &cfg, sc, &egos).unwrap();
        let bt = cfg.b_tokens();
        assert_eq!(g.value(world).shape, vec![2, bt, cfg.d_l]);

        // The ego slot must equal the plain linear map of the feature vector.
        let w = ps.get("enc.ego.w").unwrap().value.data.clone();
        let bias = ps.get("enc.ego.b").unwrap().value.data.clone();
        for (f, e) in egos.iter().enumerate() {
            let feat = ego_feature(e);
            for o in 0..cfg.d_l {
                let want = bias[o] + (0..EGO_FEAT).map(|i| feat[i] * w[i * cfg.d_l + o]).sum::<f64>();
                let got = g.value(world).data[(f * bt + bt - 1) * cfg.d_l + o];
                assert!((got - want).abs() < 1e-12);
            }
        }
        // Scene slots pass through untouched.
        let flat = &g.value(world).data;
        for f in 0..2 {
            for s in 0..bt - 1 {
                for o in 0..cfg.d_l {
                    let src = (f * (bt - 1) + s) * cfg.d_l + o;
                    assert_eq!(flat[(f * bt + s) * cfg.d_l + o], scene.data[src]);
                }
            }
        }
    }

    #[test]
    fn swapping_frames_swaps_blocks_exactly() {
        let (cfg, ps) = tiny();
        let scene = random_scene(&cfg, 2, 8);
        let mut swapped = scene.clone();
        let half = scene.numel() / 2;
        swapped.data.rotate_left(half);
        let egos = [ego(Command::Left, 1.0), ego(Command::Right, 5.0)];
        let rev = [egos[1].clone(), egos[0].clone()];

        let run = |scene: &Tensor, egos: &[EgoState]| {
            let mut g = Graph::new();
            let b = ps.bind(&mut g).unwrap();
            let sc = g.constant(scene.clone()).unwrap();
            let w = aggregate(&mut g, &b, &cfg, sc, egos).unwrap();
            g.value(w).data.clone()
        };
        let a = run(&scene, &egos);
        let c = run(&swapped, &rev);
        let block = a.len() / 2;
        assert_eq!(&a[..block], &c[block..]);
        assert_eq!(&a[block..], &c[..block]);
    }

    #[test]
    fn tf_mask_structure() {
        assert!(build_tf_mask(1, 4).row(2).iter().all(|&v| v));
        let m = build_tf_mask(2, 3);
        for i in 0..3 {
            for j in 0..6 {
                assert_eq!(m.get(i, j), j < 3, "row {i} col {j}");
            }
        }
        for i in 3..6 {
            for j in 0..6 {
                assert!(m.get(i, j));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (t, b) = (rng.gen_range(1..=4), rng.gen_range(1..=5));
            let m = build_tf_mask(t, b);
            for i in 0..t * b {
                for j in 0..t * b {
                    assert_eq!(m.get(i, j), j / b <= i / b);
                }
            }
        }
    }

    #[test]
    fn predict_future_has_contract_shape() {
        let (cfg, ps) = tiny();
        let world = random_world(&cfg, 9);
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let w = g.constant(world).unwrap();
        let f = predict_future(&mut g, &b, &cfg, w, None).unwrap();
        assert_eq!(g.value(f).shape, vec![cfg.t() - 1, cfg.b_tokens(), cfg.d_l]);
    }

    #[test]
    fn noising_late_context_leaves_early_targets_alone() {
        let (cfg, ps) = tiny();
        let world = random_world(&cfg, 10);
        let mut noised = world.clone();
        let bt = cfg.b_tokens();
        // Corrupt every frame after the first; the first target may only see
        // frame 0.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for v in noised.data[bt * cfg.d_l..].iter_mut() {
            *v = rng.gen_range(-10.0..10.0);
        }
        let run = |w: &Tensor| {
            let mut g = Graph::new();
            let b = ps.bind(&mut g).unwrap();
            let wt = g.constant(w.clone()).unwrap();
            let f = predict_future(&mut g, &b, &cfg, wt, None).unwrap();
            g.value(f).data.clone()
        };
        let a = run(&world);
        let c = run(&noised);
        let first = bt * cfg.d_l;
        for i in 0..first {
            assert!((a[i] - c[i]).abs() < 1e-9, "causality broken at {i}");
        }
        assert!(a[first..].iter().zip(&c[first..]).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    #[test]
    fn parallel_decode_equals_frame_by_frame_decode() {
        let (cfg, ps) = tiny();
        let world = random_world(&cfg, 12);
        let bt = cfg.b_tokens();

        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let wt = g.constant(world.clone()).unwrap();
        let f = predict_future(&mut g, &b, &cfg, wt, None).unwrap();
        let parallel = g.value(f).data.clone();

        for i in 0..cfg.t() - 1 {
            // Truncate the stride and the query table to frames 0..=i+1, then
            // decode that single horizon.
            let mut cfg_i = cfg.clone();
            cfg_i.stride = cfg.stride[..i + 2].to_vec();
            let mut ps_i = ps.clone();
            let fq = ps.get("wm.fq").unwrap().value.clone();
            let rows = (i + 1) * bt;
            ps_i.get_mut("wm.fq").unwrap().value =
                Tensor::from_vec(vec![rows, cfg.d_l], fq.data[..rows * cfg.d_l].to_vec())
                    .unwrap()
                    .with_grad();
            let trunc = Tensor::from_vec(
                vec![i + 2, bt, cfg.d_l],
                world.data[..(i + 2) * bt * cfg.d_l].to_vec(),
            )
            .unwrap();

            let mut g = Graph::new();
            let bi = ps_i.bind(&mut g).unwrap();
            let wt = g.constant(trunc).unwrap();
            let f = predict_future(&mut g, &bi, &cfg_i, wt, None).unwrap();
            let seq = g.value(f).data.clone();
            let block = &parallel[i * bt * cfg.d_l..(i + 1) * bt * cfg.d_l];
            let seq_block = &seq[i * bt * cfg.d_l..];
            for (x, y) in block.iter().zip(seq_block) {
                assert!((x - y).abs() < 1e-9, "frame {i} diverges");
            }
        }
    }

    #[test]
    fn wm_loss_trivial_and_oracle_cases() {
        let (cfg, ps) = tiny();
        let world = random_world(&cfg, 13);
        let mut g = Graph::new();
        let _b = ps.bind(&mut g).unwrap();
        let a = g.constant(world.clone()).unwrap();
        let same = g.constant(world.clone()).unwrap();
        let z = wm_loss(&mut g, a, same).unwrap();
        assert_eq!(g.value(z).item().unwrap(), 0.0);

        let shifted = g.add_scalar(same, 1.0).unwrap();
        let one = wm_loss(&mut g, a, shifted).unwrap();
        assert!((g.value(one).item().unwrap() - 1.0).abs() < 1e-12);

        let other = random_world(&cfg, 14);
        let o = g.constant(other.clone()).unwrap();
        let l = wm_loss(&mut g, a, o).unwrap();
        let want: f64 = world
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / world.numel() as f64;
        assert!((g.value(l).item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ego_heads_shapes_and_simplex_rows() {
        let (cfg, ps) = tiny();
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let world = random_world(&cfg, 15);
        let wt = g.constant(world).unwrap();
        let f = predict_future(&mut g, &b, &cfg, wt, None).unwrap();
        let preds = ego_heads(&mut g, &b, &cfg, f).unwrap();
        let tc = cfg.t() - 1;
        assert_eq!(g.value(preds.cmd).shape, vec![tc, 4]);
        assert_eq!(g.value(preds.vel).shape, vec![tc, 2]);
        assert_eq!(g.value(preds.acc).shape, vec![tc, 2]);
        for row in g.value(preds.cmd).data.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ego_loss_gradient_reaches_the_scene_queries() {
        let (cfg, ps) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n = cfg.t() * cfg.n_views * cfg.s() * cfg.c_in;
        let inp = Tensor::from_vec(
            vec![cfg.t(), cfg.n_views, cfg.s(), cfg.c_in],
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let egos: Vec<EgoState> = (0..cfg.t()).map(|i| ego(Command::Straight, i as f64)).collect();

        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let (scene, _) = encode(&mut g, &b, &cfg, &inp).unwrap();
        let world = aggregate(&mut g, &b, &cfg, scene, &egos).unwrap();
        let fut = predict_future(&mut g, &b, &cfg, world, None).unwrap();
        let preds = ego_heads(&mut g, &b, &cfg, fut).unwrap();
        let loss = g.cross_entropy_logits(preds.cmd_logits, &vec![1; cfg.t() - 1]).unwrap();
        g.backward(loss).unwrap();
        let gq = b.grad(&g, "enc.query").expect("gradient must reach the encoder");
        assert!(gq.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn frozen_target_path_collects_no_gradients() {
        let (cfg, ps) = tiny();
        let shadow = crate::encoder_shadow(&ps);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = cfg.t() * cfg.n_views * cfg.s() * cfg.c_in;
        let inp = Tensor::from_vec(
            vec![cfg.t(), cfg.n_views, cfg.s(), cfg.c_in],
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let egos: Vec<EgoState> = (0..cfg.t()).map(|_| ego(Command::Straight, 2.0)).collect();

        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let sb = shadow.bind(&mut g).unwrap();
        let (scene, _) = encode(&mut g, &b, &cfg, &inp).unwrap();
        let world = aggregate(&mut g, &b, &cfg, scene, &egos).unwrap();
        let fut = predict_future(&mut g, &b, &cfg, world, None).unwrap();

        let (tscene, _) = encode(&mut g, &sb, &cfg, &inp).unwrap();
        let tworld = aggregate(&mut g, &sb, &cfg, tscene, &egos).unwrap();
        let tfut = g.slice(tworld, 0, 1, cfg.t() - 1).unwrap();
        let loss = wm_loss(&mut g, fut, tfut).unwrap();
        g.backward(loss).unwrap();

        assert!(b.grad(&g, "enc.patch.w").is_some(), "online path trains");
        assert!(sb.grad(&g, "enc.patch.w").is_none(), "shadow path must stay frozen");
    }

    #[test]
    fn concat_context_is_deterministic_and_changes_the_prediction() {
        let (cfg, ps) = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let n = cfg.t() * cfg.n_views * cfg.s() * cfg.d_g;
        let teacher = Tensor::from_vec(
            vec![cfg.t(), cfg.n_views, cfg.s(), cfg.d_g],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let ex1 = ExtraCtx::from_teacher(&cfg, &teacher).unwrap();
        let ex2 = ExtraCtx::from_teacher(&cfg, &teacher).unwrap();
        assert_eq!(ex1.tokens.data, ex2.tokens.data, "frozen map must not drift");
        assert_eq!(ex1.tokens.shape, vec![cfg.t() - 1, cfg.n_views * cfg.s(), cfg.d_l]);

        let world = random_world(&cfg, 19);
        let run = |extra: Option<&ExtraCtx>| {
            let mut g = Graph::new();
            let b = ps.bind(&mut g).unwrap();
            let wt = g.constant(world.clone()).unwrap();
            let f = predict_future(&mut g, &b, &cfg, wt, extra).unwrap();
            g.value(f).data.clone()
        };
        let plain = run(None);
        let with = run(Some(&ex1));
        assert_eq!(plain.len(), with.len(), "output shape is unchanged");
        assert!(plain.iter().zip(&with).any(|(a, c)| (a - c).abs() > 1e-9));
    }
}
