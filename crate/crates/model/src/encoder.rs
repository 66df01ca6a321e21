//! Scene encoder: learnable queries are prepended to embedded patch tokens,
//! a bidirectional transformer mixes them, and a final projection emits both
//! the compressed scene tokens and the per-patch tokens. The alignment loss
//! pulls projected patch tokens toward frozen geometry features.

use numcore::{BoolMat, Graph, Tensor, Tid};
use rand::Rng;

use crate::attention::{encoder_block, linear, ln, register_encoder_block, register_linear, register_ln, INIT_STD, LN_EPS};
use crate::config::ModelConfig;
use crate::params::{normal_init, Bound, ParamSet};
use crate::{ModelError, Result};

/// Width of the ego feature vector: one-hot command, velocity, acceleration.
pub const EGO_FEAT: usize = 8;

pub fn register_encoder<R: Rng>(ps: &mut ParamSet, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    register_linear(ps, rng, "enc.patch", cfg.c_in, cfg.d_e)?;
    ps.add("enc.pos", normal_init(rng, vec![cfg.s(), cfg.d_e], INIT_STD), false)?;
    ps.add("enc.query", normal_init(rng, vec![cfg.n_queries, cfg.d_e], INIT_STD), false)?;
    for i in 0..cfg.enc_layers {
        register_encoder_block(ps, rng, &format!("enc.blk{i}"), cfg.d_e, cfg.ffn_mult)?;
    }
    register_ln(ps, "enc.final", cfg.d_e)?;
    register_linear(ps, rng, "enc.proj", cfg.d_e, cfg.d_l)?;
    register_linear(ps, rng, "enc.ego", EGO_FEAT, cfg.d_l)?;
    register_linear(ps, rng, "enc.align", cfg.d_l, cfg.d_g)?;
    Ok(())
}

fn check_input(cfg: &ModelConfig, inputs: &Tensor) -> Result<usize> {
    let want_tail = [cfg.n_views, cfg.s(), cfg.c_in];
    if inputs.rank() != 4 || inputs.shape[1..] != want_tail {
        return Err(ModelError::Config(format!(
            "encoder input {:?} does not match [T, {}, {}, {}]",
            inputs.shape, want_tail[0], want_tail[1], want_tail[2]
        )));
    }
    Ok(inputs.shape[0])
}

/// One pass over `[T, M, S, C]` rasters. Every (frame, view) pair is encoded
/// independently; the scene-token and patch-token outputs share the final
/// projection.
pub fn encode(g: &mut Graph, b: &Bound, cfg: &ModelConfig, inputs: &Tensor) -> Result<(Tid, Tid)> {
    let (scene, image, _) = encode_inner(g, b, cfg, inputs, false)?;
    Ok((scene, image))
}

/// As `encode`, but also returns the last block's per-head attention nodes,
/// each shaped `[T*M, N+S, N+S]`.
pub fn encode_with_attn(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    inputs: &Tensor,
) -> Result<(Tid, Tid, Vec<Tid>)> {
    encode_inner(g, b, cfg, inputs, true)
}

fn encode_inner(
    g: &mut Graph,
    b: &Bound,
    cfg: &ModelConfig,
    inputs: &Tensor,
    want_probs: bool,
) -> Result<(Tid, Tid, Vec<Tid>)> {
    let t = check_input(cfg, inputs)?;
    let (m, s, n) = (cfg.n_views, cfg.s(), cfg.n_queries);
    let tm = t * m;
    let l = n + s;

    let x = g.constant(inputs.clone())?;
    let x = g.reshape(x, vec![tm, s, cfg.c_in])?;
    let x = linear(g, b, "enc.patch", x)?;
    let x = g.add(x, b.id("enc.pos"))?;

    let q = g.reshape(b.id("enc.query"), vec![1, n, cfg.d_e])?;
    let q = g.concat(&vec![q; tm], 0)?;
    let mut tok = g.concat(&[q, x], 1)?;

    let mask = BoolMat::all_true(l, l);
    let mut probs = Vec::new();
    for i in 0..cfg.enc_layers {
        let sink = (want_probs && i + 1 == cfg.enc_layers).then_some(&mut probs);
        tok = encoder_block(g, b, &format!("enc.blk{i}"), cfg.enc_heads, tok, &mask, sink)?;
    }
    let tok = ln(g, b, "enc.final", tok)?;
    let tok = linear(g, b, "enc.proj", tok)?;

    let scene = g.slice(tok, 1, 0, n)?;
    let scene = g.reshape(scene, vec![t, m, n, cfg.d_l])?;
    let image = g.slice(tok, 1, n, s)?;
    let image = g.reshape(image, vec![t, m, s, cfg.d_l])?;
    Ok((scene, image, probs))
}

/// `1 - mean cos(LN(phi(X)), LN(teacher))` over every patch token; the
/// teacher enters the tape as a constant and never carries gradients.
pub fn align_loss(g: &mut Graph, b: &Bound, cfg: &ModelConfig, image_tokens: Tid, teacher: &Tensor) -> Result<Tid> {
    let sh = g.value(image_tokens).shape.clone();
    if sh.len() != 4 || sh[3] != cfg.d_l {
        return Err(ModelError::Config(format!("patch tokens {sh:?} not [T, M, S, {}]", cfg.d_l)));
    }
    if teacher.rank() != 4 || teacher.shape[..3] != sh[..3] || teacher.shape[3] != cfg.d_g {
        return Err(ModelError::Config(format!(
            "teacher {:?} does not match tokens {:?} at width {}",
            teacher.shape, sh, cfg.d_g
        )));
    }
    let rows = sh[0] * sh[1] * sh[2];
    let x = g.reshape(image_tokens, vec![rows, cfg.d_l])?;
    let p = linear(g, b, "enc.align", x)?;
    let a = g.layer_norm_bare(p, LN_EPS)?;
    let tt = g.constant(Tensor::from_vec(vec![rows, cfg.d_g], teacher.data.clone())?)?;
    let tt = g.layer_norm_bare(tt, LN_EPS)?;
    let cs = g.cosine_sim_rows(a, tt)?;
    let mean = g.mean_all(cs)?;
    let neg = g.scale(mean, -1.0)?;
    Ok(g.add_scalar(neg, 1.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_setup(seed: u64) -> (ModelConfig, ParamSet) {
        let cfg = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        register_encoder(&mut ps, &cfg, &mut rng).unwrap();
        (cfg, ps)
    }

    fn random_input(cfg: &ModelConfig, t: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = t * cfg.n_views * cfg.s() * cfg.c_in;
        Tensor::from_vec(
            vec![t, cfg.n_views, cfg.s(), cfg.c_in],
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn output_shapes_follow_the_contract() {
        let (cfg, ps) = tiny_setup(0);
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let inp = random_input(&cfg, 3, 1);
        let (scene, image) = encode(&mut g, &b, &cfg, &inp).unwrap();
        assert_eq!(g.value(scene).shape, vec![3, cfg.n_views, cfg.n_queries, cfg.d_l]);
        assert_eq!(g.value(image).shape, vec![3, cfg.n_views, cfg.s(), cfg.d_l]);
    }

    #[test]
    fn identical_frames_encode_identically() {
        let (cfg, ps) = tiny_setup(2);
        let one = random_input(&cfg, 1, 3);
        let mut both = Tensor::zeros(vec![2, cfg.n_views, cfg.s(), cfg.c_in]);
        both.data[..one.numel()].copy_from_slice(&one.data);
        both.data[one.numel()..].copy_from_slice(&one.data);
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let (scene, _) = encode(&mut g, &b, &cfg, &both).unwrap();
        let v = g.value(scene);
        let half = v.numel() / 2;
        assert_eq!(&v.data[..half], &v.data[half..], "frames must not mix");
    }

    #[test]
    fn patch_permutation_with_matching_positions_is_invisible_to_scene_tokens() {
        let (cfg, ps) = tiny_setup(4);
        let s = cfg.s();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut perm: Vec<usize> = (0..s).collect();
        for i in (1..s).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }

        let inp = random_input(&cfg, 2, 6);
        let mut permuted = Tensor::zeros(inp.shape.clone());
        for t in 0..2 {
            for m in 0..cfg.n_views {
                for p in 0..s {
                    let src = ((t * cfg.n_views + m) * s + perm[p]) * cfg.c_in;
                    let dst = ((t * cfg.n_views + m) * s + p) * cfg.c_in;
                    permuted.data[dst..dst + cfg.c_in].copy_from_slice(&inp.data[src..src + cfg.c_in]);
                }
            }
        }

        let mut ps2 = ps.clone();
        let pos = ps.get("enc.pos").unwrap().value.clone();
        let moved = ps2.get_mut("enc.pos").unwrap();
        for p in 0..s {
            let src = perm[p] * cfg.d_e;
            moved.value.data[p * cfg.d_e..(p + 1) * cfg.d_e].copy_from_slice(&pos.data[src..src + cfg.d_e]);
        }

        let mut g1 = Graph::new();
        let b1 = ps.bind(&mut g1).unwrap();
        let (scene1, _) = encode(&mut g1, &b1, &cfg, &inp).unwrap();
        let mut g2 = Graph::new();
        let b2 = ps2.bind(&mut g2).unwrap();
        let (scene2, _) = encode(&mut g2, &b2, &cfg, &permuted).unwrap();
        for (a, c) in g1.value(scene1).data.iter().zip(&g2.value(scene2).data) {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn self_aligned_teacher_gives_zero_loss_and_antipodal_gives_two() {
        let (cfg, ps) = tiny_setup(7);
        let inp = random_input(&cfg, 2, 8);

        // Probe pass to fabricate a teacher equal to LN(phi(X)).
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let (_, image) = encode(&mut g, &b, &cfg, &inp).unwrap();
        let sh = g.value(image).shape.clone();
        let rows = sh[0] * sh[1] * sh[2];
        let flat = g.reshape(image, vec![rows, cfg.d_l]).unwrap();
        let p = linear(&mut g, &b, "enc.align", flat).unwrap();
        let a = g.layer_norm_bare(p, LN_EPS).unwrap();
        let probe = g.value(a).data.clone();

        // LN of an already-normalized row only rescales it, and cosine is
        // scale-free, so this teacher sits at similarity exactly 1.
        let teacher = Tensor::from_vec(vec![sh[0], sh[1], sh[2], cfg.d_g], probe.clone()).unwrap();
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let (_, image) = encode(&mut g, &b, &cfg, &inp).unwrap();
        let loss = align_loss(&mut g, &b, &cfg, image, &teacher).unwrap();
        assert!(g.value(loss).item().unwrap().abs() < 1e-9);

        let anti = Tensor::from_vec(teacher.shape.clone(), probe.iter().map(|v| -v).collect()).unwrap();
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let (_, image) = encode(&mut g, &b, &cfg, &inp).unwrap();
        let loss = align_loss(&mut g, &b, &cfg, image, &anti).unwrap();
        assert!((g.value(loss).item().unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn align_loss_matches_a_scalar_loop() {
        let (cfg, ps) = tiny_setup(9);
        let inp = random_input(&cfg, 1, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows = cfg.n_views * cfg.s();
        let teacher = Tensor::from_vec(
            vec![1, cfg.n_views, cfg.s(), cfg.d_g],
            (0..rows * cfg.d_g).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let (_, image) = encode(&mut g, &b, &cfg, &inp).unwrap();
        let tokens = g.value(image).data.clone();
        let loss = align_loss(&mut g, &b, &cfg, image, &teacher).unwrap();

        let w = ps.get("enc.align.w").unwrap().value.data.clone();
        let bias = ps.get("enc.align.b").unwrap().value.data.clone();
        let lnorm = |v: &[f64]| -> Vec<f64> {
            let d = v.len() as f64;
            let mean = v.iter().sum::<f64>() / d;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            v.iter().map(|x| (x - mean) * inv).collect()
        };
        let mut total = 0.0;
        for r in 0..rows {
            let x = &tokens[r * cfg.d_l..(r + 1) * cfg.d_l];
            let proj: Vec<f64> = (0..cfg.d_g)
                .map(|o| bias[o] + (0..cfg.d_l).map(|i| x[i] * w[i * cfg.d_g + o]).sum::<f64>())
                .collect();
            let a = lnorm(&proj);
            let t = lnorm(&teacher.data[r * cfg.d_g..(r + 1) * cfg.d_g]);
            let dot: f64 = a.iter().zip(&t).map(|(p, q)| p * q).sum();
            let na: f64 = a.iter().map(|p| p * p).sum::<f64>().max(1e-12).sqrt();
            let nt: f64 = t.iter().map(|p| p * p).sum::<f64>().max(1e-12).sqrt();
            total += 1.0 - dot / (na * nt);
        }
        let want = total / rows as f64;
        assert!((g.value(loss).item().unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn align_gradients_reach_the_patch_embedding() {
        let (cfg, ps) = tiny_setup(12);
        let inp = random_input(&cfg, 1, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = cfg.n_views * cfg.s() * cfg.d_g;
        let teacher = Tensor::from_vec(
            vec![1, cfg.n_views, cfg.s(), cfg.d_g],
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let (_, image) = encode(&mut g, &b, &cfg, &inp).unwrap();
        let loss = align_loss(&mut g, &b, &cfg, image, &teacher).unwrap();
        g.backward(loss).unwrap();
        let gp = b.grad(&g, "enc.patch.w").expect("gradient flows into the encoder");
        assert!(gp.iter().any(|&v| v != 0.0));
        assert!(b.grad(&g, "enc.align.w").is_some());
    }

    #[test]
    fn attention_export_has_one_map_per_head() {
        let (cfg, ps) = tiny_setup(14);
        let inp = random_input(&cfg, 1, 15);
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let (_, _, probs) = encode_with_attn(&mut g, &b, &cfg, &inp).unwrap();
        assert_eq!(probs.len(), cfg.enc_heads);
        let l = cfg.n_queries + cfg.s();
        assert_eq!(g.value(probs[0]).shape, vec![cfg.n_views, l, l]);
    }
}
