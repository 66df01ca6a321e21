//! Finite-difference checks for every differentiable op. The oracle side
//! never touches backward: it re-runs the forward with perturbed inputs.

use numcore::gradcheck::{finite_diff_grads, max_rel_err, FD_STEP};
use numcore::{BoolMat, Graph, Tensor, Tid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-6;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

/// Checks AD gradients of a graph-building closure against central
/// differences for every element of every input.
fn check_op<F>(name: &str, inputs: &[Tensor], build: F)
where
    F: Fn(&mut Graph, &[Tid]) -> numcore::Result<Tid>,
{
    let mut g = Graph::new();
    let ids: Vec<Tid> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_grad()).unwrap())
        .collect();
    let loss = build(&mut g, &ids).unwrap_or_else(|e| panic!("{name}: forward failed: {e}"));
    g.backward(loss).unwrap_or_else(|e| panic!("{name}: backward failed: {e}"));
    let ad: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let fd = finite_diff_grads(
        |ts| {
            let mut g = Graph::new();
            let ids: Vec<Tid> = ts
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.requires_grad = false;
                    g.leaf(t).unwrap()
                })
                .collect();
            let l = build(&mut g, &ids)?;
            g.value(l).item()
        },
        inputs,
        FD_STEP,
    )
    .unwrap_or_else(|e| panic!("{name}: fd eval failed: {e}"));

    for (i, (a, f)) in ad.iter().zip(&fd).enumerate() {
        let err = max_rel_err(a, f, FLOOR);
        assert!(err < TOL, "{name}: input {i} rel err {err:.3e} >= {TOL:.0e}");
    }
}

/// Weighted mean of an arbitrary-shaped output so every element gets a
/// distinct pull; catches index/transposition mistakes plain means would hide.
fn weighted_scalar(g: &mut Graph, out: Tid, seed: u64) -> numcore::Result<Tid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.value(out).shape.clone();
    let w = rand_t(&mut rng, &shape);
    let w = g.constant(w)?;
    let p = g.mul(out, w)?;
    g.mean_all(p)
}

#[test]
fn grads_elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = rand_t(&mut rng, &[3, 4]);
    let b = rand_t(&mut rng, &[3, 4]);
    let suffix = rand_t(&mut rng, &[4]);

    check_op("add", &[a.clone(), b.clone()], |g, ids| {
        let y = g.add(ids[0], ids[1])?;
        weighted_scalar(g, y, 101)
    });
    check_op("add_broadcast", &[a.clone(), suffix.clone()], |g, ids| {
        let y = g.add(ids[0], ids[1])?;
        weighted_scalar(g, y, 102)
    });
    check_op("sub", &[a.clone(), b.clone()], |g, ids| {
        let y = g.sub(ids[0], ids[1])?;
        weighted_scalar(g, y, 103)
    });
    check_op("mul", &[a.clone(), b.clone()], |g, ids| {
        let y = g.mul(ids[0], ids[1])?;
        weighted_scalar(g, y, 104)
    });
    check_op("mul_broadcast", &[a.clone(), suffix.clone()], |g, ids| {
        let y = g.mul(ids[0], ids[1])?;
        weighted_scalar(g, y, 105)
    });
    check_op("scale_add_scalar", &[a.clone()], |g, ids| {
        let y = g.scale(ids[0], -1.7)?;
        let y = g.add_scalar(y, 0.4)?;
        weighted_scalar(g, y, 106)
    });
}

#[test]
fn grads_matmul_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cases: Vec<(&str, Vec<usize>, Vec<usize>)> = vec![
        ("matmul_2d", vec![3, 4], vec![4, 2]),
        ("matmul_batched", vec![2, 3, 4], vec![2, 4, 2]),
        ("matmul_b_shared", vec![2, 3, 4], vec![4, 2]),
        ("matmul_a_shared", vec![3, 4], vec![2, 4, 2]),
    ];
    for (name, sa, sb) in cases {
        let a = rand_t(&mut rng, &sa);
        let b = rand_t(&mut rng, &sb);
        check_op(name, &[a, b], |g, ids| {
            let y = g.matmul(ids[0], ids[1])?;
            weighted_scalar(g, y, 107)
        });
    }
}

#[test]
fn grads_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = rand_t(&mut rng, &[2, 3, 4]);
    check_op("transpose_last2", &[x.clone()], |g, ids| {
        let y = g.transpose_last2(ids[0])?;
        weighted_scalar(g, y, 108)
    });
    check_op("reshape", &[x.clone()], |g, ids| {
        let y = g.reshape(ids[0], vec![6, 4])?;
        weighted_scalar(g, y, 109)
    });
    let a = rand_t(&mut rng, &[2, 3]);
    let b = rand_t(&mut rng, &[2, 2]);
    check_op("concat_axis1", &[a, b], |g, ids| {
        let y = g.concat(&[ids[0], ids[1]], 1)?;
        weighted_scalar(g, y, 110)
    });
    check_op("slice_middle", &[x.clone()], |g, ids| {
        let y = g.slice(ids[0], 1, 1, 2)?;
        weighted_scalar(g, y, 111)
    });
}

#[test]
fn grads_nonlinearities() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = rand_t(&mut rng, &[3, 5]);
    check_op("gelu", &[x.clone()], |g, ids| {
        let y = g.gelu(ids[0])?;
        weighted_scalar(g, y, 112)
    });
    // Keep |x| away from the kink at 0.
    let far: Vec<f64> = x.data.iter().map(|v| if v.abs() < 0.2 { v + 0.5 } else { *v }).collect();
    let xf = Tensor::from_vec(vec![3, 5], far).unwrap();
    check_op("abs", &[xf], |g, ids| {
        let y = g.abs(ids[0])?;
        weighted_scalar(g, y, 113)
    });
    check_op("layer_norm_bare", &[x.clone()], |g, ids| {
        let y = g.layer_norm_bare(ids[0], 1e-5)?;
        weighted_scalar(g, y, 114)
    });
    let gamma = rand_t(&mut rng, &[5]);
    let beta = rand_t(&mut rng, &[5]);
    check_op("layer_norm_affine", &[x.clone(), gamma, beta], |g, ids| {
        let y = g.layer_norm(ids[0], ids[1], ids[2], 1e-5)?;
        weighted_scalar(g, y, 115)
    });
    check_op("softmax", &[x.clone()], |g, ids| {
        let y = g.softmax(ids[0])?;
        weighted_scalar(g, y, 116)
    });
    check_op("mean_all", &[x], |g, ids| g.mean_all(ids[0]));
}

#[test]
fn grads_losses_and_lookup() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let a = rand_t(&mut rng, &[4, 3]);
    let b = rand_t(&mut rng, &[4, 3]);
    check_op("mse_loss", &[a.clone(), b.clone()], |g, ids| g.mse_loss(ids[0], ids[1]));
    check_op("l1_loss", &[a.clone(), b.clone()], |g, ids| g.l1_loss(ids[0], ids[1]));

    let table = rand_t(&mut rng, &[5, 3]);
    check_op("embedding_lookup", &[table], |g, ids| {
        let y = g.embedding_lookup(ids[0], &[4, 0, 0, 2])?;
        weighted_scalar(g, y, 117)
    });

    let logits = rand_t(&mut rng, &[4, 6]);
    check_op("cross_entropy_logits", &[logits], |g, ids| {
        g.cross_entropy_logits(ids[0], &[1, 5, 0, 3])
    });

    check_op("cosine_sim_rows", &[a, b], |g, ids| {
        let c = g.cosine_sim_rows(ids[0], ids[1])?;
        g.mean_all(c)
    });
}

#[test]
fn grads_rotate_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = rand_t(&mut rng, &[2, 3, 6]); // heads=2 sharing a 3-position table
    let half = 3;
    let cos: Vec<f64> = (0..3 * half).map(|i| (0.31 * i as f64).cos()).collect();
    let sin: Vec<f64> = (0..3 * half).map(|i| (0.31 * i as f64).sin()).collect();
    check_op("rotate_pairs", &[x], |g, ids| {
        let y = g.rotate_pairs(ids[0], &cos, &sin, 3)?;
        weighted_scalar(g, y, 118)
    });
}

#[test]
fn grads_masked_attention_and_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let q = rand_t(&mut rng, &[2, 4, 6]);
    let k = rand_t(&mut rng, &[2, 5, 6]);
    let v = rand_t(&mut rng, &[2, 5, 6]);
    let mut mrng = ChaCha8Rng::seed_from_u64(18);
    let keep: Vec<bool> = (0..20).map(|_| mrng.gen::<f64>() < 0.6).collect();
    let mask = BoolMat::from_fn(4, 5, |i, j| j == i % 5 || keep[i * 5 + j]);
    check_op("masked_attention", &[q, k, v], |g, ids| {
        let y = g.masked_attention(ids[0], ids[1], ids[2], &mask)?;
        weighted_scalar(g, y, 119)
    });

    let x = rand_t(&mut rng, &[3, 4]);
    let w1 = rand_t(&mut rng, &[4, 6]);
    let b1 = rand_t(&mut rng, &[6]);
    let w2 = rand_t(&mut rng, &[6, 2]);
    let b2 = rand_t(&mut rng, &[2]);
    check_op("mlp_forward", &[x, w1, b1, w2, b2], |g, ids| {
        let y = g.mlp_forward(ids[0], ids[1], ids[2], ids[3], ids[4])?;
        weighted_scalar(g, y, 120)
    });
}

#[test]
fn grads_small_transformer_chain() {
    // ln -> rope -> attention -> mlp -> cosine loss, all chained.
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = rand_t(&mut rng, &[4, 6]);
    let wq = rand_t(&mut rng, &[6, 6]);
    let wk = rand_t(&mut rng, &[6, 6]);
    let wv = rand_t(&mut rng, &[6, 6]);
    let target = rand_t(&mut rng, &[4, 6]);
    let half = 3;
    let cos: Vec<f64> = (0..4 * half).map(|i| (0.17 * i as f64 + 0.2).cos()).collect();
    let sin: Vec<f64> = (0..4 * half).map(|i| (0.17 * i as f64 + 0.2).sin()).collect();
    let mask = BoolMat::from_fn(4, 4, |i, j| j <= i);
    check_op("transformer_chain", &[x, wq, wk, wv, target], |g, ids| {
        let xn = g.layer_norm_bare(ids[0], 1e-5)?;
        let q = g.matmul(xn, ids[1])?;
        let k = g.matmul(xn, ids[2])?;
        let v = g.matmul(xn, ids[3])?;
        let q = g.rotate_pairs(q, &cos, &sin, 4)?;
        let k = g.rotate_pairs(k, &cos, &sin, 4)?;
        let att = g.masked_attention(q, k, v, &mask)?;
        let c = g.cosine_sim_rows(att, ids[4])?;
        let m = g.mean_all(c)?;
        let m = g.scale(m, -1.0)?;
        g.add_scalar(m, 1.0)
    });
}
