//! Multi-head attention and the pre-norm transformer blocks built from it.
//! Parameters are addressed by dotted names under a caller-chosen prefix, so
//! the same code serves the encoder, the world model and the trajectory
//! decoder.

use numcore::{BoolMat, Graph, Result as NumResult, Tid};
use rand::Rng;

use crate::params::{normal_init, ones_init, zeros_init, Bound, ParamSet};
use crate::rope::RopeConfig;
use crate::Result;

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

pub fn register_linear<R: Rng>(ps: &mut ParamSet, rng: &mut R, name: &str, din: usize, dout: usize) -> Result<()> {
    ps.add(&format!("{name}.w"), normal_init(rng, vec![din, dout], INIT_STD), true)?;
    ps.add(&format!("{name}.b"), zeros_init(vec![dout]), false)
}

pub fn linear(g: &mut Graph, b: &Bound, name: &str, x: Tid) -> NumResult<Tid> {
    g.linear(x, b.id(&format!("{name}.w")), b.id(&format!("{name}.b")))
}

pub fn register_ln(ps: &mut ParamSet, name: &str, d: usize) -> Result<()> {
    ps.add(&format!("{name}.g"), ones_init(vec![d]), false)?;
    ps.add(&format!("{name}.b"), zeros_init(vec![d]), false)
}

pub fn ln(g: &mut Graph, b: &Bound, name: &str, x: Tid) -> NumResult<Tid> {
    g.layer_norm(x, b.id(&format!("{name}.g")), b.id(&format!("{name}.b")), LN_EPS)
}

/// Rotary application spec for one attention call; `q`/`k` give per-token
/// coordinates for the query and key rows.
pub struct Rope<'a> {
    pub cfg: RopeConfig,
    pub q: &'a [[f64; 3]],
    pub k: &'a [[f64; 3]],
}

pub fn register_attn<R: Rng>(ps: &mut ParamSet, rng: &mut R, prefix: &str, d: usize) -> Result<()> {
    for part in ["q", "k", "v", "o"] {
        register_linear(ps, rng, &format!("{prefix}.{part}"), d, d)?;
    }
    Ok(())
}

pub fn attention(
    g: &mut Graph,
    b: &Bound,
    prefix: &str,
    heads: usize,
    xq: Tid,
    xkv: Tid,
    mask: &BoolMat,
    rope: Option<&Rope>,
) -> NumResult<Tid> {
    Ok(attention_probs(g, b, prefix, heads, xq, xkv, mask, rope)?.0)
}

/// Full multi-head attention; also hands back the per-head softmax nodes so
/// callers can export attention maps.
#[allow(clippy::too_many_arguments)]
pub fn attention_probs(
    g: &mut Graph,
    b: &Bound,
    prefix: &str,
    heads: usize,
    xq: Tid,
    xkv: Tid,
    mask: &BoolMat,
    rope: Option<&Rope>,
) -> NumResult<(Tid, Vec<Tid>)> {
    let mut q = linear(g, b, &format!("{prefix}.q"), xq)?;
    let mut k = linear(g, b, &format!("{prefix}.k"), xkv)?;
    let v = linear(g, b, &format!("{prefix}.v"), xkv)?;
    if let Some(r) = rope {
        q = r.cfg.apply(g, q, heads, r.q)?;
        k = r.cfg.apply(g, k, heads, r.k)?;
    }
    let d = g.value(q).last_dim();
    let dh = d / heads;
    let ax = g.value(q).rank() - 1;
    let mut outs = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, ax, h * dh, dh)?;
        let kh = g.slice(k, ax, h * dh, dh)?;
        let vh = g.slice(v, ax, h * dh, dh)?;
        let (oh, ph) = g.masked_attention_probs(qh, kh, vh, mask)?;
        outs.push(oh);
        probs.push(ph);
    }
    let cat = g.concat(&outs, ax)?;
    let out = linear(g, b, &format!("{prefix}.o"), cat)?;
    Ok((out, probs))
}

fn register_ffn<R: Rng>(ps: &mut ParamSet, rng: &mut R, prefix: &str, d: usize, mult: usize) -> Result<()> {
    register_linear(ps, rng, &format!("{prefix}.f1"), d, mult * d)?;
    register_linear(ps, rng, &format!("{prefix}.f2"), mult * d, d)
}

fn ffn(g: &mut Graph, b: &Bound, prefix: &str, x: Tid) -> NumResult<Tid> {
    let h = linear(g, b, &format!("{prefix}.f1"), x)?;
    let h = g.gelu(h)?;
    linear(g, b, &format!("{prefix}.f2"), h)
}

pub fn register_encoder_block<R: Rng>(ps: &mut ParamSet, rng: &mut R, prefix: &str, d: usize, mult: usize) -> Result<()> {
    register_ln(ps, &format!("{prefix}.ln1"), d)?;
    register_attn(ps, rng, &format!("{prefix}.attn"), d)?;
    register_ln(ps, &format!("{prefix}.ln2"), d)?;
    register_ffn(ps, rng, prefix, d, mult)
}

/// Pre-norm self-attention block: `x + attn(ln(x))`, then `x + ffn(ln(x))`.
pub fn encoder_block(
    g: &mut Graph,
    b: &Bound,
    prefix: &str,
    heads: usize,
    x: Tid,
    mask: &BoolMat,
    mut probs_out: Option<&mut Vec<Tid>>,
) -> NumResult<Tid> {
    let h = ln(g, b, &format!("{prefix}.ln1"), x)?;
    let (a, probs) = attention_probs(g, b, &format!("{prefix}.attn"), heads, h, h, mask, None)?;
    if let Some(sink) = probs_out.as_deref_mut() {
        *sink = probs;
    }
    let x = g.add(x, a)?;
    let h = ln(g, b, &format!("{prefix}.ln2"), x)?;
    let f = ffn(g, b, prefix, h)?;
    g.add(x, f)
}

pub fn register_decoder_block<R: Rng>(ps: &mut ParamSet, rng: &mut R, prefix: &str, d: usize, mult: usize) -> Result<()> {
    register_ln(ps, &format!("{prefix}.ln1"), d)?;
    register_attn(ps, rng, &format!("{prefix}.s"), d)?;
    register_ln(ps, &format!("{prefix}.ln2"), d)?;
    register_ln(ps, &format!("{prefix}.lnc"), d)?;
    register_attn(ps, rng, &format!("{prefix}.c"), d)?;
    register_ln(ps, &format!("{prefix}.ln3"), d)?;
    register_ffn(ps, rng, prefix, d, mult)
}

/// Pre-norm decoder block: masked self-attention among the queries, then
/// cross-attention into `ctx` (normalized per layer, no stack of its own),
/// then the FFN. Rotary coordinates are supplied per call.
#[allow(clippy::too_many_arguments)]
pub fn decoder_block(
    g: &mut Graph,
    b: &Bound,
    prefix: &str,
    heads: usize,
    x: Tid,
    ctx: Tid,
    self_mask: &BoolMat,
    cross_mask: &BoolMat,
    rope_self: Option<&Rope>,
    rope_cross: Option<&Rope>,
) -> NumResult<Tid> {
    let h = ln(g, b, &format!("{prefix}.ln1"), x)?;
    let a = attention(g, b, &format!("{prefix}.s"), heads, h, h, self_mask, rope_self)?;
    let x = g.add(x, a)?;
    let hq = ln(g, b, &format!("{prefix}.ln2"), x)?;
    let hc = ln(g, b, &format!("{prefix}.lnc"), ctx)?;
    let a = attention(g, b, &format!("{prefix}.c"), heads, hq, hc, cross_mask, rope_cross)?;
    let x = g.add(x, a)?;
    let h = ln(g, b, &format!("{prefix}.ln3"), x)?;
    let f = ffn(g, b, prefix, h)?;
    g.add(x, f)
}

/// Square mask of `blocks` diagonal blocks of side `width`: tokens see their
/// own block only.
pub fn block_diag_mask(blocks: usize, width: usize) -> BoolMat {
    let n = blocks * width;
    BoolMat::from_fn(n, n, |i, j| i / width == j / width)
}
