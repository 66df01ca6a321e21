//! Reverse-mode autodiff over a flat tape.
//!
//! Every operation appends one node holding its output tensor; `backward`
//! walks the tape once in reverse creation order. Graphs are meant to be
//! rebuilt per training step and may be reused only after `reset`.
//!
//! Numeric policy: any op that produces a NaN/Inf fails immediately with
//! `NumError::NonFinite` rather than letting the value propagate.

use crate::mask::BoolMat;
use crate::tensor::{numel_of, Tensor};
use crate::{NumError, Result};

/// Additive bias for masked-out attention scores. Large enough that
/// `exp(x - rowmax)` underflows to exactly 0.0 for any realistic score.
pub const MASK_NEG: f64 = -1e30;

const GELU_S: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tid(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: Tid, b: Tid },
    Sub { a: Tid, b: Tid },
    Mul { a: Tid, b: Tid },
    Scale { x: Tid, c: f64 },
    AddScalar { x: Tid },
    Matmul { a: Tid, b: Tid, m: usize, k: usize, n: usize, batch: usize },
    TransposeLast2 { x: Tid },
    Reshape { x: Tid },
    Concat { xs: Vec<Tid>, axis: usize },
    Slice { x: Tid, axis: usize, start: usize, len: usize },
    Gelu { x: Tid },
    Abs { x: Tid },
    LayerNormBare { x: Tid, eps: f64 },
    Softmax { x: Tid },
    MeanAll { x: Tid },
    EmbeddingLookup { table: Tid, idx: Vec<usize> },
    CrossEntropyLogits { logits: Tid, targets: Vec<usize> },
    CosineSimRows { a: Tid, b: Tid },
    RotatePairs { x: Tid, cos: Vec<f64>, sin: Vec<f64>, cycle: usize },
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: Tid) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient buffer of a node, if backward has reached it.
    pub fn grad(&self, id: Tid) -> Option<&[f64]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    /// Clears all gradients so the (already built) graph can run backward again.
    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
        self.backward_done = false;
    }

    // ── Node plumbing ──────────────────────────────────────────────────────

    fn push(&mut self, op: &'static str, node_op: Op, mut value: Tensor, requires_grad: bool) -> Result<Tid> {
        ensure_finite(op, &value.data)?;
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node { op: node_op, value });
        Ok(Tid(self.nodes.len() - 1))
    }

    fn rg(&self, id: Tid) -> bool {
        self.nodes[id.0].value.requires_grad
    }

    /// Inserts an externally produced tensor as a tape leaf. Its
    /// `requires_grad` flag decides whether backward will fill its gradient.
    pub fn leaf(&mut self, t: Tensor) -> Result<Tid> {
        let rg = t.requires_grad;
        self.push("leaf", Op::Leaf, t, rg)
    }

    /// Leaf that never receives gradients (frozen inputs, masks, targets).
    pub fn constant(&mut self, mut t: Tensor) -> Result<Tid> {
        t.requires_grad = false;
        self.push("constant", Op::Leaf, t, false)
    }

    // ── Elementwise and shape ops ──────────────────────────────────────────

    /// `a + b`; `b` may broadcast if its shape is a trailing suffix of `a`'s.
    pub fn add(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let cycle = suffix_cycle("add", &va.shape, &vb.shape)?;
        let mut out = va.data.clone();
        for (i, o) in out.iter_mut().enumerate() {
            *o += vb.data[i % cycle];
        }
        let t = Tensor::from_vec(va.shape.clone(), out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("add", Op::Add { a, b }, t, rg)
    }

    /// `a - b`, equal shapes.
    pub fn sub(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape("sub", &va.shape, &vb.shape)?;
        let out: Vec<f64> = va.data.iter().zip(&vb.data).map(|(x, y)| x - y).collect();
        let t = Tensor::from_vec(va.shape.clone(), out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("sub", Op::Sub { a, b }, t, rg)
    }

    /// Elementwise product; same suffix-broadcast rule as `add`.
    pub fn mul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let cycle = suffix_cycle("mul", &va.shape, &vb.shape)?;
        let mut out = va.data.clone();
        for (i, o) in out.iter_mut().enumerate() {
            *o *= vb.data[i % cycle];
        }
        let t = Tensor::from_vec(va.shape.clone(), out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", Op::Mul { a, b }, t, rg)
    }

    pub fn scale(&mut self, x: Tid, c: f64) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        let out: Vec<f64> = vx.data.iter().map(|v| v * c).collect();
        let t = Tensor::from_vec(vx.shape.clone(), out)?;
        let rg = self.rg(x);
        self.push("scale", Op::Scale { x, c }, t, rg)
    }

    pub fn add_scalar(&mut self, x: Tid, c: f64) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        let out: Vec<f64> = vx.data.iter().map(|v| v + c).collect();
        let t = Tensor::from_vec(vx.shape.clone(), out)?;
        let rg = self.rg(x);
        self.push("add_scalar", Op::AddScalar { x }, t, rg)
    }

    /// Matrix product over the trailing two axes. Leading (batch) axes must be
    /// equal on both sides, or absent on one side (that operand is shared).
    pub fn matmul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.rank() < 2 || vb.rank() < 2 {
            return Err(NumError::Shape {
                op: "matmul",
                detail: format!("need rank >= 2, got {:?} x {:?}", va.shape, vb.shape),
            });
        }
        let (la, lb) = (va.rank(), vb.rank());
        let (m, k) = (va.shape[la - 2], va.shape[la - 1]);
        let (k2, n) = (vb.shape[lb - 2], vb.shape[lb - 1]);
        let (ba, bb) = (&va.shape[..la - 2], &vb.shape[..lb - 2]);
        if k != k2 || !(ba == bb || ba.is_empty() || bb.is_empty()) {
            return Err(NumError::Shape {
                op: "matmul",
                detail: format!("incompatible {:?} x {:?}", va.shape, vb.shape),
            });
        }
        let batch_shape: Vec<usize> = if ba.is_empty() { bb.to_vec() } else { ba.to_vec() };
        let batch = numel_of(&batch_shape);
        let mut out = vec![0.0; batch * m * n];
        for t in 0..batch {
            let ao = if ba.is_empty() { 0 } else { t * m * k };
            let bo = if bb.is_empty() { 0 } else { t * k * n };
            mm(&va.data[ao..ao + m * k], &vb.data[bo..bo + k * n], &mut out[t * m * n..(t + 1) * m * n], m, k, n);
        }
        let mut shape = batch_shape;
        shape.push(m);
        shape.push(n);
        let t = Tensor::from_vec(shape, out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", Op::Matmul { a, b, m, k, n, batch }, t, rg)
    }

    pub fn transpose_last2(&mut self, x: Tid) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        if vx.rank() < 2 {
            return Err(NumError::Shape { op: "transpose_last2", detail: format!("rank {:?}", vx.shape) });
        }
        let l = vx.rank();
        let (r, c) = (vx.shape[l - 2], vx.shape[l - 1]);
        let batch = vx.numel() / (r * c);
        let mut out = vec![0.0; vx.numel()];
        for t in 0..batch {
            let src = &vx.data[t * r * c..(t + 1) * r * c];
            let dst = &mut out[t * r * c..(t + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut shape = vx.shape.clone();
        shape[l - 2] = c;
        shape[l - 1] = r;
        let t = Tensor::from_vec(shape, out)?;
        let rg = self.rg(x);
        self.push("transpose_last2", Op::TransposeLast2 { x }, t, rg)
    }

    pub fn reshape(&mut self, x: Tid, shape: Vec<usize>) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        if numel_of(&shape) != vx.numel() {
            return Err(NumError::Shape {
                op: "reshape",
                detail: format!("{:?} -> {:?} changes element count", vx.shape, shape),
            });
        }
        let t = Tensor::from_vec(shape, vx.data.clone())?;
        let rg = self.rg(x);
        self.push("reshape", Op::Reshape { x }, t, rg)
    }

    pub fn concat(&mut self, xs: &[Tid], axis: usize) -> Result<Tid> {
        if xs.is_empty() {
            return Err(NumError::Shape { op: "concat", detail: "no inputs".into() });
        }
        let first = self.nodes[xs[0].0].value.shape.clone();
        if axis >= first.len() {
            return Err(NumError::Shape { op: "concat", detail: format!("axis {} for rank {}", axis, first.len()) });
        }
        let mut axis_total = 0;
        for &x in xs {
            let s = &self.nodes[x.0].value.shape;
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(NumError::Shape {
                    op: "concat",
                    detail: format!("incompatible shapes {:?} vs {:?} on axis {}", s, first, axis),
                });
            }
            axis_total += s[axis];
        }
        let outer = numel_of(&first[..axis]);
        let inner = numel_of(&first[axis + 1..]);
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let mut out = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for &x in xs {
            let v = &self.nodes[x.0].value;
            let w = v.shape[axis] * inner;
            for o in 0..outer {
                out[o * axis_total * inner + offset..o * axis_total * inner + offset + w]
                    .copy_from_slice(&v.data[o * w..(o + 1) * w]);
            }
            offset += w;
        }
        let t = Tensor::from_vec(shape, out)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        self.push("concat", Op::Concat { xs: xs.to_vec(), axis }, t, rg)
    }

    pub fn slice(&mut self, x: Tid, axis: usize, start: usize, len: usize) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        if axis >= vx.rank() || len == 0 || start + len > vx.shape[axis] {
            return Err(NumError::Shape {
                op: "slice",
                detail: format!("axis {} [{}..{}] of {:?}", axis, start, start + len, vx.shape),
            });
        }
        let outer = numel_of(&vx.shape[..axis]);
        let inner = numel_of(&vx.shape[axis + 1..]);
        let ax = vx.shape[axis];
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = o * ax * inner + start * inner;
            out[o * len * inner..(o + 1) * len * inner].copy_from_slice(&vx.data[src..src + len * inner]);
        }
        let mut shape = vx.shape.clone();
        shape[axis] = len;
        let t = Tensor::from_vec(shape, out)?;
        let rg = self.rg(x);
        self.push("slice", Op::Slice { x, axis, start, len }, t, rg)
    }

    // ── Nonlinearities and normalization ───────────────────────────────────

    pub fn gelu(&mut self, x: Tid) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        let out: Vec<f64> = vx.data.iter().map(|&v| gelu_fwd(v)).collect();
        let t = Tensor::from_vec(vx.shape.clone(), out)?;
        let rg = self.rg(x);
        self.push("gelu", Op::Gelu { x }, t, rg)
    }

    pub fn abs(&mut self, x: Tid) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        let out: Vec<f64> = vx.data.iter().map(|v| v.abs()).collect();
        let t = Tensor::from_vec(vx.shape.clone(), out)?;
        let rg = self.rg(x);
        self.push("abs", Op::Abs { x }, t, rg)
    }

    /// Layer norm over the last axis, no affine parameters.
    pub fn layer_norm_bare(&mut self, x: Tid, eps: f64) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        let d = vx.last_dim();
        if d == 0 {
            return Err(NumError::Shape { op: "layer_norm", detail: "empty last axis".into() });
        }
        let rows = vx.numel() / d;
        let mut out = vec![0.0; vx.numel()];
        for r in 0..rows {
            let xr = &vx.data[r * d..(r + 1) * d];
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for i in 0..d {
                out[r * d + i] = (xr[i] - mean) * inv;
            }
        }
        let t = Tensor::from_vec(vx.shape.clone(), out)?;
        let rg = self.rg(x);
        self.push("layer_norm", Op::LayerNormBare { x, eps }, t, rg)
    }

    /// Layer norm with learnable gain/bias vectors over the last axis.
    pub fn layer_norm(&mut self, x: Tid, gamma: Tid, beta: Tid, eps: f64) -> Result<Tid> {
        let y = self.layer_norm_bare(x, eps)?;
        let y = self.mul(y, gamma)?;
        self.add(y, beta)
    }

    /// Softmax over the last axis (shift-stable).
    pub fn softmax(&mut self, x: Tid) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        let d = vx.last_dim();
        if d == 0 {
            return Err(NumError::Shape { op: "softmax", detail: "empty last axis".into() });
        }
        let rows = vx.numel() / d;
        let mut out = vec![0.0; vx.numel()];
        for r in 0..rows {
            let xr = &vx.data[r * d..(r + 1) * d];
            let m = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..d {
                let e = (xr[i] - m).exp();
                out[r * d + i] = e;
                sum += e;
            }
            for i in 0..d {
                out[r * d + i] /= sum;
            }
        }
        let t = Tensor::from_vec(vx.shape.clone(), out)?;
        let rg = self.rg(x);
        self.push("softmax", Op::Softmax { x }, t, rg)
    }

    // ── Reductions and losses ──────────────────────────────────────────────

    pub fn mean_all(&mut self, x: Tid) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        if vx.numel() == 0 {
            return Err(NumError::Shape { op: "mean_all", detail: "empty tensor".into() });
        }
        let m = vx.data.iter().sum::<f64>() / vx.numel() as f64;
        let rg = self.rg(x);
        self.push("mean_all", Op::MeanAll { x }, Tensor::scalar(m), rg)
    }

    pub fn mse_loss(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    pub fn l1_loss(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let d = self.sub(a, b)?;
        let ad = self.abs(d)?;
        self.mean_all(ad)
    }

    /// Rows of `table` gathered by index; out-of-range indices are an error.
    pub fn embedding_lookup(&mut self, table: Tid, idx: &[usize]) -> Result<Tid> {
        let vt = &self.nodes[table.0].value;
        if vt.rank() != 2 {
            return Err(NumError::Shape { op: "embedding_lookup", detail: format!("table rank {:?}", vt.shape) });
        }
        let (v, d) = (vt.shape[0], vt.shape[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
            return Err(NumError::Contract {
                op: "embedding_lookup",
                detail: format!("index {} out of range for table of {}", bad, v),
            });
        }
        let mut out = vec![0.0; idx.len() * d];
        for (r, &i) in idx.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&vt.data[i * d..(i + 1) * d]);
        }
        let t = Tensor::from_vec(vec![idx.len(), d], out)?;
        let rg = self.rg(table);
        self.push("embedding_lookup", Op::EmbeddingLookup { table, idx: idx.to_vec() }, t, rg)
    }

    /// Mean cross-entropy of logit rows `[r, c]` against class indices.
    pub fn cross_entropy_logits(&mut self, logits: Tid, targets: &[usize]) -> Result<Tid> {
        let vl = &self.nodes[logits.0].value;
        if vl.rank() != 2 || vl.shape[0] != targets.len() {
            return Err(NumError::Shape {
                op: "cross_entropy",
                detail: format!("logits {:?} vs {} targets", vl.shape, targets.len()),
            });
        }
        let (r, c) = (vl.shape[0], vl.shape[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NumError::Contract {
                op: "cross_entropy",
                detail: format!("target class {} out of range for {} classes", bad, c),
            });
        }
        let mut total = 0.0;
        for i in 0..r {
            let row = &vl.data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - row[targets[i]];
        }
        let rg = self.rg(logits);
        self.push(
            "cross_entropy",
            Op::CrossEntropyLogits { logits, targets: targets.to_vec() },
            Tensor::scalar(total / r as f64),
            rg,
        )
    }

    /// Per-row cosine similarity over the last axis; output shape `[rows]`.
    /// Norms carry a 1e-12 floor inside the sqrt so the op stays differentiable.
    pub fn cosine_sim_rows(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_shape("cosine_sim", &va.shape, &vb.shape)?;
        let d = va.last_dim();
        if d == 0 {
            return Err(NumError::Shape { op: "cosine_sim", detail: "empty last axis".into() });
        }
        let rows = va.numel() / d;
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let (ar, br) = (&va.data[r * d..(r + 1) * d], &vb.data[r * d..(r + 1) * d]);
            let (na, nb, dot) = row_norms(ar, br);
            out[r] = dot / (na * nb);
        }
        let t = Tensor::from_vec(vec![rows], out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push("cosine_sim", Op::CosineSimRows { a, b }, t, rg)
    }

    // ── Rotary position application ────────────────────────────────────────

    /// Rotates consecutive pairs of the last axis by per-position angles.
    /// `cos`/`sin` hold `cycle * D/2` entries; row `r` of the flattened
    /// `[rows, D]` view uses table row `r % cycle` (so `[heads, L, D]` shares
    /// one table across heads).
    pub fn rotate_pairs(&mut self, x: Tid, cos: &[f64], sin: &[f64], cycle: usize) -> Result<Tid> {
        let vx = &self.nodes[x.0].value;
        let d = vx.last_dim();
        if d == 0 || d % 2 != 0 {
            return Err(NumError::Shape { op: "rotate_pairs", detail: format!("last axis {} must be even", d) });
        }
        let half = d / 2;
        let rows = vx.numel() / d;
        if cos.len() != cycle * half || sin.len() != cycle * half || cycle == 0 || rows % cycle != 0 {
            return Err(NumError::Shape {
                op: "rotate_pairs",
                detail: format!("table {}x{} vs {} rows cycle {}", cos.len(), sin.len(), rows, cycle),
            });
        }
        let mut out = vec![0.0; vx.numel()];
        for r in 0..rows {
            let tr = r % cycle;
            for p in 0..half {
                let (c, s) = (cos[tr * half + p], sin[tr * half + p]);
                let (x0, x1) = (vx.data[r * d + 2 * p], vx.data[r * d + 2 * p + 1]);
                out[r * d + 2 * p] = c * x0 - s * x1;
                out[r * d + 2 * p + 1] = s * x0 + c * x1;
            }
        }
        let t = Tensor::from_vec(vx.shape.clone(), out)?;
        let rg = self.rg(x);
        self.push("rotate_pairs", Op::RotatePairs { x, cos: cos.to_vec(), sin: sin.to_vec(), cycle }, t, rg)
    }

    // ── Attention ──────────────────────────────────────────────────────────

    /// Scaled dot-product attention with an additive boolean mask.
    /// `q: [.., Lq, d]`, `k: [.., Lk, d]`, `v: [.., Lk, dv]`; the mask is
    /// `Lq x Lk` and shared over leading axes. A mask row with no allowed key
    /// is a contract violation.
    pub fn masked_attention(&mut self, q: Tid, k: Tid, v: Tid, mask: &BoolMat) -> Result<Tid> {
        Ok(self.masked_attention_probs(q, k, v, mask)?.0)
    }

    /// Same as `masked_attention` but also returns the softmax node so the
    /// caller can read attention weights out of the tape.
    pub fn masked_attention_probs(&mut self, q: Tid, k: Tid, v: Tid, mask: &BoolMat) -> Result<(Tid, Tid)> {
        let (lq, dq) = tail2("masked_attention", &self.nodes[q.0].value)?;
        let (lk, dk) = tail2("masked_attention", &self.nodes[k.0].value)?;
        let (lv, _) = tail2("masked_attention", &self.nodes[v.0].value)?;
        if dq != dk || lk != lv {
            return Err(NumError::Shape {
                op: "masked_attention",
                detail: format!(
                    "q {:?} k {:?} v {:?}",
                    self.nodes[q.0].value.shape, self.nodes[k.0].value.shape, self.nodes[v.0].value.shape
                ),
            });
        }
        if mask.rows != lq || mask.cols != lk {
            return Err(NumError::Shape {
                op: "masked_attention",
                detail: format!("mask {}x{} vs Lq {} Lk {}", mask.rows, mask.cols, lq, lk),
            });
        }
        if let Some(row) = mask.first_empty_row() {
            return Err(NumError::Contract {
                op: "masked_attention",
                detail: format!("mask row {} allows no keys", row),
            });
        }
        let kt = self.transpose_last2(k)?;
        let scores = self.matmul(q, kt)?;
        let scores = self.scale(scores, 1.0 / (dq as f64).sqrt())?;
        let mut bias = vec![0.0; lq * lk];
        for i in 0..lq {
            for j in 0..lk {
                if !mask.get(i, j) {
                    bias[i * lk + j] = MASK_NEG;
                }
            }
        }
        let bias = self.constant(Tensor::from_vec(vec![lq, lk], bias)?)?;
        let scores = self.add(scores, bias)?;
        let probs = self.softmax(scores)?;
        let out = self.matmul(probs, v)?;
        Ok((out, probs))
    }

    // ── Linear layers ──────────────────────────────────────────────────────

    /// `x @ w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Tid, w: Tid, b: Tid) -> Result<Tid> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Two-layer MLP with gelu: `linear -> gelu -> linear`.
    pub fn mlp_forward(&mut self, x: Tid, w1: Tid, b1: Tid, w2: Tid, b2: Tid) -> Result<Tid> {
        let h = self.linear(x, w1, b1)?;
        let h = self.gelu(h)?;
        self.linear(h, w2, b2)
    }

    // ── Backward ───────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Each node is visited once; leaf
    /// gradients are afterwards readable through `grad`. Running backward a
    /// second time without `reset` is an error.
    pub fn backward(&mut self, loss: Tid) -> Result<()> {
        if self.backward_done {
            return Err(NumError::Contract {
                op: "backward",
                detail: "graph already consumed; call reset() before reusing it".into(),
            });
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(NumError::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.nodes[loss.0].value.shape),
            });
        }
        if !self.nodes[loss.0].value.requires_grad {
            return Err(NumError::Contract {
                op: "backward",
                detail: "loss does not depend on any differentiable leaf".into(),
            });
        }
        self.nodes[loss.0].value.grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].value.grad.is_none() || !self.nodes[i].value.requires_grad {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let go = node.value.grad.as_ref().expect("checked above").clone();
            let op = node.op.clone();
            let out_val = &node.value;
            match op {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    let cycle = before[b.0].value.numel();
                    if before[a.0].value.requires_grad {
                        let g = ensure(&mut before[a.0]);
                        for (gi, &v) in g.iter_mut().zip(&go) {
                            *gi += v;
                        }
                    }
                    if before[b.0].value.requires_grad {
                        let g = ensure(&mut before[b.0]);
                        for (i2, &v) in go.iter().enumerate() {
                            g[i2 % cycle] += v;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if before[a.0].value.requires_grad {
                        let g = ensure(&mut before[a.0]);
                        for (gi, &v) in g.iter_mut().zip(&go) {
                            *gi += v;
                        }
                    }
                    if before[b.0].value.requires_grad {
                        let g = ensure(&mut before[b.0]);
                        for (gi, &v) in g.iter_mut().zip(&go) {
                            *gi -= v;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let cycle = before[b.0].value.numel();
                    if before[a.0].value.requires_grad {
                        let bd = before[b.0].value.data.clone();
                        let g = ensure(&mut before[a.0]);
                        for (i2, &v) in go.iter().enumerate() {
                            g[i2] += v * bd[i2 % cycle];
                        }
                    }
                    if before[b.0].value.requires_grad {
                        let ad = before[a.0].value.data.clone();
                        let g = ensure(&mut before[b.0]);
                        for (i2, &v) in go.iter().enumerate() {
                            g[i2 % cycle] += v * ad[i2];
                        }
                    }
                }
                Op::Scale { x, c } => {
                    if before[x.0].value.requires_grad {
                        let g = ensure(&mut before[x.0]);
                        for (gi, &v) in g.iter_mut().zip(&go) {
                            *gi += c * v;
                        }
                    }
                }
                Op::AddScalar { x } => {
                    if before[x.0].value.requires_grad {
                        let g = ensure(&mut before[x.0]);
                        for (gi, &v) in g.iter_mut().zip(&go) {
                            *gi += v;
                        }
                    }
                }
                Op::Matmul { a, b, m, k, n, batch } => {
                    let a_shared = before[a.0].value.numel() == m * k;
                    let b_shared = before[b.0].value.numel() == k * n;
                    if before[a.0].value.requires_grad {
                        let bd = before[b.0].value.data.clone();
                        let g = ensure(&mut before[a.0]);
                        for t in 0..batch {
                            let ao = if a_shared { 0 } else { t * m * k };
                            let bo = if b_shared { 0 } else { t * k * n };
                            mm_nt(&go[t * m * n..(t + 1) * m * n], &bd[bo..bo + k * n], &mut g[ao..ao + m * k], m, n, k);
                        }
                    }
                    if before[b.0].value.requires_grad {
                        let ad = before[a.0].value.data.clone();
                        let g = ensure(&mut before[b.0]);
                        for t in 0..batch {
                            let ao = if a_shared { 0 } else { t * m * k };
                            let bo = if b_shared { 0 } else { t * k * n };
                            mm_tn(&ad[ao..ao + m * k], &go[t * m * n..(t + 1) * m * n], &mut g[bo..bo + k * n], m, k, n);
                        }
                    }
                }
                Op::TransposeLast2 { x } => {
                    if before[x.0].value.requires_grad {
                        let l = out_val.rank();
                        let (r, c) = (out_val.shape[l - 2], out_val.shape[l - 1]);
                        let batch = out_val.numel() / (r * c);
                        let g = ensure(&mut before[x.0]);
                        for t in 0..batch {
                            for i in 0..r {
                                for j in 0..c {
                                    g[t * r * c + j * r + i] += go[t * r * c + i * c + j];
                                }
                            }
                        }
                    }
                }
                Op::Reshape { x } => {
                    if before[x.0].value.requires_grad {
                        let g = ensure(&mut before[x.0]);
                        for (gi, &v) in g.iter_mut().zip(&go) {
                            *gi += v;
                        }
                    }
                }
                Op::Concat { xs, axis } => {
                    let shape = &out_val.shape;
                    let outer = numel_of(&shape[..axis]);
                    let inner = numel_of(&shape[axis + 1..]);
                    let total_w = shape[axis] * inner;
                    let mut offset = 0;
                    for &x in &xs {
                        let w = before[x.0].value.shape[axis] * inner;
                        if before[x.0].value.requires_grad {
                            let g = ensure(&mut before[x.0]);
                            for o in 0..outer {
                                for j in 0..w {
                                    g[o * w + j] += go[o * total_w + offset + j];
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice { x, axis, start, len } => {
                    if before[x.0].value.requires_grad {
                        let xs = before[x.0].value.shape.clone();
                        let outer = numel_of(&xs[..axis]);
                        let inner = numel_of(&xs[axis + 1..]);
                        let ax = xs[axis];
                        let g = ensure(&mut before[x.0]);
                        for o in 0..outer {
                            let dst = o * ax * inner + start * inner;
                            for j in 0..len * inner {
                                g[dst + j] += go[o * len * inner + j];
                            }
                        }
                    }
                }
                Op::Gelu { x } => {
                    if before[x.0].value.requires_grad {
                        let xd = before[x.0].value.data.clone();
                        let g = ensure(&mut before[x.0]);
                        for (i2, &v) in go.iter().enumerate() {
                            g[i2] += v * gelu_bwd(xd[i2]);
                        }
                    }
                }
                Op::Abs { x } => {
                    if before[x.0].value.requires_grad {
                        let xd = before[x.0].value.data.clone();
                        let g = ensure(&mut before[x.0]);
                        for (i2, &v) in go.iter().enumerate() {
                            g[i2] += v * if xd[i2] > 0.0 { 1.0 } else if xd[i2] < 0.0 { -1.0 } else { 0.0 };
                        }
                    }
                }
                Op::LayerNormBare { x, eps } => {
                    if before[x.0].value.requires_grad {
                        let xd = before[x.0].value.data.clone();
                        let d = out_val.last_dim();
                        let y = out_val.data.clone();
                        let g = ensure(&mut before[x.0]);
                        let rows = y.len() / d;
                        for r in 0..rows {
                            let xr = &xd[r * d..(r + 1) * d];
                            let mean = xr.iter().sum::<f64>() / d as f64;
                            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                            let inv = 1.0 / (var + eps).sqrt();
                            let gr = &go[r * d..(r + 1) * d];
                            let yr = &y[r * d..(r + 1) * d];
                            let mg = gr.iter().sum::<f64>() / d as f64;
                            let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                            for i2 in 0..d {
                                g[r * d + i2] += inv * (gr[i2] - mg - yr[i2] * mgy);
                            }
                        }
                    }
                }
                Op::Softmax { x } => {
                    if before[x.0].value.requires_grad {
                        let d = out_val.last_dim();
                        let y = out_val.data.clone();
                        let g = ensure(&mut before[x.0]);
                        let rows = y.len() / d;
                        for r in 0..rows {
                            let yr = &y[r * d..(r + 1) * d];
                            let gr = &go[r * d..(r + 1) * d];
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for i2 in 0..d {
                                g[r * d + i2] += yr[i2] * (gr[i2] - dot);
                            }
                        }
                    }
                }
                Op::MeanAll { x } => {
                    if before[x.0].value.requires_grad {
                        let n = before[x.0].value.numel() as f64;
                        let g = ensure(&mut before[x.0]);
                        let v = go[0] / n;
                        for gi in g.iter_mut() {
                            *gi += v;
                        }
                    }
                }
                Op::EmbeddingLookup { table, idx } => {
                    if before[table.0].value.requires_grad {
                        let d = out_val.last_dim();
                        let g = ensure(&mut before[table.0]);
                        for (r, &i2) in idx.iter().enumerate() {
                            for j in 0..d {
                                g[i2 * d + j] += go[r * d + j];
                            }
                        }
                    }
                }
                Op::CrossEntropyLogits { logits, targets } => {
                    if before[logits.0].value.requires_grad {
                        let ld = before[logits.0].value.data.clone();
                        let c = before[logits.0].value.last_dim();
                        let r = targets.len();
                        let g = ensure(&mut before[logits.0]);
                        let w = go[0] / r as f64;
                        for i2 in 0..r {
                            let row = &ld[i2 * c..(i2 + 1) * c];
                            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
                            for j in 0..c {
                                let p = (row[j] - m).exp() / sum;
                                g[i2 * c + j] += w * (p - if j == targets[i2] { 1.0 } else { 0.0 });
                            }
                        }
                    }
                }
                Op::CosineSimRows { a, b } => {
                    let ad = before[a.0].value.data.clone();
                    let bd = before[b.0].value.data.clone();
                    let d = before[a.0].value.last_dim();
                    let rows = ad.len() / d;
                    for r in 0..rows {
                        let (ar, br) = (&ad[r * d..(r + 1) * d], &bd[r * d..(r + 1) * d]);
                        let (na, nb, dot) = row_norms(ar, br);
                        let cosv = dot / (na * nb);
                        let gr = go[r];
                        if before[a.0].value.requires_grad {
                            let g = ensure(&mut before[a.0]);
                            for i2 in 0..d {
                                g[r * d + i2] += gr * (br[i2] / (na * nb) - cosv * ar[i2] / (na * na));
                            }
                        }
                        if before[b.0].value.requires_grad {
                            let g = ensure(&mut before[b.0]);
                            for i2 in 0..d {
                                g[r * d + i2] += gr * (ar[i2] / (na * nb) - cosv * br[i2] / (nb * nb));
                            }
                        }
                    }
                }
                Op::RotatePairs { x, cos, sin, cycle } => {
                    if before[x.0].value.requires_grad {
                        let d = out_val.last_dim();
                        let half = d / 2;
                        let g = ensure(&mut before[x.0]);
                        let rows = g.len() / d;
                        for r in 0..rows {
                            let tr = r % cycle;
                            for p in 0..half {
                                let (c, s) = (cos[tr * half + p], sin[tr * half + p]);
                                let (g0, g1) = (go[r * d + 2 * p], go[r * d + 2 * p + 1]);
                                g[r * d + 2 * p] += c * g0 + s * g1;
                                g[r * d + 2 * p + 1] += -s * g0 + c * g1;
                            }
                        }
                    }
                }
            }
        }
        self.backward_done = true;
        Ok(())
    }
}

// ── Helpers ────────────────────────────────────────────────────────────────

fn ensure(node: &mut Node) -> &mut Vec<f64> {
    let n = node.value.numel();
    node.value.grad.get_or_insert_with(|| vec![0.0; n])
}

fn ensure_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(NumError::NonFinite { op });
    }
    Ok(())
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(NumError::Shape { op, detail: format!("{:?} vs {:?}", a, b) });
    }
    Ok(())
}

/// Broadcast legality for `add`/`mul`: equal shapes, or `b` a trailing suffix
/// of `a`. Returns the element cycle length of `b`.
fn suffix_cycle(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize> {
    if a == b {
        return Ok(numel_of(b).max(1));
    }
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        return Ok(numel_of(b).max(1));
    }
    Err(NumError::Shape { op, detail: format!("{:?} cannot broadcast onto {:?}", b, a) })
}

fn tail2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() < 2 {
        return Err(NumError::Shape { op, detail: format!("need rank >= 2, got {:?}", t.shape) });
    }
    Ok((t.shape[t.rank() - 2], t.shape[t.rank() - 1]))
}

fn row_norms(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut sa = 0.0;
    let mut sb = 0.0;
    let mut dot = 0.0;
    for (x, y) in a.iter().zip(b) {
        sa += x * x;
        sb += y * y;
        dot += x * y;
    }
    ((sa + 1e-12).sqrt(), (sb + 1e-12).sqrt(), dot)
}

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_S * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    let u = GELU_S * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_S * (1.0 + 3.0 * GELU_C * x * x)
}

// C += A * B, all row-major, A: m x k, B: k x n.
fn mm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let cr = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for j in 0..n {
                cr[j] += av * br[j];
            }
        }
    }
}

// C += A * B^T, A: m x n, B: k x n, C: m x k.
fn mm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let ar = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let br = &b[p * n..(p + 1) * n];
            let mut dot = 0.0;
            for j in 0..n {
                dot += ar[j] * br[j];
            }
            c[i * k + p] += dot;
        }
    }
}

// C += A^T * B, A: m x k, B: m x n, C: k x n.
fn mm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let br = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let cr = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                cr[j] += av * br[j];
            }
        }
    }
}
