//! Decoupled-weight-decay adaptive optimizer with global gradient clipping.

use std::path::Path;

use numcore::{Graph, Tensor};

use model::{Bound, ParamSet};

use crate::Result;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

pub struct AdamW {
    m: ParamSet,
    v: ParamSet,
    t: u64,
    weight_decay: f64,
    clip_norm: f64,
}

fn zeros_like(params: &ParamSet) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, p) in params.iter() {
        out.add(name, Tensor::zeros(p.value.shape.clone()), false).expect("unique names");
    }
    out
}

impl AdamW {
    pub fn new(params: &ParamSet, weight_decay: f64, clip_norm: f64) -> AdamW {
        AdamW { m: zeros_like(params), v: zeros_like(params), t: 0, weight_decay, clip_norm }
    }

    /// Optimizer steps taken so far; persisted alongside the moment tensors
    /// because bias correction depends on it.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients recorded on `g`. Parameters the loss
    /// never touched keep their value and moments.
    pub fn step(&mut self, params: &mut ParamSet, g: &Graph, b: &Bound, lr: f64) {
        let grads: Vec<(String, &[f64])> = params
            .iter()
            .filter_map(|(name, _)| b.grad(g, name).map(|gr| (name.to_string(), gr)))
            .collect();
        let norm: f64 = grads.iter().flat_map(|(_, gr)| gr.iter().map(|v| v * v)).sum::<f64>().sqrt();
        let clip = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };

        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (name, gr) in grads {
            let p = params.get_mut(&name).expect("gradient for unknown parameter");
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            let m = &mut self.m.get_mut(&name).expect("moment missing").value.data;
            let v = &mut self.v.get_mut(&name).expect("moment missing").value.data;
            for i in 0..gr.len() {
                let gi = clip * gr[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
                let x = &mut p.value.data[i];
                *x -= lr * (update + wd * *x);
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.m.save(dir, "m.")?;
        self.v.save(dir, "v.")?;
        Ok(())
    }

    pub fn load(params: &ParamSet, dir: &Path, steps: u64, weight_decay: f64, clip_norm: f64) -> Result<AdamW> {
        let mut opt = AdamW::new(params, weight_decay, clip_norm);
        opt.m.load(dir, "m.")?;
        opt.v.load(dir, "v.")?;
        opt.t = steps;
        Ok(opt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_set(a0: f64, b0: [f64; 2]) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("a", Tensor::from_vec(vec![1], vec![a0]).unwrap().with_grad(), true).unwrap();
        ps.add("b", Tensor::from_vec(vec![2], b0.to_vec()).unwrap().with_grad(), false).unwrap();
        ps
    }

    /// Loss used throughout: mean(a*a) + mean(b*b), so grad(a) = 2a and
    /// grad(b) = b.
    fn quad_step(ps: &mut ParamSet, opt: &mut AdamW, lr: f64) {
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let aa = g.mul(b.id("a"), b.id("a")).unwrap();
        let bb = g.mul(b.id("b"), b.id("b")).unwrap();
        let la = g.mean_all(aa).unwrap();
        let lb = g.mean_all(bb).unwrap();
        let loss = g.add(la, lb).unwrap();
        g.backward(loss).unwrap();
        opt.step(ps, &g, &b, lr);
    }

    #[test]
    fn untouched_parameters_do_not_move() {
        let mut ps = quad_set(1.0, [2.0, -1.0]);
        ps.add("unused", Tensor::filled(vec![2], 0.25).with_grad(), true).unwrap();
        let mut opt = AdamW::new(&ps, 0.05, 1.0);
        quad_step(&mut ps, &mut opt, 1e-2);
        assert_eq!(ps.get("unused").unwrap().value.data, vec![0.25, 0.25]);
        assert!(ps.get("a").unwrap().value.data[0] < 1.0, "touched parameter descends");
    }

    #[test]
    fn zero_gradient_and_zero_decay_is_a_fixed_point() {
        let mut ps = ParamSet::new();
        ps.add("x", Tensor::filled(vec![3], 1.5).with_grad(), true).unwrap();
        let mut opt = AdamW::new(&ps, 0.0, 1.0);
        let mut g = Graph::new();
        let b = ps.bind(&mut g).unwrap();
        let zeroed = g.scale(b.id("x"), 0.0).unwrap();
        let loss = g.mean_all(zeroed).unwrap();
        g.backward(loss).unwrap();
        opt.step(&mut ps, &g, &b, 1e-2);
        assert_eq!(ps.get("x").unwrap().value.data, vec![1.5, 1.5, 1.5]);
    }

    #[test]
    fn twenty_steps_match_a_scalar_reference() {
        let mut ps = quad_set(1.0, [2.0, -1.0]);
        let (wd, clip, lr) = (0.05, 0.5, 1e-2);
        let mut opt = AdamW::new(&ps, wd, clip);

        // Reference update run on plain scalars. x[0] decays, x[1..] do not.
        let mut x = [1.0, 2.0, -1.0];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        for t in 1..=20u32 {
            let mut grad = [2.0 * x[0], x[1], x[2]];
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                for g in grad.iter_mut() {
                    *g *= clip / norm;
                }
            }
            for i in 0..3 {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                let mh = m[i] / (1.0 - BETA1.powi(t as i32));
                let vh = v[i] / (1.0 - BETA2.powi(t as i32));
                let wd_i = if i == 0 { wd } else { 0.0 };
                x[i] -= lr * (mh / (vh.sqrt() + EPS) + wd_i * x[i]);
            }
            quad_step(&mut ps, &mut opt, lr);
        }
        assert!((ps.get("a").unwrap().value.data[0] - x[0]).abs() < 1e-10);
        assert!((ps.get("b").unwrap().value.data[0] - x[1]).abs() < 1e-10);
        assert!((ps.get("b").unwrap().value.data[1] - x[2]).abs() < 1e-10);
        assert_eq!(opt.steps(), 20);
    }

    #[test]
    fn state_roundtrip_resumes_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut ps1 = quad_set(1.0, [2.0, -1.0]);
        let mut opt1 = AdamW::new(&ps1, 0.05, 1.0);
        for _ in 0..3 {
            quad_step(&mut ps1, &mut opt1, 1e-2);
        }
        opt1.save(dir.path()).unwrap();
        ps1.save(dir.path(), "p.").unwrap();

        let mut ps2 = quad_set(0.0, [0.0, 0.0]);
        ps2.load(dir.path(), "p.").unwrap();
        let mut opt2 = AdamW::load(&ps2, dir.path(), opt1.steps(), 0.05, 1.0).unwrap();

        for _ in 0..2 {
            quad_step(&mut ps1, &mut opt1, 1e-2);
            quad_step(&mut ps2, &mut opt2, 1e-2);
        }
        assert_eq!(ps1.get("a").unwrap().value.data, ps2.get("a").unwrap().value.data);
        assert_eq!(ps1.get("b").unwrap().value.data, ps2.get("b").unwrap().value.data);
    }
}
