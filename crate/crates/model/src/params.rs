//! Named parameter store. Parameters live outside the tape and are bound
//! into each step's graph as leaves; insertion order is stable so
//! initialization and optimizer traversal are deterministic.

use std::path::Path;

use indexmap::IndexMap;
use numcore::{load_tensor, save_tensor, Graph, Tensor, Tid};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{ModelError, Result};

#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    /// Whether decoupled weight decay applies; biases, norms, queries and
    /// positional tables opt out.
    pub decay: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: IndexMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, decay: bool) -> Result<()> {
        if name.is_empty() || name.contains('/') {
            return Err(ModelError::Param(format!("bad parameter name {name:?}")));
        }
        if self.entries.contains_key(name) {
            return Err(ModelError::Param(format!("duplicate parameter {name}")));
        }
        self.entries.insert(name.to_string(), Param { value, decay });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Copies every parameter onto a graph as a leaf. Trainability follows
    /// each tensor's `requires_grad` flag.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let mut ids = IndexMap::with_capacity(self.entries.len());
        for (name, p) in &self.entries {
            ids.insert(name.clone(), g.leaf(p.value.clone())?);
        }
        Ok(Bound { ids })
    }

    /// Parameters whose names start with `prefix`, cloned in order.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        let entries = self
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        ParamSet { entries }
    }

    /// Same tensors with gradients disabled — the shape used for EMA shadows
    /// and other never-trained copies.
    pub fn frozen_clone(&self) -> ParamSet {
        let mut out = self.clone();
        for p in out.entries.values_mut() {
            p.value.requires_grad = false;
            p.value.grad = None;
        }
        out
    }

    /// `self <- mu * self + (1 - mu) * online`, matched by name.
    pub fn ema_update(&mut self, online: &ParamSet, mu: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(ModelError::Param(format!("ema momentum {mu} outside [0, 1]")));
        }
        for (name, shadow) in self.entries.iter_mut() {
            let src = online
                .entries
                .get(name)
                .ok_or_else(|| ModelError::Param(format!("ema source missing {name}")))?;
            if src.value.shape != shadow.value.shape {
                return Err(ModelError::Param(format!("ema shape mismatch on {name}")));
            }
            for (s, o) in shadow.value.data.iter_mut().zip(&src.value.data) {
                *s = mu * *s + (1.0 - mu) * o;
            }
        }
        Ok(())
    }

    /// One tensor file per parameter, named `{prefix}{name}.lwt`.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<()> {
        for (name, p) in &self.entries {
            save_tensor(&dir.join(format!("{prefix}{name}.lwt")), &p.value)?;
        }
        Ok(())
    }

    /// Loads values into an already-registered set. Every registered name
    /// must have a file, shapes must match, and no stray file with the same
    /// prefix may remain unclaimed.
    pub fn load(&mut self, dir: &Path, prefix: &str) -> Result<()> {
        for (name, p) in self.entries.iter_mut() {
            let path = dir.join(format!("{prefix}{name}.lwt"));
            if !path.exists() {
                return Err(ModelError::Param(format!("checkpoint missing {}", path.display())));
            }
            let t = load_tensor(&path)?;
            if t.shape != p.value.shape {
                return Err(ModelError::Param(format!(
                    "checkpoint shape {:?} != registered {:?} for {name}",
                    t.shape, p.value.shape
                )));
            }
            let (rg, decay) = (p.value.requires_grad, p.decay);
            p.value = t;
            p.value.requires_grad = rg;
            p.decay = decay;
        }
        let expected: std::collections::HashSet<String> = self
            .entries
            .keys()
            .map(|n| format!("{prefix}{n}.lwt"))
            .collect();
        for entry in std::fs::read_dir(dir).map_err(numcore::NumError::Io)? {
            let fname = entry.map_err(numcore::NumError::Io)?.file_name();
            let fname = fname.to_string_lossy();
            if fname.starts_with(prefix) && fname.ends_with(".lwt") && !expected.contains(fname.as_ref()) {
                return Err(ModelError::Param(format!("unclaimed checkpoint file {fname}")));
            }
        }
        Ok(())
    }
}

/// Tape handles for one graph's worth of bound parameters.
pub struct Bound {
    ids: IndexMap<String, Tid>,
}

impl Bound {
    /// Panics on unknown names: a miss is a wiring bug, not a runtime
    /// condition.
    pub fn id(&self, name: &str) -> Tid {
        *self.ids.get(name).unwrap_or_else(|| panic!("unbound parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Tid)> {
        self.ids.iter().map(|(k, &v)| (k.as_str(), v))
    }

    /// Gradient for a named parameter after `backward`; `None` when the
    /// parameter is frozen or unreached.
    pub fn grad<'g>(&self, g: &'g Graph, name: &str) -> Option<&'g [f64]> {
        g.grad(self.id(name))
    }
}

/// Gaussian init used for every weight matrix and query table.
pub fn normal_init<R: Rng>(rng: &mut R, shape: Vec<usize>, std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(shape, data).expect("consistent shape").with_grad()
}

pub fn zeros_init(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(shape).with_grad()
}

pub fn ones_init(shape: Vec<usize>) -> Tensor {
    Tensor::filled(shape, 1.0).with_grad()
}
