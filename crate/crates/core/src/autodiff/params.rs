use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::tape::Grads;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// uniform(−1/√fan_in, +1/√fan_in)
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

/// Named parameter tensors. Values are shared with tapes by reference count,
/// so a forward pass never copies weights.
#[derive(Clone, Debug)]
pub struct ParamStore {
    names: Vec<String>,
    index: BTreeMap<String, ParamId>,
    shapes: Vec<Vec<usize>>,
    data: Vec<Arc<Vec<f64>>>,
    trainable: Vec<bool>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            names: Vec::new(),
            index: BTreeMap::new(),
            shapes: Vec::new(),
            data: Vec::new(),
            trainable: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Registers a parameter; initialization draws from the store's seeded stream
    /// in registration order.
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Invalid(format!("parameter `{name}` registered twice")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        let id = ParamId(self.names.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.shapes.push(shape.to_vec());
        self.data.push(Arc::new(data));
        self.trainable.push(true);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> (&[usize], Arc<Vec<f64>>) {
        (&self.shapes[id.0], self.data[id.0].clone())
    }

    pub fn tensor(&self, id: ParamId) -> Tensor {
        Tensor {
            shape: self.shapes[id.0].clone(),
            data: self.data[id.0].as_ref().clone(),
        }
    }

    /// Mutable access; copies only if a live tape still shares the buffer.
    pub fn data_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.data[id.0])
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.trainable[id.0] = trainable;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    /// Freezes every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (i, n) in self.names.iter().enumerate() {
            if n.starts_with(prefix) {
                self.trainable[i] = false;
            }
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.data.iter().map(|d| d.len()).sum()
    }

    pub fn to_map(&self) -> BTreeMap<String, Tensor> {
        self.ids().map(|id| (self.name(id).to_string(), self.tensor(id))).collect()
    }

    /// Overwrites values from a name → tensor map. Names and shapes must match exactly.
    pub fn load_map(&mut self, map: &BTreeMap<String, Tensor>) -> Result<()> {
        if map.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                map.len()
            )));
        }
        for id in self.ids().collect::<Vec<_>>() {
            let name = self.names[id.0].clone();
            let t = map
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if t.shape != self.shapes[id.0] || t.data.len() != self.data[id.0].len() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}`: shape {:?} does not match network shape {:?}",
                    t.shape, self.shapes[id.0]
                )));
            }
            *self.data_mut(id) = t.data.clone();
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn checksum(&self) -> String {
        checksum_map(&self.to_map())
    }
}

pub fn checksum_map(map: &BTreeMap<String, Tensor>) -> String {
    let mut h = Sha256::new();
    for (name, t) in map {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.shape.len() as u64).to_le_bytes());
        for &d in &t.shape {
            h.update((d as u64).to_le_bytes());
        }
        for v in &t.data {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Adam with bias correction. Per-parameter learning rates may be overridden.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    lr_override: BTreeMap<ParamId, f64>,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.data(id).len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_override: BTreeMap::new(),
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, id: ParamId, lr: f64) {
        self.lr_override.insert(id, lr);
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in store.ids().collect::<Vec<_>>() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let lr = self.lr_override.get(&id).copied().unwrap_or(self.lr);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.data_mut(id);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
