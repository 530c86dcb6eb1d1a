//! Named parameter and buffer storage, initialization, and SGD with momentum.

use crate::scalar::Scalar;
use crate::tape::{Graph, VarId};
use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Learnable parameters keyed by stable hierarchical names. Insertion order
/// is fixed at build time, so iteration (and therefore every update sweep)
/// is deterministic.
#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ParamStore<S: Scalar> {
    map: IndexMap<String, ArrayD<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            map: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<S>) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter `{name}`");
    }

    pub fn get(&self, name: &str) -> &ArrayD<S> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<S> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<S>)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total element count over all parameters.
    pub fn param_count(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    /// Converts every array elementwise (f32 <-> f64 checkpoints).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| T::from_f64(x.to_f64_()))))
                .collect(),
        }
    }
}

/// Non-learnable state updated during training (running variances).
#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct BufferStore<S: Scalar> {
    map: IndexMap<String, ArrayD<S>>,
}

impl<S: Scalar> Default for BufferStore<S> {
    fn default() -> Self {
        BufferStore {
            map: IndexMap::new(),
        }
    }
}

impl<S: Scalar> BufferStore<S> {
    pub fn get_or_insert(&mut self, name: &str, default: impl FnOnce() -> ArrayD<S>) -> &ArrayD<S> {
        self.map.entry(name.to_string()).or_insert_with(default)
    }

    pub fn set(&mut self, name: &str, value: ArrayD<S>) {
        self.map.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<S>> {
        self.map.get(name)
    }

    pub fn cast<T: Scalar>(&self) -> BufferStore<T> {
        BufferStore {
            map: self
                .map
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| T::from_f64(x.to_f64_()))))
                .collect(),
        }
    }
}

/// One forward pass: a tape plus the parameter bindings it created.
pub struct Forward<'a, S: Scalar> {
    pub g: Graph<S>,
    store: &'a ParamStore<S>,
    pub bound: IndexMap<String, VarId>,
    pub buffers: &'a mut BufferStore<S>,
    /// Train mode updates running statistics; eval mode freezes them.
    pub train: bool,
}

impl<'a, S: Scalar> Forward<'a, S> {
    pub fn new(store: &'a ParamStore<S>, buffers: &'a mut BufferStore<S>, train: bool) -> Self {
        Forward {
            g: Graph::new(),
            store,
            bound: IndexMap::new(),
            buffers,
            train,
        }
    }

    /// Binds a named parameter as a tape leaf (cached per forward).
    pub fn param(&mut self, name: &str) -> VarId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let id = self.g.leaf(self.store.get(name).clone());
        self.bound.insert(name.to_string(), id);
        id
    }
}

/// Kaiming-uniform fill: U(-b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform<S: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        S::from_f64(rng.random_range(-bound..bound))
    })
}

pub fn zeros<S: Scalar>(shape: &[usize]) -> ArrayD<S> {
    ArrayD::zeros(IxDyn(shape))
}

pub fn full<S: Scalar>(shape: &[usize], v: f64) -> ArrayD<S> {
    ArrayD::from_elem(IxDyn(shape), S::from_f64(v))
}

/// SGD with classical momentum: v <- mu v + g ; p <- p - lr v.
#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SgdMomentum<S: Scalar> {
    pub momentum: S,
    pub velocity: IndexMap<String, ArrayD<S>>,
}

impl<S: Scalar> SgdMomentum<S> {
    pub fn new(momentum: f64) -> Self {
        SgdMomentum {
            momentum: S::from_f64(momentum),
            velocity: IndexMap::new(),
        }
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore<S>,
        grads: &IndexMap<String, ArrayD<S>>,
        lr: S,
    ) {
        for (name, p) in store.iter_mut() {
            let Some(g) = grads.get(name.as_str()) else {
                continue;
            };
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(p.raw_dim()));
            v.zip_mut_with(g, |vi, &gi| *vi = *vi * self.momentum + gi);
            p.zip_mut_with(v, |pi, &vi| *pi = *pi - lr * vi);
        }
    }

    pub fn cast<T: Scalar>(&self) -> SgdMomentum<T> {
        SgdMomentum {
            momentum: T::from_f64(self.momentum.to_f64_()),
            velocity: self
                .velocity
                .iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| T::from_f64(x.to_f64_()))))
                .collect(),
        }
    }
}
